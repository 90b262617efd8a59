#include <doctest.h>

#include <cmath>
#include <random>

#include "elbo_oracle.hpp"
#include "paraphrase/objectives.hpp"
#include "test_support.hpp"

using namespace paraphrase;
using paraphrase::testing::gradient_check;

namespace {

ModelConfig tiny_config(int vocab = 14) {
    ModelConfig c;
    c.layers = 1;
    c.hidden = 16;
    c.heads = 2;
    c.ffn_mult = 2;
    c.dropout = 0.0;
    c.max_len = 10;
    c.vocab_size = vocab;
    return c;
}

TokenSequence seq(std::vector<int> words) {
    TokenSequence s;
    s.ids.push_back(kBos);
    s.ids.insert(s.ids.end(), words.begin(), words.end());
    s.ids.push_back(kEos);
    return s;
}

TokenSequence random_seq(std::mt19937_64& rng, int vocab, int min_words, int max_words) {
    std::uniform_int_distribution<int> len(min_words, max_words), tok(kNumSpecial, vocab - 1);
    std::vector<int> w(static_cast<std::size_t>(len(rng)));
    for (int& x : w) x = tok(rng);
    return seq(w);
}

std::vector<ParallelPair> random_pairs(std::mt19937_64& rng, int vocab, int n) {
    std::vector<ParallelPair> out;
    for (int i = 0; i < n; ++i) out.push_back({random_seq(rng, vocab, 1, 6), random_seq(rng, vocab, 1, 6)});
    return out;
}

std::vector<double> grads_of(const ParameterSet& ps) {
    std::vector<double> out;
    for (const Parameter* p : ps.all()) out.insert(out.end(), p->grad.data.begin(), p->grad.data.end());
    return out;
}

double grad_norm(const Parameter& p) {
    double s = 0.0;
    for (double v : p.grad.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("ddl loss: symmetry under swapping directions and sign") {
    std::mt19937_64 rng(1);
    SharedSeq2Seq model(tiny_config(), 2);
    auto pairs = random_pairs(rng, 14, 6);
    std::vector<ParallelPair> swapped;
    for (const auto& p : pairs) swapped.push_back({p.target, p.source});
    Graph g(false);
    auto a = ddl_loss(g, model, pairs).values;
    auto b = ddl_loss(g, model, swapped).values;
    CHECK(a.l2_st == b.l2_ts);
    CHECK(a.l2_ts == b.l2_st);
    CHECK(a.l2_st <= 0.0);
    CHECK(a.l2_ts <= 0.0);
    CHECK(a.l2 == a.l2_st + a.l2_ts);
    CHECK(a.combined == a.l2);
}

TEST_CASE("single-direction likelihood matches a hand-rolled cross-entropy") {
    SharedSeq2Seq model(tiny_config(), 3);
    TokenSequence s = seq({5, 9});
    TokenSequence t = seq({7});
    Graph g(false);
    ContextMemory mem = model.encode(g, make_batch({s}));
    const Matrix logits = model.decode_logits(g, mem, make_batch({t})).value();
    double total = 0.0;
    for (int pos = 0; pos + 1 < t.length(); ++pos) {
        double z = 0.0;
        for (int v = 0; v < logits.cols; ++v) z += std::exp(logits(pos, v));
        total += logits(pos, t.ids[static_cast<std::size_t>(pos + 1)]) - std::log(z);
    }
    const double expected = total / (t.length() - 1);
    Graph g2(false);
    CHECK(std::abs(direction_loglik(g2, model, make_batch({s}), make_batch({t})).scalar() - expected) < 1e-6);
}

TEST_CASE("restricted-support KL closed forms") {
    Graph g(false);
    Matrix q(1, 2);
    q(0, 0) = 0.0;
    q(0, 1) = -1000.0;
    Matrix p(1, 2, 0.5);
    CHECK(ops::kl_rows(g.constant(q), p).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Matrix q2(1, 3);
    q2(0, 0) = 0.2;
    q2(0, 1) = -0.4;
    q2(0, 2) = 1.1;
    Matrix p2(1, 3);
    double z = std::exp(0.2) + std::exp(-0.4) + std::exp(1.1);
    p2(0, 0) = std::exp(0.2) / z;
    p2(0, 1) = std::exp(-0.4) / z;
    p2(0, 2) = std::exp(1.1) / z;
    CHECK(std::abs(ops::kl_rows(g.constant(q2), p2).scalar()) < 1e-12);
}

TEST_CASE("KL with k equal to the full support matches brute-force full KL") {
    const int vocab = 9;
    SharedSeq2Seq model(tiny_config(vocab), 4);
    PriorLM prior(tiny_config(vocab), 5);
    prior.set_trained(true);
    std::mt19937_64 data_rng(6);
    std::vector<TokenSequence> sources{random_seq(data_rng, vocab, 2, 4), random_seq(data_rng, vocab, 1, 3)};
    Graph g(false);
    ContextMemory mem = model.encode(g, make_batch(sources));
    Rng rng(7);
    LatentBatch latent = latent_inference(g, model, mem, weak_supervision_labels(model, sources), {1.0, vocab - 2}, rng);
    const Matrix kl = kl_estimate(g, latent, prior).value();

    std::vector<int> support;
    for (int id = 0; id < vocab; ++id)
        if (is_generable(id)) support.push_back(id);
    auto hard = latent.hard_sequences();
    for (std::size_t b = 0; b < sources.size(); ++b) {
        TokenSequence prefix{{hard[b].ids.begin(), hard[b].ids.end() - 1}};
        Graph gp(false);
        const Matrix prior_logits = prior.logits(gp, make_batch({prefix})).value();
        double expected = 0.0;
        for (int j = 0; j + 1 < sources[b].length(); ++j) {
            const int row = static_cast<int>(b) * (latent.length - 1) + j;
            auto lq = paraphrase::testing::log_softmax_over(latent.logits.value(), row, support);
            auto lp = paraphrase::testing::log_softmax_over(prior_logits, j, support);
            for (std::size_t c = 0; c < support.size(); ++c) expected += std::exp(lq[c]) * (lq[c] - lp[c]);
        }
        CHECK(std::abs(kl(static_cast<int>(b), 0) - expected) < 1e-6);
    }
}

TEST_CASE("latent inference shape, determinism and Gumbel-argmax consistency") {
    const int vocab = 12;
    SharedSeq2Seq model(tiny_config(vocab), 8);
    std::mt19937_64 data_rng(9);
    std::vector<TokenSequence> sources;
    for (int i = 0; i < 5; ++i) sources.push_back(random_seq(data_rng, vocab, 1, 7));
    auto pseudo = weak_supervision_labels(model, sources);
    for (std::size_t i = 0; i < sources.size(); ++i) CHECK(pseudo[i].length() == sources[i].length());

    auto draw = [&](std::uint64_t seed) {
        Graph g(false);
        ContextMemory mem = model.encode(g, make_batch(sources));
        Rng rng(seed);
        LatentBatch lb = latent_inference(g, model, mem, pseudo, {0.5, vocab - 2}, rng);
        std::vector<std::vector<int>> hard;
        for (auto& s : lb.hard_sequences()) hard.push_back(s.ids);
        // With the full support sampled, the hard id is the argmax of logit + noise.
        for (std::size_t i = 0; i < lb.tokens.size(); ++i) {
            const auto& tok = lb.tokens[i];
            int best = -1;
            double best_val = -INFINITY;
            for (std::size_t c = 0; c < tok.candidate_ids.size(); ++c) {
                const double v = lb.logits.value()(lb.logit_rows[i], tok.candidate_ids[c]) + tok.noise[c];
                if (v > best_val) best_val = v, best = tok.candidate_ids[c];
            }
            CHECK(best == tok.hard_id());
        }
        for (std::size_t b = 0; b < sources.size(); ++b) {
            CHECK(static_cast<int>(hard[b].size()) == sources[b].length());
            CHECK(static_cast<int>(lb.sample(static_cast<int>(b)).tokens.size()) == sources[b].length() - 1);
        }
        return hard;
    };
    CHECK(draw(42) == draw(42));

    Graph g(false);
    ContextMemory mem = model.encode(g, make_batch(sources));
    Rng rng(1);
    auto wrong = pseudo;
    wrong[0].ids.push_back(kEos);
    CHECK_THROWS_AS(latent_inference(g, model, mem, wrong, {1.0, 3}, rng), std::invalid_argument);
}

TEST_CASE("reconstruction: log-probability, hard consistency and gradient") {
    const int vocab = 12;
    SharedSeq2Seq model(tiny_config(vocab), 10);
    std::mt19937_64 data_rng(11);
    std::vector<TokenSequence> sources{random_seq(data_rng, vocab, 2, 5), random_seq(data_rng, vocab, 1, 4)};
    const TokenBatch src = make_batch(sources);
    auto pseudo = weak_supervision_labels(model, sources);

    Graph g;
    ContextMemory mem = model.encode(g, src);
    Rng rng(12);
    LatentBatch latent = latent_inference(g, model, mem, pseudo, {1.0, 4}, rng);
    Var recon = reconstruction_logprob(g, model, latent_soft_tokens(latent, 1.0), src);
    for (double v : recon.value().data) CHECK(v <= 0.0);

    Graph gh(false);
    const Matrix hard = sequence_loglik(gh, model, make_batch(latent.hard_sequences()), src).value();
    CHECK(hard.data == recon.value().data);

    // Straight-through gradient reaches the inference logits.
    model.parameters().zero_grad();
    g.backward(ops::sum(recon));
    CHECK(grad_norm(model.parameters().at("dec.out.w")) > 0.0);

    // Finite differences on the relaxed path with the sampled noise frozen.
    const Matrix logits0 = latent.logits.value();
    auto fn = [&](Graph& gr, const std::vector<Var>& in) {
        SoftTokens soft = latent_soft_tokens(latent, 1.0);
        Var w = relaxed_weights(ops::embedding(in[0], latent.logit_rows), latent.tokens, 1.0);
        Matrix base(soft.batch * soft.length, soft.k);
        for (int b = 0; b < soft.batch; ++b)
            for (int t = 0; t < soft.length; ++t) base(b * soft.length + t, 0) = 1.0;
        soft.weights = ops::scatter_rows(base, w, latent.sequence_rows);
        return ops::sum(reconstruction_logprob(gr, model, soft, src));
    };
    CHECK(gradient_check(fn, {logits0}) < 1e-3);
}

TEST_CASE("vsar loss: no-prior structure, KL sign and prior ordering") {
    const int vocab = 12;
    SharedSeq2Seq model(tiny_config(vocab), 13);
    PriorLM prior(tiny_config(vocab), 14);
    prior.set_trained(true);
    std::mt19937_64 data_rng(15);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<TokenSequence> sources;
        const int n = std::uniform_int_distribution<int>(1, 3)(data_rng);
        for (int i = 0; i < n; ++i) sources.push_back(random_seq(data_rng, vocab, 1, 5));
        const double tau = std::exp(std::uniform_real_distribution<double>(-4.0, 2.0)(data_rng));
        const int k = std::uniform_int_distribution<int>(1, vocab - 2)(data_rng);
        const std::uint64_t seed = data_rng();
        Graph g(false);
        Rng r1(seed), r2(seed);
        auto with = vsar_loss(g, model, &prior, sources, {tau, k}, r1).values;
        auto without = vsar_loss(g, model, nullptr, sources, {tau, k}, r2).values;
        REQUIRE(with.kl >= 0.0);
        for (double v : with.kl_sum) REQUIRE(v >= 0.0);
        REQUIRE(without.l1 == -without.recon_nll);
        REQUIRE_FALSE(without.has_kl);
        REQUIRE(without.kl == 0.0);
        REQUIRE(with.recon_nll == without.recon_nll);
        REQUIRE(without.l1 >= with.l1);
        REQUIRE(std::abs(with.l1 - (-with.recon_nll - with.kl)) < 1e-12);
    }
}

TEST_CASE("vsar loss requires a trained prior and a non-empty batch") {
    SharedSeq2Seq model(tiny_config(), 16);
    PriorLM untrained(tiny_config(), 17);
    Graph g(false);
    Rng rng(1);
    CHECK_THROWS_AS(vsar_loss(g, model, &untrained, {seq({5})}, {1.0, 3}, rng), std::logic_error);
    CHECK_THROWS_AS(vsar_loss(g, model, nullptr, {}, {1.0, 3}, rng), std::invalid_argument);
    CHECK_THROWS_AS(ddl_loss(g, model, {}), std::invalid_argument);
    CHECK_THROWS_AS(combined_loss(g, model, nullptr, {}, {}, {1.0, 3}, rng), std::invalid_argument);
}

TEST_CASE("vsar and ddl both update the shared encoder and decoder") {
    std::mt19937_64 data_rng(18);
    SharedSeq2Seq model(tiny_config(), 19);
    PriorLM prior(tiny_config(), 20);
    prior.set_trained(true);
    auto pairs = random_pairs(data_rng, 14, 4);
    const std::vector<std::string> shared{"enc.embed.tok", "enc.layer0.attn.q.w", "enc.layer0.ffn.up.w",
                                          "dec.embed.tok", "dec.layer0.self.q.w", "dec.layer0.cross.k.w", "dec.out.w"};
    for (int which = 0; which < 2; ++which) {
        model.parameters().zero_grad();
        prior.parameters().zero_grad();
        Graph g;
        Rng rng(21);
        LossOutput out = which == 0 ? ddl_loss(g, model, pairs) : vsar_loss(g, model, &prior, sources_of(pairs), {1.0, 5}, rng);
        g.backward(out.objective);
        for (const auto& name : shared) CHECK_MESSAGE(grad_norm(model.parameters().at(name)) > 0.0, name);
        for (const Parameter* p : std::as_const(prior.parameters()).all())
            for (double v : p->grad.data) REQUIRE(v == 0.0);
    }
}

TEST_CASE("pseudo-labels are detached: injecting them as constants gives identical gradients") {
    std::mt19937_64 data_rng(22);
    SharedSeq2Seq model(tiny_config(), 23);
    PriorLM prior(tiny_config(), 24);
    prior.set_trained(true);
    std::vector<TokenSequence> sources;
    for (int i = 0; i < 4; ++i) sources.push_back(random_seq(data_rng, 14, 1, 6));

    model.parameters().zero_grad();
    {
        Graph g;
        Rng rng(25);
        g.backward(vsar_loss(g, model, &prior, sources, {0.7, 5}, rng).objective);
    }
    const auto internal = grads_of(model.parameters());

    const auto labels = weak_supervision_labels(model, sources);
    model.parameters().zero_grad();
    {
        Graph g;
        Rng rng(25);
        g.backward(vsar_loss_with_labels(g, model, &prior, sources, labels, {0.7, 5}, rng).objective);
    }
    CHECK(grads_of(model.parameters()) == internal);
}

TEST_CASE("combined loss is additive") {
    std::mt19937_64 data_rng(26);
    SharedSeq2Seq model(tiny_config(), 27);
    PriorLM prior(tiny_config(), 28);
    prior.set_trained(true);
    auto pairs = random_pairs(data_rng, 14, 3);
    std::vector<TokenSequence> mono;
    for (int i = 0; i < 3; ++i) mono.push_back(random_seq(data_rng, 14, 1, 5));
    Graph g(false);
    Rng a(29), b(29), c(29);
    auto only_l2 = combined_loss(g, model, &prior, pairs, {}, {1.0, 4}, a).values;
    CHECK(only_l2.combined == ddl_loss(g, model, pairs).values.l2);
    auto only_l1 = combined_loss(g, model, &prior, {}, mono, {1.0, 4}, a).values;
    CHECK(only_l1.combined == only_l1.l1);
    auto both = combined_loss(g, model, &prior, pairs, mono, {1.0, 4}, b).values;
    auto l1 = vsar_loss(g, model, &prior, mono, {1.0, 4}, c).values.l1;
    CHECK(std::abs(both.combined - (l1 + only_l2.l2)) < 1e-6);
    CHECK(both.has_l1);
    CHECK(both.has_l2);
}

TEST_CASE("single-sample ELBO is an unbiased estimate of the exact bound (small instance)") {
    // Vocabulary of 4 specials + 4 words: 6 generable ids, so k = 6 covers the support.
    const int vocab = 8;
    ModelConfig c = tiny_config(vocab);
    c.hidden = 8;
    SharedSeq2Seq model(c, 30);
    PriorLM prior(c, 31);
    prior.set_trained(true);
    const TokenSequence source = seq({5, 6});
    const auto oracle = paraphrase::testing::brute_force_elbo(model, prior, source);
    CHECK(oracle.exact_elbo <= oracle.log_marginal);

    const int copies = 500;
    const int rounds = 4;
    double total = 0.0, total_sq = 0.0;
    Rng rng(32);
    for (int r = 0; r < rounds; ++r) {
        Graph g(false);
        auto v = vsar_loss(g, model, &prior, std::vector<TokenSequence>(copies, source), {1.0, 6}, rng).values;
        for (int i = 0; i < copies; ++i) {
            const double e = v.recon_logprob[static_cast<std::size_t>(i)] - v.kl_sum[static_cast<std::size_t>(i)];
            total += e;
            total_sq += e * e;
        }
    }
    const double n = copies * rounds;
    const double mean = total / n;
    const double se = std::sqrt((total_sq / n - mean * mean) / n);
    MESSAGE("mean " << mean << " exact ELBO " << oracle.exact_elbo << " log p(s) " << oracle.log_marginal << " se " << se);
    CHECK(std::abs(mean - oracle.exact_elbo) < 4.0 * se + 1e-9);
    CHECK(mean <= oracle.log_marginal + 3.0 * se);
}
