#include "paraphrase/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace paraphrase {

std::vector<std::uint8_t> generable_mask(int vocab_size) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(vocab_size), 0);
    for (int id = 0; id < vocab_size; ++id) mask[static_cast<std::size_t>(id)] = is_generable(id) ? 1 : 0;
    return mask;
}

std::vector<TokenSequence> weak_supervision_labels(const SharedSeq2Seq& model, const std::vector<TokenSequence>& sources) {
    return model.decode_same_length(sources);
}

LatentSample LatentBatch::sample(int b) const {
    LatentSample s;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (owner[i] == b) s.tokens.push_back(tokens[i]);
    return s;
}

std::vector<TokenSequence> LatentBatch::hard_sequences() const {
    std::vector<TokenSequence> out(static_cast<std::size_t>(batch), TokenSequence{{kBos}});
    for (std::size_t i = 0; i < tokens.size(); ++i) out[static_cast<std::size_t>(owner[i])].ids.push_back(tokens[i].hard_id());
    return out;
}

LatentBatch latent_inference(Graph& g, const SharedSeq2Seq& model, ContextMemory& source_memory,
                             const std::vector<TokenSequence>& pseudo, const SamplerArgs& sampler, Rng& rng,
                             RunMode mode) {
    const int n = static_cast<int>(pseudo.size());
    if (n != source_memory.batch()) throw std::invalid_argument("latent_inference: pseudo-label batch mismatch");
    LatentBatch out;
    out.batch = n;
    out.length = source_memory.length();
    std::vector<TokenSequence> prefixes;
    for (int b = 0; b < n; ++b) {
        const auto& p = pseudo[static_cast<std::size_t>(b)];
        const int len = source_memory.layout.lengths[static_cast<std::size_t>(b)];
        if (p.length() != len)
            throw std::invalid_argument("latent_inference: pseudo-label length " + std::to_string(p.length()) +
                                        " differs from source length " + std::to_string(len));
        if (len < 2) throw std::invalid_argument("latent_inference: source too short");
        prefixes.push_back(TokenSequence{{p.ids.begin(), p.ids.end() - 1}});
        out.lengths.push_back(len);
    }
    const TokenBatch prefix = make_batch(prefixes);
    out.logits = model.decode_logits(g, source_memory, prefix, mode);
    for (int b = 0; b < n; ++b)
        for (int j = 0; j + 1 < out.lengths[static_cast<std::size_t>(b)]; ++j) {
            out.logit_rows.push_back(b * prefix.length + j);
            out.sequence_rows.push_back(b * out.length + j + 1);
            out.owner.push_back(b);
        }

    const Matrix& lv = out.logits.value();
    const auto allowed = generable_mask(lv.cols);
    out.tokens.reserve(out.logit_rows.size());
    for (int row : out.logit_rows)
        out.tokens.push_back(gumbel_topk_sample(lv.row_span(row), sampler.tau, sampler.k, rng, allowed));
    return out;
}

namespace {

Var latent_logits(const LatentBatch& latent) { return ops::embedding(latent.logits, latent.logit_rows); }

}  // namespace

SoftTokens latent_soft_tokens(const LatentBatch& latent, double tau) {
    if (latent.tokens.empty()) throw std::invalid_argument("latent_soft_tokens: no latent tokens");
    const int k = static_cast<int>(latent.tokens.front().candidate_ids.size());
    SoftTokens soft;
    soft.batch = latent.batch;
    soft.length = latent.length;
    soft.k = k;
    soft.lengths = latent.lengths;
    const int rows = latent.batch * latent.length;
    soft.candidates.assign(static_cast<std::size_t>(rows) * k, kPad);
    Matrix base(rows, k);
    for (int b = 0; b < latent.batch; ++b) {
        soft.candidates[static_cast<std::size_t>(b) * latent.length * k] = kBos;
        for (int t = 0; t < latent.length; ++t) base(b * latent.length + t, 0) = 1.0;
    }
    for (std::size_t i = 0; i < latent.tokens.size(); ++i) {
        const auto& ids = latent.tokens[i].candidate_ids;
        std::copy(ids.begin(), ids.end(),
                  soft.candidates.begin() + static_cast<std::ptrdiff_t>(latent.sequence_rows[i]) * k);
    }
    Var st = straight_through(latent_logits(latent), latent.tokens, tau);
    soft.weights = ops::scatter_rows(std::move(base), st, latent.sequence_rows);
    return soft;
}

namespace {

long predicted_tokens(const TokenBatch& batch) {
    long count = 0;
    for (int len : batch.lengths) count += len - 1;
    return count;
}

// Teacher-forced log-probability of each target token, (batch * length) x 1.
Var target_logprobs(Graph& g, const SharedSeq2Seq& model, ContextMemory& memory, const TokenBatch& to, RunMode mode) {
    return ops::pick(ops::log_softmax(model.decode_logits(g, memory, to, mode)), to.next_token_targets());
}

// Sums consecutive groups of `length` rows: batch x 1.
Var per_sequence(Graph& g, Var column, int batch, int length) {
    Matrix select(batch, batch * length);
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < length; ++t) select(b, b * length + t) = 1.0;
    return ops::matmul(g.constant(std::move(select)), column);
}

}  // namespace

Var sequence_loglik(Graph& g, const SharedSeq2Seq& model, const TokenBatch& from, const TokenBatch& to, RunMode mode) {
    ContextMemory memory = model.encode(g, from, mode);
    return per_sequence(g, target_logprobs(g, model, memory, to, mode), to.batch, to.length);
}

Var direction_loglik(Graph& g, const SharedSeq2Seq& model, const TokenBatch& from, const TokenBatch& to, RunMode mode) {
    ContextMemory memory = model.encode(g, from, mode);
    return ops::scale(ops::sum(target_logprobs(g, model, memory, to, mode)),
                      1.0 / static_cast<double>(predicted_tokens(to)));
}

Var reconstruction_logprob(Graph& g, const SharedSeq2Seq& model, const SoftTokens& latent, const TokenBatch& sources,
                           RunMode mode) {
    if (latent.batch != sources.batch) throw std::invalid_argument("reconstruction: batch mismatch");
    ContextMemory memory = model.encode_soft(g, latent, mode);
    return per_sequence(g, target_logprobs(g, model, memory, sources, mode), sources.batch, sources.length);
}

Var kl_estimate(Graph& g, const LatentBatch& latent, const PriorLM& prior) {
    if (latent.tokens.empty()) throw std::invalid_argument("kl_estimate: no latent tokens");
    const int k = static_cast<int>(latent.tokens.front().candidate_ids.size());
    // Prior next-token distributions given the hard latent prefixes.
    std::vector<TokenSequence> prefixes = latent.hard_sequences();
    for (auto& p : prefixes) p.ids.pop_back();
    const TokenBatch prefix = make_batch(prefixes);
    const Matrix prior_lp = prior_token_logprobs(prior, prefix);

    Matrix p(static_cast<int>(latent.tokens.size()), k);
    for (std::size_t i = 0; i < latent.tokens.size(); ++i) {
        const int b = latent.owner[i];
        const int j = latent.sequence_rows[i] - b * latent.length - 1;  // predicted from prefix position j
        const int row = b * prefix.length + j;
        const auto& ids = latent.tokens[i].candidate_ids;
        double mx = -INFINITY;
        for (int c = 0; c < k; ++c) mx = std::max(mx, prior_lp(row, ids[static_cast<std::size_t>(c)]));
        double total = 0.0;
        for (int c = 0; c < k; ++c) total += (p(static_cast<int>(i), c) = std::exp(prior_lp(row, ids[static_cast<std::size_t>(c)]) - mx));
        for (int c = 0; c < k; ++c) p(static_cast<int>(i), c) /= total;
    }
    Var kl = ops::kl_rows(candidate_logits(latent_logits(latent), latent.tokens), p);
    Matrix select(latent.batch, static_cast<int>(latent.tokens.size()));
    for (std::size_t i = 0; i < latent.tokens.size(); ++i) select(latent.owner[i], static_cast<int>(i)) = 1.0;
    return ops::matmul(g.constant(std::move(select)), kl);
}

LossOutput vsar_loss_with_labels(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior,
                                 const std::vector<TokenSequence>& sources, const std::vector<TokenSequence>& pseudo,
                                 const SamplerArgs& sampler, Rng& rng, RunMode mode) {
    if (sources.empty()) throw std::invalid_argument("vsar_loss: empty batch");
    const TokenBatch src = make_batch(sources);
    ContextMemory memory = model.encode(g, src, mode);
    LatentBatch latent = latent_inference(g, model, memory, pseudo, sampler, rng, mode);
    SoftTokens soft = latent_soft_tokens(latent, sampler.tau);
    Var recon = reconstruction_logprob(g, model, soft, src, mode);
    const double count = static_cast<double>(predicted_tokens(src));

    LossOutput out;
    LossBundle& v = out.values;
    v.has_l1 = true;
    v.tau = sampler.tau;
    v.recon_logprob.assign(recon.value().data.begin(), recon.value().data.end());
    Var recon_total = ops::sum(recon);
    if (prior != nullptr) {
        Var kl = kl_estimate(g, latent, *prior);
        v.has_kl = true;
        v.kl_sum.assign(kl.value().data.begin(), kl.value().data.end());
        const std::vector<Var> terms{recon_total, ops::sum(kl)};
        const std::vector<double> coeff{1.0 / count, -1.0 / count};
        out.objective = ops::linear_combination(terms, coeff);
    } else {
        v.kl_sum.assign(static_cast<std::size_t>(src.batch), 0.0);
        out.objective = ops::scale(recon_total, 1.0 / count);
    }
    double kl_sum = 0.0;
    for (double x : v.kl_sum) kl_sum += x;
    v.recon_nll = -(recon_total.scalar() * (1.0 / count));
    v.kl = kl_sum * (1.0 / count);
    v.l1 = out.objective.scalar();
    v.combined = v.l1;
    return out;
}

LossOutput vsar_loss(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior, const std::vector<TokenSequence>& sources,
                     const SamplerArgs& sampler, Rng& rng, RunMode mode) {
    if (sources.empty()) throw std::invalid_argument("vsar_loss: empty batch");
    return vsar_loss_with_labels(g, model, prior, sources, weak_supervision_labels(model, sources), sampler, rng, mode);
}

LossOutput ddl_loss(Graph& g, const SharedSeq2Seq& model, const std::vector<ParallelPair>& pairs, RunMode mode) {
    if (pairs.empty()) throw std::invalid_argument("ddl_loss: empty batch");
    const TokenBatch s = make_batch(sources_of(pairs));
    const TokenBatch t = make_batch(targets_of(pairs));
    Var ts = direction_loglik(g, model, s, t, mode);
    Var st = direction_loglik(g, model, t, s, mode);
    LossOutput out;
    out.objective = ops::add(st, ts);
    LossBundle& v = out.values;
    v.has_l2 = true;
    v.l2_ts = ts.scalar();
    v.l2_st = st.scalar();
    v.l2 = out.objective.scalar();
    v.combined = v.l2;
    return out;
}

LossOutput forward_loss(Graph& g, const SharedSeq2Seq& model, const std::vector<ParallelPair>& pairs, RunMode mode) {
    if (pairs.empty()) throw std::invalid_argument("forward_loss: empty batch");
    LossOutput out;
    out.objective = direction_loglik(g, model, make_batch(sources_of(pairs)), make_batch(targets_of(pairs)), mode);
    out.values.l2_ts = out.objective.scalar();
    out.values.combined = out.values.l2_ts;
    return out;
}

LossOutput combined_loss(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior,
                         const std::vector<ParallelPair>& pairs, const std::vector<TokenSequence>& sources,
                         const SamplerArgs& sampler, Rng& rng, RunMode mode) {
    if (pairs.empty() && sources.empty()) throw std::invalid_argument("combined_loss: both batches are empty");
    if (sources.empty()) return ddl_loss(g, model, pairs, mode);
    if (pairs.empty()) return vsar_loss(g, model, prior, sources, sampler, rng, mode);
    LossOutput unsup = vsar_loss(g, model, prior, sources, sampler, rng, mode);
    LossOutput sup = ddl_loss(g, model, pairs, mode);
    LossOutput out;
    out.values = unsup.values;
    out.values.has_l2 = true;
    out.values.l2_st = sup.values.l2_st;
    out.values.l2_ts = sup.values.l2_ts;
    out.values.l2 = sup.values.l2;
    out.objective = ops::add(unsup.objective, sup.objective);
    out.values.combined = out.objective.scalar();
    return out;
}

}  // namespace paraphrase
