#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "paraphrase/sampling.hpp"
#include "test_support.hpp"

using namespace paraphrase;
using paraphrase::testing::gradient_check;

namespace {

std::vector<double> softmax(const std::vector<double>& x) {
    double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> p;
    double total = 0.0;
    for (double v : x) total += std::exp(v - mx);
    for (double v : x) p.push_back(std::exp(v - mx) / total);
    return p;
}

}  // namespace

TEST_CASE("temperature schedule endpoints and clamping") {
    TemperatureSchedule s;
    s.total_steps = 1000;
    CHECK(temperature_at(s, 0) == doctest::Approx(10.0));
    CHECK(temperature_at(s, 1000) == doctest::Approx(0.01));
    CHECK(temperature_at(s, 500) == doctest::Approx(std::sqrt(10.0 * 0.01)));
    CHECK(temperature_at(s, -5) == doctest::Approx(10.0));
    CHECK(temperature_at(s, 5000) == doctest::Approx(0.01));

    TemperatureSchedule f;
    f.mode = TemperatureMode::fixed;
    for (long step : {0L, 7L, 123456L}) CHECK(temperature_at(f, step) == 0.1);
}

TEST_CASE("temperature schedule is non-increasing (property)") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        TemperatureSchedule s;
        s.end = std::uniform_real_distribution<double>(1e-3, 1.0)(rng);
        s.start = s.end * std::uniform_real_distribution<double>(1.01, 1e4)(rng);
        s.total_steps = std::uniform_int_distribution<long>(1, 5000)(rng);
        s.validate();
        double prev = INFINITY;
        for (long step = -2; step <= s.total_steps + 2; step += std::max(1L, s.total_steps / 97)) {
            const double t = temperature_at(s, step);
            CHECK(t <= prev);
            prev = t;
        }
    }
}

TEST_CASE("schedule validation") {
    TemperatureSchedule s;
    s.start = 0.01;
    s.end = 10.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    TemperatureSchedule f;
    f.mode = TemperatureMode::fixed;
    f.fixed_value = 0.0;
    CHECK_THROWS_AS(f.validate(), std::invalid_argument);
    CHECK(parse_temperature_mode("fixed") == TemperatureMode::fixed);
    CHECK_THROWS_AS(parse_temperature_mode("cosine"), std::invalid_argument);
}

TEST_CASE("k = 1 gives a single candidate with weight one") {
    Rng rng(4);
    std::vector<double> logits{0.3, -1.0, 2.0, 0.0};
    auto tok = gumbel_topk_sample(logits, 0.5, 1, rng);
    REQUIRE(tok.candidate_ids.size() == 1);
    CHECK(tok.relaxed_weights[0] == 1.0);
    CHECK(tok.hard_index == 0);
}

TEST_CASE("Gumbel-max marginal matches softmax") {
    Rng rng(1234);
    std::vector<double> logits(10);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& l : logits) l = n(rng);
    const auto p = softmax(logits);
    const int draws = 200000;
    for (double tau : {0.1, 1.0, 5.0}) {
        std::vector<int> counts(10, 0);
        for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(gumbel_topk_sample(logits, tau, 10, rng).hard_id())];
        for (int c = 0; c < 10; ++c) CHECK(std::abs(counts[static_cast<std::size_t>(c)] / double(draws) - p[static_cast<std::size_t>(c)]) < 0.01);
    }
}

TEST_CASE("high temperature flattens the relaxed weights") {
    Rng rng(5);
    std::vector<double> logits{1.0, -2.0, 0.5, 3.0, 0.0};
    auto tok = gumbel_topk_sample(logits, 1e6, 5, rng);
    for (double w : tok.relaxed_weights) CHECK(std::abs(w - 0.2) < 1e-3);
}

TEST_CASE("latent token invariants (property)") {
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        const int vocab = std::uniform_int_distribution<int>(1, 30)(rng);
        const int k = std::uniform_int_distribution<int>(1, vocab)(rng);
        const double tau = std::exp(std::uniform_real_distribution<double>(-5.0, 5.0)(rng));
        std::vector<double> logits(static_cast<std::size_t>(vocab));
        for (double& l : logits) l = std::normal_distribution<double>(0.0, 3.0)(rng);
        auto tok = gumbel_topk_sample(logits, tau, k, rng);
        REQUIRE(tok.candidate_ids.size() == static_cast<std::size_t>(k));
        std::set<int> distinct(tok.candidate_ids.begin(), tok.candidate_ids.end());
        CHECK(distinct.size() == static_cast<std::size_t>(k));
        double total = 0.0;
        for (double w : tok.relaxed_weights) {
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::abs(total - 1.0) < 1e-5);
        CHECK(tok.hard_index == std::max_element(tok.relaxed_weights.begin(), tok.relaxed_weights.end()) -
                                    tok.relaxed_weights.begin());
        // Candidates are the top-k perturbed logits.
        const double weakest = logits[static_cast<std::size_t>(tok.candidate_ids.back())] + tok.noise.back();
        for (std::size_t i = 0; i + 1 < tok.candidate_ids.size(); ++i)
            CHECK(logits[static_cast<std::size_t>(tok.candidate_ids[i])] + tok.noise[i] >= weakest);
    }
}

TEST_CASE("hard choice is invariant to temperature and logit shifts for fixed noise") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::vector<double> logits{0.1, 0.7, -0.4, 1.3, 0.2, -2.0};
        Rng a(seed), b(seed), c(seed);
        auto base = gumbel_topk_sample(logits, 1.0, 4, a);
        auto cold = gumbel_topk_sample(logits, 0.01, 4, b);
        std::vector<double> shifted = logits;
        for (double& l : shifted) l += 17.5;
        auto moved = gumbel_topk_sample(shifted, 1.0, 4, c);
        CHECK(base.hard_id() == cold.hard_id());
        CHECK(base.hard_id() == moved.hard_id());
        CHECK(base.candidate_ids == moved.candidate_ids);
    }
}

TEST_CASE("allowed mask restricts candidates") {
    Rng rng(8);
    std::vector<double> logits{5.0, 5.0, 0.0, 0.0, 0.0};
    std::vector<std::uint8_t> allowed{0, 0, 1, 1, 1};
    for (int i = 0; i < 100; ++i) {
        auto tok = gumbel_topk_sample(logits, 1.0, 3, rng, allowed);
        for (int id : tok.candidate_ids) CHECK(id >= 2);
    }
    CHECK_THROWS_AS(gumbel_topk_sample(logits, 1.0, 4, rng, allowed), std::invalid_argument);
}

TEST_CASE("sampler rejects bad input") {
    Rng rng(9);
    std::vector<double> logits{0.0, NAN, 1.0};
    CHECK_THROWS_AS(gumbel_topk_sample(logits, 1.0, 2, rng), std::invalid_argument);
    std::vector<double> ok{0.0, 1.0};
    CHECK_THROWS_AS(gumbel_topk_sample(ok, 0.0, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_topk_sample(ok, 1.0, 3, rng), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_topk_sample(ok, 1.0, 0, rng), std::invalid_argument);
}

TEST_CASE("straight-through forward is one-hot and backward equals the relaxed gradient") {
    Rng rng(10);
    const int vocab = 7;
    Matrix logits = paraphrase::testing::random_matrix(3, vocab, rng);
    for (double tau : {0.1, 1.0, 10.0}) {
        auto tokens = gumbel_topk_rows(logits, tau, 5, rng);
        Matrix probe = paraphrase::testing::random_matrix(3, 5, rng);
        std::vector<double> grads[2];
        for (int variant = 0; variant < 2; ++variant) {
            Graph g;
            Parameter p{"logits", logits, Matrix(3, vocab)};
            Var lv = g.parameter(p);
            Var out = variant == 0 ? straight_through(lv, tokens, tau) : relaxed_weights(lv, tokens, tau);
            if (variant == 0) {
                for (int r = 0; r < 3; ++r) {
                    int ones = 0, zeros = 0;
                    for (int c = 0; c < 5; ++c) {
                        ones += out.value()(r, c) == 1.0;
                        zeros += out.value()(r, c) == 0.0;
                    }
                    CHECK(ones == 1);
                    CHECK(zeros == 4);
                    CHECK(out.value()(r, tokens[static_cast<std::size_t>(r)].hard_index) == 1.0);
                }
            }
            Var loss = ops::sum(ops::pick(ops::matmul(out, g.constant(probe), false, true), std::vector<int>{0, 1, 2}));
            g.backward(loss);
            grads[variant] = p.grad.data;
        }
        for (std::size_t i = 0; i < grads[0].size(); ++i) CHECK(grads[0][i] == grads[1][i]);
    }
}

TEST_CASE("relaxed path matches finite differences on 5-dim logits") {
    Rng rng(11);
    for (double tau : {0.1, 1.0, 10.0}) {
        Matrix logits = paraphrase::testing::random_matrix(1, 5, rng);
        auto tokens = gumbel_topk_rows(logits, tau, 5, rng);
        Matrix probe = paraphrase::testing::random_matrix(1, 5, rng);
        auto fn = [&](Graph& g, const std::vector<Var>& in) {
            Var w = relaxed_weights(in[0], tokens, tau);
            return ops::sum(ops::pick(ops::matmul(w, g.constant(probe), false, true), std::vector<int>{0}));
        };
        CHECK(gradient_check(fn, {logits}) < 1e-3);
    }
}
