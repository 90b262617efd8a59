#pragma once

// Brute-force marginal likelihood and exact ELBO for tiny instances, computed
// by enumerating every latent sequence. Uses only hard-token model calls and
// hand-written softmax arithmetic, never the objectives module.

#include <cmath>
#include <limits>
#include <vector>

#include "paraphrase/model.hpp"
#include "paraphrase/prior.hpp"

namespace paraphrase::testing {

struct ElboOracle {
    double log_marginal = 0.0;  // log sum_t p(t) p(s | t)
    double exact_elbo = 0.0;    // E_q[log p(s|t) + log p(t) - log q(t)]
};

inline std::vector<double> log_softmax_over(const Matrix& logits, int row, const std::vector<int>& ids) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int id : ids) mx = std::max(mx, logits(row, id));
    double total = 0.0;
    for (int id : ids) total += std::exp(logits(row, id) - mx);
    std::vector<double> out;
    for (int id : ids) out.push_back(logits(row, id) - mx - std::log(total));
    return out;
}

inline double logsumexp(const std::vector<double>& xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    double total = 0.0;
    for (double x : xs) total += std::exp(x - mx);
    return mx + std::log(total);
}

// Enumerates all latent sequences BOS + (n - 1) generable tokens for source s.
inline ElboOracle brute_force_elbo(const SharedSeq2Seq& model, const PriorLM& prior, const TokenSequence& source) {
    const int vocab = model.config().vocab_size;
    std::vector<int> support;
    for (int id = 0; id < vocab; ++id)
        if (is_generable(id)) support.push_back(id);
    const int positions = source.length() - 1;
    const int k = static_cast<int>(support.size());

    // Inference distribution: decoder over the source memory, teacher-forced
    // with the same-length greedy pseudo-label prefix.
    const TokenSequence pseudo = model.decode_same_length({source}).front();
    std::vector<std::vector<double>> log_q;
    {
        Graph g(false);
        ContextMemory mem = model.encode(g, make_batch({source}));
        TokenSequence prefix{{pseudo.ids.begin(), pseudo.ids.end() - 1}};
        const Matrix logits = model.decode_logits(g, mem, make_batch({prefix})).value();
        for (int j = 0; j < positions; ++j) log_q.push_back(log_softmax_over(logits, j, support));
    }

    long total = 1;
    for (int j = 0; j < positions; ++j) total *= k;
    std::vector<double> joint;
    double elbo = 0.0;
    std::vector<int> digits(static_cast<std::size_t>(positions), 0);
    for (long code = 0; code < total; ++code) {
        long c = code;
        for (int j = positions - 1; j >= 0; --j) {
            digits[static_cast<std::size_t>(j)] = static_cast<int>(c % k);
            c /= k;
        }
        TokenSequence latent{{kBos}};
        for (int d : digits) latent.ids.push_back(support[static_cast<std::size_t>(d)]);

        TokenSequence prior_prefix{{latent.ids.begin(), latent.ids.end() - 1}};
        const Matrix prior_logits = [&] {
            Graph g(false);
            return prior.logits(g, make_batch({prior_prefix})).value();
        }();
        double log_prior = 0.0;
        double log_qt = 0.0;
        for (int j = 0; j < positions; ++j) {
            const int d = digits[static_cast<std::size_t>(j)];
            log_prior += log_softmax_over(prior_logits, j, support)[static_cast<std::size_t>(d)];
            log_qt += log_q[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
        }

        double log_recon = 0.0;
        {
            Graph g(false);
            ContextMemory mem = model.encode(g, make_batch({latent}));
            const Matrix logits = model.decode_logits(g, mem, make_batch({source})).value();
            std::vector<int> all(static_cast<std::size_t>(vocab));
            for (int id = 0; id < vocab; ++id) all[static_cast<std::size_t>(id)] = id;
            for (int t = 0; t + 1 < source.length(); ++t)
                log_recon += log_softmax_over(logits, t, all)[static_cast<std::size_t>(source.ids[static_cast<std::size_t>(t + 1)])];
        }
        joint.push_back(log_prior + log_recon);
        elbo += std::exp(log_qt) * (log_recon + log_prior - log_qt);
    }
    return {logsumexp(joint), elbo};
}

}  // namespace paraphrase::testing
