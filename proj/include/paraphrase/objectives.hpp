#pragma once

#include <vector>

#include "paraphrase/autodiff.hpp"
#include "paraphrase/data.hpp"
#include "paraphrase/model.hpp"
#include "paraphrase/prior.hpp"
#include "paraphrase/sampling.hpp"

namespace paraphrase {

// All likelihood terms are per-token means: sums over predicted tokens
// divided by the number of predicted tokens in the batch. The same count
// (source length - 1 per sequence) normalises reconstruction and KL, so
// l1 = -recon_nll - kl.
struct LossBundle {
    bool has_l1 = false;
    bool has_kl = false;  // false in no-prior mode
    bool has_l2 = false;
    double recon_nll = 0.0;
    double kl = 0.0;
    double l1 = 0.0;
    double l2_st = 0.0;  // log p(s | t)
    double l2_ts = 0.0;  // log p(t | s)
    double l2 = 0.0;
    double combined = 0.0;
    double tau = 0.0;
    std::vector<double> recon_logprob;  // per sequence: log p(s | latent)
    std::vector<double> kl_sum;         // per sequence: summed KL
};

// value is the bundle; objective is the 1x1 quantity to maximise.
struct LossOutput {
    LossBundle values;
    Var objective;
};

struct SamplerArgs {
    double tau = 1.0;
    int k = 10;
};

// Mask over ids allowed in generated and latent sequences (no PAD, no BOS).
std::vector<std::uint8_t> generable_mask(int vocab_size);

// Greedy decode of exactly source-length sequences in evaluation mode on a
// separate no-gradient graph.
std::vector<TokenSequence> weak_supervision_labels(const SharedSeq2Seq& model, const std::vector<TokenSequence>& sources);

// Latent tokens for positions 1..n-1 of each sequence (position 0 is BOS).
struct LatentBatch {
    Var logits;                       // inference logits, rows b * (length - 1) + j
    int batch = 0;
    int length = 0;                   // padded latent sequence length incl. BOS
    std::vector<int> lengths;         // per sequence, equals the source length
    std::vector<int> logit_rows;      // logits row of each sampled token
    std::vector<int> sequence_rows;   // row b * length + j + 1 of each sampled token
    std::vector<int> owner;           // sequence index of each sampled token
    std::vector<LatentToken> tokens;  // one per real latent position

    LatentSample sample(int b) const;
    std::vector<TokenSequence> hard_sequences() const;
};

// Teacher-forces the pseudo-label prefixes through the decoder over the
// given source memory and draws one Gumbel-TOP-k token per position.
LatentBatch latent_inference(Graph& g, const SharedSeq2Seq& model, ContextMemory& source_memory,
                             const std::vector<TokenSequence>& pseudo, const SamplerArgs& sampler, Rng& rng,
                             RunMode mode = {});

// Straight-through soft tokens for the latent sequences: one-hot forward,
// relaxed backward. BOS leads every row.
SoftTokens latent_soft_tokens(const LatentBatch& latent, double tau);

// Per-sequence log p(s | latent) as a batch x 1 column.
Var reconstruction_logprob(Graph& g, const SharedSeq2Seq& model, const SoftTokens& latent, const TokenBatch& sources,
                           RunMode mode = {});

// Per-sequence sum over positions of KL(q_j || p_j) on the sampled TOP-k
// support, where p_j is the prior conditioned on the hard latent prefix and
// renormalised over the same candidates. batch x 1 column.
Var kl_estimate(Graph& g, const LatentBatch& latent, const PriorLM& prior);

// Single-sample ELBO. prior == nullptr selects the no-prior variant (kl = 0).
LossOutput vsar_loss(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior, const std::vector<TokenSequence>& sources,
                     const SamplerArgs& sampler, Rng& rng, RunMode mode = {});
// Same, with pseudo-labels supplied by the caller.
LossOutput vsar_loss_with_labels(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior,
                                 const std::vector<TokenSequence>& sources, const std::vector<TokenSequence>& pseudo,
                                 const SamplerArgs& sampler, Rng& rng, RunMode mode = {});

// Per-token mean log p(to | from), 1x1.
Var direction_loglik(Graph& g, const SharedSeq2Seq& model, const TokenBatch& from, const TokenBatch& to,
                     RunMode mode = {});
// Per-sequence summed log p(to | from), batch x 1.
Var sequence_loglik(Graph& g, const SharedSeq2Seq& model, const TokenBatch& from, const TokenBatch& to,
                    RunMode mode = {});

// Dual directional likelihood l2 = log p(s|t) + log p(t|s) (per-token means).
LossOutput ddl_loss(Graph& g, const SharedSeq2Seq& model, const std::vector<ParallelPair>& pairs, RunMode mode = {});

// Single-direction baseline: per-token mean log p(t|s) only.
LossOutput forward_loss(Graph& g, const SharedSeq2Seq& model, const std::vector<ParallelPair>& pairs, RunMode mode = {});

// l1 + l2; either batch may be empty but not both.
LossOutput combined_loss(Graph& g, const SharedSeq2Seq& model, const PriorLM* prior,
                         const std::vector<ParallelPair>& pairs, const std::vector<TokenSequence>& sources,
                         const SamplerArgs& sampler, Rng& rng, RunMode mode = {});

}  // namespace paraphrase
