#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "paraphrase/autodiff.hpp"
#include "paraphrase/data.hpp"
#include "paraphrase/layers.hpp"
#include "paraphrase/model.hpp"

namespace paraphrase {

// Decoder-only language model over target-side text, kept disjoint from the
// paraphrase model's parameters.
class PriorLM {
public:
    PriorLM(const ModelConfig& config, std::uint64_t seed);
    PriorLM(const PriorLM&) = delete;
    PriorLM& operator=(const PriorLM&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    bool trained() const { return trained_; }
    void set_trained(bool trained) { trained_ = trained; }

    // Next-token logits per prefix position. Parameters are bound frozen
    // unless trainable is set.
    Var logits(Graph& g, const TokenBatch& prefix, RunMode mode = {}, bool trainable = false) const;
    Var logits_soft(Graph& g, const SoftTokens& prefix, RunMode mode = {}, bool trainable = false) const;

    std::map<std::string, Matrix> state() const { return parameter_state(params_); }
    void load_state(const std::map<std::string, Matrix>& state) { load_parameter_state(params_, state); }

private:
    ForwardContext context(Graph& g, RunMode mode, bool trainable) const;
    Var run(const ForwardContext& ctx, Var embedded, const SequenceLayout& layout) const;

    ModelConfig config_;
    ParameterSet params_;
    TokenEmbedding embed_;
    std::vector<EncoderLayer> layers_;
    LayerNorm norm_;
    Linear out_;
    bool trained_ = false;
};

// Log-softmax rows (batch * length) x vocab. In strict mode an untrained
// prior is an error.
Matrix prior_token_logprobs(const PriorLM& prior, const TokenBatch& prefix, bool strict = true);
Matrix prior_token_logprobs(const PriorLM& prior, const SoftTokens& prefix, bool strict = true);

// exp(mean next-token negative log-likelihood) over all predicted tokens.
double prior_perplexity(const PriorLM& prior, const std::vector<TokenSequence>& corpus);

struct PriorTrainConfig {
    double lr = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1000;
    double clip_norm = 1.0;
    double heldout_fraction = 0.1;
};

struct PriorTrainReport {
    std::vector<double> heldout_perplexity;  // one entry per epoch
    int best_epoch = 0;                      // 1-based
    double best_perplexity = 0.0;
    long steps = 0;
};

using PriorStepCallback = std::function<void(int epoch, long step, double nll)>;

// Next-token cross-entropy training; the prior ends up holding the epoch
// with the lowest held-out perplexity and is marked trained. A corpus with a
// single sentence is used for both training and held-out evaluation.
PriorTrainReport train_prior(PriorLM& prior, const std::vector<TokenSequence>& mono, const PriorTrainConfig& config,
                             const PriorStepCallback& on_step = {});

}  // namespace paraphrase
