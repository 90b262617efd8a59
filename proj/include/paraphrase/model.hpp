#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "paraphrase/autodiff.hpp"
#include "paraphrase/data.hpp"
#include "paraphrase/layers.hpp"

namespace paraphrase {

struct ModelConfig {
    int layers = 6;
    int hidden = 512;
    int heads = 8;
    int ffn_mult = 4;
    double dropout = 0.1;
    int max_len = 20;
    int vocab_size = 0;

    void validate() const;
};

// Dropout is active only when train is set and an rng is supplied.
struct RunMode {
    bool train = false;
    Rng* rng = nullptr;
};

// Encoder output: hidden vectors for each (padded) position plus the padding
// layout. Cross-attention key/value projections are cached lazily per layer.
struct ContextMemory {
    Var hidden;  // (batch * length) x hidden
    SequenceLayout layout;
    std::vector<std::pair<Var, Var>> cross_kv;

    int batch() const { return layout.batch; }
    int length() const { return layout.length; }
};

// Ids a decoder may emit: everything except PAD and BOS.
bool is_generable(int id);

// One encoder and one decoder shared by the s->t and t->s directions, the
// latent inference network and the reconstruction network.
class SharedSeq2Seq {
public:
    SharedSeq2Seq(const ModelConfig& config, std::uint64_t seed);
    SharedSeq2Seq(const SharedSeq2Seq&) = delete;
    SharedSeq2Seq& operator=(const SharedSeq2Seq&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    // Gradients reach the parameters when g records; parameters are never
    // modified by these calls.
    ContextMemory encode(Graph& g, const TokenBatch& tokens, RunMode mode = {}) const;
    ContextMemory encode_soft(Graph& g, const SoftTokens& tokens, RunMode mode = {}) const;
    // Logits (batch * prefix length) x vocab; row b * L + i predicts token i + 1.
    Var decode_logits(Graph& g, ContextMemory& memory, const TokenBatch& prefix, RunMode mode = {}) const;
    Var decode_soft(Graph& g, ContextMemory& memory, const SoftTokens& prefix, RunMode mode = {}) const;

    // Argmax decoding from BOS until EOS or max_len tokens (ties: lowest id).
    std::vector<TokenSequence> greedy_decode(const std::vector<TokenSequence>& sources, int max_len) const;
    TokenSequence greedy_decode(const TokenSequence& source, int max_len) const;
    // Argmax decoding of exactly source.length() - 1 tokens after BOS; EOS does not stop it.
    std::vector<TokenSequence> decode_same_length(const std::vector<TokenSequence>& sources) const;

    std::map<std::string, Matrix> state() const;
    // Requires exactly the model's parameter names and shapes.
    void load_state(const std::map<std::string, Matrix>& state);

private:
    ForwardContext context(Graph& g, RunMode mode) const;
    ContextMemory run_encoder(const ForwardContext& ctx, Var embedded, SequenceLayout layout) const;
    Var run_decoder(const ForwardContext& ctx, ContextMemory& memory, Var embedded, const SequenceLayout& layout) const;
    std::vector<TokenSequence> decode_batch(const std::vector<TokenSequence>& sources, int max_len,
                                            bool same_length) const;

    ModelConfig config_;
    ParameterSet params_;
    TokenEmbedding enc_embed_;
    std::vector<EncoderLayer> enc_layers_;
    LayerNorm enc_norm_;
    TokenEmbedding dec_embed_;
    std::vector<DecoderLayer> dec_layers_;
    LayerNorm dec_norm_;
    Linear out_;
};

std::map<std::string, Matrix> parameter_state(const ParameterSet& params);
void load_parameter_state(ParameterSet& params, const std::map<std::string, Matrix>& state);

}  // namespace paraphrase
