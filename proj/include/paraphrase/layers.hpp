#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "paraphrase/autodiff.hpp"
#include "paraphrase/data.hpp"

namespace paraphrase {

// Per-call forward settings shared by every layer.
struct ForwardContext {
    Graph* graph = nullptr;
    bool train = false;  // dropout active (also needs rng)
    Rng* rng = nullptr;
    bool frozen = false;  // bind parameters without gradients

    Var bind(Parameter& p) const { return frozen ? graph->frozen(p) : graph->parameter(p); }
    Var drop(Var x, double rate) const { return train ? ops::dropout(x, rate, rng) : x; }
};

// A padded batch of positions: row b * length + t.
struct SequenceLayout {
    int batch = 0;
    int length = 0;
    std::vector<int> lengths;
    std::vector<std::uint8_t> mask;  // batch x length, 1 = real token

    static SequenceLayout from_lengths(int batch, int length, std::vector<int> lengths);
};

// Each position is a convex mixture of k candidate token embeddings.
struct SoftTokens {
    int batch = 0;
    int length = 0;
    int k = 0;
    std::vector<int> candidates;  // (batch * length) * k
    Var weights;                  // (batch * length) x k
    std::vector<int> lengths;

    SequenceLayout layout() const { return SequenceLayout::from_lengths(batch, length, lengths); }
};

// One-hot soft view of a hard batch: candidate 0 is the token, the remaining
// k - 1 slots hold PAD with weight 0.
SoftTokens one_hot_soft_tokens(Graph& g, const TokenBatch& batch, int k);

// Throws std::invalid_argument if any weight row leaves the simplex by more than tol.
void check_simplex(const Matrix& weights, double tol = 1e-5);

class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& init);

    Var operator()(const ForwardContext& ctx, Var x) const;

    Parameter* weight = nullptr;  // in x out
    Parameter* bias = nullptr;    // 1 x out
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterSet& params, const std::string& name, int width);

    Var operator()(const ForwardContext& ctx, Var x) const;

    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet& params, const std::string& name, int width, int heads, Rng& init);

    Var self(const ForwardContext& ctx, Var x, const SequenceLayout& layout, bool causal) const;
    // Key/value projections of an encoder memory, reusable across decoder calls.
    std::pair<Var, Var> project_memory(const ForwardContext& ctx, Var memory) const;
    Var cross(const ForwardContext& ctx, Var x, const SequenceLayout& queries, const std::pair<Var, Var>& memory_kv,
              const SequenceLayout& keys) const;

private:
    Var attend(const ForwardContext& ctx, Var q, Var k, Var v, int batch, int q_len, int k_len, bool causal,
               const std::vector<std::uint8_t>& key_mask) const;

    Linear q_, k_, v_, o_;
    int heads_ = 1;
    int width_ = 0;
};

class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParameterSet& params, const std::string& name, int width, int inner, Rng& init);

    Var operator()(const ForwardContext& ctx, Var x, double dropout) const;

private:
    Linear up_, down_;
};

// Pre-norm self-attention block; causal for the language-model prior.
class EncoderLayer {
public:
    EncoderLayer(ParameterSet& params, const std::string& name, int width, int heads, int inner, double dropout,
                 Rng& init);

    Var operator()(const ForwardContext& ctx, Var x, const SequenceLayout& layout, bool causal) const;

private:
    LayerNorm ln1_, ln2_;
    MultiHeadAttention attn_;
    FeedForward ffn_;
    double dropout_;
};

// Pre-norm causal self-attention, cross-attention and feed-forward block.
class DecoderLayer {
public:
    DecoderLayer(ParameterSet& params, const std::string& name, int width, int heads, int inner, double dropout,
                 Rng& init);

    const MultiHeadAttention& cross_attention() const { return cross_; }
    Var operator()(const ForwardContext& ctx, Var x, const SequenceLayout& layout,
                   const std::pair<Var, Var>& memory_kv, const SequenceLayout& memory_layout) const;

private:
    LayerNorm ln1_, ln2_, ln3_;
    MultiHeadAttention self_, cross_;
    FeedForward ffn_;
    double dropout_;
};

// Word plus learned position embedding.
class TokenEmbedding {
public:
    TokenEmbedding() = default;
    TokenEmbedding(ParameterSet& params, const std::string& name, int vocab, int max_len, int width, Rng& init);

    Var hard(const ForwardContext& ctx, const TokenBatch& batch) const;
    Var soft(const ForwardContext& ctx, const SoftTokens& tokens) const;
    int max_len() const { return max_len_; }

private:
    Var add_positions(const ForwardContext& ctx, Var words, int batch, int length) const;

    Parameter* tokens_ = nullptr;
    Parameter* positions_ = nullptr;
    int max_len_ = 0;
};

}  // namespace paraphrase
