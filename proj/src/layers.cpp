#include "paraphrase/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace paraphrase {

namespace {

void xavier_uniform(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / (m.rows + m.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : m.data) v = dist(rng);
}

void normal_init(Matrix& m, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : m.data) v = dist(rng);
}

}  // namespace

SequenceLayout SequenceLayout::from_lengths(int batch, int length, std::vector<int> lengths) {
    if (static_cast<int>(lengths.size()) != batch) throw std::invalid_argument("layout: lengths do not match batch");
    SequenceLayout l;
    l.batch = batch;
    l.length = length;
    l.mask.assign(static_cast<std::size_t>(batch) * length, 0);
    for (int b = 0; b < batch; ++b) {
        const int n = lengths[static_cast<std::size_t>(b)];
        if (n < 1 || n > length) throw std::invalid_argument("layout: sequence length out of range");
        for (int t = 0; t < n; ++t) l.mask[static_cast<std::size_t>(b) * length + t] = 1;
    }
    l.lengths = std::move(lengths);
    return l;
}

SoftTokens one_hot_soft_tokens(Graph& g, const TokenBatch& batch, int k) {
    if (k < 1) throw std::invalid_argument("one_hot_soft_tokens: k must be >= 1");
    SoftTokens s;
    s.batch = batch.batch;
    s.length = batch.length;
    s.k = k;
    s.lengths = batch.lengths;
    const int rows = batch.batch * batch.length;
    s.candidates.assign(static_cast<std::size_t>(rows) * k, kPad);
    Matrix w(rows, k);
    for (int r = 0; r < rows; ++r) {
        s.candidates[static_cast<std::size_t>(r) * k] = batch.ids[static_cast<std::size_t>(r)];
        w(r, 0) = 1.0;
    }
    s.weights = g.constant(std::move(w));
    return s;
}

void check_simplex(const Matrix& weights, double tol) {
    for (int r = 0; r < weights.rows; ++r) {
        double total = 0.0;
        for (int c = 0; c < weights.cols; ++c) {
            const double w = weights(r, c);
            if (!(w >= -tol)) throw std::invalid_argument("soft token weights must be non-negative");
            total += w;
        }
        if (std::abs(total - 1.0) > tol)
            throw std::invalid_argument("soft token weights must sum to 1 (row " + std::to_string(r) + " sums to " +
                                        std::to_string(total) + ")");
    }
}

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& init) {
    weight = &params.add(name + ".w", in, out);
    bias = &params.add(name + ".b", 1, out);
    xavier_uniform(weight->value, init);
}

Var Linear::operator()(const ForwardContext& ctx, Var x) const {
    return ops::add_row(ops::matmul(x, ctx.bind(*weight)), ctx.bind(*bias));
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, int width) {
    gain = &params.add(name + ".g", 1, width);
    bias = &params.add(name + ".b", 1, width);
    gain->value.fill(1.0);
}

Var LayerNorm::operator()(const ForwardContext& ctx, Var x) const {
    return ops::layer_norm(x, ctx.bind(*gain), ctx.bind(*bias));
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, int width, int heads,
                                       Rng& init)
    : q_(params, name + ".q", width, width, init),
      k_(params, name + ".k", width, width, init),
      v_(params, name + ".v", width, width, init),
      o_(params, name + ".o", width, width, init),
      heads_(heads),
      width_(width) {
    if (heads < 1 || width % heads != 0) throw std::invalid_argument("attention width must be divisible by heads");
}

Var MultiHeadAttention::attend(const ForwardContext& ctx, Var q, Var k, Var v, int batch, int q_len, int k_len,
                               bool causal, const std::vector<std::uint8_t>& key_mask) const {
    kernels::AttentionShape shape{batch, heads_, q_len, k_len, width_ / heads_, causal};
    return o_(ctx, ops::attention(q, k, v, shape, key_mask));
}

Var MultiHeadAttention::self(const ForwardContext& ctx, Var x, const SequenceLayout& layout, bool causal) const {
    return attend(ctx, q_(ctx, x), k_(ctx, x), v_(ctx, x), layout.batch, layout.length, layout.length, causal,
                  layout.mask);
}

std::pair<Var, Var> MultiHeadAttention::project_memory(const ForwardContext& ctx, Var memory) const {
    return {k_(ctx, memory), v_(ctx, memory)};
}

Var MultiHeadAttention::cross(const ForwardContext& ctx, Var x, const SequenceLayout& queries,
                              const std::pair<Var, Var>& memory_kv, const SequenceLayout& keys) const {
    if (queries.batch != keys.batch) throw std::invalid_argument("cross attention batch mismatch");
    return attend(ctx, q_(ctx, x), memory_kv.first, memory_kv.second, queries.batch, queries.length, keys.length,
                  false, keys.mask);
}

FeedForward::FeedForward(ParameterSet& params, const std::string& name, int width, int inner, Rng& init)
    : up_(params, name + ".up", width, inner, init), down_(params, name + ".down", inner, width, init) {}

Var FeedForward::operator()(const ForwardContext& ctx, Var x, double dropout) const {
    return down_(ctx, ctx.drop(ops::relu(up_(ctx, x)), dropout));
}

EncoderLayer::EncoderLayer(ParameterSet& params, const std::string& name, int width, int heads, int inner,
                           double dropout, Rng& init)
    : ln1_(params, name + ".ln1", width),
      ln2_(params, name + ".ln2", width),
      attn_(params, name + ".attn", width, heads, init),
      ffn_(params, name + ".ffn", width, inner, init),
      dropout_(dropout) {}

Var EncoderLayer::operator()(const ForwardContext& ctx, Var x, const SequenceLayout& layout, bool causal) const {
    Var h = ops::add(x, ctx.drop(attn_.self(ctx, ln1_(ctx, x), layout, causal), dropout_));
    return ops::add(h, ctx.drop(ffn_(ctx, ln2_(ctx, h), dropout_), dropout_));
}

DecoderLayer::DecoderLayer(ParameterSet& params, const std::string& name, int width, int heads, int inner,
                           double dropout, Rng& init)
    : ln1_(params, name + ".ln1", width),
      ln2_(params, name + ".ln2", width),
      ln3_(params, name + ".ln3", width),
      self_(params, name + ".self", width, heads, init),
      cross_(params, name + ".cross", width, heads, init),
      ffn_(params, name + ".ffn", width, inner, init),
      dropout_(dropout) {}

Var DecoderLayer::operator()(const ForwardContext& ctx, Var x, const SequenceLayout& layout,
                             const std::pair<Var, Var>& memory_kv, const SequenceLayout& memory_layout) const {
    Var h = ops::add(x, ctx.drop(self_.self(ctx, ln1_(ctx, x), layout, true), dropout_));
    h = ops::add(h, ctx.drop(cross_.cross(ctx, ln2_(ctx, h), layout, memory_kv, memory_layout), dropout_));
    return ops::add(h, ctx.drop(ffn_(ctx, ln3_(ctx, h), dropout_), dropout_));
}

TokenEmbedding::TokenEmbedding(ParameterSet& params, const std::string& name, int vocab, int max_len, int width,
                               Rng& init)
    : tokens_(&params.add(name + ".tok", vocab, width)),
      positions_(&params.add(name + ".pos", max_len, width)),
      max_len_(max_len) {
    normal_init(tokens_->value, 0.1, init);
    normal_init(positions_->value, 0.1, init);
}

Var TokenEmbedding::add_positions(const ForwardContext& ctx, Var words, int batch, int length) const {
    if (length > max_len_)
        throw std::invalid_argument("sequence length " + std::to_string(length) + " exceeds max_len " +
                                    std::to_string(max_len_));
    std::vector<int> pos(static_cast<std::size_t>(batch) * length);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i % static_cast<std::size_t>(length));
    return ops::add(words, ops::embedding(ctx.bind(*positions_), pos));
}

Var TokenEmbedding::hard(const ForwardContext& ctx, const TokenBatch& batch) const {
    const int vocab = tokens_->value.rows;
    for (int id : batch.ids)
        if (id < 0 || id >= vocab) throw std::invalid_argument("token id " + std::to_string(id) + " out of vocabulary");
    return add_positions(ctx, ops::embedding(ctx.bind(*tokens_), batch.ids), batch.batch, batch.length);
}

Var TokenEmbedding::soft(const ForwardContext& ctx, const SoftTokens& tokens) const {
    check_simplex(tokens.weights.value());
    return add_positions(ctx, ops::soft_embedding(ctx.bind(*tokens_), tokens.candidates, tokens.weights),
                         tokens.batch, tokens.length);
}

}  // namespace paraphrase
