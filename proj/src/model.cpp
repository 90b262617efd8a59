#include "paraphrase/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace paraphrase {

void ModelConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("model.layers must be >= 1");
    if (hidden < 1 || heads < 1 || hidden % heads != 0)
        throw std::invalid_argument("model.hidden must be a positive multiple of model.heads");
    if (ffn_mult < 1) throw std::invalid_argument("model.ffn_mult must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model.dropout must be in [0, 1)");
    if (max_len < 2) throw std::invalid_argument("model.max_len must be >= 2");
    if (vocab_size <= kNumSpecial) throw std::invalid_argument("model.vocab_size must exceed the special tokens");
}

bool is_generable(int id) { return id != kPad && id != kBos; }

SharedSeq2Seq::SharedSeq2Seq(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng init(seed);
    const int d = config_.hidden;
    const int inner = d * config_.ffn_mult;
    enc_embed_ = TokenEmbedding(params_, "enc.embed", config_.vocab_size, config_.max_len, d, init);
    for (int l = 0; l < config_.layers; ++l)
        enc_layers_.emplace_back(params_, "enc.layer" + std::to_string(l), d, config_.heads, inner, config_.dropout,
                                 init);
    enc_norm_ = LayerNorm(params_, "enc.norm", d);
    dec_embed_ = TokenEmbedding(params_, "dec.embed", config_.vocab_size, config_.max_len, d, init);
    for (int l = 0; l < config_.layers; ++l)
        dec_layers_.emplace_back(params_, "dec.layer" + std::to_string(l), d, config_.heads, inner, config_.dropout,
                                 init);
    dec_norm_ = LayerNorm(params_, "dec.norm", d);
    out_ = Linear(params_, "dec.out", d, config_.vocab_size, init);
    out_.bias->value.fill(0.0);
}

ForwardContext SharedSeq2Seq::context(Graph& g, RunMode mode) const {
    ForwardContext ctx;
    ctx.graph = &g;
    ctx.train = mode.train && mode.rng != nullptr && config_.dropout > 0.0;
    ctx.rng = mode.rng;
    return ctx;
}

ContextMemory SharedSeq2Seq::run_encoder(const ForwardContext& ctx, Var embedded, SequenceLayout layout) const {
    Var h = ctx.drop(embedded, config_.dropout);
    for (const auto& layer : enc_layers_) h = layer(ctx, h, layout, false);
    ContextMemory memory;
    memory.hidden = enc_norm_(ctx, h);
    memory.layout = std::move(layout);
    return memory;
}

ContextMemory SharedSeq2Seq::encode(Graph& g, const TokenBatch& tokens, RunMode mode) const {
    if (tokens.batch < 1 || tokens.length < 1) throw std::invalid_argument("encode: empty batch");
    const ForwardContext ctx = context(g, mode);
    return run_encoder(ctx, enc_embed_.hard(ctx, tokens),
                       SequenceLayout::from_lengths(tokens.batch, tokens.length, tokens.lengths));
}

ContextMemory SharedSeq2Seq::encode_soft(Graph& g, const SoftTokens& tokens, RunMode mode) const {
    if (tokens.batch < 1 || tokens.length < 1) throw std::invalid_argument("encode_soft: empty batch");
    const ForwardContext ctx = context(g, mode);
    return run_encoder(ctx, enc_embed_.soft(ctx, tokens), tokens.layout());
}

Var SharedSeq2Seq::run_decoder(const ForwardContext& ctx, ContextMemory& memory, Var embedded,
                               const SequenceLayout& layout) const {
    if (layout.batch != memory.batch()) throw std::invalid_argument("decode: prefix and memory batch sizes differ");
    if (memory.hidden.graph != ctx.graph) throw std::invalid_argument("decode: memory belongs to another graph");
    if (memory.cross_kv.empty())
        for (const auto& layer : dec_layers_)
            memory.cross_kv.push_back(layer.cross_attention().project_memory(ctx, memory.hidden));
    Var h = ctx.drop(embedded, config_.dropout);
    for (std::size_t l = 0; l < dec_layers_.size(); ++l)
        h = dec_layers_[l](ctx, h, layout, memory.cross_kv[l], memory.layout);
    return dec_norm_(ctx, h);
}

Var SharedSeq2Seq::decode_logits(Graph& g, ContextMemory& memory, const TokenBatch& prefix, RunMode mode) const {
    if (prefix.batch < 1 || prefix.length < 1) throw std::invalid_argument("decode_logits: empty prefix");
    for (int b = 0; b < prefix.batch; ++b)
        if (prefix.at(b, 0) != kBos) throw std::invalid_argument("decode_logits: prefix must begin with BOS");
    const ForwardContext ctx = context(g, mode);
    const SequenceLayout layout = SequenceLayout::from_lengths(prefix.batch, prefix.length, prefix.lengths);
    return out_(ctx, run_decoder(ctx, memory, dec_embed_.hard(ctx, prefix), layout));
}

Var SharedSeq2Seq::decode_soft(Graph& g, ContextMemory& memory, const SoftTokens& prefix, RunMode mode) const {
    if (prefix.batch < 1 || prefix.length < 1) throw std::invalid_argument("decode_soft: empty prefix");
    const ForwardContext ctx = context(g, mode);
    return out_(ctx, run_decoder(ctx, memory, dec_embed_.soft(ctx, prefix), prefix.layout()));
}

std::vector<TokenSequence> SharedSeq2Seq::decode_batch(const std::vector<TokenSequence>& sources, int max_len,
                                                       bool same_length) const {
    const int n = static_cast<int>(sources.size());
    Graph g(false);
    const ForwardContext ctx = context(g, {});
    ContextMemory memory = encode(g, make_batch(sources));

    std::vector<int> budget(static_cast<std::size_t>(n));  // tokens each row may still emit
    int steps = 0;
    for (int b = 0; b < n; ++b) {
        budget[static_cast<std::size_t>(b)] = same_length ? sources[static_cast<std::size_t>(b)].length() - 1 : max_len - 1;
        steps = std::max(steps, budget[static_cast<std::size_t>(b)]);
    }
    std::vector<TokenSequence> out(static_cast<std::size_t>(n), TokenSequence{{kBos}});
    std::vector<bool> done(static_cast<std::size_t>(n), false);
    for (int b = 0; b < n; ++b) done[static_cast<std::size_t>(b)] = budget[static_cast<std::size_t>(b)] <= 0;

    for (int step = 1; step <= steps; ++step) {
        if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
        TokenBatch prefix;
        prefix.batch = n;
        prefix.length = step;
        prefix.ids.assign(static_cast<std::size_t>(n) * step, kPad);
        for (int b = 0; b < n; ++b) {
            const auto& ids = out[static_cast<std::size_t>(b)].ids;
            std::copy(ids.begin(), ids.end(), prefix.ids.begin() + static_cast<std::ptrdiff_t>(b) * step);
            prefix.lengths.push_back(static_cast<int>(ids.size()));
        }
        const SequenceLayout layout = SequenceLayout::from_lengths(n, step, prefix.lengths);
        Var hidden = run_decoder(ctx, memory, dec_embed_.hard(ctx, prefix), layout);
        // Only each row's last real position feeds the output projection.
        std::vector<int> last(static_cast<std::size_t>(n));
        for (int b = 0; b < n; ++b) last[static_cast<std::size_t>(b)] = b * step + prefix.lengths[static_cast<std::size_t>(b)] - 1;
        const Matrix& logits = out_(ctx, ops::embedding(hidden, last)).value();
        for (int b = 0; b < n; ++b) {
            if (done[static_cast<std::size_t>(b)]) continue;
            int best = -1;
            for (int id = 0; id < logits.cols; ++id)
                if (is_generable(id) && (best < 0 || logits(b, id) > logits(b, best))) best = id;
            auto& seq = out[static_cast<std::size_t>(b)];
            seq.ids.push_back(best);
            const bool full = seq.length() - 1 >= budget[static_cast<std::size_t>(b)];
            done[static_cast<std::size_t>(b)] = full || (!same_length && best == kEos);
        }
    }
    return out;
}

std::vector<TokenSequence> SharedSeq2Seq::greedy_decode(const std::vector<TokenSequence>& sources, int max_len) const {
    if (max_len < 2 || max_len > config_.max_len)
        throw std::invalid_argument("greedy_decode: max_len must be in [2, " + std::to_string(config_.max_len) + "]");
    std::vector<TokenSequence> out;
    out.reserve(sources.size());
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < sources.size(); start += kChunk) {
        std::vector<TokenSequence> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                         sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), start + kChunk)));
        for (auto& seq : decode_batch(chunk, max_len, false)) out.push_back(std::move(seq));
    }
    return out;
}

TokenSequence SharedSeq2Seq::greedy_decode(const TokenSequence& source, int max_len) const {
    return greedy_decode(std::vector<TokenSequence>{source}, max_len).front();
}

std::vector<TokenSequence> SharedSeq2Seq::decode_same_length(const std::vector<TokenSequence>& sources) const {
    if (sources.empty()) return {};
    return decode_batch(sources, config_.max_len, true);
}

std::map<std::string, Matrix> parameter_state(const ParameterSet& params) {
    std::map<std::string, Matrix> state;
    for (const Parameter* p : params.all()) state.emplace(p->name, p->value);
    return state;
}

void load_parameter_state(ParameterSet& params, const std::map<std::string, Matrix>& state) {
    if (state.size() != params.size())
        throw std::invalid_argument("parameter state has " + std::to_string(state.size()) + " entries, expected " +
                                    std::to_string(params.size()));
    for (Parameter* p : params.all()) {
        auto it = state.find(p->name);
        if (it == state.end()) throw std::invalid_argument("parameter state lacks " + p->name);
        if (!it->second.same_shape(p->value))
            throw std::invalid_argument("parameter " + p->name + " has shape " + it->second.shape_string() +
                                        ", expected " + p->value.shape_string());
    }
    for (Parameter* p : params.all()) p->value = state.at(p->name);
}

std::map<std::string, Matrix> SharedSeq2Seq::state() const { return parameter_state(params_); }

void SharedSeq2Seq::load_state(const std::map<std::string, Matrix>& state) { load_parameter_state(params_, state); }

}  // namespace paraphrase
