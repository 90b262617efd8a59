#include "paraphrase/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "paraphrase/optimizer.hpp"

namespace paraphrase {

PriorLM::PriorLM(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng init(seed);
    const int d = config_.hidden;
    embed_ = TokenEmbedding(params_, "prior.embed", config_.vocab_size, config_.max_len, d, init);
    for (int l = 0; l < config_.layers; ++l)
        layers_.emplace_back(params_, "prior.layer" + std::to_string(l), d, config_.heads, d * config_.ffn_mult,
                             config_.dropout, init);
    norm_ = LayerNorm(params_, "prior.norm", d);
    out_ = Linear(params_, "prior.out", d, config_.vocab_size, init);
    out_.bias->value.fill(0.0);
}

ForwardContext PriorLM::context(Graph& g, RunMode mode, bool trainable) const {
    ForwardContext ctx;
    ctx.graph = &g;
    ctx.train = mode.train && mode.rng != nullptr && config_.dropout > 0.0;
    ctx.rng = mode.rng;
    ctx.frozen = !trainable;
    return ctx;
}

Var PriorLM::run(const ForwardContext& ctx, Var embedded, const SequenceLayout& layout) const {
    Var h = ctx.drop(embedded, config_.dropout);
    for (const auto& layer : layers_) h = layer(ctx, h, layout, true);
    return out_(ctx, norm_(ctx, h));
}

Var PriorLM::logits(Graph& g, const TokenBatch& prefix, RunMode mode, bool trainable) const {
    if (prefix.batch < 1 || prefix.length < 1) throw std::invalid_argument("prior: empty prefix");
    for (int b = 0; b < prefix.batch; ++b)
        if (prefix.at(b, 0) != kBos) throw std::invalid_argument("prior: prefix must begin with BOS");
    const ForwardContext ctx = context(g, mode, trainable);
    return run(ctx, embed_.hard(ctx, prefix), SequenceLayout::from_lengths(prefix.batch, prefix.length, prefix.lengths));
}

Var PriorLM::logits_soft(Graph& g, const SoftTokens& prefix, RunMode mode, bool trainable) const {
    if (prefix.batch < 1 || prefix.length < 1) throw std::invalid_argument("prior: empty prefix");
    const ForwardContext ctx = context(g, mode, trainable);
    return run(ctx, embed_.soft(ctx, prefix), prefix.layout());
}

namespace {

void require_trained(const PriorLM& prior, bool strict) {
    if (strict && !prior.trained()) throw std::logic_error("language-model prior has not been trained");
}

}  // namespace

Matrix prior_token_logprobs(const PriorLM& prior, const TokenBatch& prefix, bool strict) {
    require_trained(prior, strict);
    Graph g(false);
    return ops::log_softmax(prior.logits(g, prefix)).value();
}

Matrix prior_token_logprobs(const PriorLM& prior, const SoftTokens& prefix, bool strict) {
    require_trained(prior, strict);
    Graph& g = *prefix.weights.graph;
    return ops::log_softmax(prior.logits_soft(g, prefix)).value();
}

double prior_perplexity(const PriorLM& prior, const std::vector<TokenSequence>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("perplexity of an empty corpus");
    double nll = 0.0;
    long count = 0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
        std::vector<TokenSequence> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                                         corpus.begin() + static_cast<std::ptrdiff_t>(std::min(corpus.size(), start + kChunk)));
        TokenBatch batch = make_batch(chunk);
        const Matrix lp = prior_token_logprobs(prior, batch, false);
        const auto targets = batch.next_token_targets();
        for (std::size_t r = 0; r < targets.size(); ++r) {
            if (targets[r] < 0) continue;
            nll -= lp(static_cast<int>(r), targets[r]);
            ++count;
        }
    }
    return std::exp(nll / static_cast<double>(count));
}

PriorTrainReport train_prior(PriorLM& prior, const std::vector<TokenSequence>& mono, const PriorTrainConfig& config,
                             const PriorStepCallback& on_step) {
    if (mono.empty()) throw std::invalid_argument("cannot train a prior on an empty corpus");
    if (config.epochs < 1) throw std::invalid_argument("prior epochs must be >= 1");

    std::vector<TokenSequence> train, heldout;
    if (mono.size() == 1) {
        train = heldout = mono;
    } else {
        std::vector<std::size_t> order(mono.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(config.seed);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const auto n_held = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(mono.size()))), 1,
            mono.size() - 1);
        for (std::size_t i = 0; i < order.size(); ++i) (i < n_held ? heldout : train).push_back(mono[order[i]]);
    }

    Adam adam(prior.parameters(), AdamConfig{config.lr, 0.9, 0.999, 1e-8});
    Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    PriorTrainReport report;
    report.best_perplexity = std::numeric_limits<double>::infinity();
    std::map<std::string, Matrix> best_state = prior.state();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        BatchIterator it(train.size(), config.batch_size, config.seed, epoch);
        while (auto idx = it.next()) {
            TokenBatch batch = make_batch(select(train, *idx));
            const auto targets = batch.next_token_targets();
            const auto count = std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; });
            prior.parameters().zero_grad();
            Graph g;
            Var lp = ops::log_softmax(prior.logits(g, batch, {true, &dropout_rng}, true));
            Var loss = ops::scale(ops::sum(ops::pick(lp, targets)), -1.0 / static_cast<double>(count));
            g.backward(loss);
            clip_grad_norm(prior.parameters(), config.clip_norm);
            adam.step();
            ++report.steps;
            if (on_step) on_step(epoch, report.steps, loss.scalar());
        }
        const double ppl = prior_perplexity(prior, heldout);
        report.heldout_perplexity.push_back(ppl);
        if (ppl < report.best_perplexity) {
            report.best_perplexity = ppl;
            report.best_epoch = epoch;
            best_state = prior.state();
        }
    }
    prior.load_state(best_state);
    prior.set_trained(true);
    return report;
}

}  // namespace paraphrase
