#include "paraphrase/trainer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "paraphrase/optimizer.hpp"

namespace paraphrase {

namespace {

void require_finite(const LossBundle& loss, long step) {
    if (!std::isfinite(loss.combined))
        throw std::runtime_error("non-finite loss at step " + std::to_string(step));
}

// Minimises -objective: one backward pass, clipping, one Adam update.
double apply_update(Graph& g, Var objective, SharedSeq2Seq& model, Adam& adam, double clip_norm) {
    g.backward(ops::scale(objective, -1.0));
    const double norm = clip_grad_norm(model.parameters(), clip_norm > 0.0 ? clip_norm : INFINITY);
    adam.step();
    return norm;
}

std::vector<std::vector<double>> gradient_snapshot(const SharedSeq2Seq& model) {
    std::vector<std::vector<double>> out;
    for (const Parameter* p : model.parameters().all()) out.push_back(p->grad.data);
    return out;
}

class Loop {
public:
    Loop(SharedSeq2Seq& model, const PriorLM* prior, const TrainConfig& config, Stage stage, const TrainHooks& hooks)
        : model_(model),
          prior_(prior),
          config_(config),
          stage_(stage),
          hooks_(hooks),
          adam_(model.parameters(), AdamConfig{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps}),
          rng_(config.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(stage)) {}

    void set_total_steps(long total) { config_.temperature.total_steps = std::max(1L, total - 1); }

    void ddl_step(int epoch, const std::vector<ParallelPair>& pairs) {
        model_.parameters().zero_grad();
        Graph g;
        LossOutput out = config_.dual ? ddl_loss(g, model_, pairs, {true, &rng_}) : forward_loss(g, model_, pairs, {true, &rng_});
        last_ddl_ = out.values;
        record(epoch, "ddl", out.values, apply_update(g, out.objective, model_, adam_, config_.clip_norm));
        ++result.ddl_steps;
    }

    void vsar_step(int epoch, const std::vector<TokenSequence>& sources, bool check_gradient) {
        const double tau = temperature_at(config_.temperature, step_);
        const SamplerArgs sampler{tau, std::min(config_.top_k, model_.config().vocab_size - 2)};
        const PriorLM* prior = config_.use_prior ? prior_ : nullptr;
        model_.parameters().zero_grad();

        if (config_.audit_pseudo_labels && check_gradient) {
            // Reference gradient: labels decoded inside the loss.
            Rng probe = rng_;
            Graph g;
            g.backward(ops::scale(vsar_loss(g, model_, prior, sources, sampler, probe, {true, &probe}).objective, -1.0));
            reference_grads_ = gradient_snapshot(model_);
            model_.parameters().zero_grad();
        }

        Graph g;
        const std::size_t nodes_before = g.node_count();
        const std::vector<TokenSequence> labels = weak_supervision_labels(model_, sources);
        if (config_.audit_pseudo_labels) {
            auto& a = result.audit;
            ++a.steps;
            a.tape_nodes_from_labels += static_cast<long>(g.node_count() - nodes_before);
            for (std::size_t i = 0; i < sources.size(); ++i) {
                ++a.sequences;
                if (labels[i].length() != sources[i].length()) ++a.length_mismatches;
            }
        }
        LossOutput out = vsar_loss_with_labels(g, model_, prior, sources, labels, sampler, rng_, {true, &rng_});
        g.backward(ops::scale(out.objective, -1.0));
        if (config_.audit_pseudo_labels && check_gradient) {
            ++result.audit.gradient_checks;
            if (gradient_snapshot(model_) != reference_grads_) ++result.audit.gradient_mismatches;
        }
        const double norm = clip_grad_norm(model_.parameters(), config_.clip_norm > 0.0 ? config_.clip_norm : INFINITY);
        adam_.step();
        if (last_ddl_) {
            // The record covers the whole iteration: this update's l1 plus the
            // preceding DDL update's l2.
            LossBundle& v = out.values;
            v.has_l2 = true;
            v.l2_st = last_ddl_->l2_st;
            v.l2_ts = last_ddl_->l2_ts;
            v.l2 = last_ddl_->l2;
            v.combined = v.l1 + v.l2;
            last_ddl_.reset();
        }
        record(epoch, "vsar", out.values, norm);
        ++result.vsar_steps;
    }

    // Validates, appends to the history and keeps the best parameters.
    void end_epoch(int epoch, const std::vector<ParallelPair>& val) {
        const double l2 = validate_l2(model_, val);
        result.history.push_back(l2);
        if (l2 > best_l2_) {
            best_l2_ = l2;
            result.best.parameters = model_.state();
            result.best.meta.epoch = epoch;
            result.best.meta.validation_l2 = l2;
        }
        result.best.meta.history = result.history;
        if (hooks_.checkpoint_path && result.best.meta.epoch == epoch) save_checkpoint(*hooks_.checkpoint_path, result.best);
        if (hooks_.on_epoch) hooks_.on_epoch(epoch, l2);
    }

    void finish() {
        result.steps = step_;
        if (hooks_.checkpoint_path) save_checkpoint(*hooks_.checkpoint_path, result.best);
        model_.load_state(result.best.parameters);
    }

    void prepare_meta() {
        result.best.meta.stage = stage_;
        result.best.meta.seed = config_.seed;
        result.best.meta.config = {{"model", to_json(model_.config())}, {"train", to_json(config_)}};
    }

    TrainResult result;

private:
    void record(int epoch, const char* kind, LossBundle loss, double norm) {
        ++step_;
        require_finite(loss, step_);
        if (!hooks_.on_step) return;
        StepRecord r;
        r.stage = stage_;
        r.epoch = epoch;
        r.step = step_;
        r.kind = kind;
        r.loss = std::move(loss);
        r.lr = config_.lr;
        r.grad_norm = norm;
        hooks_.on_step(r);
    }

    SharedSeq2Seq& model_;
    const PriorLM* prior_;
    TrainConfig config_;
    Stage stage_;
    const TrainHooks& hooks_;
    Adam adam_;
    Rng rng_;
    long step_ = 0;
    // Selection starts below every attainable log-likelihood.
    double best_l2_ = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> reference_grads_;
    std::optional<LossBundle> last_ddl_;
};

// Cycles through a seeded shuffle, reshuffling on every pass.
class CyclingLoader {
public:
    CyclingLoader(std::size_t n, int batch_size, std::uint64_t seed, int epoch)
        : n_(n), batch_size_(batch_size), seed_(seed), epoch_(epoch), it_(n, batch_size, seed, epoch) {}

    std::vector<std::size_t> next() {
        auto b = it_.next();
        if (!b) {
            ++pass_;
            it_ = BatchIterator(n_, batch_size_, seed_ + 7919ull * static_cast<std::uint64_t>(pass_), epoch_);
            b = it_.next();
        }
        return *b;
    }

    std::size_t batch_count() const { return it_.batch_count(); }

private:
    std::size_t n_;
    int batch_size_;
    std::uint64_t seed_;
    int epoch_;
    int pass_ = 0;
    BatchIterator it_;
};

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::ddl: return "ddl";
        case TrainMode::vsar: return "vsar";
        case TrainMode::semi: return "semi";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "ddl") return TrainMode::ddl;
    if (text == "vsar") return TrainMode::vsar;
    if (text == "semi") return TrainMode::semi;
    throw std::invalid_argument("unknown training mode '" + text + "' (expected ddl, vsar or semi)");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
    temperature.validate();
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"layers", c.layers},   {"hidden", c.hidden},   {"heads", c.heads},          {"ffn_mult", c.ffn_mult},
            {"dropout", c.dropout}, {"max_len", c.max_len}, {"vocab_size", c.vocab_size}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"prior", c.use_prior ? "on" : "off"},
            {"dual", c.dual},
            {"clip_norm", c.clip_norm},
            {"top_k", c.top_k},
            {"temperature_mode", to_string(c.temperature.mode)},
            {"temperature_fixed", c.temperature.fixed_value},
            {"temperature_start", c.temperature.start},
            {"temperature_end", c.temperature.end}};
}

nlohmann::json to_json(const StepRecord& r) {
    nlohmann::json j = {{"stage", to_string(r.stage)}, {"epoch", r.epoch}, {"step", r.step}, {"update", r.kind}};
    const LossBundle& l = r.loss;
    if (l.has_l1) {
        j["recon_nll"] = l.recon_nll;
        if (l.has_kl) j["kl"] = l.kl;
        j["l1"] = l.l1;
        j["tau"] = l.tau;
    }
    if (l.has_l2) {
        j["l2_st"] = l.l2_st;
        j["l2_ts"] = l.l2_ts;
        j["l2"] = l.l2;
    }
    if (!l.has_l1 && !l.has_l2) j["l2_ts"] = l.l2_ts;
    j["combined"] = l.combined;
    j["lr"] = r.lr;
    j["grad_norm"] = r.grad_norm;
    return j;
}

double validate_l2(const SharedSeq2Seq& model, const std::vector<ParallelPair>& val, int batch_size) {
    if (val.empty()) throw std::invalid_argument("validate_l2: empty validation set");
    double st = 0.0, ts = 0.0;
    long t_tokens = 0, s_tokens = 0;
    for (std::size_t begin = 0; begin < val.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(val.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<ParallelPair> chunk(val.begin() + static_cast<long>(begin), val.begin() + static_cast<long>(end));
        const TokenBatch s = make_batch(sources_of(chunk));
        const TokenBatch t = make_batch(targets_of(chunk));
        Graph g(false);
        for (double v : sequence_loglik(g, model, s, t).value().data) st += v;
        for (double v : sequence_loglik(g, model, t, s).value().data) ts += v;
        for (const auto& p : chunk) {
            t_tokens += p.target.length() - 1;
            s_tokens += p.source.length() - 1;
        }
    }
    return st / static_cast<double>(t_tokens) + ts / static_cast<double>(s_tokens);
}

TrainResult krl_pretrain(SharedSeq2Seq& model, const SemiSplit& split, const TrainConfig& config,
                         const TrainHooks& hooks) {
    config.validate();
    if (split.labelled.empty()) throw std::invalid_argument("krl_pretrain: no labelled pairs");
    if (split.val.empty()) throw std::invalid_argument("krl_pretrain: empty validation set");

    Loop loop(model, nullptr, config, Stage::pretrain, hooks);
    loop.prepare_meta();
    if (hooks.on_start) hooks.on_start(model);
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        BatchIterator batches(split.labelled.size(), config.batch_size, config.seed, epoch);
        while (auto idx = batches.next()) loop.ddl_step(epoch, select(split.labelled, *idx));
        loop.end_epoch(epoch, split.val);
    }
    loop.finish();
    return std::move(loop.result);
}

TrainResult krl_finetune(SharedSeq2Seq& model, const Checkpoint& init, const PriorLM* prior, const SemiSplit& split,
                         const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    if (init.meta.kind != "model" || init.meta.stage != Stage::pretrain)
        throw std::invalid_argument("krl_finetune: initial checkpoint must come from pre-training (got stage '" +
                                    to_string(init.meta.stage) + "')");
    if (init.parameters.empty()) throw std::invalid_argument("krl_finetune: initial checkpoint has no parameters");
    const bool use_ddl = config.mode != TrainMode::vsar;
    const bool use_vsar = config.mode != TrainMode::ddl;
    if (use_ddl && split.labelled.empty()) throw std::invalid_argument("krl_finetune: no labelled pairs");
    if (use_vsar && split.unlabelled.empty()) throw std::invalid_argument("krl_finetune: no unlabelled sources");
    if (split.val.empty()) throw std::invalid_argument("krl_finetune: empty validation set");
    if (use_vsar && config.use_prior) {
        if (prior == nullptr) throw std::invalid_argument("krl_finetune: prior enabled but none supplied");
        if (!prior->trained()) throw std::logic_error("krl_finetune: prior has not been trained");
    }

    model.load_state(init.parameters);
    if (model.state() != init.parameters) throw std::logic_error("krl_finetune: initialization is not exact");

    const auto count = [&](std::size_t n) {
        return n == 0 ? std::size_t{0} : (n + static_cast<std::size_t>(config.batch_size) - 1) / config.batch_size;
    };
    const std::size_t ddl_batches = use_ddl ? count(split.labelled.size()) : 0;
    const std::size_t vsar_batches = use_vsar ? count(split.unlabelled.size()) : 0;
    const std::size_t iterations = std::max(ddl_batches, vsar_batches);
    const long per_iteration = (use_ddl ? 1 : 0) + (use_vsar ? 1 : 0);

    Loop loop(model, prior, config, Stage::finetune, hooks);
    loop.set_total_steps(static_cast<long>(iterations) * per_iteration * config.max_epochs);
    loop.prepare_meta();
    if (hooks.on_start) hooks.on_start(model);
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::optional<CyclingLoader> labelled, unlabelled;
        if (use_ddl) labelled.emplace(split.labelled.size(), config.batch_size, config.seed, epoch);
        if (use_vsar) unlabelled.emplace(split.unlabelled.size(), config.batch_size, config.seed + 1, epoch);
        for (std::size_t i = 0; i < iterations; ++i) {
            if (labelled) loop.ddl_step(epoch, select(split.labelled, labelled->next()));
            if (unlabelled) loop.vsar_step(epoch, select(split.unlabelled, unlabelled->next()), i == 0);
        }
        loop.end_epoch(epoch, split.val);
    }
    loop.finish();
    return std::move(loop.result);
}

}  // namespace paraphrase
