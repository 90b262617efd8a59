#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "paraphrase/checkpoint.hpp"
#include "paraphrase/data.hpp"
#include "paraphrase/model.hpp"
#include "paraphrase/objectives.hpp"
#include "paraphrase/prior.hpp"
#include "paraphrase/sampling.hpp"

namespace paraphrase {

enum class TrainMode { ddl, vsar, semi };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 512;
    int max_epochs = 30;
    std::uint64_t seed = 1000;
    TrainMode mode = TrainMode::semi;
    bool use_prior = true;
    // Supervised updates train both directions; false trains only s -> t
    // (the single-direction baseline).
    bool dual = true;
    double clip_norm = 1.0;  // <= 0 disables clipping
    int top_k = 10;
    TemperatureSchedule temperature;  // total_steps is filled in by the trainer
    // Checks every VSAR step's pseudo-labels (see PseudoLabelAudit).
    bool audit_pseudo_labels = false;

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

// One record per optimizer update.
struct StepRecord {
    Stage stage = Stage::pretrain;
    int epoch = 0;     // 1-based
    long step = 0;     // global update index within the stage, 1-based
    std::string kind;  // "ddl" or "vsar"
    LossBundle loss;
    double lr = 0.0;
    double grad_norm = 0.0;
};

// Loss fields absent from the update (for example kl without a prior) are omitted.
nlohmann::json to_json(const StepRecord& record);

struct PseudoLabelAudit {
    long steps = 0;
    long sequences = 0;
    long length_mismatches = 0;
    // Tape nodes the label pass added to the training graph; must stay 0.
    long tape_nodes_from_labels = 0;
    // Steps where the gradient with freshly decoded labels differed from the
    // gradient with the same labels injected as constants.
    long gradient_mismatches = 0;
    long gradient_checks = 0;

    bool clean() const { return length_mismatches == 0 && tape_nodes_from_labels == 0 && gradient_mismatches == 0; }
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(int epoch, double validation_l2)> on_epoch;
    // Called once after initialization, before the first update.
    std::function<void(const SharedSeq2Seq&)> on_start;
    // When set, the best checkpoint is written here whenever it improves.
    std::optional<std::filesystem::path> checkpoint_path;
};

struct TrainResult {
    Checkpoint best;
    std::vector<double> history;  // validation L2 per epoch
    long steps = 0;
    long ddl_steps = 0;
    long vsar_steps = 0;
    PseudoLabelAudit audit;
};

// Mean over validation pairs of per-token log p(t|s) + log p(s|t), in
// evaluation mode without gradients. Batched internally.
double validate_l2(const SharedSeq2Seq& model, const std::vector<ParallelPair>& val, int batch_size = 64);

// Supervised pre-training on the labelled pairs with per-epoch validation.
// The model ends holding the best epoch's parameters.
TrainResult krl_pretrain(SharedSeq2Seq& model, const SemiSplit& split, const TrainConfig& config,
                         const TrainHooks& hooks = {});

// Joint fine-tuning initialised from a pre-training checkpoint. Each
// iteration takes one labelled DDL update then one unlabelled VSAR update
// (modes ddl / vsar run only their half). The smaller loader cycles until the
// larger one is exhausted. prior may be null when config.use_prior is false.
TrainResult krl_finetune(SharedSeq2Seq& model, const Checkpoint& init, const PriorLM* prior, const SemiSplit& split,
                         const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace paraphrase
