#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paraphrase/model.hpp"
#include "paraphrase/prior.hpp"
#include "paraphrase/trainer.hpp"

namespace paraphrase {

// Usage or configuration mistake (exit code 2), as opposed to an internal failure.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string train_path;
    std::string val_path;
    std::string test_path;
    std::string mono_path;
    std::string vocab_path;
    int min_freq = 1;
    int max_vocab = 0;  // 0: no limit
    int max_len = 20;
    std::string run_dir = "runs";
    std::vector<std::uint64_t> seeds{1000, 2000, 3000};

    ModelConfig model;
    ModelConfig prior_model;
    PriorTrainConfig prior_train;
    TrainConfig train;
    int finetune_epochs = 30;
    double eval_alpha = 0.9;
    std::uint64_t bounds_seed = 0;

    RunConfig();
    // Checks value ranges; paths are checked by the commands that read them.
    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Applies key = value pairs; unknown keys and malformed values raise ConfigError.
void apply_settings(RunConfig& config, const std::map<std::string, std::string>& settings);
// Parses an INI-style file ("key = value", optional [section] headers that
// prefix the keys). Relative data paths are resolved against the file's directory.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);

}  // namespace paraphrase
