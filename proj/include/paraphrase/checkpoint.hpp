#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paraphrase/matrix.hpp"

namespace paraphrase {

enum class Stage { pretrain, finetune, prior };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct CheckpointMeta {
    std::string kind = "model";  // "model" or "prior"
    Stage stage = Stage::pretrain;
    int epoch = 0;               // 1-based epoch the parameters come from
    double validation_l2 = 0.0;  // for priors: mean held-out token log-likelihood
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<double> history;  // validation value per epoch, in order

    bool operator==(const CheckpointMeta& other) const = default;
};

nlohmann::json to_json(const CheckpointMeta& meta);
CheckpointMeta meta_from_json(const nlohmann::json& j);

struct Checkpoint {
    std::map<std::string, Matrix> parameters;
    CheckpointMeta meta;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sidecar metadata lives next to the parameter file as <path>.json.
std::filesystem::path meta_path(const std::filesystem::path& path);

// Both files are written to temporaries and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws CheckpointError on a missing, truncated or corrupted file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Replaces path atomically with content.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace paraphrase
