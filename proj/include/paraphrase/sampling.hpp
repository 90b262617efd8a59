#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "paraphrase/autodiff.hpp"

namespace paraphrase {

enum class TemperatureMode { fixed, annealed };

TemperatureMode parse_temperature_mode(const std::string& text);
std::string to_string(TemperatureMode mode);

struct TemperatureSchedule {
    TemperatureMode mode = TemperatureMode::annealed;
    double fixed_value = 0.1;
    double start = 10.0;
    double end = 0.01;
    long total_steps = 1;

    void validate() const;
};

// Geometric interpolation start * (end / start)^(step / total_steps) in
// annealed mode; steps outside [0, total_steps] are clamped.
double temperature_at(const TemperatureSchedule& schedule, long step);

// One relaxed TOP-k draw for a single position.
struct LatentToken {
    std::vector<int> candidate_ids;       // k distinct ids, by decreasing perturbed logit
    std::vector<double> noise;            // Gumbel noise added to each candidate's logit
    std::vector<double> relaxed_weights;  // softmax((logit + noise) / tau) over the candidates
    int hard_index = 0;                   // argmax of relaxed_weights

    int hard_id() const { return candidate_ids[static_cast<std::size_t>(hard_index)]; }
};

struct LatentSample {
    std::vector<LatentToken> tokens;
};

double sample_gumbel(Rng& rng);

// allowed (optional, one flag per id) restricts the candidate pool.
LatentToken gumbel_topk_sample(std::span<const double> logits, double tau, int k, Rng& rng,
                               std::span<const std::uint8_t> allowed = {});

// Rows of `logits` (one position each) sampled independently.
std::vector<LatentToken> gumbel_topk_rows(const Matrix& logits, double tau, int k, Rng& rng,
                                          std::span<const std::uint8_t> allowed = {});

// Candidate logits (rows x k) gathered from full-vocabulary logits.
Var candidate_logits(Var logits, const std::vector<LatentToken>& tokens);

// Forward: one-hot at each hard index; backward: gradient of the relaxed
// weights with the sampled noise held fixed. Result is rows x k.
Var straight_through(Var logits, const std::vector<LatentToken>& tokens, double tau);
// The relaxed weights themselves, differentiable in logits.
Var relaxed_weights(Var logits, const std::vector<LatentToken>& tokens, double tau);

}  // namespace paraphrase
