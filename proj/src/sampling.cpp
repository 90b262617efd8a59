#include "paraphrase/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace paraphrase {

TemperatureMode parse_temperature_mode(const std::string& text) {
    if (text == "fixed") return TemperatureMode::fixed;
    if (text == "annealed") return TemperatureMode::annealed;
    throw std::invalid_argument("unknown temperature mode '" + text + "' (expected fixed or annealed)");
}

std::string to_string(TemperatureMode mode) { return mode == TemperatureMode::fixed ? "fixed" : "annealed"; }

void TemperatureSchedule::validate() const {
    if (mode == TemperatureMode::fixed) {
        if (!(fixed_value > 0.0)) throw std::invalid_argument("tau.fixed must be > 0");
        return;
    }
    if (!(start > end && end > 0.0)) throw std::invalid_argument("annealing requires tau.start > tau.end > 0");
    if (total_steps < 1) throw std::invalid_argument("annealing requires total_steps >= 1");
}

double temperature_at(const TemperatureSchedule& schedule, long step) {
    if (schedule.mode == TemperatureMode::fixed) return schedule.fixed_value;
    if (step <= 0) return schedule.start;
    if (step >= schedule.total_steps) return schedule.end;
    const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return schedule.start * std::pow(schedule.end / schedule.start, frac);
}

double sample_gumbel(Rng& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double u = 0.0;
    while (u <= 0.0) u = uniform(rng);
    return -std::log(-std::log(u));
}

LatentToken gumbel_topk_sample(std::span<const double> logits, double tau, int k, Rng& rng,
                               std::span<const std::uint8_t> allowed) {
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (!allowed.empty() && allowed.size() != logits.size())
        throw std::invalid_argument("allowed mask size does not match logits");
    std::vector<int> pool;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) throw std::invalid_argument("non-finite logit at index " + std::to_string(i));
        if (allowed.empty() || allowed[i] != 0) pool.push_back(static_cast<int>(i));
    }
    if (k < 1 || k > static_cast<int>(pool.size()))
        throw std::invalid_argument("k must be in [1, " + std::to_string(pool.size()) + "]");

    std::vector<double> perturbed(logits.size(), 0.0);
    for (int id : pool) perturbed[static_cast<std::size_t>(id)] = logits[static_cast<std::size_t>(id)] + sample_gumbel(rng);
    std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), [&](int a, int b) {
        const double pa = perturbed[static_cast<std::size_t>(a)];
        const double pb = perturbed[static_cast<std::size_t>(b)];
        return pa != pb ? pa > pb : a < b;
    });

    LatentToken tok;
    tok.candidate_ids.assign(pool.begin(), pool.begin() + k);
    double mx = -INFINITY;
    for (int id : tok.candidate_ids) {
        tok.noise.push_back(perturbed[static_cast<std::size_t>(id)] - logits[static_cast<std::size_t>(id)]);
        mx = std::max(mx, perturbed[static_cast<std::size_t>(id)] / tau);
    }
    double total = 0.0;
    for (int id : tok.candidate_ids) {
        const double e = std::exp(perturbed[static_cast<std::size_t>(id)] / tau - mx);
        tok.relaxed_weights.push_back(e);
        total += e;
    }
    for (double& w : tok.relaxed_weights) w /= total;
    tok.hard_index = static_cast<int>(std::max_element(tok.relaxed_weights.begin(), tok.relaxed_weights.end()) -
                                      tok.relaxed_weights.begin());
    return tok;
}

std::vector<LatentToken> gumbel_topk_rows(const Matrix& logits, double tau, int k, Rng& rng,
                                          std::span<const std::uint8_t> allowed) {
    std::vector<LatentToken> out;
    out.reserve(static_cast<std::size_t>(logits.rows));
    for (int r = 0; r < logits.rows; ++r) out.push_back(gumbel_topk_sample(logits.row_span(r), tau, k, rng, allowed));
    return out;
}

namespace {

int common_k(const std::vector<LatentToken>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("no latent tokens");
    const std::size_t k = tokens.front().candidate_ids.size();
    for (const auto& t : tokens)
        if (t.candidate_ids.size() != k || t.noise.size() != k)
            throw std::invalid_argument("latent tokens disagree on k");
    return static_cast<int>(k);
}

Matrix noise_matrix(const std::vector<LatentToken>& tokens, int k) {
    Matrix noise(static_cast<int>(tokens.size()), k);
    for (std::size_t r = 0; r < tokens.size(); ++r)
        std::copy(tokens[r].noise.begin(), tokens[r].noise.end(), noise.row(static_cast<int>(r)));
    return noise;
}

}  // namespace

Var candidate_logits(Var logits, const std::vector<LatentToken>& tokens) {
    const int k = common_k(tokens);
    if (logits.rows() != static_cast<int>(tokens.size()))
        throw std::invalid_argument("candidate_logits: one latent token per logits row expected");
    std::vector<int> index;
    index.reserve(tokens.size() * static_cast<std::size_t>(k));
    for (const auto& t : tokens) index.insert(index.end(), t.candidate_ids.begin(), t.candidate_ids.end());
    return ops::gather(logits, index, k);
}

Var straight_through(Var logits, const std::vector<LatentToken>& tokens, double tau) {
    const int k = common_k(tokens);
    std::vector<int> hard;
    hard.reserve(tokens.size());
    for (const auto& t : tokens) hard.push_back(t.hard_index);
    return ops::straight_through(candidate_logits(logits, tokens), noise_matrix(tokens, k), tau, hard);
}

Var relaxed_weights(Var logits, const std::vector<LatentToken>& tokens, double tau) {
    const int k = common_k(tokens);
    return ops::relaxed_softmax(candidate_logits(logits, tokens), noise_matrix(tokens, k), tau);
}

}  // namespace paraphrase
