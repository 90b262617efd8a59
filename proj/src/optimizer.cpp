#include "paraphrase/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace paraphrase {

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(params.all()), config_(config) {
    if (!(config_.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.rows, p->value.cols);
        v_.emplace_back(p->value.rows, p->value.cols);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.empty()) continue;
        auto& m = m_[i].data;
        auto& v = v_[i].data;
        for (std::size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
            p.value.data[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
        }
    }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : std::as_const(params).all())
        for (double g : p->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (Parameter* p : params.all())
            for (double& g : p->grad.data) g *= factor;
    }
    return norm;
}

}  // namespace paraphrase
