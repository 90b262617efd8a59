#pragma once

#include <vector>

#include "paraphrase/autodiff.hpp"

namespace paraphrase {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One moment pair per parameter of a fixed ParameterSet.
class Adam {
public:
    Adam(ParameterSet& params, AdamConfig config);

    // Applies the accumulated gradients; parameters whose gradient buffer was
    // never allocated are skipped.
    void step();
    long steps() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamConfig config_;
    long t_ = 0;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

}  // namespace paraphrase
