#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include "paraphrase/autodiff.hpp"

namespace paraphrase::testing {

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
    double diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Analytic gradient of fn w.r.t. each input versus central differences.
// Returns the worst relative error over the inputs.
inline double gradient_check(const ScalarFn& fn, std::vector<Matrix> inputs, double h = 1e-6) {
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        std::vector<Parameter> params(inputs.size());
        std::vector<Var> vars;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            params[i].value = inputs[i];
            params[i].grad = Matrix(inputs[i].rows, inputs[i].cols);
            vars.push_back(g.parameter(params[i]));
        }
        Var out = fn(g, vars);
        g.backward(out);
        for (auto& p : params) analytic.push_back(p.grad.data);
    }
    auto eval = [&](const std::vector<Matrix>& in) {
        Graph g(false);
        std::vector<Var> vars;
        for (const auto& m : in) vars.push_back(g.constant(m));
        return fn(g, vars).scalar();
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<double> numeric(inputs[i].size());
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double saved = inputs[i].data[j];
            inputs[i].data[j] = saved + h;
            const double fp = eval(inputs);
            inputs[i].data[j] = saved - h;
            const double fm = eval(inputs);
            inputs[i].data[j] = saved;
            numeric[j] = (fp - fm) / (2.0 * h);
        }
        worst = std::max(worst, relative_error(analytic[i], numeric, 1e-8));
    }
    return worst;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("paraphrase_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace paraphrase::testing
