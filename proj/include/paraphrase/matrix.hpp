#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace paraphrase {

// Dense row-major matrix of doubles. Every tensor in the toolkit is 2-D;
// batch and time are folded into rows (row = batch_index * length + position).
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("negative matrix dimension");
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    std::span<double> row_span(int r) { return {row(r), static_cast<std::size_t>(cols)}; }
    std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols)}; }

    bool operator==(const Matrix& other) const = default;

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_string() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }
};

}  // namespace paraphrase
