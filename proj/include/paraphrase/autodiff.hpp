#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "paraphrase/kernels.hpp"
#include "paraphrase/matrix.hpp"

namespace paraphrase {

using Rng = std::mt19937_64;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
};

// Owns a model's trainable tensors. Parameters are addressed by stable
// pointers and by name; iteration order is insertion order.
class ParameterSet {
public:
    Parameter& add(std::string name, int rows, int cols);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    // Copies values from a set with the same names and shapes.
    void assign(const ParameterSet& other);
    bool values_equal(const ParameterSet& other) const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, Parameter*> by_name_;
};

class Graph;

// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Matrix& value() const;
    int rows() const { return value().rows; }
    int cols() const { return value().cols; }
    double scalar() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep visits every node after all of its consumers. A graph built with
// record_gradients = false evaluates values only and keeps no closures.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Matrix& out_grad)>;

    explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Matrix value);
    // Leaf bound to a parameter; its gradient is added to param.grad by backward().
    Var parameter(Parameter& param);
    // Leaf reading a parameter's value without ever producing a gradient.
    Var frozen(const Parameter& param);

    Var add_node(Matrix value, bool needs_grad, BackwardFn fn);

    const Matrix& value(Var v) const;
    // Gradient w.r.t. v after backward(); empty matrix if none reached v.
    const Matrix& grad(Var v) const;
    // Zero-initialised gradient buffer for v, allocated on first use.
    Matrix& grad_buffer(Var v);
    bool needs_grad(Var v) const;

    bool recording() const { return record_; }
    std::size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to all leaves.
    void backward(Var loss);

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Parameter* param = nullptr;
        Matrix grad;
        bool needs_grad = false;
        BackwardFn backward;
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    bool record_;
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    std::unordered_map<const Parameter*, int> frozen_nodes_;
};

namespace ops {

// op(a) * op(b)
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var add(Var a, Var b);
// x + bias broadcast over rows; bias is 1 x cols.
Var add_row(Var x, Var bias);
Var scale(Var x, double factor);
Var relu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Inverted dropout; identity when rate == 0 or rng == nullptr.
Var dropout(Var x, double rate, Rng* rng);

// Rows of table selected by ids.
Var embedding(Var table, std::span<const int> ids);
// Row r = sum_c weights(r, c) * table[candidates[r * k + c]], k = weights.cols.
Var soft_embedding(Var table, std::span<const int> candidates, Var weights);

Var attention(Var q, Var k, Var v, const kernels::AttentionShape& shape, std::span<const std::uint8_t> key_mask);

Var log_softmax(Var x);
// out(r, c) = x(r, index[r * cols + c]).
Var gather(Var x, std::span<const int> index, int cols);
// out(r, 0) = x(r, target[r]); rows with target < 0 give 0.
Var pick(Var x, std::span<const int> target);
// Rows of `base` with rows listed in `rows` replaced by consecutive rows of src.
Var scatter_rows(Matrix base, Var src, std::span<const int> rows);

Var sum(Var x);
// sum_r weight[r] * x(r, 0) for a column vector x.
Var weighted_sum(Var x, std::span<const double> weight);
// sum_i coeff[i] * terms[i] over 1x1 terms.
Var linear_combination(std::span<const Var> terms, std::span<const double> coeff);

// Straight-through relaxed TOP-k: forward emits one_hot rows at hard[r];
// backward uses the Jacobian of softmax((logits + noise) / tau).
Var straight_through(Var candidate_logits, const Matrix& noise, double tau, std::span<const int> hard);
// softmax((logits + noise) / tau) row-wise, fully differentiable.
Var relaxed_softmax(Var candidate_logits, const Matrix& noise, double tau);

// Row-wise KL(softmax(q_logits) || p) for a constant row-stochastic p; rows x 1.
Var kl_rows(Var q_logits, const Matrix& p);

}  // namespace ops

}  // namespace paraphrase
