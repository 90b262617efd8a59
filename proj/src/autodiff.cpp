#include "paraphrase/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace paraphrase {

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, int rows, int cols) {
    if (by_name_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->value = Matrix(rows, cols);
    p->grad = Matrix(rows, cols);
    Parameter& ref = *p;
    by_name_[ref.name] = &ref;
    params_.push_back(std::move(p));
    return ref;
}

Parameter* ParameterSet::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
    Parameter* p = find(name);
    if (p == nullptr) throw std::out_of_range("unknown parameter: " + name);
    return *p;
}

std::vector<Parameter*> ParameterSet::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

void ParameterSet::assign(const ParameterSet& other) {
    if (other.size() != size()) throw std::invalid_argument("parameter sets differ in size");
    for (auto& p : params_) {
        const Parameter* src = other.find(p->name);
        if (src == nullptr) throw std::invalid_argument("missing parameter: " + p->name);
        if (!src->value.same_shape(p->value)) throw std::invalid_argument("shape mismatch for parameter: " + p->name);
        p->value = src->value;
    }
}

bool ParameterSet::values_equal(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (const auto& p : params_) {
        const Parameter* o = other.find(p->name);
        if (o == nullptr || !o->value.same_shape(p->value) || o->value.data != p->value.data) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Graph

const Matrix& Var::value() const { return graph->value(*this); }

double Var::scalar() const {
    const Matrix& m = value();
    if (m.rows != 1 || m.cols != 1) throw std::logic_error("scalar() on non-scalar node " + m.shape_string());
    return m.data[0];
}

const Graph::Node& Graph::node(Var v) const {
    if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::logic_error("variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Graph::Node& Graph::node(Var v) {
    return const_cast<Node&>(static_cast<const Graph*>(this)->node(v));
}

Var Graph::constant(Matrix value) { return add_node(std::move(value), false, nullptr); }

Var Graph::parameter(Parameter& param) {
    auto it = param_nodes_.find(&param);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.external = &param.value;
    n.param = &param;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_[&param] = id;
    return Var{this, id};
}

Var Graph::frozen(const Parameter& param) {
    auto it = frozen_nodes_.find(&param);
    if (it != frozen_nodes_.end()) return Var{this, it->second};
    Node n;
    n.external = &param.value;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    frozen_nodes_[&param] = id;
    return Var{this, id};
}

Var Graph::add_node(Matrix value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::value(Var v) const {
    const Node& n = node(v);
    return n.external != nullptr ? *n.external : n.value;
}

const Matrix& Graph::grad(Var v) const { return node(v).grad; }

Matrix& Graph::grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) {
        const Matrix& val = n.external != nullptr ? *n.external : n.value;
        n.grad = Matrix(val.rows, val.cols);
    }
    return n.grad;
}

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

void Graph::backward(Var loss) {
    if (!record_) throw std::logic_error("backward() on a graph built without gradient recording");
    const Matrix& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1) throw std::logic_error("backward() requires a 1x1 loss");
    if (!node(loss).needs_grad) return;
    grad_buffer(loss).data[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.param != nullptr) {
            Matrix& pg = n.param->grad;
            if (pg.empty()) pg = Matrix(n.grad.rows, n.grad.cols);
            for (std::size_t j = 0; j < pg.data.size(); ++j) pg.data[j] += n.grad.data[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {
namespace {

Graph& graph_of(Var a) {
    if (!a.valid()) throw std::logic_error("invalid variable");
    return *a.graph;
}

void require_same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw std::logic_error("variables from different graphs");
}

void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const int m = trans_a ? av.cols : av.rows;
    const int k = trans_a ? av.rows : av.cols;
    const int kb = trans_b ? bv.cols : bv.rows;
    const int n = trans_b ? bv.rows : bv.cols;
    require(k == kb, "matmul shape mismatch " + av.shape_string() + " * " + bv.shape_string());
    Matrix out(m, n);
    kernels::gemm(trans_a, trans_b, m, n, k, av.data.data(), bv.data.data(), out.data.data(), false);
    const bool ng = g.needs_grad(a) || g.needs_grad(b);
    return g.add_node(std::move(out), ng, [a, b, trans_a, trans_b, m, n, k](Graph& gr, const Matrix& dc) {
        const double* A = gr.value(a).data.data();
        const double* B = gr.value(b).data.data();
        if (gr.needs_grad(a)) {
            double* dA = gr.grad_buffer(a).data.data();
            if (!trans_a)
                kernels::gemm(false, !trans_b, m, k, n, dc.data.data(), B, dA, true);
            else
                kernels::gemm(trans_b, true, k, m, n, B, dc.data.data(), dA, true);
        }
        if (gr.needs_grad(b)) {
            double* dB = gr.grad_buffer(b).data.data();
            if (!trans_b)
                kernels::gemm(!trans_a, false, k, n, m, A, dc.data.data(), dB, true);
            else
                kernels::gemm(true, trans_a, n, k, m, dc.data.data(), A, dB, true);
        }
    });
}

Var add(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    require(av.same_shape(bv), "add shape mismatch " + av.shape_string() + " + " + bv.shape_string());
    Matrix out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    const bool ng = g.needs_grad(a) || g.needs_grad(b);
    return g.add_node(std::move(out), ng, [a, b](Graph& gr, const Matrix& d) {
        for (Var v : {a, b}) {
            if (!gr.needs_grad(v)) continue;
            Matrix& gv = gr.grad_buffer(v);
            for (std::size_t i = 0; i < d.data.size(); ++i) gv.data[i] += d.data[i];
        }
    });
}

Var add_row(Var x, Var bias) {
    require_same_graph(x, bias);
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    const Matrix& bv = bias.value();
    require(bv.rows == 1 && bv.cols == xv.cols, "add_row bias shape " + bv.shape_string());
    Matrix out = xv;
    for (int r = 0; r < out.rows; ++r) {
        double* o = out.row(r);
        for (int c = 0; c < out.cols; ++c) o[c] += bv.data[static_cast<std::size_t>(c)];
    }
    const bool ng = g.needs_grad(x) || g.needs_grad(bias);
    return g.add_node(std::move(out), ng, [x, bias](Graph& gr, const Matrix& d) {
        if (gr.needs_grad(x)) {
            Matrix& gx = gr.grad_buffer(x);
            for (std::size_t i = 0; i < d.data.size(); ++i) gx.data[i] += d.data[i];
        }
        if (gr.needs_grad(bias)) {
            Matrix& gb = gr.grad_buffer(bias);
            for (int r = 0; r < d.rows; ++r) {
                const double* dr = d.row(r);
                for (int c = 0; c < d.cols; ++c) gb.data[static_cast<std::size_t>(c)] += dr[c];
            }
        }
    });
}

Var scale(Var x, double factor) {
    Graph& g = graph_of(x);
    Matrix out = x.value();
    for (double& v : out.data) v *= factor;
    return g.add_node(std::move(out), g.needs_grad(x), [x, factor](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < d.data.size(); ++i) gx.data[i] += factor * d.data[i];
    });
}

Var relu(Var x) {
    Graph& g = graph_of(x);
    Matrix out = x.value();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return g.add_node(std::move(out), g.needs_grad(x), [x](Graph& gr, const Matrix& d) {
        const Matrix& xv = gr.value(x);
        Matrix& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < d.data.size(); ++i)
            if (xv.data[i] > 0.0) gx.data[i] += d.data[i];
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    require_same_graph(x, gain);
    require_same_graph(x, bias);
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    require(gain.value().cols == xv.cols && bias.value().cols == xv.cols, "layer_norm parameter width");
    Matrix out(xv.rows, xv.cols);
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xv.rows) * 2);
    kernels::layer_norm_forward(xv.rows, xv.cols, xv.data.data(), gain.value().data.data(), bias.value().data.data(),
                                eps, out.data.data(), stats->data(), stats->data() + xv.rows);
    const bool ng = g.needs_grad(x) || g.needs_grad(gain) || g.needs_grad(bias);
    return g.add_node(std::move(out), ng, [x, gain, bias, stats](Graph& gr, const Matrix& d) {
        const Matrix& xv2 = gr.value(x);
        const int rows = xv2.rows;
        const int cols = xv2.cols;
        std::vector<double> scratch_x;
        std::vector<double> scratch_g;
        std::vector<double> scratch_b;
        double* dx = nullptr;
        double* dg = nullptr;
        double* db = nullptr;
        if (gr.needs_grad(x)) {
            dx = gr.grad_buffer(x).data.data();
        } else {
            scratch_x.assign(xv2.size(), 0.0);
            dx = scratch_x.data();
        }
        if (gr.needs_grad(gain)) {
            dg = gr.grad_buffer(gain).data.data();
        } else {
            scratch_g.assign(static_cast<std::size_t>(cols), 0.0);
            dg = scratch_g.data();
        }
        if (gr.needs_grad(bias)) {
            db = gr.grad_buffer(bias).data.data();
        } else {
            scratch_b.assign(static_cast<std::size_t>(cols), 0.0);
            db = scratch_b.data();
        }
        kernels::layer_norm_backward(rows, cols, xv2.data.data(), gr.value(gain).data.data(), stats->data(),
                                     stats->data() + rows, d.data.data(), dx, dg, db);
    });
}

Var dropout(Var x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    require(rate < 1.0, "dropout rate must be < 1");
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    Matrix out(xv.rows, xv.cols);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        (*mask)[i] = keep(*rng) ? inv : 0.0;
        out.data[i] = xv.data[i] * (*mask)[i];
    }
    return g.add_node(std::move(out), g.needs_grad(x), [x, mask](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < d.data.size(); ++i) gx.data[i] += d.data[i] * (*mask)[i];
    });
}

Var embedding(Var table, std::span<const int> ids) {
    Graph& g = graph_of(table);
    const Matrix& tv = table.value();
    Matrix out(static_cast<int>(ids.size()), tv.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        require(id >= 0 && id < tv.rows, "embedding id out of range: " + std::to_string(id));
        std::copy(tv.row(id), tv.row(id) + tv.cols, out.row(static_cast<int>(r)));
    }
    auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return g.add_node(std::move(out), g.needs_grad(table), [table, idx](Graph& gr, const Matrix& d) {
        Matrix& gt = gr.grad_buffer(table);
        for (std::size_t r = 0; r < idx->size(); ++r) {
            double* dst = gt.row((*idx)[r]);
            const double* src = d.row(static_cast<int>(r));
            for (int c = 0; c < d.cols; ++c) dst[c] += src[c];
        }
    });
}

Var soft_embedding(Var table, std::span<const int> candidates, Var weights) {
    require_same_graph(table, weights);
    Graph& g = graph_of(table);
    const Matrix& tv = table.value();
    const Matrix& wv = weights.value();
    const int k = wv.cols;
    require(static_cast<std::size_t>(wv.rows) * k == candidates.size(), "soft_embedding candidate count");
    Matrix out(wv.rows, tv.cols);
    for (int r = 0; r < wv.rows; ++r) {
        double* o = out.row(r);
        for (int c = 0; c < k; ++c) {
            const int id = candidates[static_cast<std::size_t>(r) * k + c];
            require(id >= 0 && id < tv.rows, "soft_embedding id out of range: " + std::to_string(id));
            const double w = wv(r, c);
            const double* e = tv.row(id);
            for (int j = 0; j < tv.cols; ++j) o[j] += w * e[j];
        }
    }
    auto idx = std::make_shared<std::vector<int>>(candidates.begin(), candidates.end());
    const bool ng = g.needs_grad(table) || g.needs_grad(weights);
    return g.add_node(std::move(out), ng, [table, weights, idx, k](Graph& gr, const Matrix& d) {
        const Matrix& tv2 = gr.value(table);
        const Matrix& wv2 = gr.value(weights);
        const bool gt_needed = gr.needs_grad(table);
        const bool gw_needed = gr.needs_grad(weights);
        for (int r = 0; r < d.rows; ++r) {
            const double* dr = d.row(r);
            for (int c = 0; c < k; ++c) {
                const int id = (*idx)[static_cast<std::size_t>(r) * k + c];
                if (gw_needed) {
                    const double* e = tv2.row(id);
                    double dot = 0.0;
                    for (int j = 0; j < d.cols; ++j) dot += dr[j] * e[j];
                    gr.grad_buffer(weights)(r, c) += dot;
                }
                if (gt_needed) {
                    const double w = wv2(r, c);
                    if (w == 0.0) continue;
                    double* dst = gr.grad_buffer(table).row(id);
                    for (int j = 0; j < d.cols; ++j) dst[j] += w * dr[j];
                }
            }
        }
    });
}

Var attention(Var q, Var k, Var v, const kernels::AttentionShape& shape, std::span<const std::uint8_t> key_mask) {
    require_same_graph(q, k);
    require_same_graph(q, v);
    Graph& g = graph_of(q);
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    require(qv.rows == shape.batch * shape.q_len && qv.cols == shape.width(), "attention query shape");
    require(kv.rows == shape.batch * shape.k_len && kv.cols == shape.width(), "attention key shape");
    require(vv.same_shape(kv), "attention value shape");
    require(key_mask.size() == static_cast<std::size_t>(shape.batch) * shape.k_len, "attention mask size");
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(shape.batch) * shape.heads *
                                                       shape.q_len * shape.k_len);
    Matrix out(qv.rows, qv.cols);
    kernels::attention_forward(shape, qv.data.data(), kv.data.data(), vv.data.data(), key_mask.data(), probs->data(),
                               out.data.data());
    const bool ng = g.needs_grad(q) || g.needs_grad(k) || g.needs_grad(v);
    return g.add_node(std::move(out), ng, [q, k, v, shape, probs](Graph& gr, const Matrix& d) {
        std::vector<double> sq;
        std::vector<double> sk;
        std::vector<double> sv;
        double* dq = nullptr;
        double* dk = nullptr;
        double* dv = nullptr;
        if (gr.needs_grad(q)) {
            dq = gr.grad_buffer(q).data.data();
        } else {
            sq.assign(gr.value(q).size(), 0.0);
            dq = sq.data();
        }
        if (gr.needs_grad(k)) {
            dk = gr.grad_buffer(k).data.data();
        } else {
            sk.assign(gr.value(k).size(), 0.0);
            dk = sk.data();
        }
        if (gr.needs_grad(v)) {
            dv = gr.grad_buffer(v).data.data();
        } else {
            sv.assign(gr.value(v).size(), 0.0);
            dv = sv.data();
        }
        kernels::attention_backward(shape, gr.value(q).data.data(), gr.value(k).data.data(), gr.value(v).data.data(),
                                    probs->data(), d.data.data(), dq, dk, dv);
    });
}

Var log_softmax(Var x) {
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    Matrix out(xv.rows, xv.cols);
    kernels::log_softmax_rows(xv.rows, xv.cols, xv.data.data(), out.data.data());
    const int self = static_cast<int>(g.node_count());
    return g.add_node(std::move(out), g.needs_grad(x), [x, self](Graph& gr, const Matrix& d) {
        const Matrix& y = gr.value(Var{&gr, self});
        Matrix& gx = gr.grad_buffer(x);
        for (int r = 0; r < d.rows; ++r) {
            const double* dr = d.row(r);
            const double* yr = y.row(r);
            double total = 0.0;
            for (int c = 0; c < d.cols; ++c) total += dr[c];
            double* gr_row = gx.row(r);
            for (int c = 0; c < d.cols; ++c) gr_row[c] += dr[c] - std::exp(yr[c]) * total;
        }
    });
}

Var gather(Var x, std::span<const int> index, int cols) {
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    require(cols > 0 && index.size() == static_cast<std::size_t>(xv.rows) * cols, "gather index size");
    Matrix out(xv.rows, cols);
    for (int r = 0; r < xv.rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const int j = index[static_cast<std::size_t>(r) * cols + c];
            require(j >= 0 && j < xv.cols, "gather index out of range");
            out(r, c) = xv(r, j);
        }
    auto idx = std::make_shared<std::vector<int>>(index.begin(), index.end());
    return g.add_node(std::move(out), g.needs_grad(x), [x, idx, cols](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (int r = 0; r < d.rows; ++r)
            for (int c = 0; c < cols; ++c) gx(r, (*idx)[static_cast<std::size_t>(r) * cols + c]) += d(r, c);
    });
}

Var pick(Var x, std::span<const int> target) {
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    require(target.size() == static_cast<std::size_t>(xv.rows), "pick target size");
    Matrix out(xv.rows, 1);
    for (int r = 0; r < xv.rows; ++r) {
        const int t = target[static_cast<std::size_t>(r)];
        if (t < 0) continue;
        require(t < xv.cols, "pick target out of range");
        out(r, 0) = xv(r, t);
    }
    auto tgt = std::make_shared<std::vector<int>>(target.begin(), target.end());
    return g.add_node(std::move(out), g.needs_grad(x), [x, tgt](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (int r = 0; r < d.rows; ++r) {
            const int t = (*tgt)[static_cast<std::size_t>(r)];
            if (t >= 0) gx(r, t) += d(r, 0);
        }
    });
}

Var scatter_rows(Matrix base, Var src, std::span<const int> rows) {
    Graph& g = graph_of(src);
    const Matrix& sv = src.value();
    require(base.cols == sv.cols && rows.size() == static_cast<std::size_t>(sv.rows), "scatter_rows shape");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < base.rows, "scatter_rows row out of range");
        std::copy(sv.row(static_cast<int>(i)), sv.row(static_cast<int>(i)) + sv.cols, base.row(rows[i]));
    }
    auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
    return g.add_node(std::move(base), g.needs_grad(src), [src, idx](Graph& gr, const Matrix& d) {
        Matrix& gs = gr.grad_buffer(src);
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const double* dr = d.row((*idx)[i]);
            double* o = gs.row(static_cast<int>(i));
            for (int c = 0; c < d.cols; ++c) o[c] += dr[c];
        }
    });
}

Var sum(Var x) {
    Graph& g = graph_of(x);
    double total = 0.0;
    for (double v : x.value().data) total += v;
    return g.add_node(Matrix(1, 1, total), g.needs_grad(x), [x](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (double& v : gx.data) v += d.data[0];
    });
}

Var weighted_sum(Var x, std::span<const double> weight) {
    Graph& g = graph_of(x);
    const Matrix& xv = x.value();
    require(xv.cols == 1 && weight.size() == static_cast<std::size_t>(xv.rows), "weighted_sum expects a column");
    double total = 0.0;
    for (int r = 0; r < xv.rows; ++r) total += weight[static_cast<std::size_t>(r)] * xv.data[static_cast<std::size_t>(r)];
    auto w = std::make_shared<std::vector<double>>(weight.begin(), weight.end());
    return g.add_node(Matrix(1, 1, total), g.needs_grad(x), [x, w](Graph& gr, const Matrix& d) {
        Matrix& gx = gr.grad_buffer(x);
        for (std::size_t r = 0; r < w->size(); ++r) gx.data[r] += (*w)[r] * d.data[0];
    });
}

Var linear_combination(std::span<const Var> terms, std::span<const double> coeff) {
    require(!terms.empty() && terms.size() == coeff.size(), "linear_combination arity");
    Graph& g = graph_of(terms[0]);
    double total = 0.0;
    bool ng = false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        require_same_graph(terms[0], terms[i]);
        total += coeff[i] * terms[i].scalar();
        ng = ng || g.needs_grad(terms[i]);
    }
    auto t = std::make_shared<std::vector<Var>>(terms.begin(), terms.end());
    auto c = std::make_shared<std::vector<double>>(coeff.begin(), coeff.end());
    return g.add_node(Matrix(1, 1, total), ng, [t, c](Graph& gr, const Matrix& d) {
        for (std::size_t i = 0; i < t->size(); ++i)
            if (gr.needs_grad((*t)[i])) gr.grad_buffer((*t)[i]).data[0] += (*c)[i] * d.data[0];
    });
}

namespace {

Matrix relaxed_weights(const Matrix& logits, const Matrix& noise, double tau) {
    Matrix z(logits.rows, logits.cols);
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] = (logits.data[i] + noise.data[i]) / tau;
    Matrix y(z.rows, z.cols);
    kernels::softmax_rows(z.rows, z.cols, z.data.data(), y.data.data());
    return y;
}

// dl += (1/tau) * y * (dy - <dy, y>) row-wise.
void relaxed_backward(const Matrix& y, const Matrix& dy, double tau, Matrix& dl) {
    for (int r = 0; r < y.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols; ++c) dot += dy(r, c) * y(r, c);
        for (int c = 0; c < y.cols; ++c) dl(r, c) += y(r, c) * (dy(r, c) - dot) / tau;
    }
}

}  // namespace

Var straight_through(Var candidate_logits, const Matrix& noise, double tau, std::span<const int> hard) {
    Graph& g = graph_of(candidate_logits);
    const Matrix& lv = candidate_logits.value();
    require(noise.same_shape(lv), "straight_through noise shape");
    require(hard.size() == static_cast<std::size_t>(lv.rows), "straight_through hard index count");
    require(tau > 0.0, "temperature must be positive");
    Matrix out(lv.rows, lv.cols);
    for (int r = 0; r < lv.rows; ++r) {
        const int h = hard[static_cast<std::size_t>(r)];
        require(h >= 0 && h < lv.cols, "straight_through hard index out of range");
        out(r, h) = 1.0;
    }
    auto y = std::make_shared<Matrix>(relaxed_weights(lv, noise, tau));
    return g.add_node(std::move(out), g.needs_grad(candidate_logits),
                      [candidate_logits, y, tau](Graph& gr, const Matrix& d) {
                          relaxed_backward(*y, d, tau, gr.grad_buffer(candidate_logits));
                      });
}

Var relaxed_softmax(Var candidate_logits, const Matrix& noise, double tau) {
    Graph& g = graph_of(candidate_logits);
    const Matrix& lv = candidate_logits.value();
    require(noise.same_shape(lv), "relaxed_softmax noise shape");
    require(tau > 0.0, "temperature must be positive");
    Matrix y = relaxed_weights(lv, noise, tau);
    auto saved = std::make_shared<Matrix>(y);
    return g.add_node(std::move(y), g.needs_grad(candidate_logits),
                      [candidate_logits, saved, tau](Graph& gr, const Matrix& d) {
                          relaxed_backward(*saved, d, tau, gr.grad_buffer(candidate_logits));
                      });
}

Var kl_rows(Var q_logits, const Matrix& p) {
    Graph& g = graph_of(q_logits);
    const Matrix& lv = q_logits.value();
    require(p.same_shape(lv), "kl_rows shape mismatch");
    auto q = std::make_shared<Matrix>(lv.rows, lv.cols);
    auto logq = std::make_shared<Matrix>(lv.rows, lv.cols);
    kernels::log_softmax_rows(lv.rows, lv.cols, lv.data.data(), logq->data.data());
    Matrix out(lv.rows, 1);
    for (int r = 0; r < lv.rows; ++r) {
        double kl = 0.0;
        for (int c = 0; c < lv.cols; ++c) {
            const double qc = std::exp((*logq)(r, c));
            (*q)(r, c) = qc;
            if (qc == 0.0) continue;
            require(p(r, c) > 0.0, "kl_rows: reference distribution has zero mass on the support");
            kl += qc * ((*logq)(r, c) - std::log(p(r, c)));
        }
        // Clamp tiny negative round-off; the exact value is non-negative.
        out(r, 0) = std::max(kl, 0.0);
    }
    auto pc = std::make_shared<Matrix>(p);
    return g.add_node(std::move(out), g.needs_grad(q_logits), [q_logits, q, logq, pc](Graph& gr, const Matrix& d) {
        Matrix& gl = gr.grad_buffer(q_logits);
        for (int r = 0; r < q->rows; ++r) {
            double kl = 0.0;
            for (int c = 0; c < q->cols; ++c)
                if ((*q)(r, c) > 0.0) kl += (*q)(r, c) * ((*logq)(r, c) - std::log((*pc)(r, c)));
            for (int c = 0; c < q->cols; ++c) {
                if ((*q)(r, c) == 0.0) continue;
                gl(r, c) += d(r, 0) * (*q)(r, c) * ((*logq)(r, c) - std::log((*pc)(r, c)) - kl);
            }
        }
    });
}

}  // namespace ops
}  // namespace paraphrase
