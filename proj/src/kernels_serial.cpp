#include "paraphrase/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace paraphrase::kernels::serial {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double sum = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
                const double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
                sum += av * bv;
            }
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = accumulate ? out + sum : sum;
        }
    }
}

void softmax_rows(int rows, int cols, const double* x, double* y) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * cols;
        double* yr = y + static_cast<std::size_t>(r) * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= sum;
    }
}

void log_softmax_rows(int rows, int cols, const double* x, double* y) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * cols;
        double* yr = y + static_cast<std::size_t>(r) * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
        const double lse = mx + std::log(sum);
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
    }
}

void layer_norm_forward(int rows, int cols, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* mean, double* rstd) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * cols;
        double* yr = y + static_cast<std::size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xr[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= cols;
        const double rs = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gain[c] + bias[c];
        mean[r] = mu;
        rstd[r] = rs;
    }
}

void layer_norm_backward(int rows, int cols, const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain, double* dbias) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * cols;
        const double* dyr = dy + static_cast<std::size_t>(r) * cols;
        double* dxr = dx + static_cast<std::size_t>(r) * cols;
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mean[r]) * rstd[r];
            const double dxhat = dyr[c] * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
            dgain[c] += dyr[c] * xhat;
            dbias[c] += dyr[c];
        }
        mean_dxhat /= cols;
        mean_dxhat_xhat /= cols;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mean[r]) * rstd[r];
            const double dxhat = dyr[c] * gain[c];
            dxr[c] += rstd[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
}

namespace {

bool allowed(const AttentionShape& s, const std::uint8_t* key_mask, int b, int i, int j) {
    if (key_mask[static_cast<std::size_t>(b) * s.k_len + j] == 0) return false;
    if (s.causal && j > i + (s.k_len - s.q_len)) return false;
    return true;
}

}  // namespace

void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_mask, double* probs, double* out) {
    const int w = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    for (int b = 0; b < s.batch; ++b) {
        for (int h = 0; h < s.heads; ++h) {
            for (int i = 0; i < s.q_len; ++i) {
                double* p = probs + ((static_cast<std::size_t>(b) * s.heads + h) * s.q_len + i) * s.k_len;
                const double* qi = q + (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < s.k_len; ++j) {
                    if (!allowed(s, key_mask, b, i, j)) {
                        p[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* kj = k + (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                    double dot = 0.0;
                    for (int d = 0; d < s.head_dim; ++d) dot += qi[d] * kj[d];
                    p[j] = dot * scale;
                    mx = std::max(mx, p[j]);
                }
                double sum = 0.0;
                for (int j = 0; j < s.k_len; ++j) {
                    p[j] = std::isinf(p[j]) && p[j] < 0 ? 0.0 : std::exp(p[j] - mx);
                    sum += p[j];
                }
                double* oi = out + (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
                for (int d = 0; d < s.head_dim; ++d) oi[d] = 0.0;
                if (sum == 0.0) continue;
                for (int j = 0; j < s.k_len; ++j) {
                    p[j] /= sum;
                    const double* vj = v + (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                    for (int d = 0; d < s.head_dim; ++d) oi[d] += p[j] * vj[d];
                }
            }
        }
    }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
    const int w = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    std::vector<double> dp(static_cast<std::size_t>(s.k_len));
    for (int b = 0; b < s.batch; ++b) {
        for (int h = 0; h < s.heads; ++h) {
            for (int i = 0; i < s.q_len; ++i) {
                const double* p = probs + ((static_cast<std::size_t>(b) * s.heads + h) * s.q_len + i) * s.k_len;
                const std::size_t qrow = (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
                const double* doi = dout + qrow;
                double dot_pdp = 0.0;
                for (int j = 0; j < s.k_len; ++j) {
                    const std::size_t krow = (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                    double acc = 0.0;
                    for (int d = 0; d < s.head_dim; ++d) {
                        acc += doi[d] * v[krow + d];
                        dv[krow + d] += p[j] * doi[d];
                    }
                    dp[j] = acc;
                    dot_pdp += p[j] * acc;
                }
                for (int j = 0; j < s.k_len; ++j) {
                    const double ds = p[j] * (dp[j] - dot_pdp) * scale;
                    if (ds == 0.0) continue;
                    const std::size_t krow = (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                    for (int d = 0; d < s.head_dim; ++d) {
                        dq[qrow + d] += ds * k[krow + d];
                        dk[krow + d] += ds * q[qrow + d];
                    }
                }
            }
        }
    }
}

}  // namespace paraphrase::kernels::serial
