#include "paraphrase/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace paraphrase::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

constexpr int kMr = 4;
constexpr int kNr = 16;
constexpr int kRowBlock = 64;

// acc[r][j] over a full kMr x kNr tile; the fixed trip counts let the compiler
// keep the tile in vector registers.
inline void tile_full(int k, int n, const double* a, int lda, const double* b, double* c, bool accumulate) {
    double acc[kMr][kNr];
    if (accumulate) {
        for (int r = 0; r < kMr; ++r)
            for (int j = 0; j < kNr; ++j) acc[r][j] = c[static_cast<std::size_t>(r) * n + j];
    } else {
        for (int r = 0; r < kMr; ++r)
            for (int j = 0; j < kNr; ++j) acc[r][j] = 0.0;
    }
    for (int p = 0; p < k; ++p) {
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int r = 0; r < kMr; ++r) {
            const double av = a[static_cast<std::size_t>(r) * lda + p];
#pragma omp simd
            for (int j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (int r = 0; r < kMr; ++r)
        for (int j = 0; j < kNr; ++j) c[static_cast<std::size_t>(r) * n + j] = acc[r][j];
}

inline void tile_edge(int mr, int nr, int k, int n, const double* a, int lda, const double* b, double* c,
                      bool accumulate) {
    double acc[kMr][kNr];
    for (int r = 0; r < mr; ++r)
        for (int j = 0; j < nr; ++j) acc[r][j] = accumulate ? c[static_cast<std::size_t>(r) * n + j] : 0.0;
    for (int p = 0; p < k; ++p) {
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int r = 0; r < mr; ++r) {
            const double av = a[static_cast<std::size_t>(r) * lda + p];
            for (int j = 0; j < nr; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (int r = 0; r < mr; ++r)
        for (int j = 0; j < nr; ++j) c[static_cast<std::size_t>(r) * n + j] = acc[r][j];
}

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    const int blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
        const int i_begin = blk * kRowBlock;
        const int i_end = std::min(m, i_begin + kRowBlock);
        for (int j0 = 0; j0 < n; j0 += kNr) {
            const int nr = std::min(kNr, n - j0);
            for (int i0 = i_begin; i0 < i_end; i0 += kMr) {
                const int mr = std::min(kMr, i_end - i0);
                const double* ap = a + static_cast<std::size_t>(i0) * k;
                double* cp = c + static_cast<std::size_t>(i0) * n + j0;
                if (mr == kMr && nr == kNr)
                    tile_full(k, n, ap, k, b + j0, cp, accumulate);
                else
                    tile_edge(mr, nr, k, n, ap, k, b + j0, cp, accumulate);
            }
        }
    }
}

std::vector<double> transposed(int rows, int cols, const double* x) {
    std::vector<double> t(static_cast<std::size_t>(rows) * cols);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
    return t;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
        return;
    }
    std::vector<double> a_packed;
    std::vector<double> b_packed;
    if (trans_a) {
        a_packed = transposed(k, m, a);
        a = a_packed.data();
    }
    if (trans_b) {
        b_packed = transposed(n, k, b);
        b = b_packed.data();
    }
    gemm_nn(m, n, k, a, b, c, accumulate);
}

void softmax_rows(int rows, int cols, const double* x, double* y) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) serial::softmax_rows(1, cols, x + static_cast<std::size_t>(r) * cols, y + static_cast<std::size_t>(r) * cols);
}

void log_softmax_rows(int rows, int cols, const double* x, double* y) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        serial::log_softmax_rows(1, cols, x + static_cast<std::size_t>(r) * cols, y + static_cast<std::size_t>(r) * cols);
}

void layer_norm_forward(int rows, int cols, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* mean, double* rstd) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        serial::layer_norm_forward(1, cols, x + off, gain, bias, eps, y + off, mean + r, rstd + r);
    }
}

void layer_norm_backward(int rows, int cols, const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain, double* dbias) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        const double* xr = x + off;
        const double* dyr = dy + off;
        double* dxr = dx + off;
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mean[r]) * rstd[r];
            const double dxhat = dyr[c] * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= cols;
        mean_dxhat_xhat /= cols;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mean[r]) * rstd[r];
            dxr[c] += rstd[r] * (dyr[c] * gain[c] - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    // Column reductions run over rows in order so results match the serial kernel.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cols; ++c) {
        double g = 0.0;
        double b = 0.0;
        for (int r = 0; r < rows; ++r) {
            const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
            g += dy[idx] * (x[idx] - mean[r]) * rstd[r];
            b += dy[idx];
        }
        dgain[c] += g;
        dbias[c] += b;
    }
}

void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_mask, double* probs, double* out) {
    const int w = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    const int pairs = s.batch * s.heads;
#pragma omp parallel for schedule(static)
    for (int bh = 0; bh < pairs; ++bh) {
        const int b = bh / s.heads;
        const int h = bh % s.heads;
        const std::uint8_t* mask = key_mask + static_cast<std::size_t>(b) * s.k_len;
        for (int i = 0; i < s.q_len; ++i) {
            double* p = probs + (static_cast<std::size_t>(bh) * s.q_len + i) * s.k_len;
            const double* qi = q + (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
            const int last = s.causal ? std::min(s.k_len - 1, i + (s.k_len - s.q_len)) : s.k_len - 1;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < s.k_len; ++j) {
                if (j > last || mask[j] == 0) {
                    p[j] = 0.0;
                    continue;
                }
                const double* kj = k + (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                double dot = 0.0;
                for (int d = 0; d < s.head_dim; ++d) dot += qi[d] * kj[d];
                p[j] = dot * scale;
                mx = std::max(mx, p[j]);
            }
            double* oi = out + (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
            for (int d = 0; d < s.head_dim; ++d) oi[d] = 0.0;
            if (mx == -std::numeric_limits<double>::infinity()) continue;
            double sum = 0.0;
            for (int j = 0; j < s.k_len; ++j) {
                if (j > last || mask[j] == 0) continue;
                p[j] = std::exp(p[j] - mx);
                sum += p[j];
            }
            for (int j = 0; j < s.k_len; ++j) {
                if (p[j] == 0.0) continue;
                p[j] /= sum;
                const double* vj = v + (static_cast<std::size_t>(b) * s.k_len + j) * w + h * s.head_dim;
                for (int d = 0; d < s.head_dim; ++d) oi[d] += p[j] * vj[d];
            }
        }
    }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
    const int w = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    const int pairs = s.batch * s.heads;
    // Each (batch, head) pair owns a disjoint column block of dq/dk/dv rows.
#pragma omp parallel
    {
        std::vector<double> dp(static_cast<std::size_t>(s.k_len));
#pragma omp for schedule(static)
        for (int bh = 0; bh < pairs; ++bh) {
            const int b = bh / s.heads;
            const int h = bh % s.heads;
            for (int i = 0; i < s.q_len; ++i) {
                const double* p = probs + (static_cast<std::size_t>(bh) * s.q_len + i) * s.k_len;
                const std::size_t qrow = (static_cast<std::size_t>(b) * s.q_len + i) * w + h * s.head_dim;
                const double* doi = dout + qrow;
                double dot_pdp = 0.0;
                for (int j = 0; j < s.k_len; ++j) {
                    if (p[j] == 0.0) {
                        dp[j] = 0.0;
                        continue;
                    }
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

}  // namespace paraphrase::kernels
