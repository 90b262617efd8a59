#pragma once

#include <cstdint>

// Numeric kernels behind the autodiff ops. The top-level functions are the
// OpenMP-parallel versions used in training; `kernels::serial` holds plain
// loop implementations kept as the reference the tests and benchmarks compare
// against. Both families share signatures and all buffers are row-major.
namespace paraphrase::kernels {

// C (m x n) = op(A) * op(B), or C += ... when accumulate is set.
// op(A) is m x k (A stored k x m when trans_a), op(B) is k x n (B stored n x k when trans_b).
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);

void softmax_rows(int rows, int cols, const double* x, double* y);
void log_softmax_rows(int rows, int cols, const double* x, double* y);

void layer_norm_forward(int rows, int cols, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* mean, double* rstd);
// Accumulates into dx, dgain and dbias.
void layer_norm_backward(int rows, int cols, const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain, double* dbias);

struct AttentionShape {
    int batch = 0;
    int heads = 0;
    int q_len = 0;
    int k_len = 0;
    int head_dim = 0;
    bool causal = false;

    int width() const { return heads * head_dim; }
};

// q: (batch*q_len) x width, k/v: (batch*k_len) x width, key_mask: batch x k_len (1 = attend).
// probs receives batch*heads*q_len*k_len attention weights; out is (batch*q_len) x width.
// A query whose keys are all masked gets zero weights and zero output.
void attention_forward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_mask, double* probs, double* out);
// Accumulates into dq, dk, dv.
void attention_backward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

namespace serial {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);
void softmax_rows(int rows, int cols, const double* x, double* y);
void log_softmax_rows(int rows, int cols, const double* x, double* y);
void layer_norm_forward(int rows, int cols, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* mean, double* rstd);
void layer_norm_backward(int rows, int cols, const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain, double* dbias);
void attention_forward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_mask, double* probs, double* out);
void attention_backward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

}  // namespace serial

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace paraphrase::kernels
