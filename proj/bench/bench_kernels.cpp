// Serial reference kernels vs the OpenMP versions at training-sized shapes.
// Run with OMP_NUM_THREADS=N to vary the thread count.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "paraphrase/kernels.hpp"

namespace k = paraphrase::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// rows = batch 32 x length 20 tokens, width = hidden
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1)), kk = static_cast<int>(state.range(2));
    const auto a = random_buffer(static_cast<std::size_t>(m) * kk, 1);
    const auto b = random_buffer(static_cast<std::size_t>(kk) * n, 2);
    std::vector<double> c(static_cast<std::size_t>(m) * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::gemm(false, false, m, n, kk, a.data(), b.data(), c.data(), false);
        else
            k::serial::gemm(false, false, m, n, kk, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * m * n * kk);
    state.counters["threads"] = Parallel ? k::max_threads() : 1;
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), cols = static_cast<int>(state.range(1));
    const auto x = random_buffer(static_cast<std::size_t>(rows) * cols, 3);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        if constexpr (Parallel)
            k::log_softmax_rows(rows, cols, x.data(), y.data());
        else
            k::serial::log_softmax_rows(rows, cols, x.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * cols);
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), cols = static_cast<int>(state.range(1));
    const auto x = random_buffer(static_cast<std::size_t>(rows) * cols, 4);
    const std::vector<double> gain(static_cast<std::size_t>(cols), 1.0), bias(static_cast<std::size_t>(cols), 0.0);
    std::vector<double> y(x.size()), mean(static_cast<std::size_t>(rows)), rstd(static_cast<std::size_t>(rows));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::layer_norm_forward(rows, cols, x.data(), gain.data(), bias.data(), 1e-5, y.data(), mean.data(), rstd.data());
        else
            k::serial::layer_norm_forward(rows, cols, x.data(), gain.data(), bias.data(), 1e-5, y.data(), mean.data(),
                                          rstd.data());
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * cols);
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
    k::AttentionShape s;
    s.batch = static_cast<int>(state.range(0));
    s.heads = 4;
    s.q_len = s.k_len = static_cast<int>(state.range(1));
    s.head_dim = 32;
    s.causal = true;
    const std::size_t rows = static_cast<std::size_t>(s.batch) * s.q_len;
    const auto q = random_buffer(rows * s.width(), 5), kv = random_buffer(rows * s.width(), 6);
    const std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.batch) * s.k_len, 1);
    std::vector<double> probs(static_cast<std::size_t>(s.batch) * s.heads * s.q_len * s.k_len), out(rows * s.width());
    std::vector<double> dq(out.size()), dk(out.size()), dv(out.size());
    for (auto _ : state) {
        if constexpr (Parallel) {
            k::attention_forward(s, q.data(), kv.data(), kv.data(), mask.data(), probs.data(), out.data());
            k::attention_backward(s, q.data(), kv.data(), kv.data(), probs.data(), out.data(), dq.data(), dk.data(), dv.data());
        } else {
            k::serial::attention_forward(s, q.data(), kv.data(), kv.data(), mask.data(), probs.data(), out.data());
            k::serial::attention_backward(s, q.data(), kv.data(), kv.data(), probs.data(), out.data(), dq.data(), dk.data(),
                                          dv.data());
        }
        benchmark::DoNotOptimize(dq.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Args({640, 128, 128})->Args({640, 256, 128})->Args({640, 54, 128})->Name("gemm/serial");
BENCHMARK(BM_gemm<true>)->Args({640, 128, 128})->Args({640, 256, 128})->Args({640, 54, 128})->Name("gemm/openmp");
BENCHMARK(BM_softmax<false>)->Args({640, 54})->Args({640, 1000})->Name("log_softmax/serial");
BENCHMARK(BM_softmax<true>)->Args({640, 54})->Args({640, 1000})->Name("log_softmax/openmp");
BENCHMARK(BM_layer_norm<false>)->Args({640, 128})->Args({640, 512})->Name("layer_norm/serial");
BENCHMARK(BM_layer_norm<true>)->Args({640, 128})->Args({640, 512})->Name("layer_norm/openmp");
BENCHMARK(BM_attention<false>)->Args({32, 20})->Args({32, 40})->Name("attention_fwd_bwd/serial");
BENCHMARK(BM_attention<true>)->Args({32, 20})->Args({32, 40})->Name("attention_fwd_bwd/openmp");

BENCHMARK_MAIN();
