// Compares the OpenMP kernels against the serial reference implementations:
// wall time for both, plus the max abs deviation between their outputs.

#include <chrono>
#include <cstdio>
#include <functional>

#include "felab/kernels.hpp"
#include "felab/reference.hpp"
#include "felab/rng.hpp"
#include "felab/tensor.hpp"

namespace {

using felab::Tensor;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

Tensor<float> random_matrix(felab::Rng& rng, size_t rows, size_t cols) {
    Tensor<float> t({rows, cols});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal() * 0.5);
    return t;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

void row(const char* name, double fast_ms, double ref_ms, double diff) {
    std::printf("%-24s %10.3f ms %10.3f ms %8.2fx   max|d|=%.3g\n", name, fast_ms, ref_ms,
                ref_ms / std::max(fast_ms, 1e-9), diff);
}

}  // namespace

int main() {
    felab::Rng rng(42);
    const int reps = 5;

    std::printf("%-24s %13s %13s %9s\n", "kernel", "parallel", "serial", "speedup");

    {
        const size_t m = 192, k = 256, n = 192;
        const Tensor<float> a = random_matrix(rng, m, k);
        const Tensor<float> b = random_matrix(rng, k, n);
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::gemm(a, b); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::gemm(a, b); }, reps);
        row("gemm 192x256x192", tf, tr, max_abs_diff(fast, slow));
    }
    {
        const size_t m = 192, k = 256, n = 192;
        const Tensor<float> a = random_matrix(rng, m, k);
        const Tensor<float> b = random_matrix(rng, n, k);
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::gemm_nt(a, b); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::gemm_nt(a, b); }, reps);
        row("gemm_nt 192x256x192", tf, tr, max_abs_diff(fast, slow));
    }
    {
        const size_t k = 192, m = 256, n = 192;
        const Tensor<float> a = random_matrix(rng, k, m);
        const Tensor<float> b = random_matrix(rng, k, n);
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::gemm_tn(a, b); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::gemm_tn(a, b); }, reps);
        row("gemm_tn 256x192x192", tf, tr, max_abs_diff(fast, slow));
    }
    {
        const Tensor<float> x = random_matrix(rng, 512, 1024);
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::softmax_rows(x); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::softmax_rows(x); }, reps);
        row("softmax_rows 512x1024", tf, tr, max_abs_diff(fast, slow));
    }
    {
        const Tensor<float> x = random_matrix(rng, 512, 1024);
        Tensor<float> gain({size_t(1024)}), bias({size_t(1024)});
        for (size_t i = 0; i < 1024; ++i) {
            gain[i] = 1.0f + static_cast<float>(rng.normal() * 0.01);
            bias[i] = static_cast<float>(rng.normal() * 0.01);
        }
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::layer_norm(x, gain, bias, 1e-5f); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::layer_norm(x, gain, bias, 1e-5f); }, reps);
        row("layer_norm 512x1024", tf, tr, max_abs_diff(fast, slow));
    }
    {
        const Tensor<float> x = random_matrix(rng, 512, 1024);
        Tensor<float> fast, slow;
        const double tf = time_ms([&] { fast = felab::gelu(x); }, reps);
        const double tr = time_ms([&] { slow = felab::ref::gelu(x); }, reps);
        row("gelu 512x1024", tf, tr, max_abs_diff(fast, slow));
    }
    return 0;
}
