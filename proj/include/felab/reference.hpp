#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "felab/tensor.hpp"

namespace felab::ref {

// Serial reference kernels. Deliberately naive, textbook loop nests with no
// OpenMP, no scratch buffers and no shared code with felab/kernels.hpp; the
// tests and the benchmark compare the fast kernels against these.

template <typename T>
Tensor<T> gemm(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ValueError("ref::gemm: inner dims differ");
    Tensor<T> c({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    return c;
}

template <typename T>
Tensor<T> gemm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw ValueError("ref::gemm_nt: inner dims differ");
    Tensor<T> c({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
            c(i, j) = acc;
        }
    return c;
}

template <typename T>
Tensor<T> gemm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) throw ValueError("ref::gemm_tn: inner dims differ");
    Tensor<T> c({m, n});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (size_t p = 0; p < k; ++p) acc += a(p, i) * b(p, j);
            c(i, j) = acc;
        }
    return c;
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
    const size_t m = w.rows(), k = w.cols();
    if (x.numel() != k) throw ValueError("ref::matvec: shape mismatch");
    Tensor<T> y({m});
    for (size_t i = 0; i < m; ++i) {
        T acc = 0;
        for (size_t p = 0; p < k; ++p) acc += w(i, p) * x[p];
        y[i] = acc;
    }
    return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const size_t n = x.rows(), d = x.cols();
    Tensor<T> y({n, d});
    for (size_t i = 0; i < n; ++i) {
        T mx = x(i, 0);
        for (size_t j = 1; j < d; ++j)
            if (x(i, j) > mx) mx = x(i, j);
        T sum = 0;
        for (size_t j = 0; j < d; ++j) sum += std::exp(x(i, j) - mx);
        for (size_t j = 0; j < d; ++j) y(i, j) = std::exp(x(i, j) - mx) / sum;
    }
    return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    const size_t n = x.rows(), d = x.cols();
    Tensor<T> y({n, d});
    for (size_t i = 0; i < n; ++i) {
        T mean = 0;
        for (size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= T(d);
        T var = 0;
        for (size_t j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= T(d);
        for (size_t j = 0; j < d; ++j) y(i, j) = gain[j] * (x(i, j) - mean) / std::sqrt(var + eps) + bias[j];
    }
    return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const T v = x[i];
        const T inner = std::sqrt(T(2) / T(std::numbers::pi)) * (v + T(0.044715) * v * v * v);
        y[i] = T(0.5) * v * (T(1) + std::tanh(inner));
    }
    return y;
}

template <typename T>
double cross_entropy_from_logits(const Tensor<T>& logits, int32_t gold) {
    const size_t v = logits.numel();
    if (gold < 0 || static_cast<size_t>(gold) >= v) throw ValueError("ref::cross_entropy: gold id out of range");
    T mx = logits[0];
    for (size_t j = 1; j < v; ++j)
        if (logits[j] > mx) mx = logits[j];
    double sum = 0;
    for (size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(logits[j]) - static_cast<double>(mx));
    const double log_prob = static_cast<double>(logits[gold]) - static_cast<double>(mx) - std::log(sum);
    return -log_prob;
}

}  // namespace felab::ref
