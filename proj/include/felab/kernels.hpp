#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "felab/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace felab {

// Compute kernels. Parallelism rules that keep results bitwise reproducible
// across thread counts:
//   - OpenMP loops only ever split over independent output elements,
//   - every contraction axis is summed sequentially in ascending index order,
//   - no atomics, no reductions over shared accumulators.

// C[m,n] = A[m,k] * B[k,n]. The i,k,j loop order keeps the inner loop over
// contiguous, independent outputs (vectorizes without reassociating the sum).
template <typename T>
Tensor<T> gemm(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ValueError("gemm: inner dims differ, " + shape_to_string(a.shape()) + " * " + shape_to_string(b.shape()));
    }
    Tensor<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (m > 1 && m * n * k > 16384)
    for (size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C[m,n] = A[m,k] * B[n,k]^T. B is transposed into scratch once so the hot
// loop is the same shape as gemm; per output element the summation order over
// k is unchanged.
template <typename T>
Tensor<T> gemm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ValueError("gemm_nt: inner dims differ, " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()) + "^T");
    }
    std::vector<T> bt(k * n);
    for (size_t j = 0; j < n; ++j)
        for (size_t p = 0; p < k; ++p) bt[p * n + j] = b(j, p);
    Tensor<T> c({m, n});
    const T* pa = a.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (m > 1 && m * n * k > 16384)
    for (size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = bt.data() + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C[m,n] = A[k,m]^T * B[k,n]. Parallel over output rows i; k stays ascending.
template <typename T>
Tensor<T> gemm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ValueError("gemm_tn: inner dims differ, " + shape_to_string(a.shape()) + "^T * " +
                         shape_to_string(b.shape()));
    }
    Tensor<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (m > 1 && m * n * k > 16384)
    for (size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = pa[p * m + i];
            const T* brow = pb + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// y[v] = W[v,d] * x[d], the tied-embedding head shape.
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
    const size_t m = w.rows(), k = w.cols();
    if (x.rank() != 1 || x.numel() != k) {
        throw ValueError("matvec: vector " + shape_to_string(x.shape()) + " does not match " +
                         shape_to_string(w.shape()));
    }
    Tensor<T> y({m});
#pragma omp parallel for schedule(static) if (m * k > 16384)
    for (size_t i = 0; i < m; ++i) {
        T acc = 0;
        const T* row = w.data() + i * k;
        for (size_t p = 0; p < k; ++p) acc += row[p] * x[p];
        y[i] = acc;
    }
    return y;
}

template <typename T>
void add_bias_rows(Tensor<T>& x, const Tensor<T>& bias) {
    const size_t n = x.rows(), d = x.cols();
    if (bias.rank() != 1 || bias.numel() != d) throw ValueError("add_bias_rows: bias shape mismatch");
    for (size_t i = 0; i < n; ++i) {
        T* row = x.data() + i * d;
        for (size_t j = 0; j < d; ++j) row[j] += bias[j];
    }
}

// Column sums of a matrix, the gradient of add_bias_rows.
template <typename T>
Tensor<T> colsum(const Tensor<T>& x) {
    const size_t n = x.rows(), d = x.cols();
    Tensor<T> s({d});
    for (size_t i = 0; i < n; ++i) {
        const T* row = x.data() + i * d;
        for (size_t j = 0; j < d; ++j) s[j] += row[j];
    }
    return s;
}

// Row-wise softmax with max subtraction; finite for any finite input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const size_t n = x.rows(), d = x.cols();
    Tensor<T> y({n, d});
    for (size_t i = 0; i < n; ++i) {
        const T* in = x.data() + i * d;
        T* out = y.data() + i * d;
        T mx = in[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (size_t j = 0; j < d; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < d; ++j) out[j] *= inv;
    }
    return y;
}

// dx for y = softmax_rows(x): dx = y .* (dy - sum(dy .* y)) per row.
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    if (!y.same_shape(dy)) throw ValueError("softmax_rows_backward: shape mismatch");
    const size_t n = y.rows(), d = y.cols();
    Tensor<T> dx({n, d});
    for (size_t i = 0; i < n; ++i) {
        const T* yr = y.data() + i * d;
        const T* dyr = dy.data() + i * d;
        T* dxr = dx.data() + i * d;
        T dot = 0;
        for (size_t j = 0; j < d; ++j) dot += dyr[j] * yr[j];
        for (size_t j = 0; j < d; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
    }
    return dx;
}

// Per-row mean and reciprocal std saved by layer_norm for the backward pass.
template <typename T>
struct LayerNormCache {
    Tensor<T> mean;  // [rows]
    Tensor<T> rstd;  // [rows]
};

// y = gain .* (x - mean) / sqrt(var + eps) + bias, row-wise over the last axis.
// Variance is the biased (1/d) estimator.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps,
                     LayerNormCache<T>* cache = nullptr) {
    const size_t n = x.rows(), d = x.cols();
    if (gain.numel() != d || bias.numel() != d) throw ValueError("layer_norm: gain/bias shape mismatch");
    Tensor<T> y({n, d});
    if (cache) {
        cache->mean = Tensor<T>({n});
        cache->rstd = Tensor<T>({n});
    }
    for (size_t i = 0; i < n; ++i) {
        const T* in = x.data() + i * d;
        T* out = y.data() + i * d;
        T mean = 0;
        for (size_t j = 0; j < d; ++j) mean += in[j];
        mean /= T(d);
        T var = 0;
        for (size_t j = 0; j < d; ++j) {
            const T dv = in[j] - mean;
            var += dv * dv;
        }
        var /= T(d);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (size_t j = 0; j < d; ++j) out[j] = gain[j] * ((in[j] - mean) * rstd) + bias[j];
        if (cache) {
            cache->mean[i] = mean;
            cache->rstd[i] = rstd;
        }
    }
    return y;
}

template <typename T>
struct LayerNormGrads {
    Tensor<T> dx;
    Tensor<T> dgain;
    Tensor<T> dbias;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, const LayerNormCache<T>& cache,
                                      const Tensor<T>& dy) {
    const size_t n = x.rows(), d = x.cols();
    if (!x.same_shape(dy)) throw ValueError("layer_norm_backward: shape mismatch");
    LayerNormGrads<T> g{Tensor<T>({n, d}), Tensor<T>({d}), Tensor<T>({d})};
    for (size_t i = 0; i < n; ++i) {
        const T* in = x.data() + i * d;
        const T* dyr = dy.data() + i * d;
        T* dxr = g.dx.data() + i * d;
        const T mean = cache.mean[i];
        const T rstd = cache.rstd[i];
        // xhat = (x - mean) * rstd; dxhat = dy .* gain
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (size_t j = 0; j < d; ++j) {
            const T xhat = (in[j] - mean) * rstd;
            const T dxhat = dyr[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            g.dgain[j] += dyr[j] * xhat;
            g.dbias[j] += dyr[j];
        }
        const T inv_d = T(1) / T(d);
        for (size_t j = 0; j < d; ++j) {
            const T xhat = (in[j] - mean) * rstd;
            const T dxhat = dyr[j] * gain[j];
            dxr[j] = rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
    return g;
}

namespace detail {
// tanh-approximation GELU constants
template <typename T>
constexpr T gelu_c0 = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T gelu_c1 = T(0.044715);
}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const T c0 = detail::gelu_c0<T>, c1 = detail::gelu_c1<T>;
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) {
        const T v = x[i];
        y[i] = T(0.5) * v * (T(1) + std::tanh(c0 * (v + c1 * v * v * v)));
    }
    return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    if (!x.same_shape(dy)) throw ValueError("gelu_backward: shape mismatch");
    Tensor<T> dx(x.shape());
    const T c0 = detail::gelu_c0<T>, c1 = detail::gelu_c1<T>;
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) {
        const T v = x[i];
        const T u = c0 * (v + c1 * v * v * v);
        const T t = std::tanh(u);
        const T du = c0 * (T(1) + T(3) * c1 * v * v);
        dx[i] = dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
    }
    return dx;
}

// Negative log softmax probability of the gold class, computed via the
// max-shifted log-sum-exp so large logits cannot overflow.
template <typename T>
double cross_entropy_from_logits(const Tensor<T>& logits, int32_t gold) {
    if (logits.rank() != 1) throw ValueError("cross_entropy_from_logits: logits must be rank 1");
    const size_t v = logits.numel();
    if (gold < 0 || static_cast<size_t>(gold) >= v) throw ValueError("cross_entropy_from_logits: gold id out of range");
    T mx = logits[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    double sum = 0;
    for (size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(logits[j] - mx));
    return std::log(sum) + static_cast<double>(mx) - static_cast<double>(logits[gold]);
}

// dloss/dlogits = softmax(logits) - onehot(gold).
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, int32_t gold) {
    if (logits.rank() != 1) throw ValueError("cross_entropy_backward: logits must be rank 1");
    const size_t v = logits.numel();
    if (gold < 0 || static_cast<size_t>(gold) >= v) throw ValueError("cross_entropy_backward: gold id out of range");
    Tensor<T> d({v});
    T mx = logits[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    T sum = 0;
    for (size_t j = 0; j < v; ++j) {
        d[j] = std::exp(logits[j] - mx);
        sum += d[j];
    }
    const T inv = T(1) / sum;
    for (size_t j = 0; j < v; ++j) d[j] *= inv;
    d[gold] -= T(1);
    return d;
}

// Argmax with ties broken toward the lowest index.
template <typename T>
int32_t argmax_lowest(const Tensor<T>& x) {
    if (x.numel() == 0) throw ValueError("argmax_lowest: empty input");
    size_t best = 0;
    for (size_t j = 1; j < x.numel(); ++j) {
        if (x[j] > x[best]) best = j;
    }
    return static_cast<int32_t>(best);
}

}  // namespace felab
