#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "felab/harness.hpp"
#include "felab/model.hpp"

namespace felab {

inline constexpr char kDatastoreMagic[8] = {'F', 'E', 'L', 'B', 'K', 'N', 'N', '1'};

// Exact nearest-neighbor datastore over mask-position embeddings (final
// block output, before the output head). Built once from a frozen model;
// the content hash records which weights the keys came from.
template <typename T>
struct Datastore {
    Tensor<T> keys;  // [count, d_model] when nonempty; a default-empty datastore is legal with epsilon 0
    std::vector<int32_t> values;
    double epsilon_default{0.0};
    uint64_t base_model_hash{0};

    size_t count() const { return values.size(); }

    void validate() const {
        if (!(epsilon_default >= 0.0)) throw ValueError("datastore: epsilon must be nonnegative");
        if (values.empty()) {
            if (keys.numel() != 0) throw ValueError("datastore: keys present without values");
            return;
        }
        if (keys.rank() != 2) throw ValueError("datastore: keys must be a [count, d_model] matrix");
        if (keys.rows() != values.size()) throw ValueError("datastore: key/value count mismatch");
    }
};

// One (key, value) pair per evidence, in the order given; the value is the
// evidence's gold token (the modified object when built from modified facts).
template <typename T>
Datastore<T> build_datastore(const ModelConfig& cfg, const ParamSet<T>& p,
                             std::span<const TokenizedExample> evidences) {
    if (evidences.empty()) throw ValueError("build_datastore: no evidences");
    Datastore<T> ds;
    ds.keys = Tensor<T>({evidences.size(), static_cast<size_t>(cfg.d_model)});
    ds.values.resize(evidences.size());
    ds.base_model_hash = p.content_hash();
    for (size_t i = 0; i < evidences.size(); ++i) {
        const auto& ex = evidences[i];
        const Tensor<T> h = forward_mask_hidden(cfg, p, std::span<const int32_t>(ex.tokens), ex.mask_pos);
        if (h.numel() != static_cast<size_t>(cfg.d_model)) throw ValueError("build_datastore: embedding dimension mismatch");
        for (size_t j = 0; j < h.numel(); ++j) ds.keys(i, j) = h[j];
        ds.values[i] = ex.gold;
    }
    return ds;
}

// Convenience: keys over every modified fact's train evidences, in benchmark
// order.
template <typename T>
Datastore<T> build_datastore(const ModelConfig& cfg, const ParamSet<T>& p, const Benchmark& bench) {
    std::vector<TokenizedExample> evs;
    for (const auto& f : bench.facts) {
        if (!f.modified) continue;
        for (const auto& ev : f.evidences)
            if (ev.split == Split::Train) evs.push_back(TokenizedExample{ev.tokens, ev.mask_pos, ev.gold});
    }
    if (evs.empty()) throw ValueError("build_datastore: benchmark has no modified train evidences");
    return build_datastore(cfg, p, std::span<const TokenizedExample>(evs));
}

struct KnnPrediction {
    int32_t token{-1};
    bool routed{false};
    double nearest_distance{std::numeric_limits<double>::infinity()};
    size_t nearest_index{0};
};

namespace detail {

// Nearest key by l2 distance, accumulated in double; first index wins ties.
template <typename T>
void nearest_key(const Datastore<T>& ds, const Tensor<T>& query, double& best_dist, size_t& best_idx) {
    const size_t d = ds.keys.cols();
    best_dist = std::numeric_limits<double>::infinity();
    best_idx = 0;
    for (size_t i = 0; i < ds.keys.rows(); ++i) {
        double ssq = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double diff = static_cast<double>(query[j]) - static_cast<double>(ds.keys(i, j));
            ssq += diff * diff;
        }
        const double dist = std::sqrt(ssq);
        if (dist < best_dist) {
            best_dist = dist;
            best_idx = i;
        }
    }
}

template <typename T>
KnnPrediction route_query(const Datastore<T>& ds, const Tensor<T>& query, int32_t base_prediction, double epsilon) {
    KnnPrediction out;
    out.token = base_prediction;
    if (ds.count() == 0) {
        if (epsilon != 0.0) throw ValueError("predict_knn: empty datastore with epsilon > 0");
        return out;
    }
    detail::nearest_key(ds, query, out.nearest_distance, out.nearest_index);
    if (out.nearest_distance < epsilon) {
        out.routed = true;
        out.token = ds.values[out.nearest_index];
    }
    return out;
}

}  // namespace detail

// Routes to the nearest stored value when its distance is strictly below
// epsilon; otherwise falls back to the base model's prediction.
template <typename T>
KnnPrediction predict_knn_detail(const ModelConfig& cfg, const Datastore<T>& ds, const ParamSet<T>& p,
                                 std::span<const int32_t> tokens, size_t mask_pos, double epsilon) {
    if (!(epsilon >= 0.0)) throw ValueError("predict_knn: epsilon must be nonnegative");
    ds.validate();
    const Tensor<T> h = forward_mask_hidden(cfg, p, tokens, mask_pos);
    const int32_t base = argmax_lowest(head_logits(cfg, p, h));
    return detail::route_query(ds, h, base, epsilon);
}

template <typename T>
int32_t predict_knn(const ModelConfig& cfg, const Datastore<T>& ds, const ParamSet<T>& p,
                    std::span<const int32_t> tokens, size_t mask_pos, double epsilon) {
    return predict_knn_detail(cfg, ds, p, tokens, mask_pos, epsilon).token;
}

// Accuracy of routed prediction over each test slice, one row per epsilon.
// Query embeddings, base predictions and nearest-key distances do not depend
// on epsilon, so they are computed once and every grid point reuses them.
template <typename T>
SweepResult sweep_epsilon(const ModelConfig& cfg, const Datastore<T>& ds, const ParamSet<T>& p,
                          const Benchmark& bench, std::span<const double> eps_grid,
                          const std::function<void(const MetricsRecord&)>& on_row = {}) {
    ds.validate();
    if (eps_grid.empty()) throw ConfigError("sweep_epsilon: empty epsilon grid");
    for (size_t i = 0; i < eps_grid.size(); ++i) {
        if (std::isnan(eps_grid[i]) || eps_grid[i] < 0.0)
            throw ConfigError("sweep_epsilon: epsilon grid entries must be nonnegative");
        for (size_t j = 0; j < i; ++j)
            if (eps_grid[j] == eps_grid[i]) throw ConfigError("sweep_epsilon: duplicate epsilon in grid");
    }
    const ExamplePools pools = build_pools(bench);
    if (pools.modified_test.empty()) throw ValueError("sweep_epsilon: benchmark has no modified test evidences");
    if (pools.unmodified_test.empty()) throw ValueError("sweep_epsilon: benchmark has no unmodified test evidences");
    if (ds.count() == 0) throw ValueError("sweep_epsilon: empty datastore");

    struct Prepared {
        int32_t gold;
        int32_t base;
        int32_t routed_value;
        double nearest;
    };
    auto prepare = [&](const std::vector<TokenizedExample>& slice) {
        std::vector<Prepared> out(slice.size());
        const long long n = static_cast<long long>(slice.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
        for (long long i = 0; i < n; ++i) {
            const auto& ex = slice[static_cast<size_t>(i)];
            const Tensor<T> h = forward_mask_hidden(cfg, p, std::span<const int32_t>(ex.tokens), ex.mask_pos);
            Prepared pr;
            pr.gold = ex.gold;
            pr.base = argmax_lowest(head_logits(cfg, p, h));
            double dist;
            size_t idx;
            detail::nearest_key(ds, h, dist, idx);
            pr.nearest = dist;
            pr.routed_value = ds.values[idx];
            out[static_cast<size_t>(i)] = pr;
        }
        return out;
    };
    const std::vector<Prepared> mod = prepare(pools.modified_test);
    const std::vector<Prepared> unmod = prepare(pools.unmodified_test);
    auto accuracy_at = [](const std::vector<Prepared>& qs, double eps) {
        size_t correct = 0;
        for (const auto& q : qs) {
            const int32_t pred = q.nearest < eps ? q.routed_value : q.base;
            if (pred == q.gold) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(qs.size());
    };

    SweepResult out;
    for (double eps : eps_grid) {
        const double am = accuracy_at(mod, eps);
        const double au = accuracy_at(unmod, eps);
        MetricsRecord row = make_metrics_record(am, au, eps, "none", 0, "KNN");
        if (on_row) on_row(row);
        out.rows.push_back(std::move(row));
        DeltaSummary sum;
        sum.delta = eps;
        sum.n_seeds = 1;
        sum.mean_acc_modified = am;
        sum.mean_acc_unmodified = au;
        sum.mean_acc_avg = metric_abar(am, au);
        out.summary.push_back(sum);
    }
    out.best = out.summary.front();
    for (const auto& sum : out.summary) {
        if (sum.mean_acc_avg > out.best.mean_acc_avg ||
            (sum.mean_acc_avg == out.best.mean_acc_avg && sum.delta < out.best.delta))
            out.best = sum;
    }
    return out;
}

namespace detail {

inline void write_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("datastore: short write to " + path);
}

inline void read_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) throw IoError("datastore: truncated file " + path);
}

}  // namespace detail

// Layout (little-endian): magic, u8 scalar width, u64 base model hash,
// u32 d_model, u64 count, f64 default epsilon, then count*d_model scalars and
// count i32 values.
template <typename T>
void save_datastore(const Datastore<T>& ds, const std::string& path) {
    ds.validate();
    if (ds.count() == 0) throw ValueError("datastore: refusing to save an empty datastore");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("datastore: cannot open " + path + " for writing");
    try {
        detail::write_bytes(f, kDatastoreMagic, sizeof kDatastoreMagic, path);
        const uint8_t width = sizeof(T);
        detail::write_bytes(f, &width, 1, path);
        detail::write_bytes(f, &ds.base_model_hash, sizeof ds.base_model_hash, path);
        const uint32_t d = static_cast<uint32_t>(ds.keys.cols());
        detail::write_bytes(f, &d, sizeof d, path);
        const uint64_t count = ds.count();
        detail::write_bytes(f, &count, sizeof count, path);
        detail::write_bytes(f, &ds.epsilon_default, sizeof ds.epsilon_default, path);
        detail::write_bytes(f, ds.keys.data(), ds.keys.numel() * sizeof(T), path);
        detail::write_bytes(f, ds.values.data(), ds.values.size() * sizeof(int32_t), path);
    } catch (...) {
        std::fclose(f);
        throw;
    }
    if (std::fclose(f) != 0) throw IoError("datastore: close failed for " + path);
}

template <typename T>
Datastore<T> load_datastore(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("datastore: cannot open " + path);
    Datastore<T> ds;
    try {
        char magic[8];
        detail::read_bytes(f, magic, sizeof magic, path);
        if (std::memcmp(magic, kDatastoreMagic, sizeof magic) != 0)
            throw IoError("datastore: bad magic in " + path);
        uint8_t width = 0;
        detail::read_bytes(f, &width, 1, path);
        if (width != sizeof(T))
            throw IoError("datastore: scalar width " + std::to_string(width) + " in " + path +
                          " does not match requested precision");
        detail::read_bytes(f, &ds.base_model_hash, sizeof ds.base_model_hash, path);
        uint32_t d = 0;
        detail::read_bytes(f, &d, sizeof d, path);
        uint64_t count = 0;
        detail::read_bytes(f, &count, sizeof count, path);
        detail::read_bytes(f, &ds.epsilon_default, sizeof ds.epsilon_default, path);
        if (d == 0 || count == 0 || count > (1ull << 32)) throw IoError("datastore: implausible header in " + path);
        ds.keys = Tensor<T>({static_cast<size_t>(count), static_cast<size_t>(d)});
        ds.values.resize(static_cast<size_t>(count));
        detail::read_bytes(f, ds.keys.data(), ds.keys.numel() * sizeof(T), path);
        detail::read_bytes(f, ds.values.data(), ds.values.size() * sizeof(int32_t), path);
        char extra;
        if (std::fread(&extra, 1, 1, f) == 1) throw IoError("datastore: trailing bytes in " + path);
    } catch (...) {
        std::fclose(f);
        throw;
    }
    std::fclose(f);
    ds.validate();
    return ds;
}

}  // namespace felab
