#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "felab/facts.hpp"
#include "felab/model.hpp"
#include "felab/optim.hpp"

namespace felab {

// Training regimes. FT fits the unmodified facts (the memorization phase);
// FTM fits only the modified facts; FTA mixes both pools half-and-half;
// RI_FTM is FTM from a random initialization; RETRAIN fits every fact of the
// modified corpus from scratch.
enum class RegimeKind { RI_FTM, FT, FTM, FTA, RETRAIN };

inline const char* regime_name(RegimeKind k) {
    switch (k) {
        case RegimeKind::RI_FTM:
            return "RI_FTM";
        case RegimeKind::FT:
            return "FT";
        case RegimeKind::FTM:
            return "FTM";
        case RegimeKind::FTA:
            return "FTA";
        case RegimeKind::RETRAIN:
            return "RETRAIN";
    }
    return "FTM";
}

inline RegimeKind regime_from_name(const std::string& name) {
    if (name == "RI_FTM") return RegimeKind::RI_FTM;
    if (name == "FT") return RegimeKind::FT;
    if (name == "FTM") return RegimeKind::FTM;
    if (name == "FTA") return RegimeKind::FTA;
    if (name == "RETRAIN") return RegimeKind::RETRAIN;
    throw ConfigError("unknown regime \"" + name + "\" (expected RI_FTM, FT, FTM, FTA, or RETRAIN)");
}

struct RegimeConfig {
    RegimeKind kind{RegimeKind::FTM};
    int epochs{10};               // exact for FTM/FTA/RI_FTM; maximum for FT/RETRAIN
    int batch_size{8};
    double stop_train_acc{0.95};  // FT/RETRAIN stop once train accuracy reaches this
    double mixture_ratio{0.5};    // FTA: fraction of each batch drawn from the unmodified pool
    Selector selector{};
    ConstraintFamily family{ConstraintFamily::None};
    double delta{std::numeric_limits<double>::infinity()};
    double fisher_eps{1e-8};
    bool per_tensor{false};
    AdamParams adam{};

    void validate() const {
        if (epochs <= 0) throw ConfigError("regime: epochs must be positive");
        if (batch_size <= 0) throw ConfigError("regime: batch_size must be positive");
        if (std::isnan(delta) || delta < 0.0) throw ConfigError("regime: delta must be >= 0 or infinity");
        if (!(stop_train_acc > 0.0 && stop_train_acc <= 1.0)) throw ConfigError("regime: stop_train_acc must be in (0,1]");
        if (kind == RegimeKind::FTA) {
            if (!(mixture_ratio > 0.0 && mixture_ratio < 1.0)) throw ConfigError("regime: mixture_ratio must be in (0,1)");
            if (batch_size % 2 != 0) throw ConfigError("regime: FTA batch_size must be even");
        }
        if (!(fisher_eps > 0.0)) throw ConfigError("regime: fisher_eps must be positive");
        adam.validate();
    }

    bool operator==(const RegimeConfig&) const = default;

    // One place for the per-regime defaults: memorization runs use larger
    // batches and an accuracy stopping rule, modification runs a fixed
    // 10-epoch budget.
    static RegimeConfig defaults_for(RegimeKind k) {
        RegimeConfig rc;
        rc.kind = k;
        if (k == RegimeKind::FT || k == RegimeKind::RETRAIN) {
            rc.epochs = 200;
            rc.batch_size = 32;
        } else {
            rc.epochs = 10;
            rc.batch_size = 8;
        }
        return rc;
    }
};

// A training example with its provenance, so batches can be audited against
// the regime's data policy.
struct TaggedExample {
    TokenizedExample ex;
    int64_t fact_id{0};
    bool modified{false};
};

struct TrainPools {
    std::vector<TaggedExample> primary;   // the pool the epoch walks over
    std::vector<TaggedExample> mixture;   // FTA only: the unmodified pool
};

namespace detail {

inline TokenizedExample to_example(const Evidence& ev) { return TokenizedExample{ev.tokens, ev.mask_pos, ev.gold}; }

inline void collect_train(const Benchmark& b, bool want_modified, std::vector<TaggedExample>& out) {
    for (const auto& f : b.facts) {
        if (f.modified != want_modified) continue;
        for (const auto& ev : f.evidences)
            if (ev.split == Split::Train) out.push_back(TaggedExample{to_example(ev), f.fact_id, f.modified});
    }
}

}  // namespace detail

// Selects the training data a regime is allowed to see. FT never sees a
// modified fact's evidence; FTM/RI_FTM see only modified facts; FTA gets
// both pools; RETRAIN gets the whole modified corpus.
inline TrainPools build_train_pools(const Benchmark& b, RegimeKind kind) {
    TrainPools pools;
    switch (kind) {
        case RegimeKind::FT:
            detail::collect_train(b, false, pools.primary);
            break;
        case RegimeKind::FTM:
        case RegimeKind::RI_FTM:
            detail::collect_train(b, true, pools.primary);
            break;
        case RegimeKind::FTA:
            detail::collect_train(b, true, pools.primary);
            detail::collect_train(b, false, pools.mixture);
            break;
        case RegimeKind::RETRAIN:
            detail::collect_train(b, true, pools.primary);
            detail::collect_train(b, false, pools.primary);
            break;
    }
    return pools;
}

// Batch-level provenance accounting. Totals are exposed so tests can verify
// the audit actually saw the data.
struct BatchAudit {
    size_t n_batches{0};
    size_t n_examples{0};
    size_t n_modified{0};
    size_t n_unmodified{0};
};

struct TrainResult {
    std::vector<double> epoch_loss;       // objective value per epoch, in order
    std::vector<double> epoch_train_acc;  // accuracy over the primary pool per epoch
    int epochs_run{0};
    bool stopped_early{false};
    bool replacement_sampling{false};  // FTA mixture pool was smaller than its batch share
    BatchAudit audit;
};

// Exact-match accuracy of the argmax prediction over a slice. Integer
// reduction, so the result is independent of thread count.
template <typename T>
double evaluate_accuracy(const ModelConfig& cfg, const ParamSet<T>& p, std::span<const TokenizedExample> slice) {
    if (slice.empty()) throw ValueError("evaluate_accuracy: empty slice");
    long long correct = 0;
    const long long n = static_cast<long long>(slice.size());
#pragma omp parallel for schedule(dynamic) reduction(+ : correct) if (n > 1)
    for (long long i = 0; i < n; ++i) {
        const auto& ex = slice[static_cast<size_t>(i)];
        if (predict_token(cfg, p, std::span<const int32_t>(ex.tokens), ex.mask_pos) == ex.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// (a + b) / 2 with a unit guard: mixing a fraction with a percent is the one
// silent way to corrupt every downstream row, so a pair straddling 1.0 is
// rejected rather than averaged.
inline double metric_abar(double acc_modified, double acc_unmodified) {
    if (std::isnan(acc_modified) || std::isnan(acc_unmodified)) throw ValueError("metric_abar: NaN input");
    if (acc_modified < 0.0 || acc_unmodified < 0.0) throw ValueError("metric_abar: negative accuracy");
    const bool a_pct = acc_modified > 1.0;
    const bool b_pct = acc_unmodified > 1.0;
    if (a_pct != b_pct) throw ValueError("metric_abar: unit mismatch (one input looks like a percent, the other a fraction)");
    const double hi = a_pct ? 100.0 : 1.0;
    if (acc_modified > hi || acc_unmodified > hi) throw ValueError("metric_abar: accuracy out of range");
    return (acc_modified + acc_unmodified) / 2.0;
}

struct MetricsRecord {
    double acc_modified{0.0};
    double acc_unmodified{0.0};
    double acc_avg{0.0};  // always (acc_modified + acc_unmodified) / 2
    double delta{std::numeric_limits<double>::infinity()};
    std::string selector{"all"};
    uint64_t seed{0};
    std::string regime{"FTM"};
};

inline MetricsRecord make_metrics_record(double acc_m, double acc_u, double delta, const std::string& selector,
                                         uint64_t seed, const std::string& regime) {
    MetricsRecord r;
    r.acc_modified = acc_m;
    r.acc_unmodified = acc_u;
    r.acc_avg = metric_abar(acc_m, acc_u);
    r.delta = delta;
    r.selector = selector;
    r.seed = seed;
    r.regime = regime;
    return r;
}

namespace detail {

// k distinct indices from [0, n), uniform, by partial Fisher-Yates.
inline std::vector<size_t> sample_distinct(size_t n, size_t k, Rng& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.bounded(static_cast<uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

inline void audit_example(const TaggedExample& te, RegimeKind kind, bool from_mixture, BatchAudit& audit) {
    ++audit.n_examples;
    if (te.modified)
        ++audit.n_modified;
    else
        ++audit.n_unmodified;
    switch (kind) {
        case RegimeKind::FT:
            if (te.modified)
                throw ValueError("train: provenance audit failed: modified fact " + std::to_string(te.fact_id) +
                                 " in an FT batch");
            break;
        case RegimeKind::FTM:
        case RegimeKind::RI_FTM:
            if (!te.modified)
                throw ValueError("train: provenance audit failed: unmodified fact " + std::to_string(te.fact_id) +
                                 " in an FTM batch");
            break;
        case RegimeKind::FTA:
            if (from_mixture == te.modified)
                throw ValueError("train: provenance audit failed: fact " + std::to_string(te.fact_id) +
                                 " in the wrong FTA half");
            break;
        case RegimeKind::RETRAIN:
            break;
    }
}

}  // namespace detail

// Shuffled minibatch epochs with a constrained Adam step per batch; the
// constraint reference is snapshotted from theta at entry. FTA batches carry
// batch_size*(1-ratio) primary and batch_size*ratio mixture examples with
// weights 1/n_primary and 1/n_mixture, so the objective is the sum of the
// two pool means. FT and RETRAIN stop once train accuracy reaches
// stop_train_acc; FTM/FTA/RI_FTM always run the full epoch budget.
template <typename T>
TrainResult train(const ModelConfig& cfg, ParamSet<T>& theta, const TrainPools& pools, const RegimeConfig& rc,
                  Rng& rng, std::shared_ptr<const ParamSet<T>> fisher = nullptr) {
    rc.validate();
    if (pools.primary.empty()) throw ValueError("train: empty training pool");
    const bool fta = rc.kind == RegimeKind::FTA;
    if (fta && pools.mixture.empty()) throw ValueError("train: FTA requires a nonempty unmodified pool");
    if (!fta && !pools.mixture.empty()) throw ValueError("train: mixture pool is only valid for FTA");
    if (rc.family == ConstraintFamily::FisherDiag && !fisher)
        throw ValueError("train: fisher_diag constraint requires Fisher weights");

    select_trainable(theta, cfg, rc.selector);

    Constraint<T> c;
    c.family = rc.family;
    c.delta = rc.delta;
    c.fisher_eps = rc.fisher_eps;
    c.per_tensor = rc.per_tensor;
    if (rc.family != ConstraintFamily::None) c.reference = std::make_shared<const ParamSet<T>>(theta);
    if (rc.family == ConstraintFamily::FisherDiag) c.fisher = std::move(fisher);
    ConstrainedAdam<T> opt(theta, rc.adam, c);

    const size_t n_primary = pools.primary.size();
    size_t per_batch_primary = static_cast<size_t>(rc.batch_size);
    size_t mix_share = 0;
    if (fta) {
        mix_share = static_cast<size_t>(std::llround(rc.batch_size * rc.mixture_ratio));
        mix_share = std::min<size_t>(std::max<size_t>(mix_share, 1), static_cast<size_t>(rc.batch_size) - 1);
        per_batch_primary = static_cast<size_t>(rc.batch_size) - mix_share;
    }

    TrainResult res;
    std::vector<size_t> order(n_primary);
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<TokenizedExample> batch;
    std::vector<double> weights;
    std::vector<TokenizedExample> primary_plain(n_primary);
    for (size_t i = 0; i < n_primary; ++i) primary_plain[i] = pools.primary[i].ex;

    for (int epoch = 0; epoch < rc.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        size_t epoch_examples = 0;
        size_t n_batches = 0;
        for (size_t base = 0; base < n_primary; base += per_batch_primary) {
            const size_t count = std::min(per_batch_primary, n_primary - base);
            batch.clear();
            weights.clear();
            ++res.audit.n_batches;
            for (size_t i = 0; i < count; ++i) {
                const auto& te = pools.primary[order[base + i]];
                detail::audit_example(te, rc.kind, false, res.audit);
                batch.push_back(te.ex);
            }
            if (fta) {
                // Keep the pools in proportion even on a short final batch.
                size_t mix_count = static_cast<size_t>(
                    std::llround(static_cast<double>(count) * rc.mixture_ratio / (1.0 - rc.mixture_ratio)));
                mix_count = std::max<size_t>(mix_count, 1);
                std::vector<size_t> mix_idx;
                if (pools.mixture.size() >= mix_count) {
                    mix_idx = detail::sample_distinct(pools.mixture.size(), mix_count, rng);
                } else {
                    res.replacement_sampling = true;
                    mix_idx.resize(mix_count);
                    for (auto& ix : mix_idx) ix = static_cast<size_t>(rng.bounded(pools.mixture.size()));
                }
                for (size_t ix : mix_idx) {
                    const auto& te = pools.mixture[ix];
                    detail::audit_example(te, rc.kind, true, res.audit);
                    batch.push_back(te.ex);
                }
                weights.assign(batch.size(), 0.0);
                for (size_t i = 0; i < count; ++i) weights[i] = 1.0 / static_cast<double>(count);
                for (size_t i = count; i < batch.size(); ++i) weights[i] = 1.0 / static_cast<double>(mix_count);
            }
            auto [loss, grads] =
                loss_and_grads<T>(cfg, theta, std::span<const TokenizedExample>(batch),
                                  fta ? std::span<const double>(weights) : std::span<const double>{});
            opt.step(theta, grads);
            // For plain regimes the batch loss is a per-example mean, so the
            // epoch aggregate weights batches by size; the FTA objective is a
            // sum of pool means, averaged over batches as-is.
            epoch_loss_sum += fta ? loss : loss * static_cast<double>(count);
            epoch_examples += count;
            ++n_batches;
        }
        res.epoch_loss.push_back(fta ? epoch_loss_sum / static_cast<double>(n_batches)
                                     : epoch_loss_sum / static_cast<double>(epoch_examples));
        const double train_acc = evaluate_accuracy(cfg, theta, std::span<const TokenizedExample>(primary_plain));
        res.epoch_train_acc.push_back(train_acc);
        res.epochs_run = epoch + 1;
        if ((rc.kind == RegimeKind::FT || rc.kind == RegimeKind::RETRAIN) && train_acc >= rc.stop_train_acc) {
            res.stopped_early = true;
            break;
        }
    }
    return res;
}

struct DeltaSummary {
    double delta{0.0};
    size_t n_seeds{0};
    double mean_acc_modified{0.0};
    double mean_acc_unmodified{0.0};
    double mean_acc_avg{0.0};
    double se_acc_modified{0.0};
    double se_acc_unmodified{0.0};
    double se_acc_avg{0.0};
};

struct SweepResult {
    std::vector<MetricsRecord> rows;      // grid-major, seed-minor
    std::vector<DeltaSummary> summary;    // one per grid point, grid order
    DeltaSummary best;                    // max mean acc_avg; ties go to the smaller delta
};

namespace detail {

inline void mean_se(std::span<const double> xs, double& mean, double& se) {
    const size_t n = xs.size();
    double s = 0.0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(n);
    if (n < 2) {
        se = 0.0;
        return;
    }
    double ssq = 0.0;
    for (double x : xs) ssq += (x - mean) * (x - mean);
    se = std::sqrt(ssq / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

}  // namespace detail

// Trains one model per (delta, seed) cell from a fresh copy of theta0 (or a
// fresh random init for RI_FTM/RETRAIN, where pretraining plays no part) and
// evaluates both test slices. The grid must include both endpoints delta=0
// and delta=inf so the curve's interior can be compared against "change
// nothing" and "unconstrained".
template <typename T>
SweepResult sweep_delta(const ModelConfig& cfg, const ParamSet<T>& theta0, const Benchmark& bench,
                        const RegimeConfig& rc_template, std::span<const double> delta_grid,
                        std::span<const uint64_t> seeds,
                        const std::function<void(const MetricsRecord&)>& on_row = {}) {
    rc_template.validate();
    if (rc_template.family == ConstraintFamily::None)
        throw ConfigError("sweep_delta: constraint family none has no radius to sweep");
    if (delta_grid.empty()) throw ConfigError("sweep_delta: empty delta grid");
    if (seeds.empty()) throw ConfigError("sweep_delta: no seeds");
    bool has_zero = false, has_inf = false;
    for (size_t i = 0; i < delta_grid.size(); ++i) {
        const double d = delta_grid[i];
        if (std::isnan(d) || d < 0.0) throw ConfigError("sweep_delta: delta grid entries must be >= 0 or infinity");
        if (d == 0.0) has_zero = true;
        if (std::isinf(d)) has_inf = true;
        for (size_t j = 0; j < i; ++j)
            if (delta_grid[j] == d) throw ConfigError("sweep_delta: duplicate delta in grid");
    }
    if (!has_zero) throw ConfigError("sweep_delta: grid must include delta=0");
    if (!has_inf) throw ConfigError("sweep_delta: grid must include delta=inf");
    for (size_t i = 0; i < seeds.size(); ++i)
        for (size_t j = 0; j < i; ++j)
            if (seeds[j] == seeds[i]) throw ConfigError("sweep_delta: duplicate seed");

    const ExamplePools eval_pools = build_pools(bench);
    if (eval_pools.modified_test.empty()) throw ValueError("sweep_delta: benchmark has no modified test evidences");
    if (eval_pools.unmodified_test.empty()) throw ValueError("sweep_delta: benchmark has no unmodified test evidences");
    const TrainPools train_pools = build_train_pools(bench, rc_template.kind);

    // Fisher weights describe what the reference model knows, so they are
    // estimated once at theta0 over the unmodified training evidences and
    // shared across every cell.
    std::shared_ptr<const ParamSet<T>> fisher;
    if (rc_template.family == ConstraintFamily::FisherDiag) {
        std::vector<TokenizedExample> keep;
        for (const auto& f : bench.facts) {
            if (f.modified) continue;
            for (const auto& ev : f.evidences)
                if (ev.split == Split::Train) keep.push_back(detail::to_example(ev));
        }
        if (keep.empty()) throw ValueError("sweep_delta: no unmodified train evidences to estimate Fisher weights");
        fisher = std::make_shared<const ParamSet<T>>(
            estimate_diag_fisher(cfg, theta0, std::span<const TokenizedExample>(keep)));
    }

    const bool fresh_init = rc_template.kind == RegimeKind::RI_FTM || rc_template.kind == RegimeKind::RETRAIN;
    SweepResult out;
    std::vector<double> cell_m(seeds.size()), cell_u(seeds.size()), cell_a(seeds.size());
    for (double d : delta_grid) {
        RegimeConfig rc = rc_template;
        rc.delta = d;
        for (size_t s = 0; s < seeds.size(); ++s) {
            Rng cell_rng(seeds[s]);
            ParamSet<T> theta = fresh_init ? init_params<T>(cfg, cell_rng) : theta0;
            train(cfg, theta, train_pools, rc, cell_rng, fisher);
            const double am = evaluate_accuracy(cfg, theta, std::span<const TokenizedExample>(eval_pools.modified_test));
            const double au =
                evaluate_accuracy(cfg, theta, std::span<const TokenizedExample>(eval_pools.unmodified_test));
            MetricsRecord row =
                make_metrics_record(am, au, d, rc.selector.to_string(), seeds[s], regime_name(rc.kind));
            if (on_row) on_row(row);
            out.rows.push_back(std::move(row));
            cell_m[s] = am;
            cell_u[s] = au;
            cell_a[s] = metric_abar(am, au);
        }
        DeltaSummary sum;
        sum.delta = d;
        sum.n_seeds = seeds.size();
        detail::mean_se(cell_m, sum.mean_acc_modified, sum.se_acc_modified);
        detail::mean_se(cell_u, sum.mean_acc_unmodified, sum.se_acc_unmodified);
        detail::mean_se(cell_a, sum.mean_acc_avg, sum.se_acc_avg);
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

// Trains a fresh model on the full modified corpus; the reference point the
// constrained methods are judged against.
template <typename T>
std::pair<ParamSet<T>, MetricsRecord> retrain_baseline(const ModelConfig& cfg, const Benchmark& bench,
                                                       const RegimeConfig& rc_in, uint64_t seed) {
    RegimeConfig rc = rc_in;
    rc.kind = RegimeKind::RETRAIN;
    rc.family = ConstraintFamily::None;
    rc.delta = std::numeric_limits<double>::infinity();
    Rng rng(seed);
    ParamSet<T> theta = init_params<T>(cfg, rng);
    const TrainPools pools = build_train_pools(bench, RegimeKind::RETRAIN);
    train(cfg, theta, pools, rc, rng);
    const ExamplePools eval_pools = build_pools(bench);
    if (eval_pools.modified_test.empty() || eval_pools.unmodified_test.empty())
        throw ValueError("retrain_baseline: benchmark is missing a test slice");
    const double am = evaluate_accuracy(cfg, theta, std::span<const TokenizedExample>(eval_pools.modified_test));
    const double au = evaluate_accuracy(cfg, theta, std::span<const TokenizedExample>(eval_pools.unmodified_test));
    MetricsRecord rec = make_metrics_record(am, au, rc.delta, rc.selector.to_string(), seed, regime_name(rc.kind));
    return {std::move(theta), std::move(rec)};
}

}  // namespace felab
