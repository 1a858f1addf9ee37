#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "felab/model.hpp"

namespace felab {

enum class ConstraintFamily { None, Linf, L2, FisherDiag };

inline const char* constraint_family_name(ConstraintFamily f) {
    switch (f) {
        case ConstraintFamily::None:
            return "none";
        case ConstraintFamily::Linf:
            return "linf";
        case ConstraintFamily::L2:
            return "l2";
        case ConstraintFamily::FisherDiag:
            return "fisher_diag";
    }
    return "none";
}

inline ConstraintFamily constraint_family_from_name(const std::string& name) {
    if (name == "none") return ConstraintFamily::None;
    if (name == "linf") return ConstraintFamily::Linf;
    if (name == "l2") return ConstraintFamily::L2;
    if (name == "fisher_diag") return ConstraintFamily::FisherDiag;
    throw ConfigError("unknown constraint family \"" + name + "\" (expected none, linf, l2, or fisher_diag)");
}

// A norm ball around a frozen reference snapshot. The reference and the
// optional Fisher weights are shared immutably so copies are cheap.
template <typename T>
struct Constraint {
    ConstraintFamily family{ConstraintFamily::None};
    double delta{std::numeric_limits<double>::infinity()};
    std::shared_ptr<const ParamSet<T>> reference;
    std::shared_ptr<const ParamSet<T>> fisher;
    double fisher_eps{1e-8};
    bool per_tensor{false};  // ablation: separate l2/fisher budget per tensor

    void validate() const {
        if (std::isnan(delta) || delta < 0.0) throw ValueError("constraint: delta must be >= 0 or infinity");
        if (family == ConstraintFamily::None) return;
        if (!reference) throw ValueError("constraint: missing reference snapshot");
        if (family == ConstraintFamily::FisherDiag) {
            if (!fisher) throw ValueError("constraint: fisher_diag requires Fisher weights");
            if (!(fisher_eps > 0.0)) throw ValueError("constraint: fisher_eps must be positive");
        } else if (fisher) {
            throw ValueError("constraint: Fisher weights are only valid with family fisher_diag");
        }
    }
};

// Feasible-set slack: a point within delta*(1+kFeasibilitySlack) counts as
// inside. This absorbs the rounding of a just-projected point (float stores
// of the scaled coordinates perturb the recomputed norm by ~1e-7 relative)
// and is what makes projection bitwise idempotent.
inline constexpr double kFeasibilitySlack = 1e-6;

namespace detail {

template <typename T>
void check_fisher_nonnegative(const ParamSet<T>& fisher) {
    for (const auto& e : fisher)
        for (size_t i = 0; i < e.value.numel(); ++i)
            if (!(e.value[i] >= T(0))) throw ValueError("constraint: negative Fisher entry in " + e.name);
}

// Copies the reference values into theta for every trainable coordinate.
template <typename T>
void reset_to_reference(ParamSet<T>& theta, const ParamSet<T>& ref) {
    for (size_t e = 0; e < theta.size(); ++e) {
        if (!theta.entry(e).trainable) continue;
        auto& dst = theta.entry(e).value;
        const auto& src = ref.entry(e).value;
        for (size_t i = 0; i < dst.numel(); ++i) dst[i] = src[i];
    }
}

// Scales theta-theta0 by s over the trainable coordinates; arithmetic in
// double regardless of T so the scaling factor is applied uniformly.
template <typename T>
void scale_offset(ParamSet<T>& theta, const ParamSet<T>& ref, double s) {
    for (size_t e = 0; e < theta.size(); ++e) {
        if (!theta.entry(e).trainable) continue;
        auto& dst = theta.entry(e).value;
        const auto& src = ref.entry(e).value;
        for (size_t i = 0; i < dst.numel(); ++i) {
            const double d = static_cast<double>(dst[i]) - static_cast<double>(src[i]);
            dst[i] = static_cast<T>(static_cast<double>(src[i]) + d * s);
        }
    }
}

template <typename T>
double sq_norm_offset(const ParamSet<T>& theta, const ParamSet<T>& ref, size_t entry_idx) {
    const auto& a = theta.entry(entry_idx).value;
    const auto& b = ref.entry(entry_idx).value;
    double ssq = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        ssq += d * d;
    }
    return ssq;
}

template <typename T>
double sq_weighted_norm_offset(const ParamSet<T>& theta, const ParamSet<T>& ref, const ParamSet<T>& fisher,
                               double fisher_eps, size_t entry_idx) {
    const auto& a = theta.entry(entry_idx).value;
    const auto& b = ref.entry(entry_idx).value;
    const auto& w = fisher.entry(entry_idx).value;
    double ssq = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        ssq += (static_cast<double>(w[i]) + fisher_eps) * d * d;
    }
    return ssq;
}

// Scales a single tensor's offset, used by the per-tensor ablation.
template <typename T>
void scale_offset_entry(ParamSet<T>& theta, const ParamSet<T>& ref, size_t entry_idx, double s) {
    auto& dst = theta.entry(entry_idx).value;
    const auto& src = ref.entry(entry_idx).value;
    for (size_t i = 0; i < dst.numel(); ++i) {
        const double d = static_cast<double>(dst[i]) - static_cast<double>(src[i]);
        dst[i] = static_cast<T>(static_cast<double>(src[i]) + d * s);
    }
}

}  // namespace detail

// theta0 + clamp(theta - theta0, -delta, +delta), per trainable coordinate.
// Interior coordinates are left untouched (not recomputed), which is what
// makes repeated projection bit-stable.
template <typename T>
void project_linf(ParamSet<T>& theta, const Constraint<T>& c) {
    c.validate();
    if (c.family != ConstraintFamily::Linf) throw ValueError("project_linf: constraint family is not linf");
    const ParamSet<T>& ref = *c.reference;
    if (!theta.same_schema(ref)) throw ValueError("project_linf: schema mismatch with reference");
    if (std::isinf(c.delta)) return;
    if (c.delta == 0.0) {
        detail::reset_to_reference(theta, ref);
        return;
    }
    const T d = static_cast<T>(c.delta);
    for (size_t e = 0; e < theta.size(); ++e) {
        if (!theta.entry(e).trainable) continue;
        auto& dst = theta.entry(e).value;
        const auto& src = ref.entry(e).value;
        for (size_t i = 0; i < dst.numel(); ++i) {
            const T off = dst[i] - src[i];
            if (off > d)
                dst[i] = src[i] + d;
            else if (off < -d)
                dst[i] = src[i] - d;
        }
    }
}

// Radial scaling onto the l2 ball, norm taken jointly over all trainable
// coordinates (or per tensor with the ablation flag).
template <typename T>
void project_l2(ParamSet<T>& theta, const Constraint<T>& c) {
    c.validate();
    if (c.family != ConstraintFamily::L2) throw ValueError("project_l2: constraint family is not l2");
    const ParamSet<T>& ref = *c.reference;
    if (!theta.same_schema(ref)) throw ValueError("project_l2: schema mismatch with reference");
    if (std::isinf(c.delta)) return;
    if (c.delta == 0.0) {
        detail::reset_to_reference(theta, ref);
        return;
    }
    if (c.per_tensor) {
        for (size_t e = 0; e < theta.size(); ++e) {
            if (!theta.entry(e).trainable) continue;
            const double norm = std::sqrt(detail::sq_norm_offset(theta, ref, e));
            if (norm <= c.delta * (1.0 + kFeasibilitySlack)) continue;
            detail::scale_offset_entry(theta, ref, e, c.delta / norm);
        }
        return;
    }
    double ssq = 0.0;
    for (size_t e = 0; e < theta.size(); ++e)
        if (theta.entry(e).trainable) ssq += detail::sq_norm_offset(theta, ref, e);
    const double norm = std::sqrt(ssq);
    if (norm <= c.delta * (1.0 + kFeasibilitySlack)) return;
    detail::scale_offset(theta, ref, c.delta / norm);
}

// Projection onto {theta : sum_i (F_i + eps_f) (theta_i - theta0_i)^2 <= delta^2}.
// In coordinates whitened by sqrt(F_i + eps_f) this is an l2 ball, and the
// l2 projection there is a single radial scaling, so the unwhitened update
// is the same scalar applied to the raw offset.
template <typename T>
void project_fisher_diag(ParamSet<T>& theta, const Constraint<T>& c) {
    c.validate();
    if (c.family != ConstraintFamily::FisherDiag) throw ValueError("project_fisher_diag: constraint family is not fisher_diag");
    const ParamSet<T>& ref = *c.reference;
    const ParamSet<T>& fisher = *c.fisher;
    if (!theta.same_schema(ref) || !theta.same_schema(fisher))
        throw ValueError("project_fisher_diag: schema mismatch with reference or Fisher weights");
    detail::check_fisher_nonnegative(fisher);
    if (std::isinf(c.delta)) return;
    if (c.delta == 0.0) {
        detail::reset_to_reference(theta, ref);
        return;
    }
    if (c.per_tensor) {
        for (size_t e = 0; e < theta.size(); ++e) {
            if (!theta.entry(e).trainable) continue;
            const double norm = std::sqrt(detail::sq_weighted_norm_offset(theta, ref, fisher, c.fisher_eps, e));
            if (norm <= c.delta * (1.0 + kFeasibilitySlack)) continue;
            detail::scale_offset_entry(theta, ref, e, c.delta / norm);
        }
        return;
    }
    double ssq = 0.0;
    for (size_t e = 0; e < theta.size(); ++e)
        if (theta.entry(e).trainable) ssq += detail::sq_weighted_norm_offset(theta, ref, fisher, c.fisher_eps, e);
    const double norm = std::sqrt(ssq);
    if (norm <= c.delta * (1.0 + kFeasibilitySlack)) return;
    detail::scale_offset(theta, ref, c.delta / norm);
}

template <typename T>
void project(ParamSet<T>& theta, const Constraint<T>& c) {
    switch (c.family) {
        case ConstraintFamily::None:
            c.validate();
            return;
        case ConstraintFamily::Linf:
            project_linf(theta, c);
            return;
        case ConstraintFamily::L2:
            project_l2(theta, c);
            return;
        case ConstraintFamily::FisherDiag:
            project_fisher_diag(theta, c);
            return;
    }
}

// Constraint residual in the family's own norm; for reporting and tests.
template <typename T>
double constraint_residual(const ParamSet<T>& theta, const Constraint<T>& c) {
    if (c.family == ConstraintFamily::None) return 0.0;
    const ParamSet<T>& ref = *c.reference;
    double worst = 0.0;
    switch (c.family) {
        case ConstraintFamily::Linf:
            for (size_t e = 0; e < theta.size(); ++e) {
                if (!theta.entry(e).trainable) continue;
                const auto& a = theta.entry(e).value;
                const auto& b = ref.entry(e).value;
                for (size_t i = 0; i < a.numel(); ++i)
                    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
            }
            return worst;
        case ConstraintFamily::L2: {
            double ssq = 0.0;
            for (size_t e = 0; e < theta.size(); ++e)
                if (theta.entry(e).trainable) ssq += detail::sq_norm_offset(theta, ref, e);
            return std::sqrt(ssq);
        }
        case ConstraintFamily::FisherDiag: {
            double ssq = 0.0;
            for (size_t e = 0; e < theta.size(); ++e)
                if (theta.entry(e).trainable)
                    ssq += detail::sq_weighted_norm_offset(theta, ref, *c.fisher, c.fisher_eps, e);
            return std::sqrt(ssq);
        }
        default:
            return 0.0;
    }
}

// F_i = mean over examples of the squared per-example loss gradient,
// accumulated in double. Examples are processed one at a time in order.
template <typename T>
ParamSet<T> estimate_diag_fisher(const ModelConfig& cfg, const ParamSet<T>& params,
                                 std::span<const TokenizedExample> examples) {
    if (examples.empty()) throw ValueError("estimate_diag_fisher: no examples");
    std::vector<std::vector<double>> acc(params.size());
    for (size_t e = 0; e < params.size(); ++e) acc[e].assign(params.entry(e).value.numel(), 0.0);
    const double one[] = {1.0};
    for (const auto& ex : examples) {
        auto [loss, g] = loss_and_grads<T>(cfg, params, std::span<const TokenizedExample>(&ex, 1),
                                           std::span<const double>(one, 1));
        (void)loss;
        for (size_t e = 0; e < params.size(); ++e) {
            const auto& v = g.entry(e).value;
            for (size_t i = 0; i < v.numel(); ++i) {
                const double gi = static_cast<double>(v[i]);
                acc[e][i] += gi * gi;
            }
        }
    }
    ParamSet<T> fisher = params.zeros_like();
    const double inv_n = 1.0 / static_cast<double>(examples.size());
    for (size_t e = 0; e < params.size(); ++e) {
        auto& v = fisher.entry(e).value;
        for (size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(acc[e][i] * inv_n);
    }
    return fisher;
}

struct AdamParams {
    double lr{1e-3};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};

    void validate() const {
        if (!(lr > 0.0)) throw ValueError("adam: lr must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValueError("adam: beta1 must be in [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValueError("adam: beta2 must be in [0,1)");
        if (!(eps > 0.0)) throw ValueError("adam: eps must be positive");
    }

    bool operator==(const AdamParams&) const = default;
};

// Adam with a norm constraint: the usual moment updates and bias-corrected
// step, then projection onto the constraint ball after every step. With
// family none this is exactly unconstrained Adam.
template <typename T>
class ConstrainedAdam {
public:
    ConstrainedAdam(const ParamSet<T>& schema, AdamParams ap, Constraint<T> c)
        : ap_(ap), c_(std::move(c)), m_(schema.zeros_like()), v_(schema.zeros_like()) {
        ap_.validate();
        c_.validate();
        if (c_.family != ConstraintFamily::None && !c_.reference->same_schema(schema))
            throw ValueError("adam: constraint reference schema does not match parameters");
    }

    int64_t step_count() const { return t_; }
    const Constraint<T>& constraint() const { return c_; }

    void step(ParamSet<T>& theta, const ParamSet<T>& grads) {
        if (!theta.same_schema(m_) || !grads.same_schema(m_)) throw ValueError("adam: schema mismatch");
        // Abort before touching any state so a failed step leaves theta, m, v
        // and t exactly as they were.
        for (size_t e = 0; e < grads.size(); ++e) {
            if (!theta.entry(e).trainable) continue;
            if (!grads.entry(e).value.all_finite())
                throw NumericError("adam: non-finite gradient in " + grads.entry(e).name + "; step aborted");
        }
        ++t_;
        const double bc = std::sqrt(1.0 - std::pow(ap_.beta2, static_cast<double>(t_))) /
                          (1.0 - std::pow(ap_.beta1, static_cast<double>(t_)));
        const T k = static_cast<T>(ap_.lr * bc);
        const T b1 = static_cast<T>(ap_.beta1);
        const T b2 = static_cast<T>(ap_.beta2);
        const T one_minus_b1 = static_cast<T>(1.0 - ap_.beta1);
        const T one_minus_b2 = static_cast<T>(1.0 - ap_.beta2);
        const T eps = static_cast<T>(ap_.eps);
        for (size_t e = 0; e < theta.size(); ++e) {
            if (!theta.entry(e).trainable) continue;
            auto& th = theta.entry(e).value;
            const auto& g = grads.entry(e).value;
            auto& m = m_.entry(e).value;
            auto& v = v_.entry(e).value;
            for (size_t i = 0; i < th.numel(); ++i) {
                m[i] = b1 * m[i] + one_minus_b1 * g[i];
                v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
                th[i] = th[i] - k * m[i] / (std::sqrt(v[i]) + eps);
            }
        }
        project(theta, c_);
    }

private:
    AdamParams ap_;
    Constraint<T> c_;
    ParamSet<T> m_, v_;
    int64_t t_{0};
};

}  // namespace felab
