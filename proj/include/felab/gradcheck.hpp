#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "felab/model.hpp"
#include "felab/rng.hpp"

namespace felab {

struct GradCheckCoord {
    std::string tensor;
    size_t index{0};
    double analytic{0.0};
    double numeric{0.0};
    double rel_err{0.0};
};

struct GradCheckReport {
    double max_rel_err{0.0};
    GradCheckCoord worst;
    size_t n_checked{0};
};

// Central-difference check of an analytic gradient: perturbs `samples`
// randomly chosen trainable coordinates of `params` by +-h and compares
// (f(+h) - f(-h)) / (actual step) against `analytic`. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as the denominator so zero gradients do
// not blow up the ratio.
//
// `f` must return long double. That floor makes the check meaningful only if
// the difference f(+h) - f(-h) is resolved well below 1e-12; a value rounded
// to double carries ~1 ulp (~1e-15 for a loss of a few nats) of evaluation
// noise, which divided by 2h would swamp every small-gradient coordinate.
template <typename T, typename F>
GradCheckReport finite_diff_check(F&& f, const ParamSet<T>& params, const ParamSet<T>& analytic, double h,
                                  size_t samples, Rng& rng) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw ValueError("finite_diff_check: h must be in [1e-7, 1e-3]");
    if (samples == 0) throw ValueError("finite_diff_check: samples must be positive");
    if (!params.same_schema(analytic)) throw ValueError("finite_diff_check: analytic gradient schema mismatch");

    // Index map over trainable coordinates: (entry, offset) pairs chosen
    // uniformly by flat position.
    std::vector<size_t> entry_of;
    std::vector<size_t> base_of;
    size_t total = 0;
    for (size_t e = 0; e < params.size(); ++e) {
        if (!params.entry(e).trainable) continue;
        entry_of.push_back(e);
        base_of.push_back(total);
        total += params.entry(e).value.numel();
    }
    if (total == 0) throw ValueError("finite_diff_check: no trainable coordinates");

    ParamSet<T> work = params;
    GradCheckReport rep;
    rep.n_checked = samples;
    for (size_t s = 0; s < samples; ++s) {
        const uint64_t flat = rng.bounded(total);
        size_t which = 0;
        while (which + 1 < entry_of.size() && base_of[which + 1] <= flat) ++which;
        const size_t e = entry_of[which];
        const size_t i = static_cast<size_t>(flat) - base_of[which];

        auto& tensor = work.entry(e).value;
        const T saved = tensor[i];
        const T vp = static_cast<T>(static_cast<long double>(saved) + static_cast<long double>(h));
        const T vm = static_cast<T>(static_cast<long double>(saved) - static_cast<long double>(h));
        // Divide by the step that survived rounding to T, not the nominal 2h.
        const long double step = static_cast<long double>(vp) - static_cast<long double>(vm);
        if (!(step > 0)) throw NumericError("finite_diff_check: step vanished under rounding");
        tensor[i] = vp;
        const long double lp = f(std::as_const(work));
        tensor[i] = vm;
        const long double lm = f(std::as_const(work));
        tensor[i] = saved;
        if (!std::isfinite(static_cast<double>(lp)) || !std::isfinite(static_cast<double>(lm)))
            throw NumericError("finite_diff_check: non-finite value at a perturbed point");

        const double numeric = static_cast<double>((lp - lm) / step);
        const double analytic_g = static_cast<double>(analytic.entry(e).value[i]);
        const double denom = std::max({std::fabs(analytic_g), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic_g - numeric) / denom;
        if (rel >= rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst = GradCheckCoord{params.entry(e).name, i, analytic_g, numeric, rel};
        }
    }
    return rep;
}

// Central-difference check of the batch-loss gradient at `params` against
// loss_and_grads. The perturbed losses are evaluated with long double
// arithmetic end to end (forward pass and cross-entropy), so the difference
// quotient stays trustworthy even where the true gradient is ~1e-10.
template <typename T>
GradCheckReport finite_diff_check(const ModelConfig& cfg, const ParamSet<T>& params,
                                  std::span<const TokenizedExample> batch, double h, size_t samples, Rng& rng) {
    if (batch.empty()) throw ValueError("finite_diff_check: empty batch");

    auto [loss0, grads] = loss_and_grads<T>(cfg, params, batch);
    if (!std::isfinite(loss0)) throw NumericError("finite_diff_check: non-finite loss at the base point");

    auto widen = [](const ParamSet<T>& q) {
        ParamSet<long double> w;
        for (size_t e = 0; e < q.size(); ++e) {
            const auto& en = q.entry(e);
            Tensor<long double> t(en.value.shape());
            for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<long double>(en.value[i]);
            w.add(en.name, std::move(t), en.group);
            w.entry(e).trainable = en.trainable;
        }
        return w;
    };
    auto mean_loss = [&](const ParamSet<T>& q) -> long double {
        const ParamSet<long double> w = widen(q);
        long double acc = 0.0L;
        for (const auto& ex : batch) {
            const Tensor<long double> logits = forward_mask_logits<long double>(cfg, w, ex.tokens, ex.mask_pos);
            long double mx = logits[0];
            for (size_t j = 1; j < logits.numel(); ++j) mx = std::max(mx, logits[j]);
            long double sum = 0.0L;
            for (size_t j = 0; j < logits.numel(); ++j) sum += std::exp(logits[j] - mx);
            acc += std::log(sum) + mx - logits[static_cast<size_t>(ex.gold)];
        }
        return acc / static_cast<long double>(batch.size());
    };
    return finite_diff_check<T>(mean_loss, params, grads, h, samples, rng);
}

}  // namespace felab
