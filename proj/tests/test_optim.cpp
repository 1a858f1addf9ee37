#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "felab/model.hpp"
#include "felab/optim.hpp"
#include "felab/rng.hpp"
#include "felab/tensor.hpp"

using felab::AdamParams;
using felab::Constraint;
using felab::ConstrainedAdam;
using felab::ConstraintFamily;
using felab::ModelConfig;
using felab::ParamSet;
using felab::Rng;
using felab::Tensor;
using felab::TokenizedExample;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <typename T>
ParamSet<T> params_of(const std::vector<std::vector<double>>& tensors) {
    ParamSet<T> p;
    for (size_t e = 0; e < tensors.size(); ++e) {
        Tensor<T> t({tensors[e].size()});
        for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(tensors[e][i]);
        p.add("t" + std::to_string(e), std::move(t), felab::kGroupEmbeddings);
    }
    return p;
}

template <typename T>
Constraint<T> ball(ConstraintFamily fam, double delta, const ParamSet<T>& ref) {
    Constraint<T> c;
    c.family = fam;
    c.delta = delta;
    c.reference = std::make_shared<ParamSet<T>>(ref);
    return c;
}

template <typename T>
Constraint<T> fisher_ball(double delta, const ParamSet<T>& ref, const ParamSet<T>& fisher, double eps = 1e-8) {
    Constraint<T> c = ball(ConstraintFamily::FisherDiag, delta, ref);
    c.fisher = std::make_shared<ParamSet<T>>(fisher);
    c.fisher_eps = eps;
    return c;
}

// Numeric minimizer of (u - target)^2 over [lo, hi] by interval thirds; the
// independent oracle for the per-coordinate interval projection.
double nearest_in_interval(double target, double lo, double hi) {
    for (int it = 0; it < 300; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        if ((m1 - target) * (m1 - target) <= (m2 - target) * (m2 - target))
            hi = m2;
        else
            lo = m1;
    }
    return 0.5 * (lo + hi);
}

// Stationarity-based oracle for the ball projection in the metric the ball
// itself is measured in: argmin sum_i w_i (u_i - theta_i)^2 subject to
// sum_i w_i (u_i - theta0_i)^2 <= delta^2. The weights cancel in the
// first-order condition, leaving the uniform shrink u = (theta + 2 lam
// theta0) / (1 + 2 lam); the multiplier is found by bisection on the weighted
// constraint residual, which is strictly decreasing in lam. With unit weights
// this is the plain sphere projection.
std::vector<double> weighted_ball_project(const std::vector<double>& theta, const std::vector<double>& theta0,
                                          double delta, const std::vector<double>& w) {
    auto point = [&](double lam) {
        std::vector<double> u(theta.size());
        for (size_t i = 0; i < u.size(); ++i) u[i] = (theta[i] + 2.0 * lam * theta0[i]) / (1.0 + 2.0 * lam);
        return u;
    };
    auto resid = [&](double lam) {
        const auto u = point(lam);
        double ssq = 0.0;
        for (size_t i = 0; i < u.size(); ++i) ssq += w[i] * (u[i] - theta0[i]) * (u[i] - theta0[i]);
        return std::sqrt(ssq) - delta;
    };
    if (resid(0.0) <= 0.0) return theta;
    double lo = 0.0, hi = 1.0;
    while (resid(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (resid(mid) > 0.0 ? lo : hi) = mid;
    }
    return point(0.5 * (lo + hi));
}

struct Instance {
    std::vector<double> theta, theta0, fisher;
    double delta{0.0};
};

Instance random_instance(Rng& rng, size_t n, bool sometimes_feasible) {
    Instance in;
    for (size_t i = 0; i < n; ++i) {
        in.theta.push_back(rng.normal() * 1.5);
        in.theta0.push_back(rng.normal());
        const double z = rng.normal();
        in.fisher.push_back(z * z * 2.0 * (rng.uniform() < 0.5 ? 1.0 : 0.0) +
                            rng.uniform());  // mix of near-zero and O(1) weights
    }
    in.delta = 0.2 + 2.5 * rng.uniform();
    if (sometimes_feasible && rng.uniform() < 0.25) in.delta += 8.0;  // comfortably inside the ball
    return in;
}

ModelConfig tiny_cfg(int32_t vocab, int32_t d, int32_t heads, int32_t blocks, int32_t ffn, int32_t seq) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = d;
    cfg.n_heads = heads;
    cfg.n_blocks = blocks;
    cfg.ffn_mult = ffn;
    cfg.max_seq_len = seq;
    cfg.mask_token_id = 0;
    return cfg;
}

std::vector<TokenizedExample> random_examples(const ModelConfig& cfg, size_t count, size_t len, Rng& rng) {
    std::vector<TokenizedExample> out;
    for (size_t i = 0; i < count; ++i) {
        TokenizedExample ex;
        ex.tokens.resize(len);
        for (auto& t : ex.tokens) t = 1 + static_cast<int32_t>(rng.bounded(cfg.vocab_size - 1));
        ex.mask_pos = rng.bounded(len);
        ex.tokens[ex.mask_pos] = cfg.mask_token_id;
        ex.gold = 1 + static_cast<int32_t>(rng.bounded(cfg.vocab_size - 1));
        out.push_back(std::move(ex));
    }
    return out;
}

template <typename T>
ParamSet<T> random_like(const ParamSet<T>& schema, Rng& rng, double scale) {
    ParamSet<T> g = schema.zeros_like();
    for (auto& e : g)
        for (size_t i = 0; i < e.value.numel(); ++i) e.value[i] = static_cast<T>(rng.normal() * scale);
    return g;
}

}  // namespace

TEST_CASE("projection hand examples") {
    // interval family: clamp one overshooting coordinate, keep the rest
    auto p = params_of<double>({{0.5, -0.2, 0.1}});
    const auto ref = params_of<double>({{0.0, 0.0, 0.0}});
    felab::project(p, ball(ConstraintFamily::Linf, 0.3, ref));
    CHECK(p.at("t0")[0] == 0.3);
    CHECK(p.at("t0")[1] == -0.2);
    CHECK(p.at("t0")[2] == 0.1);

    // sphere family: (3,4) onto the unit ball is (0.6, 0.8)
    auto q = params_of<double>({{3.0, 4.0}});
    const auto ref2 = params_of<double>({{0.0, 0.0}});
    felab::project(q, ball(ConstraintFamily::L2, 1.0, ref2));
    CHECK(q.at("t0")[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(q.at("t0")[1] == doctest::Approx(0.8).epsilon(1e-12));

    // weighted family: weights (4,1) shrink (1,1) radially to norm 1
    auto r = params_of<double>({{1.0, 1.0}});
    const auto fw = params_of<double>({{4.0, 1.0}});
    const auto c = fisher_ball(1.0, ref2, fw, 1e-12);
    felab::project(r, c);
    CHECK(r.at("t0")[0] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));
    CHECK(r.at("t0")[1] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));
    CHECK(felab::constraint_residual(r, c) == doctest::Approx(1.0).epsilon(1e-9));

    // unit weights with vanishing floor reduce to the plain sphere projection
    auto a = params_of<double>({{1.1, -2.2, 0.4, 3.0, -0.7}});
    auto b = a;
    const auto ref5 = params_of<double>({{0.2, 0.1, -0.3, 0.5, 0.0}});
    const auto ones = params_of<double>({{1.0, 1.0, 1.0, 1.0, 1.0}});
    felab::project(a, ball(ConstraintFamily::L2, 0.8, ref5));
    felab::project(b, fisher_ball(0.8, ref5, ones, 1e-15));
    for (size_t i = 0; i < 5; ++i) CHECK(a.at("t0")[i] == doctest::Approx(b.at("t0")[i]).epsilon(1e-10));
}

TEST_CASE("projections match numeric constrained minimization") {
    Rng rng(101);
    for (int i = 0; i < 100; ++i) {
        const Instance in = random_instance(rng, 5, true);

        // interval family, coordinatewise oracle
        auto pl = params_of<double>({in.theta});
        felab::project(pl, ball(ConstraintFamily::Linf, in.delta, params_of<double>({in.theta0})));
        for (size_t k = 0; k < 5; ++k) {
            const double want = nearest_in_interval(in.theta[k], in.theta0[k] - in.delta, in.theta0[k] + in.delta);
            CHECK(std::abs(pl.at("t0")[k] - want) < 1e-6);
        }

        // sphere family, multiplier-bisection oracle
        auto p2 = params_of<double>({in.theta});
        felab::project(p2, ball(ConstraintFamily::L2, in.delta, params_of<double>({in.theta0})));
        const auto want2 = weighted_ball_project(in.theta, in.theta0, in.delta, {1, 1, 1, 1, 1});
        for (size_t k = 0; k < 5; ++k) CHECK(std::abs(p2.at("t0")[k] - want2[k]) < 1e-6);

        // weighted family with the floor folded into the oracle weights
        const double eps = 1e-8;
        auto pf = params_of<double>({in.theta});
        felab::project(pf, fisher_ball(in.delta, params_of<double>({in.theta0}), params_of<double>({in.fisher}), eps));
        std::vector<double> w(5);
        for (size_t k = 0; k < 5; ++k) w[k] = in.fisher[k] + eps;
        const auto wantf = weighted_ball_project(in.theta, in.theta0, in.delta, w);
        for (size_t k = 0; k < 5; ++k) CHECK(std::abs(pf.at("t0")[k] - wantf[k]) < 1e-6);
    }
}

TEST_CASE("joint projections pool the budget across tensors") {
    Rng rng(103);
    for (int i = 0; i < 30; ++i) {
        const Instance in = random_instance(rng, 5, true);
        auto split = [](const std::vector<double>& v) {
            return std::vector<std::vector<double>>{{v[0], v[1]}, {v[2], v[3], v[4]}};
        };
        auto p = params_of<double>(split(in.theta));
        const auto ref = params_of<double>(split(in.theta0));
        felab::project(p, ball(ConstraintFamily::L2, in.delta, ref));
        const auto want = weighted_ball_project(in.theta, in.theta0, in.delta, {1, 1, 1, 1, 1});
        for (size_t k = 0; k < 5; ++k) {
            const double got = k < 2 ? p.at("t0")[k] : p.at("t1")[k - 2];
            CHECK(std::abs(got - want[k]) < 1e-6);
        }

        auto pf = params_of<double>(split(in.theta));
        felab::project(pf, fisher_ball(in.delta, ref, params_of<double>(split(in.fisher)), 1e-8));
        std::vector<double> w(5);
        for (size_t k = 0; k < 5; ++k) w[k] = in.fisher[k] + 1e-8;
        const auto wantf = weighted_ball_project(in.theta, in.theta0, in.delta, w);
        for (size_t k = 0; k < 5; ++k) {
            const double got = k < 2 ? pf.at("t0")[k] : pf.at("t1")[k - 2];
            CHECK(std::abs(got - wantf[k]) < 1e-6);
        }
    }
}

TEST_CASE("the interval projection is separable across coordinates") {
    Rng rng(107);
    const Instance in = random_instance(rng, 5, false);
    auto joint = params_of<double>({in.theta});
    felab::project(joint, ball(ConstraintFamily::Linf, in.delta, params_of<double>({in.theta0})));
    for (size_t k = 0; k < 5; ++k) {
        auto single = params_of<double>({{in.theta[k]}});
        felab::project(single, ball(ConstraintFamily::Linf, in.delta, params_of<double>({{in.theta0[k]}})));
        CHECK(joint.at("t0")[k] == single.at("t0")[0]);
    }
}

TEST_CASE("projection is idempotent and leaves feasible points untouched bitwise") {
    Rng rng(109);
    auto run = [&](auto tag) {
        using T = decltype(tag);
        for (int i = 0; i < 20; ++i) {
            const Instance in = random_instance(rng, 5, false);
            const auto ref = params_of<T>({in.theta0});
            const auto fw = params_of<T>({in.fisher});
            const Constraint<T> cs[] = {ball(ConstraintFamily::Linf, in.delta, ref),
                                        ball(ConstraintFamily::L2, in.delta, ref),
                                        fisher_ball(in.delta, ref, fw, 1e-8)};
            for (const auto& c : cs) {
                auto p = params_of<T>({in.theta});
                felab::project(p, c);
                auto again = p;
                felab::project(again, c);
                CHECK(again.bitwise_equal(p));

                // a point strictly inside the ball comes back bit-identical
                std::vector<double> inside(5);
                double wnorm = 0.0;
                for (size_t k = 0; k < 5; ++k) {
                    const double off = static_cast<double>(static_cast<T>(in.theta0[k])) - in.theta0[k];
                    (void)off;
                    inside[k] = rng.normal();
                    wnorm += (in.fisher[k] + 1.0) * inside[k] * inside[k];
                }
                const double scale = 0.5 * in.delta / std::sqrt(wnorm);  // conservative for every family
                std::vector<double> feas(5);
                for (size_t k = 0; k < 5; ++k)
                    feas[k] = static_cast<double>(static_cast<T>(in.theta0[k])) + inside[k] * scale;
                auto f = params_of<T>({feas});
                const auto before = f;
                felab::project(f, c);
                CHECK(f.bitwise_equal(before));
            }
        }
    };
    run(double{});
    run(float{});
}

TEST_CASE("smaller radii give nested projections") {
    Rng rng(113);
    for (int i = 0; i < 20; ++i) {
        const Instance in = random_instance(rng, 5, false);
        const auto ref = params_of<double>({in.theta0});
        const auto fw = params_of<double>({in.fisher});
        const double d1 = in.delta * 0.3, d2 = in.delta;
        const Constraint<double> pairs[][2] = {
            {ball(ConstraintFamily::Linf, d1, ref), ball(ConstraintFamily::Linf, d2, ref)},
            {ball(ConstraintFamily::L2, d1, ref), ball(ConstraintFamily::L2, d2, ref)},
            {fisher_ball(d1, ref, fw), fisher_ball(d2, ref, fw)},
        };
        for (const auto& pr : pairs) {
            auto a = params_of<double>({in.theta});
            auto b = params_of<double>({in.theta});
            felab::project(a, pr[0]);
            felab::project(b, pr[1]);
            CHECK(felab::constraint_residual(a, pr[0]) <= d1 * (1.0 + felab::kFeasibilitySlack) + 1e-12);
            CHECK(felab::constraint_residual(b, pr[1]) <= d2 * (1.0 + felab::kFeasibilitySlack) + 1e-12);
            CHECK(felab::constraint_residual(a, pr[0]) <= felab::constraint_residual(b, pr[0]) + 1e-12);
        }
    }
}

TEST_CASE("radius zero resets to the reference and infinite radius is a no-op") {
    Rng rng(127);
    const Instance in = random_instance(rng, 5, false);
    const auto ref = params_of<float>({in.theta0});
    const auto fw = params_of<float>({in.fisher});
    const Constraint<float> zeros[] = {ball(ConstraintFamily::Linf, 0.0, ref), ball(ConstraintFamily::L2, 0.0, ref),
                                       fisher_ball(0.0, ref, fw)};
    for (const auto& c : zeros) {
        auto p = params_of<float>({in.theta});
        felab::project(p, c);
        CHECK(p.bitwise_equal(ref));
    }
    const Constraint<float> infs[] = {ball(ConstraintFamily::Linf, kInf, ref), ball(ConstraintFamily::L2, kInf, ref),
                                      fisher_ball(kInf, ref, fw)};
    for (const auto& c : infs) {
        auto p = params_of<float>({in.theta});
        const auto before = p;
        felab::project(p, c);
        CHECK(p.bitwise_equal(before));
    }

    // frozen coordinates are never moved, even by a zero radius
    auto p = params_of<float>({in.theta});
    p.entry(0).trainable = false;
    const auto before = p;
    felab::project(p, zeros[0]);
    CHECK(p.bitwise_equal(before));
}

TEST_CASE("per-tensor budgets constrain each tensor separately") {
    // offsets of norm 3 and 0.5; a shared budget of 1 rescales both tensors,
    // separate budgets leave the already-feasible tensor untouched
    const std::vector<std::vector<double>> theta{{3.0, 0.0}, {0.5, 0.0}};
    const std::vector<std::vector<double>> zero{{0.0, 0.0}, {0.0, 0.0}};
    auto joint = params_of<double>(theta);
    auto c = ball(ConstraintFamily::L2, 1.0, params_of<double>(zero));
    felab::project(joint, c);
    const double s = 1.0 / std::sqrt(9.25);
    CHECK(joint.at("t0")[0] == doctest::Approx(3.0 * s).epsilon(1e-12));
    CHECK(joint.at("t1")[0] == doctest::Approx(0.5 * s).epsilon(1e-12));

    auto split = params_of<double>(theta);
    c.per_tensor = true;
    felab::project(split, c);
    CHECK(split.at("t0")[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(split.at("t1")[0] == 0.5);  // inside its own ball, bitwise untouched
}

TEST_CASE("constraint validation rejects malformed setups") {
    const auto ref = params_of<double>({{0.0, 0.0}});
    const auto fw = params_of<double>({{1.0, 1.0}});

    auto c = ball(ConstraintFamily::Linf, -0.5, ref);
    CHECK_THROWS_AS(c.validate(), felab::ValueError);
    c = ball(ConstraintFamily::Linf, std::nan(""), ref);
    CHECK_THROWS_AS(c.validate(), felab::ValueError);

    Constraint<double> noref;
    noref.family = ConstraintFamily::L2;
    noref.delta = 1.0;
    CHECK_THROWS_AS(noref.validate(), felab::ValueError);

    Constraint<double> nofisher = ball(ConstraintFamily::FisherDiag, 1.0, ref);
    CHECK_THROWS_AS(nofisher.validate(), felab::ValueError);

    auto badeps = fisher_ball(1.0, ref, fw, 0.0);
    CHECK_THROWS_AS(badeps.validate(), felab::ValueError);

    auto stray = ball(ConstraintFamily::L2, 1.0, ref);
    stray.fisher = std::make_shared<ParamSet<double>>(fw);
    CHECK_THROWS_AS(stray.validate(), felab::ValueError);

    // negative Fisher weight caught at projection time
    auto neg = fisher_ball(1.0, ref, params_of<double>({{-1.0, 1.0}}));
    auto p = params_of<double>({{2.0, 2.0}});
    CHECK_THROWS_AS(felab::project(p, neg), felab::ValueError);

    // family/projector mismatch and schema mismatch
    auto cl2 = ball(ConstraintFamily::L2, 1.0, ref);
    CHECK_THROWS_AS(felab::project_linf(p, cl2), felab::ValueError);
    auto clinf = ball(ConstraintFamily::Linf, 1.0, ref);
    CHECK_THROWS_AS(felab::project_l2(p, clinf), felab::ValueError);
    CHECK_THROWS_AS(felab::project_fisher_diag(p, clinf), felab::ValueError);
    auto wide = params_of<double>({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS(felab::project(wide, clinf), felab::ValueError);

    // family none needs no reference and projects as a no-op
    Constraint<double> none;
    const auto before = p;
    felab::project(p, none);
    CHECK(p.bitwise_equal(before));
    CHECK(felab::constraint_residual(p, none) == 0.0);
}

TEST_CASE("constraint_residual reports the family norm") {
    const auto ref = params_of<double>({{0.0, 0.0}});
    auto p = params_of<double>({{0.3, -0.4}});
    CHECK(felab::constraint_residual(p, ball(ConstraintFamily::Linf, 1.0, ref)) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(felab::constraint_residual(p, ball(ConstraintFamily::L2, 1.0, ref)) == doctest::Approx(0.5).epsilon(1e-15));
    const auto fw = params_of<double>({{4.0, 1.0}});
    CHECK(felab::constraint_residual(p, fisher_ball(1.0, ref, fw, 1e-15)) ==
          doctest::Approx(std::sqrt(4.0 * 0.09 + 0.16)).epsilon(1e-9));
}

TEST_CASE("the curvature estimate averages squared per-example gradients") {
    const ModelConfig cfg = tiny_cfg(11, 8, 2, 1, 2, 6);
    Rng rng(131);
    auto p = felab::init_params<double>(cfg, rng);
    const auto batch = random_examples(cfg, 2, 5, rng);
    const double one[] = {1.0};

    const auto f1 = felab::estimate_diag_fisher<double>(cfg, p, std::span<const TokenizedExample>(&batch[0], 1));
    const auto [l0, g0] = felab::loss_and_grads<double>(cfg, p, std::span<const TokenizedExample>(&batch[0], 1),
                                                        std::span<const double>(one, 1));
    for (size_t e = 0; e < p.size(); ++e)
        for (size_t i = 0; i < f1.entry(e).value.numel(); ++i) {
            const double g = g0.entry(e).value[i];
            CHECK(f1.entry(e).value[i] == g * g);
        }

    const auto f2 = felab::estimate_diag_fisher<double>(cfg, p, batch);
    const auto [l1, g1] = felab::loss_and_grads<double>(cfg, p, std::span<const TokenizedExample>(&batch[1], 1),
                                                        std::span<const double>(one, 1));
    for (size_t e = 0; e < p.size(); ++e)
        for (size_t i = 0; i < f2.entry(e).value.numel(); ++i) {
            const double a = g0.entry(e).value[i], b = g1.entry(e).value[i];
            double acc = a * a;
            acc += b * b;
            CHECK(f2.entry(e).value[i] == acc * 0.5);
        }

    // frozen tensors keep zero curvature because their gradients are zeroed
    felab::select_trainable(p, cfg, felab::Selector::head_only());
    const auto f3 = felab::estimate_diag_fisher<double>(cfg, p, batch);
    for (const auto& e : f3) {
        if (e.group == felab::kGroupHead) continue;
        for (size_t i = 0; i < e.value.numel(); ++i) CHECK(e.value[i] == 0.0);
    }

    CHECK_THROWS_AS(felab::estimate_diag_fisher<double>(cfg, p, {}), felab::ValueError);
}

TEST_CASE("the optimizer matches an independent scalar recurrence bit for bit") {
    auto run = [](auto tag) {
        using T = decltype(tag);
        AdamParams ap;
        ap.lr = 0.1;
        auto p = params_of<T>({{0.0}});
        ConstrainedAdam<T> opt(p, ap, Constraint<T>{});
        const double gs[] = {1.0, -2.0, 0.5, 3.0, -1.0};

        T th = 0, m = 0, v = 0;
        const T b1 = static_cast<T>(ap.beta1), b2 = static_cast<T>(ap.beta2);
        const T omb1 = static_cast<T>(1.0 - ap.beta1), omb2 = static_cast<T>(1.0 - ap.beta2);
        const T eps = static_cast<T>(ap.eps);
        for (int t = 1; t <= 5; ++t) {
            auto grads = params_of<T>({{gs[t - 1]}});
            opt.step(p, grads);

            const double bc = std::sqrt(1.0 - std::pow(ap.beta2, t)) / (1.0 - std::pow(ap.beta1, t));
            const T k = static_cast<T>(ap.lr * bc);
            const T g = static_cast<T>(gs[t - 1]);
            m = b1 * m + omb1 * g;
            v = b2 * v + omb2 * g * g;
            th = th - k * m / (std::sqrt(v) + eps);
            CHECK(p.at("t0")[0] == th);
        }
        CHECK(opt.step_count() == 5);
    };
    run(double{});
    run(float{});

    // first step from zero with unit gradient and lr 0.1, frozen value
    AdamParams ap;
    ap.lr = 0.1;
    auto p = params_of<double>({{0.0}});
    ConstrainedAdam<double> opt(p, ap, Constraint<double>{});
    opt.step(p, params_of<double>({{1.0}}));
    CHECK(p.at("t0")[0] == -0.099999968377233392);
}

TEST_CASE("an unconstrained family equals an infinite-radius ball bitwise") {
    Rng rng(137);
    auto a = params_of<double>({{0.4, -0.2, 0.9}, {1.5, -1.0}});
    auto b = a;
    AdamParams ap;
    ap.lr = 0.03;
    ConstrainedAdam<double> ua(a, ap, Constraint<double>{});
    ConstrainedAdam<double> ub(b, ap, ball(ConstraintFamily::Linf, kInf, a));
    for (int t = 0; t < 5; ++t) {
        const auto g = random_like(a, rng, 1.0);
        ua.step(a, g);
        ub.step(b, g);
        CHECK(a.bitwise_equal(b));
    }
}

TEST_CASE("a non-finite gradient aborts the step with all state intact") {
    Rng rng(139);
    auto p = params_of<double>({{0.5, -0.5}, {1.0, 2.0}});
    AdamParams ap;
    ConstrainedAdam<double> opt(p, ap, Constraint<double>{});
    const auto g_good = random_like(p, rng, 1.0);
    auto g_bad = g_good;
    g_bad.at("t1")[0] = std::nan("");

    const auto before = p;
    CHECK_THROWS_AS(opt.step(p, g_bad), felab::NumericError);
    CHECK(p.bitwise_equal(before));
    CHECK(opt.step_count() == 0);

    // the aborted step must not have touched the moments either: stepping now
    // matches a fresh optimizer's first step exactly
    opt.step(p, g_good);
    auto q = before;
    ConstrainedAdam<double> fresh(q, ap, Constraint<double>{});
    fresh.step(q, g_good);
    CHECK(p.bitwise_equal(q));

    // non-finite gradients in frozen tensors are ignored
    auto r = params_of<double>({{0.5, -0.5}, {1.0, 2.0}});
    r.entry(1).trainable = false;
    ConstrainedAdam<double> opt2(r, ap, Constraint<double>{});
    opt2.step(r, g_bad);
    CHECK(opt2.step_count() == 1);
    CHECK(r.at("t1")[0] == 1.0);
    CHECK(r.at("t1")[1] == 2.0);
}

TEST_CASE("the optimizer only moves trainable tensors") {
    Rng rng(149);
    auto p = params_of<float>({{0.1f, 0.2f, 0.3f}, {4.0f, 5.0f}});
    p.entry(1).trainable = false;
    const auto frozen = p.at("t1");
    AdamParams ap;
    ConstrainedAdam<float> opt(p, ap, Constraint<float>{});
    for (int t = 0; t < 3; ++t) opt.step(p, random_like(p, rng, 1.0));
    CHECK(p.at("t1") == frozen);
    bool moved = false;
    for (size_t i = 0; i < 3; ++i) moved = moved || p.at("t0")[i] != (i + 1) * 0.1f;
    CHECK(moved);
}

TEST_CASE("projected steps stay inside the ball") {
    Rng rng(151);
    const auto start = params_of<double>({{0.2, -0.1, 0.4, 0.0, 0.3}});
    const auto fw = params_of<double>({{0.5, 2.0, 0.0, 1.0, 4.0}});
    AdamParams ap;
    ap.lr = 0.05;  // large relative to the radius, so projection must bite
    const Constraint<double> cs[] = {ball(ConstraintFamily::Linf, 0.01, start),
                                     ball(ConstraintFamily::L2, 0.02, start), fisher_ball(0.02, start, fw)};
    for (const auto& c : cs) {
        auto p = start;
        ConstrainedAdam<double> opt(p, ap, c);
        bool ever_active = false;
        for (int t = 0; t < 10; ++t) {
            opt.step(p, random_like(p, rng, 1.0));
            const double r = felab::constraint_residual(p, c);
            CHECK(r <= c.delta * (1.0 + felab::kFeasibilitySlack) + 1e-15);
            ever_active = ever_active || r > 0.5 * c.delta;
        }
        CHECK(ever_active);  // the radius actually constrained the trajectory
    }

    // radius zero pins the trajectory to the reference
    auto p = start;
    ConstrainedAdam<double> opt(p, ap, ball(ConstraintFamily::Linf, 0.0, start));
    for (int t = 0; t < 3; ++t) {
        opt.step(p, random_like(p, rng, 1.0));
        CHECK(p.bitwise_equal(start));
    }
}

TEST_CASE("optimizer construction and stepping validate their inputs") {
    auto p = params_of<double>({{1.0, 2.0}});
    AdamParams bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(ConstrainedAdam<double>(p, bad, Constraint<double>{}), felab::ValueError);
    bad = AdamParams{};
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(ConstrainedAdam<double>(p, bad, Constraint<double>{}), felab::ValueError);
    bad = AdamParams{};
    bad.beta2 = -0.1;
    CHECK_THROWS_AS(ConstrainedAdam<double>(p, bad, Constraint<double>{}), felab::ValueError);
    bad = AdamParams{};
    bad.eps = 0.0;
    CHECK_THROWS_AS(ConstrainedAdam<double>(p, bad, Constraint<double>{}), felab::ValueError);

    const auto other = params_of<double>({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS(ConstrainedAdam<double>(p, AdamParams{}, ball(ConstraintFamily::L2, 1.0, other)),
                    felab::ValueError);

    ConstrainedAdam<double> opt(p, AdamParams{}, Constraint<double>{});
    auto gw = params_of<double>({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS(opt.step(p, gw), felab::ValueError);
    auto pw = params_of<double>({{1.0, 2.0, 3.0}});
    auto g = params_of<double>({{1.0, 2.0}});
    CHECK_THROWS_AS(opt.step(pw, g), felab::ValueError);
}
