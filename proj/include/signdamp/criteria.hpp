#pragma once

// Dissipativity and regime criteria for damping signals, plus the uniformly
// local L1 distance and modulus of continuity.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "signal.hpp"

namespace signdamp {

inline constexpr double kBoundaryTolerance = 1e-12;

// Smooth integrands here go through the tabulated mollifier CDF, which is only
// C1 across table nodes; Gauss-Kronrod error estimates stall near 1e-12 there,
// so quadrature is capped in depth.
inline constexpr double kSmoothRelTol = 1e-10;
inline constexpr unsigned kSmoothMaxDepth = 8;

/// (p+2)/(p+4): weight of the negative part in the weighted criterion.
inline double negative_weight(double p) {
    require(p >= 0.0, "growth exponent p must be >= 0");
    return (p + 2.0) / (p + 4.0);
}

/// Weighted integrand 1/2 g_+ - (p+2)/(p+4) g_-.
inline double weighted_integrand(double g, double p) {
    const auto [gp, gm] = positive_negative_parts(g);
    return 0.5 * gp - negative_weight(p) * gm;
}

/// Integral of f(gamma(s)) over [t0, t1]: exact sum over pieces for
/// piecewise-constant signals, adaptive quadrature otherwise.
template <class F>
double integrate_functional(const DampingSignal& signal, F&& f, double t0, double t1) {
    require(t1 >= t0, "integrate_functional: t1 < t0");
    if (auto ps = pieces(signal, t0, t1)) {
        CompensatedSum s;
        for (const Piece& pc : *ps) s += (pc.t1 - pc.t0) * f(pc.value);
        const double v = s.value();
        if (!std::isfinite(v)) throw NumericError("integrate_functional: non-finite integrand");
        return v;
    }
    const auto br = breakpoints(signal, t0, t1);
    return integrate_split([&](double s) { return f(sample(signal, s)); }, t0, t1, br, kSmoothRelTol,
                           kSmoothMaxDepth);
}

/// (1/T) * integral over [tau - T, tau] of 1/2 g_+ - (p+2)/(p+4) g_-.
inline double windowed_weighted_mean(const DampingSignal& signal, double p, double tau, double T) {
    require(T > 0.0, "window length must be positive");
    require(p >= 0.0, "growth exponent p must be >= 0");
    return integrate_functional(signal, [p](double g) { return weighted_integrand(g, p); }, tau - T,
                                tau) /
           T;
}

/// Plain mean of gamma over [tau - T, tau].
inline double windowed_mean(const DampingSignal& signal, double tau, double T) {
    require(T > 0.0, "window length must be positive");
    return integrate_functional(signal, [](double g) { return g; }, tau - T, tau) / T;
}

namespace detail {
inline void check_bernoulli(double a, double b, double q, double p) {
    require(a > 0.0 && b > 0.0, "Bernoulli parameters need a > 0 and b > 0");
    require(q > 0.0 && q < 1.0, "Bernoulli parameters need 0 < q < 1");
    require(p >= 0.0, "growth exponent p must be >= 0");
}
}  // namespace detail

/// 1/2 a q - (p+2)/(p+4) b (1-q). Positive means mean-dissipative.
inline double bernoulli_weighted_drift(double a, double b, double q, double p) {
    detail::check_bernoulli(a, b, q, p);
    return 0.5 * a * q - negative_weight(p) * b * (1.0 - q);
}

/// a q - b (1-q): plain mean of a Bernoulli path.
inline double bernoulli_raw_drift(double a, double b, double q) { return a * q - b * (1.0 - q); }

/// ln(q e^{-a} + (1-q) e^{2 (p+2)/(p+4) b}). Negative: the tempered radius has
/// finite mean; positive: the backward geometric series diverges in mean.
inline double finite_mean_exponent(double a, double b, double q, double p) {
    detail::check_bernoulli(a, b, q, p);
    const double c = 2.0 * negative_weight(p) * b;
    return log_add_exp(std::log(q) - a, std::log1p(-q) + c);
}

enum class DissipativityRegime { WeightedDissipative, WeightedNonDissipative, Boundary };
enum class MeanRadiusRegime { FiniteMeanRadius, InfiniteMeanRadius, Boundary };

inline std::string to_string(DissipativityRegime r) {
    switch (r) {
        case DissipativityRegime::WeightedDissipative: return "WeightedDissipative";
        case DissipativityRegime::WeightedNonDissipative: return "WeightedNonDissipative";
        default: return "Boundary";
    }
}
inline std::string to_string(MeanRadiusRegime r) {
    switch (r) {
        case MeanRadiusRegime::FiniteMeanRadius: return "FiniteMeanRadius";
        case MeanRadiusRegime::InfiniteMeanRadius: return "InfiniteMeanRadius";
        default: return "Boundary";
    }
}

inline DissipativityRegime classify_drift(double drift) {
    if (std::abs(drift) <= kBoundaryTolerance) return DissipativityRegime::Boundary;
    return drift > 0.0 ? DissipativityRegime::WeightedDissipative
                       : DissipativityRegime::WeightedNonDissipative;
}
inline MeanRadiusRegime classify_mean_exponent(double e) {
    if (std::abs(e) <= kBoundaryTolerance) return MeanRadiusRegime::Boundary;
    return e < 0.0 ? MeanRadiusRegime::FiniteMeanRadius : MeanRadiusRegime::InfiniteMeanRadius;
}

struct CriterionReport {
    double weighted_drift = 0.0;
    double raw_drift = 0.0;
    double finite_mean_exponent = 0.0;
    DissipativityRegime dissipativity = DissipativityRegime::Boundary;
    MeanRadiusRegime mean_radius = MeanRadiusRegime::Boundary;
};

inline CriterionReport criterion_report(double a, double b, double q, double p) {
    CriterionReport r;
    r.weighted_drift = bernoulli_weighted_drift(a, b, q, p);
    r.raw_drift = bernoulli_raw_drift(a, b, q);
    r.finite_mean_exponent = finite_mean_exponent(a, b, q, p);
    r.dissipativity = classify_drift(r.weighted_drift);
    r.mean_radius = classify_mean_exponent(r.finite_mean_exponent);
    return r;
}

// ---------------------------------------------------------------------------
// Sup over unit windows [tau, tau + 1] inside [t0, t1] of the integral of a
// non-negative function. With t1 - t0 < 1 the whole range is the window.

namespace detail {

/// Piecewise-constant |f| given as merged pieces: the windowed integral is
/// piecewise linear in tau, so its maximum sits where tau or tau + 1 is a
/// breakpoint, or at the ends of the admissible range.
inline double sup_unit_window(const std::vector<Piece>& ps, double t0, double t1) {
    std::vector<double> xs{t0};
    std::vector<double> F{0.0};
    CompensatedSum acc;
    for (const Piece& p : ps) {
        acc += (p.t1 - p.t0) * p.value;
        xs.push_back(p.t1);
        F.push_back(acc.value());
    }
    auto cum = [&](double x) {
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - xs.begin()) - 1));
        if (i + 1 >= xs.size()) return F.back();
        const double slope = (F[i + 1] - F[i]) / (xs[i + 1] - xs[i]);
        return F[i] + slope * (x - xs[i]);
    };
    if (t1 - t0 <= 1.0) return F.back();
    const double hi = t1 - 1.0;
    double best = cum(t0 + 1.0);
    auto consider = [&](double tau) {
        if (tau < t0 || tau > hi) return;
        best = std::max(best, cum(tau + 1.0) - cum(tau));
    };
    consider(hi);
    for (double x : xs) {
        consider(x);
        consider(x - 1.0);
    }
    return best;
}

/// Merge two piece lists on a common refinement, combining values with op.
template <class Op>
std::vector<Piece> merge_pieces(const std::vector<Piece>& A, const std::vector<Piece>& B, Op op) {
    std::vector<Piece> out;
    std::size_t i = 0, j = 0;
    while (i < A.size() && j < B.size()) {
        const double lo = std::max(A[i].t0, B[j].t0);
        const double hi = std::min(A[i].t1, B[j].t1);
        if (hi > lo) out.push_back({lo, hi, op(A[i].value, B[j].value)});
        if (A[i].t1 < B[j].t1)
            ++i;
        else if (B[j].t1 < A[i].t1)
            ++j;
        else {
            ++i;
            ++j;
        }
    }
    return out;
}

/// Smooth fallback: cumulative integral of f at nodes (uniform spacing 1/128
/// plus breakpoints), windows starting at every node and at breaks - 1.
template <class Fn>
double sup_unit_window_smooth(Fn&& f, std::vector<double> br, double t0, double t1) {
    constexpr double h = 1.0 / 128.0;
    std::vector<double> nodes;
    for (double x = t0; x < t1; x += h) nodes.push_back(x);
    nodes.push_back(t1);
    for (double x : br) {
        for (double y : {x, x - 1.0, x + 1.0})
            if (y > t0 && y < t1) nodes.push_back(y);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    std::sort(br.begin(), br.end());
    std::vector<double> F(nodes.size(), 0.0);
    CompensatedSum acc;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        acc += integrate(f, nodes[i], nodes[i + 1], kSmoothRelTol, kSmoothMaxDepth);
        F[i + 1] = acc.value();
    }
    auto cum = [&](double x) {
        auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
        const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - nodes.begin()) - 1));
        if (nodes[i] == x || i + 1 >= nodes.size()) return F[i];
        return F[i] + integrate(f, nodes[i], x, kSmoothRelTol, kSmoothMaxDepth);
    };
    if (t1 - t0 <= 1.0) return F.back();
    double best = 0.0;
    for (std::size_t i = 0; i < nodes.size() && nodes[i] + 1.0 <= t1; ++i)
        best = std::max(best, cum(nodes[i] + 1.0) - F[i]);
    best = std::max(best, cum(t1) - cum(t1 - 1.0));
    return best;
}

}  // namespace detail

/// sup over unit windows in [t0, t1] of the integral of |g1 - g2|.
inline double l1b_distance(const DampingSignal& s1, const DampingSignal& s2, double t0, double t1) {
    require(std::isfinite(t0) && std::isfinite(t1) && t1 > t0, "l1b_distance: need finite t0 < t1");
    auto p1 = pieces(s1, t0, t1);
    auto p2 = pieces(s2, t0, t1);
    if (p1 && p2) {
        const auto merged =
            detail::merge_pieces(*p1, *p2, [](double x, double y) { return std::abs(x - y); });
        return detail::sup_unit_window(merged, t0, t1);
    }
    auto br = breakpoints(s1, t0, t1);
    const auto br2 = breakpoints(s2, t0, t1);
    br.insert(br.end(), br2.begin(), br2.end());
    return detail::sup_unit_window_smooth(
        [&](double s) { return std::abs(sample(s1, s) - sample(s2, s)); }, std::move(br), t0, t1);
}

/// sup over unit windows [tau, tau+1] in [t0, t1] of the integral of
/// |g(s + delta) - g(s)| ds.
inline double l1_modulus(const DampingSignal& signal, double delta, double t0, double t1) {
    require(delta >= 0.0, "l1_modulus: delta must be >= 0");
    require(std::isfinite(t0) && std::isfinite(t1) && t1 > t0, "l1_modulus: need finite t0 < t1");
    if (delta == 0.0) return 0.0;
    auto base = pieces(signal, t0, t1);
    auto shifted = pieces(signal, t0 + delta, t1 + delta);
    if (base && shifted) {
        for (Piece& p : *shifted) {
            p.t0 -= delta;
            p.t1 -= delta;
        }
        // Shifting can perturb the end by an ulp; pin both lists to [t0, t1].
        shifted->front().t0 = t0;
        shifted->back().t1 = t1;
        const auto merged =
            detail::merge_pieces(*base, *shifted, [](double x, double y) { return std::abs(x - y); });
        return detail::sup_unit_window(merged, t0, t1);
    }
    auto br = breakpoints(signal, t0, t1);
    for (double x : breakpoints(signal, t0 + delta, t1 + delta)) br.push_back(x - delta);
    return detail::sup_unit_window_smooth(
        [&](double s) { return std::abs(sample(signal, s + delta) - sample(signal, s)); },
        std::move(br), t0, t1);
}

}  // namespace signdamp
