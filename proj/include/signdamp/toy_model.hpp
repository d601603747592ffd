#pragma once

// The decoupled toy system driven by a Bernoulli path eta:
//   u1' + eta u1 = 1,   u_k' + k^4 u_k = u1 u_k - u_k^3   (k >= 2).
// Its tempered solutions are explicit: u1 is a radius integral with beta = eta,
// and v_k = u_k^{-2} solves v' = -2 (u1 - k^4) v + 2, so
//   u_k(t)^{-2} = 2 int_{-inf}^t exp(-2 int_s^t (u1 - k^4)) ds.
// The attractor is {u1} x prod_k [-u_k, u_k]. Half-widths are kept as logs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "errors.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "random_attractor.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace signdamp {

namespace detail {

/// (e^z - 1 - z) / z^2.
inline double phi2(double z) noexcept {
    if (std::abs(z) < 1e-3) return 0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0));
    return (std::expm1(z) - z) / (z * z);
}

/// u1 after time d inside a cell with rate eta, from u1 = U.
inline double u1_after(double U, double eta, double d) noexcept {
    return U * std::exp(-eta * d) + exp_integral(eta, d);
}

/// int_0^d u1 over a cell with rate eta from u1 = U (d may be negative).
inline double u1_integral(double U, double eta, double d) noexcept {
    return U * exp_integral(eta, d) + d * d * phi2(-eta * d);
}

}  // namespace detail

inline constexpr double kLogHalfWidthFloor = -1e6;

/// Exact u1 values at integer times, produced in chunks: the chunk start comes
/// from the backward accumulation, the rest from the forward cell recursion
/// u1(n + 1) = e^{-eta_n} u1(n) + (1 - e^{-eta_n}) / eta_n.
class U1History {
public:
    static constexpr std::int64_t kChunk = 4096;

    explicit U1History(BernoulliPath eta, LemmaROptions opt = {}) : eta_(eta), opt_(opt) {}

    [[nodiscard]] const BernoulliPath& path() const noexcept { return eta_; }

    /// u1(n) for integer n.
    double at_cell_start(std::int64_t n) {
        // Chunks are aligned in the path's own index, so shifted paths agree bitwise.
        const std::int64_t c = floor_div(n + eta_.offset, kChunk);
        const std::int64_t n0 = c * kChunk - eta_.offset;
        auto it = chunks_.find(c);
        if (it == chunks_.end()) {
            if (chunks_.size() > 64) chunks_.erase(chunks_.begin());
            it = chunks_.emplace(c, fill(n0)).first;
        }
        return it->second[static_cast<std::size_t>(n - n0)];
    }

    /// u1(t) for real t.
    double at(double t) {
        const double n = std::floor(t);
        const auto k = static_cast<std::int64_t>(n);
        return detail::u1_after(at_cell_start(k), eta_.cell(k), t - n);
    }

private:
    static std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept {
        return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
    }

    std::vector<double> fill(std::int64_t n0) const {
        std::vector<double> v(kChunk);
        v[0] = accumulate_cells(
                   [&](std::int64_t j) {
                       const double e = eta_.cell(n0 - j - 1);
                       return CellData{e, exp_integral(e, 1.0)};
                   },
                   opt_)
                   .value;
        for (std::int64_t i = 1; i < kChunk; ++i) {
            const double e = eta_.cell(n0 + i - 1);
            v[static_cast<std::size_t>(i)] = detail::u1_after(v[static_cast<std::size_t>(i - 1)], e, 1.0);
        }
        return v;
    }

    BernoulliPath eta_;
    LemmaROptions opt_;
    std::map<std::int64_t, std::vector<double>> chunks_;
};

/// u1(t) = int_{-inf}^t exp(-int_s^t eta) ds. Throws NotConverged when the
/// backward sum shows no decay (drift condition violated on this path).
inline double u1_tempered(const BernoulliPath& eta, double t, const LemmaROptions& opt = {}) {
    require(std::isfinite(t), "u1_tempered: t must be finite");
    const double n = std::floor(t);
    const auto top = static_cast<std::int64_t>(n);
    const double L = t - n;
    return accumulate_cells(
               [&](std::int64_t j) {
                   if (L > 0.0 && j == 0) {
                       const double e = eta.cell(top);
                       return CellData{e * L, exp_integral(e, L)};
                   }
                   const std::int64_t c = top - j - (L > 0.0 ? 0 : 1);
                   const double e = eta.cell(c);
                   return CellData{e, exp_integral(e, 1.0)};
               },
               opt)
        .value;
}

enum class ToyStatus { Converged, DivergedIntegral };

struct UkOptions {
    double tol = 1e-12;
    double margin = 30.0;
    std::int64_t min_depth = 16;
    std::int64_t max_depth = 10'000'000;
    /// log u_k below this is reported as zero (integral treated as divergent).
    double log_floor = kLogHalfWidthFloor;
};

struct UkResult {
    double log_half_width = -std::numeric_limits<double>::infinity();
    ToyStatus status = ToyStatus::DivergedIntegral;
    std::int64_t depth = 0;
    /// The history budget ran out before the tail estimate settled.
    bool budget_exhausted = false;

    [[nodiscard]] double value() const noexcept {
        return status == ToyStatus::Converged ? std::exp(log_half_width) : 0.0;
    }
};

namespace detail {

/// Log-domain cell data for v_k over [0, L] of a cell with rate eta, u1(0) = U:
/// B = int beta, log W = log int_0^L 2 exp(-int_s^L beta) ds, beta = 2 (u1 - k4).
struct LogCell {
    double B = 0.0;
    double logW = 0.0;
};

inline LogCell uk_cell(double U, double eta, double k4, double L) {
    // int_e^{e+d} beta, from the value of u1 at e.
    auto F = [&](double e, double d) { return 2.0 * (u1_integral(u1_after(U, eta, e), eta, d) - k4 * d); };
    auto beta_at = [&](double s) { return 2.0 * (u1_after(U, eta, s) - k4); };
    const double B = F(0.0, L);

    std::vector<double> cuts{0.0};
    // beta vanishes where u1 = k4: e^{-eta s} = (k4 - 1/eta) / (U - 1/eta).
    const double ratio = (k4 - 1.0 / eta) / (U - 1.0 / eta);
    if (ratio > 0.0 && std::isfinite(ratio)) {
        const double s = -std::log(ratio) / eta;
        if (s > 0.0 && s < L) cuts.push_back(s);
    }
    cuts.push_back(L);

    double logI = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double l = cuts[i], r = cuts[i + 1], len = r - l;
        // exp(B(s) - B(L)) is monotone on the piece; e is its maximiser.
        const double f_l = -F(l, L - l), f_r = -F(r, L - r);
        const bool right = f_r >= f_l;
        const double e = right ? r : l;
        const double dir = right ? -1.0 : 1.0;
        // g(x) = B(e + dir x) - B(e) falls monotonically from 0. Panels end
        // where -g reaches 1, 2, 4, ..., 64, so each one spans a bounded number
        // of e-folds and a fixed Gauss rule suffices; past 64 the rest is dropped.
        auto g = [&](double x) { return F(e, dir * x); };
        auto slope = [&](double x) { return std::abs(beta_at(e + dir * x)); };
        auto h = [&](double x) { return std::exp(g(x)); };
        CompensatedSum J;
        double x0 = 0.0;
        for (double tau = 1.0; tau <= 64.0 && x0 < len; tau *= 2.0) {
            double x1 = len;
            if (-g(len) > tau) {
                // Safeguarded Newton; the breakpoint only needs to be roughly right.
                double lo = x0, hi = len, x = x0;
                for (int it = 0; it < 60; ++it) {
                    const double phi = -g(x) - tau;
                    if (std::abs(phi) < 0.05 * tau) break;
                    (phi < 0.0 ? lo : hi) = x;
                    const double d = slope(x);
                    double xn = d > 0.0 ? x - phi / d : 0.5 * (lo + hi);
                    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
                    x = xn;
                }
                x1 = x;
            }
            J += boost::math::quadrature::gauss<double, 20>::integrate(h, x0, x1);
            x0 = x1;
        }
        const double logJ = std::log(J.value());
        logI = log_add_exp(logI, std::max(f_l, f_r) + logJ);
    }
    return {B, std::log(2.0) + logI};
}

}  // namespace detail

/// Log-domain u_k(t) for the path carried by `u1`. Cells are accumulated
/// backward from t; the sum stops when its tail estimate (the drawdown-aware
/// one of accumulate_cells) drops below tol, and is declared divergent once
/// log u_k would fall below log_floor or the depth budget is spent.
inline UkResult uk_tempered(U1History& u1, int k, double t, const UkOptions& opt = {}) {
    require(k >= 2, "uk_tempered: k must be at least 2");
    require(std::isfinite(t), "uk_tempered: t must be finite");
    const BernoulliPath& eta = u1.path();
    const double k4 = std::pow(double(k), 4);
    const double n = std::floor(t);
    const auto top = static_cast<std::int64_t>(n);
    const double L = t - n;
    const double log_guard = -2.0 * opt.log_floor;
    const double log_tol = std::log(opt.tol);

    UkResult r;
    double logR = -std::numeric_limits<double>::infinity();
    double S = 0.0, peak = 0.0, drop = 0.0;
    double max_logW = -std::numeric_limits<double>::infinity();
    RecentSlope slope;
    for (std::int64_t j = 0; j < opt.max_depth; ++j) {
        detail::LogCell c;
        if (L > 0.0 && j == 0) {
            c = detail::uk_cell(u1.at_cell_start(top), eta.cell(top), k4, L);
        } else {
            const std::int64_t m = top - j - (L > 0.0 ? 0 : 1);
            c = detail::uk_cell(u1.at_cell_start(m), eta.cell(m), k4, 1.0);
        }
        logR = log_add_exp(logR, c.logW - S);
        S += c.B;
        peak = std::max(peak, S);
        drop = std::max(drop, peak - S);
        max_logW = std::max(max_logW, c.logW);
        r.depth = j + 1;
        slope.record(r.depth, S);
        if (!std::isfinite(logR) || !std::isfinite(S)) throw NumericError("uk_tempered: non-finite accumulation");
        if (logR > log_guard) return r;
        if (r.depth < std::max<std::int64_t>(opt.min_depth, 2)) continue;
        const double rate = slope(r.depth, S);
        if (!(rate > 0.0)) continue;
        const double log_tail = opt.margin + drop - S + max_logW - std::log(-std::expm1(-rate));
        if (log_tail <= log_tol + logR) {
            r.status = ToyStatus::Converged;
            r.log_half_width = -0.5 * logR;
            return r;
        }
    }
    r.budget_exhausted = true;
    return r;
}

inline UkResult uk_tempered(const BernoulliPath& eta, int k, double t, const UkOptions& opt = {}) {
    U1History u1(eta);
    return uk_tempered(u1, k, t, opt);
}

/// Closed-form attractor at time t: {u1} x prod_{k=2}^K [-w_k, w_k].
struct ToyAttractor {
    BernoulliPath eta;
    double t = 0.0;
    double u1 = 0.0;
    /// Entry i is k = i + 2.
    std::vector<UkResult> half_widths;
    int K = 0;
    double tol = 0.0;

    [[nodiscard]] double half_width(int k) const { return half_widths.at(static_cast<std::size_t>(k - 2)).value(); }
    [[nodiscard]] double log_half_width(int k) const {
        return half_widths.at(static_cast<std::size_t>(k - 2)).log_half_width;
    }
};

inline ToyAttractor toy_attractor(const BernoulliPath& eta, int K, double t = 0.0, const UkOptions& opt = {}) {
    require(K >= 2, "toy_attractor: K must be at least 2");
    ToyAttractor A{eta, t, u1_tempered(eta, t), {}, K, opt.tol};
    U1History u1(eta);
    for (int k = 2; k <= K; ++k) A.half_widths.push_back(uk_tempered(u1, k, t, opt));
    return A;
}

struct DimensionProxy {
    int count = 0;
    /// (k, log half-width) for k = 2..K; -inf where the interval is {0}.
    std::vector<std::pair<int, double>> profile;
};

/// Number of k in [2, K] with half-width above `threshold` (compared in logs).
inline DimensionProxy dimension_proxy(const BernoulliPath& eta, int K, double threshold, double t = 0.0,
                                      const UkOptions& opt = {}) {
    require(threshold > 0.0, "dimension_proxy: threshold must be positive");
    const auto A = toy_attractor(eta, K, t, opt);
    DimensionProxy d;
    const double lt = std::log(threshold);
    for (int k = 2; k <= K; ++k) {
        const auto& h = A.half_widths[static_cast<std::size_t>(k - 2)];
        const double lw = h.status == ToyStatus::Converged ? h.log_half_width : -std::numeric_limits<double>::infinity();
        d.profile.emplace_back(k, lw);
        if (lw > lt) ++d.count;
    }
    return d;
}

/// #{k >= 2 : k^4 < c}, the number of nonzero equilibria when u1 is held at c.
inline int equilibrium_cutoff(double c) {
    int n = 0;
    for (int k = 2; std::pow(double(k), 4) < c; ++k) ++n;
    return n;
}

/// Mean of u1(0) over the Bernoulli law when q e^{-a} + (1-q) e^{b} < 1, else +inf.
inline double toy_u1_mean(double a, double b, double q) {
    const double m = q * std::exp(-a) + (1.0 - q) * std::exp(b);
    if (m >= 1.0) return std::numeric_limits<double>::infinity();
    const double w = q * exp_integral(a, 1.0) + (1.0 - q) * exp_integral(-b, 1.0);
    return w / (1.0 - m);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct ToyTrace {
    std::vector<double> times;
    /// states[i] = (u1, u2, ..., uK) at times[i].
    std::vector<std::vector<double>> states;
};

/// Simulation state. u_k is kept as sign and log|u_k| so that components
/// far below the double range can still be regrown by later peaks of u1.
struct ToyState {
    double u1 = 0.0;
    /// Entry i is k = i + 2.
    std::vector<double> log_abs;
    std::vector<double> sign;

    static ToyState from_values(std::span<const double> x) {
        require(x.size() >= 2, "ToyState: need u1 and at least one u_k");
        ToyState s{x[0], {}, {}};
        for (std::size_t i = 1; i < x.size(); ++i) {
            s.log_abs.push_back(std::log(std::abs(x[i])));
            s.sign.push_back(x[i] < 0.0 ? -1.0 : 1.0);
        }
        return s;
    }
    [[nodiscard]] std::vector<double> values() const {
        std::vector<double> x{u1};
        for (std::size_t i = 0; i < log_abs.size(); ++i) x.push_back(sign[i] * std::exp(log_abs[i]));
        return x;
    }
};

/// Advances the state from t0 to t1. u1 is exact. Each u_k takes Strang
/// steps: exact half step of u' = (u1(t) - k^4) u, exact full step of
/// u' = -u^3, exact half step again. Steps never straddle integer times.
///
/// Near its equilibrium u_k^2 = u1 - k^4 = lambda the splitting settles at
/// u^2 = sinh(lambda h) / h, a relative bias of (lambda h)^2 / 12 in u; at a
/// peak u1 ~ 2500 and h = 1e-3 that is 60%. Steps with (u1 - 16)_+ h above
/// max_growth are replaced by triple-jump compositions of the same step
/// (fourth order, bias ~3e-11 at lambda h = 1e-2), each with growth <= 1e-2.
inline void advance_toy(const BernoulliPath& eta, ToyState& x, double t0, double t1, double dt,
                        double max_growth = 1e-4) {
    require(dt > 0.0 && t1 >= t0 && max_growth > 0.0, "advance_toy: bad step or interval");
    static const double kW1 = 1.0 / (2.0 - std::cbrt(2.0)), kW0 = 1.0 - 2.0 * kW1;
    constexpr double kComposedGrowth = 1e-2;
    std::vector<double> k4(x.log_abs.size());
    for (std::size_t j = 0; j < k4.size(); ++j) k4[j] = std::pow(double(j + 2), 4);
    auto strang = [&x, &k4](double e, double h) {
        const double hh = 0.5 * h;
        const double um = detail::u1_after(x.u1, e, hh);
        const double I0 = detail::u1_integral(x.u1, e, hh), I1 = detail::u1_integral(um, e, hh);
        for (std::size_t j = 0; j < x.log_abs.size(); ++j) {
            double y = x.log_abs[j] + I0 - k4[j] * hh;
            // u -> u / sqrt(1 + 2 h u^2)
            y -= 0.5 * (y > 0.0 ? 2.0 * y + std::log(std::exp(-2.0 * y) + 2.0 * h)
                                : std::log1p(2.0 * h * std::exp(2.0 * y)));
            x.log_abs[j] = y + I1 - k4[j] * hh;
        }
        x.u1 = detail::u1_after(um, e, hh);
    };
    double l = t0;
    while (l < t1) {
        const double cell = std::floor(l);
        const double r = std::min(t1, cell + 1.0);
        const double e = eta.cell(static_cast<std::int64_t>(cell));
        const auto steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((r - l) / dt - 1e-9)));
        const double h = (r - l) / double(steps);
        for (std::int64_t i = 0; i < steps; ++i) {
            // u1 is monotone inside a cell, so its extremes are at the ends.
            const double peak = std::max(x.u1, detail::u1_after(x.u1, e, h));
            const double growth = std::max(0.0, peak - 16.0) * h;
            if (growth <= max_growth) {
                strang(e, h);
                continue;
            }
            // The middle substep runs u' = -u^3 backward: keep 2 |w0 h| u^2 small.
            double y_max = -std::numeric_limits<double>::infinity();
            for (double y : x.log_abs) y_max = std::max(y_max, y);
            const double m = std::ceil(std::max(growth / kComposedGrowth, 4.0 * -kW0 * h * std::exp(2.0 * y_max)));
            const double hs = h / m;
            for (double n = 0; n < m; ++n) {
                strang(e, kW1 * hs);
                strang(e, kW0 * hs);
                strang(e, kW1 * hs);
            }
        }
        l = r;
    }
}

/// Samples the trajectory from `initial` = (u1, u2, ..., uK) at t0 at each of
/// `times` (ascending, >= t0).
inline ToyTrace simulate_toy(const BernoulliPath& eta, std::span<const double> initial, double t0,
                             std::span<const double> times, double dt = 1e-3, double max_growth = 1e-4) {
    require(std::is_sorted(times.begin(), times.end()) && (times.empty() || times.front() >= t0),
            "simulate_toy: sample times must be ascending and not before t0");
    ToyState x = ToyState::from_values(initial);
    ToyTrace tr;
    double t = t0;
    for (double s : times) {
        advance_toy(eta, x, t, s, dt, max_growth);
        t = s;
        tr.times.push_back(s);
        tr.states.push_back(x.values());
    }
    return tr;
}

/// Distance from x to the attractor {u1} x prod [-w_k, w_k].
inline double distance_to_attractor(std::span<const double> x, const ToyAttractor& A) {
    require(x.size() == static_cast<std::size_t>(A.K), "distance_to_attractor: dimension mismatch");
    double s = (x[0] - A.u1) * (x[0] - A.u1);
    for (int k = 2; k <= A.K; ++k) {
        const double d = std::max(0.0, std::abs(x[static_cast<std::size_t>(k - 1)]) - A.half_width(k));
        s += d * d;
    }
    return std::sqrt(s);
}

/// Toy version of forward convergence in measure. Seed i uses
/// Bernoulli(a, b, q, derive_seed(seed, i)); initial(i, eta) gives the state at
/// time 0; the distance to the closed-form attractor is measured at each t.
/// Half-widths below the smallest double cannot move a distance, so the
/// attractor is evaluated with log_floor = -745.
inline std::vector<double> toy_forward_convergence(
    double a, double b, double q, std::uint64_t seed, std::size_t seeds, int K,
    const std::function<std::vector<double>(std::size_t, const BernoulliPath&)>& initial,
    std::span<const double> times, double delta, double dt = 1e-3, std::size_t workers = 1) {
    UkOptions opt;
    opt.log_floor = -745.0;
    require(std::is_sorted(times.begin(), times.end()) && (times.empty() || times.front() >= 0.0),
            "toy_forward_convergence: times must be ascending and non-negative");
    return forward_convergence_in_measure(
        seeds, times.size(), delta,
        [&](std::size_t i) {
            const BernoulliPath eta{a, b, q, derive_seed(seed, i), 0};
            const auto tr = simulate_toy(eta, initial(i, eta), 0.0, times, dt);
            std::vector<double> out;
            for (std::size_t j = 0; j < times.size(); ++j)
                out.push_back(distance_to_attractor(tr.states[j], toy_attractor(eta, K, times[j], opt)));
            return out;
        },
        workers);
}

}  // namespace signdamp
