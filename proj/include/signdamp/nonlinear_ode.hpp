#pragma once

// y'' + gamma(t) y' + y |y|^p = 0: Strang splitting with exact damping flows,
// energy traces, averaging diagnostics and decay fits.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace signdamp {

/// E = 1/2 v^2 + |y|^{p+2} / (p+2).
inline double oscillator_energy(double y, double v, double p) noexcept {
    return 0.5 * v * v + std::pow(std::abs(y), p + 2.0) / (p + 2.0);
}

/// Period of the undamped oscillation y'' + y|y|^p = 0 at energy E.
inline double oscillation_period(double E, double p) {
    if (!(E > 0.0)) return std::numeric_limits<double>::infinity();
    const double m = p + 2.0;
    const double amplitude = std::pow(m * E, 1.0 / m);
    return 4.0 * amplitude / std::sqrt(2.0 * E) * std::beta(1.0 / m, 0.5) / m;
}

/// How the step size is chosen.
///
/// PerPeriod: h = period(E) / steps_per_period, capped by max_dt.
/// Fixed:     constant h = dt.
/// Residual:  PerPeriod as an upper bound, further reduced by a controller that
///            keeps the per-step energy-identity defect below
///            residual_tol * h * max(1, E).
struct StepControl {
    enum class Mode { PerPeriod, Fixed, Residual };
    Mode mode = Mode::Residual;
    double dt = 1e-3;
    double steps_per_period = 40.0;
    double residual_tol = 1e-6;
    double max_dt = 0.05;
    double min_dt = 1e-9;

    static StepControl fixed(double dt) {
        StepControl s;
        s.mode = Mode::Fixed;
        s.dt = dt;
        return s;
    }
    static StepControl per_period(double n, double max_dt = 0.05) {
        StepControl s;
        s.mode = Mode::PerPeriod;
        s.steps_per_period = n;
        s.max_dt = max_dt;
        return s;
    }
    static StepControl residual(double tol) {
        StepControl s;
        s.mode = Mode::Residual;
        s.residual_tol = tol;
        return s;
    }
};

struct SimOptions {
    StepControl step;
    double sample_dt = 0.01;
    double energy_ceiling = 1e12;
};

struct EnergyTrace {
    double p = 0.0;
    std::vector<double> times;
    std::vector<double> E;
    std::vector<double> E_k;
    std::vector<double> E_p;
    std::vector<double> y;
    std::vector<double> v;
    /// |Delta E + int gamma y'^2| over the interval ending at each sample (0 at the first).
    std::vector<double> identity_residual;
    /// Cumulative int gamma y'^2 from the start.
    std::vector<double> dissipated;
    bool diverged = false;
    std::size_t steps = 0;

    [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
    [[nodiscard]] double total_residual() const {
        CompensatedSum s;
        for (double r : identity_residual) s += r;
        return s.value();
    }
};

namespace detail {

struct OscState {
    double y;
    double v;
    double W;  // accumulated int gamma v^2
};

/// Exact damping flow over tau: v -> v e^{-g tau}, W += 1/2 v^2 (1 - e^{-2 g tau}).
inline void damp(OscState& s, double g, double tau) noexcept {
    if (g == 0.0) return;
    const double e = std::exp(-g * tau);
    s.W += 0.5 * s.v * s.v * (-std::expm1(-2.0 * g * tau));
    s.v *= e;
}

inline double restoring(double y, double p) noexcept { return y * std::pow(std::abs(y), p); }

}  // namespace detail

/// One Stormer-Verlet step of y'' = -y|y|^p (kick-drift-kick). Symmetric:
/// stepping h then -h restores the state up to rounding.
inline void verlet_step(double& y, double& v, double p, double h) noexcept {
    v -= 0.5 * h * detail::restoring(y, p);
    y += h * v;
    v -= 0.5 * h * detail::restoring(y, p);
}

/// Strang step D(h/2) V(h) D(h/2) with damping value g held fixed.
inline void strang_step(detail::OscState& s, double g, double p, double h) noexcept {
    detail::damp(s, g, 0.5 * h);
    verlet_step(s.y, s.v, p, h);
    detail::damp(s, g, 0.5 * h);
}

/// Simulates y'' + gamma y' + y|y|^p = 0 from (y0, v0) at t0 to t1.
///
/// Steps never straddle a discontinuity of gamma or a sample time. On smooth
/// signals gamma is frozen at the step midpoint.
inline EnergyTrace simulate(const DampingSignal& signal, double p, double y0, double v0, double t0,
                            double t1, const SimOptions& opt = {}) {
    require(p > 0.0, "simulate: p must be > 0");
    require(t1 > t0, "simulate: empty time span");
    require(opt.sample_dt > 0.0, "simulate: sample_dt must be > 0");
    require(std::isfinite(y0) && std::isfinite(v0), "simulate: non-finite initial state");
    const StepControl& sc = opt.step;

    EnergyTrace tr;
    tr.p = p;
    auto record = [&](double t, const detail::OscState& s, double residual) {
        const double ek = 0.5 * s.v * s.v;
        const double ep = std::pow(std::abs(s.y), p + 2.0) / (p + 2.0);
        tr.times.push_back(t);
        tr.E_k.push_back(ek);
        tr.E_p.push_back(ep);
        tr.E.push_back(ek + ep);
        tr.y.push_back(s.y);
        tr.v.push_back(s.v);
        tr.identity_residual.push_back(residual);
        tr.dissipated.push_back(s.W);
    };

    const auto br = breakpoints(signal, t0, t1);
    std::size_t next_break = 0;

    detail::OscState s{y0, v0, 0.0};
    record(t0, s, 0.0);
    double t = t0;
    std::int64_t k_sample = 1;
    double interval_E0 = tr.E.back();
    double interval_W0 = 0.0;
    double h_ctrl = sc.mode == StepControl::Mode::Fixed ? sc.dt : sc.max_dt;

    while (t < t1) {
        const double t_sample = std::min(t0 + double(k_sample) * opt.sample_dt, t1);
        while (next_break < br.size() && br[next_break] <= t) ++next_break;
        const double t_event =
            next_break < br.size() ? std::min(t_sample, br[next_break]) : t_sample;

        const double E = oscillator_energy(s.y, s.v, p);
        double h;
        if (sc.mode == StepControl::Mode::Fixed) {
            h = sc.dt;
        } else {
            h = std::min(sc.max_dt, oscillation_period(E, p) / sc.steps_per_period);
            if (sc.mode == StepControl::Mode::Residual) h = std::min(h, h_ctrl);
        }
        bool lands = false;
        if (t + h >= t_event - 1e-12 * std::max(1.0, std::abs(t_event))) {
            h = t_event - t;
            lands = true;
        }

        const double g = sample(signal, t + 0.5 * h);
        detail::OscState trial = s;
        strang_step(trial, g, p, h);
        const double E_new = oscillator_energy(trial.y, trial.v, p);

        if (sc.mode == StepControl::Mode::Residual) {
            const double defect = std::abs(E_new - E + (trial.W - s.W));
            const double allowed = sc.residual_tol * h * std::max(1.0, E);
            // Local defect is O(h^3): scale h by (allowed / defect)^(1/2) per unit time.
            const double ratio = defect > 0.0 ? std::sqrt(allowed / defect) : 2.0;
            if (defect > allowed && h > sc.min_dt) {
                h_ctrl = std::max(sc.min_dt, h * std::max(0.2, 0.9 * ratio));
                continue;
            }
            h_ctrl = std::max(sc.min_dt, h * std::clamp(0.9 * ratio, 0.2, 2.0));
        }

        s = trial;
        t = lands ? t_event : t + h;
        ++tr.steps;
        if (!std::isfinite(E_new)) throw NumericError("simulate: non-finite state");
        if (E_new > opt.energy_ceiling) {
            tr.diverged = true;
            record(t, s, std::abs(E_new - interval_E0 + (s.W - interval_W0)));
            break;
        }
        if (lands && t == t_sample) {
            record(t, s, std::abs(E_new - interval_E0 + (s.W - interval_W0)));
            interval_E0 = tr.E.back();
            interval_W0 = s.W;
            ++k_sample;
        }
    }
    return tr;
}

/// <E_k> / <E> over the final `window` time units of the trace, trimmed to
/// whole oscillations (between the first and last upward zero crossings of y).
inline double averaged_ratio(const EnergyTrace& tr, double window) {
    require(tr.size() >= 2, "averaged_ratio: trace too short");
    require(window > 0.0 && window <= tr.times.back() - tr.times.front(),
            "averaged_ratio: window must lie within the trace");
    const double start = tr.times.back() - window;
    std::vector<double> up;  // interpolated upward crossings
    for (std::size_t i = 1; i < tr.size(); ++i) {
        if (tr.times[i - 1] < start) continue;
        if (tr.y[i - 1] < 0.0 && tr.y[i] >= 0.0) {
            const double f = tr.y[i - 1] / (tr.y[i - 1] - tr.y[i]);
            up.push_back(tr.times[i - 1] + f * (tr.times[i] - tr.times[i - 1]));
        }
    }
    if (up.size() < 4) throw DiagnosticError("averaged_ratio: fewer than 3 oscillations in window");
    const double a = up.front(), b = up.back();
    // Trapezoidal integrals on [a, b] with linear interpolation at the ends.
    auto mean_on = [&](const std::vector<double>& f) {
        CompensatedSum s;
        for (std::size_t i = 1; i < tr.size(); ++i) {
            const double lo = std::max(tr.times[i - 1], a), hi = std::min(tr.times[i], b);
            if (hi <= lo) continue;
            const double dt = tr.times[i] - tr.times[i - 1];
            auto at = [&](double x) {
                const double w = (x - tr.times[i - 1]) / dt;
                return (1.0 - w) * f[i - 1] + w * f[i];
            };
            s += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
        return s.value() / (b - a);
    };
    return mean_on(tr.E_k) / mean_on(tr.E);
}

/// (p+2)/(p+4): high-energy limit of <E_k>/<E>.
inline double predicted_ratio(double p) { return (p + 2.0) / (p + 4.0); }

/// E + 2/(p+4) gamma_bar y' y.
inline double modified_energy(double y, double v, double gamma_bar_value, double p) {
    return oscillator_energy(y, v, p) + 2.0 / (p + 4.0) * gamma_bar_value * v * y;
}
inline double modified_energy(double y, double v, double t, const DampingSignal& gamma_bar, double p) {
    return modified_energy(y, v, sample(gamma_bar, t), p);
}

struct DecayFit {
    double alpha = 0.0;
    double C_star = 0.0;
    bool non_dissipative = false;
    std::size_t points = 0;
};

/// Fits E(t) ~ C E(0) e^{-alpha t} + C_*.
///
/// C_* is the mean energy over the final quarter of the trace. The rate is the
/// least-squares slope of log(E - C_*) over the transient, which ends once
/// E - C_* drops below max(C_*, floor); below the floor the oscillator is no
/// longer in its high-energy regime. Growing or diverged traces get the
/// (negative) log-slope of E and the non-dissipative flag.
inline DecayFit decay_rate_fit(std::span<const double> times, std::span<const double> E, bool diverged,
                               double floor = 1.0) {
    require(times.size() == E.size(), "decay_rate_fit: size mismatch");
    require(E.size() >= 8, "decay_rate_fit: trace too short");
    DecayFit fit;
    const std::size_t n = E.size();
    const std::size_t q0 = n - n / 4;
    CompensatedSum tail;
    for (std::size_t i = q0; i < n; ++i) tail += E[i];
    fit.C_star = tail.value() / double(n - q0);

    auto log_slope = [&](std::size_t i1, double shift) {
        std::vector<double> x, y;
        for (std::size_t i = 0; i < i1; ++i) {
            const double d = E[i] - shift;
            if (d > 0.0) {
                x.push_back(times[i]);
                y.push_back(std::log(d));
            }
        }
        fit.points = x.size();
        return x.size() >= 2 ? fit_line(x, y).slope : 0.0;
    };

    if (diverged || fit.C_star > E.front()) {
        fit.alpha = -std::max(0.0, log_slope(n, 0.0));
        if (fit.alpha == 0.0) fit.alpha = -0.0;
        fit.non_dissipative = true;
        return fit;
    }
    const double stop = std::max(fit.C_star, floor);
    std::size_t end = 0;
    while (end < n && E[end] - fit.C_star > stop) ++end;
    if (end < 4) {
        // Already at the plateau: nothing to fit.
        fit.non_dissipative = true;
        return fit;
    }
    fit.alpha = -log_slope(end, fit.C_star);
    fit.non_dissipative = !(fit.alpha > 0.0);
    return fit;
}

inline DecayFit decay_rate_fit(const EnergyTrace& tr, double floor = 1.0) {
    return decay_rate_fit(tr.times, tr.E, tr.diverged, floor);
}

struct EnsembleFit {
    /// Fit of seed i, driven by Bernoulli(a, b, q, derive_seed(seed, i)).
    std::vector<DecayFit> fits;
    std::vector<double> final_E;
    double mean_alpha = 0.0;
    std::size_t non_dissipative = 0;
};

/// Decay fits of the Bernoulli oscillator over an ensemble of paths, each
/// started at rest from energy E0 at t = 0 and run to T.
inline EnsembleFit bernoulli_ensemble_fit(double a, double b, double q, double p, double E0, double T,
                                          std::size_t seeds, std::uint64_t seed, const SimOptions& opt = {},
                                          std::size_t workers = 1) {
    require(seeds >= 1, "bernoulli_ensemble_fit: need at least one seed");
    require(E0 > 0.0, "bernoulli_ensemble_fit: E0 must be > 0");
    const double y0 = std::pow((p + 2.0) * E0, 1.0 / (p + 2.0));
    EnsembleFit out;
    out.fits.resize(seeds);
    out.final_E.resize(seeds);
    parallel_for(seeds, workers, [&](std::size_t i) {
        const auto tr = simulate(DampingSignal::bernoulli(a, b, q, derive_seed(seed, i)), p, y0, 0.0, 0.0, T, opt);
        out.fits[i] = decay_rate_fit(tr);
        out.final_E[i] = tr.E.back();
    });
    CompensatedSum s;
    for (const auto& f : out.fits) {
        s += f.alpha;
        out.non_dissipative += f.non_dissipative;
    }
    out.mean_alpha = s.value() / double(seeds);
    return out;
}

/// Zero crossings of y(x) on a grid, located by linear interpolation between
/// neighbours of opposite sign (an exact zero counts once).
inline std::vector<double> sign_changes(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "sign_changes: size mismatch");
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        if (!std::isfinite(y[i]) || !std::isfinite(y[i + 1])) continue;
        if (y[i] == 0.0) {
            out.push_back(x[i]);
        } else if ((y[i] < 0.0) != (y[i + 1] < 0.0) && y[i + 1] != 0.0) {
            out.push_back(x[i] + (x[i + 1] - x[i]) * y[i] / (y[i] - y[i + 1]));
        }
    }
    if (!y.empty() && y.back() == 0.0) out.push_back(x.back());
    return out;
}

}  // namespace signdamp
