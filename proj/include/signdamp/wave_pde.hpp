#pragma once

// Damped wave equation on (0, pi) with Dirichlet conditions:
//   u_tt + gamma(t) u_t - u_xx + u|u|^p + f0(u) = g(x),
// discretized in the sine basis u = sum_{k=1..N} u_k sin(kx).
//
// One step is K(h/2) L(h) K(h/2). L is the exact flow of the linear damped
// wave equation mode by mode (damping and rotation together), so with the
// nonlinearity switched off the scheme reproduces the closed-form solution.
// K is the nonlinear kick v -= tau P_N[f(u) - g], evaluated on an oversampled
// grid. For even integer p the padding makes the projection and the energy
// quadrature exact; other p use 2x padding and an exponential filter.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "criteria.hpp"
#include "dst.hpp"
#include "errors.hpp"
#include "linear_ode.hpp"
#include "nonlinear_ode.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "signal.hpp"

namespace signdamp {

struct SpectralState {
    double t = 0.0;
    std::vector<double> u_hat;  // u_hat[k-1] multiplies sin(kx)
    std::vector<double> v_hat;

    SpectralState() = default;
    explicit SpectralState(std::size_t N, double t0 = 0.0) : t(t0), u_hat(N, 0.0), v_hat(N, 0.0) {}
    [[nodiscard]] std::size_t N() const noexcept { return u_hat.size(); }
};

struct WaveProblem {
    DampingSignal signal = DampingSignal::constant(0.0);
    double p = 2.0;
    /// f0(u) = sum_j f0[j] u^j.
    std::vector<double> f0;
    /// Sine coefficients of the forcing g.
    std::vector<double> g_hat;
    /// Drop the nonlinearity entirely (linear damped wave equation).
    bool linear = false;
};

struct WaveEnergy {
    double E = 0.0;    // full energy
    double E_k = 0.0;  // 1/2 |u_t|^2
    double E_p = 0.0;  // 1/2 |u_x|^2 + |u|^{p+2}/(p+2) + F0(u)
};

struct WaveOptions {
    double dt = 1e-3;
    double sample_dt = 0.1;
    double energy_ceiling = 1e12;
    /// Grid cells per mode count; 0 selects ceil((p+3)/2) for even integer p
    /// and 2 otherwise.
    std::size_t oversample = 0;
    bool keep_snapshots = false;
};

struct WaveTrace {
    std::vector<double> times;
    std::vector<double> E, E_k, E_p;
    /// |Delta(E - (g,u)) + int gamma |u_t|^2| over the interval ending at each sample.
    std::vector<double> identity_residual;
    std::vector<double> dissipated;
    /// |u|_{L^12}^4 at each sample.
    std::vector<double> l12_4;
    std::vector<SpectralState> snapshots;
    bool diverged = false;
    std::size_t steps = 0;

    [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
    [[nodiscard]] double total_residual() const {
        CompensatedSum s;
        for (double r : identity_residual) s += r;
        return s.value();
    }
};

inline bool polynomial_nonlinearity(double p) {
    return p == std::floor(p) && std::fmod(p, 2.0) == 0.0;
}

class WaveSolver {
public:
    WaveSolver(WaveProblem problem, std::size_t N, const WaveOptions& opt = {})
        : pb_(std::move(problem)),
          N_(N),
          opt_(opt),
          poly_(polynomial_nonlinearity(pb_.p)),
          dst_(N, N * pad_factor(pb_.p, opt.oversample)),
          grid_(dst_.points()),
          work_(dst_.points()),
          force_(N),
          force_u_(N, std::numeric_limits<double>::quiet_NaN()) {
        require(N >= 1 && (N & (N - 1)) == 0, "WaveSolver: N must be a power of two");
        require(pb_.p > 0.0 && pb_.p <= 4.0, "WaveSolver: p must lie in (0, 4]");
        require(opt.dt > 0.0 && opt.sample_dt > 0.0, "WaveSolver: dt and sample_dt must be > 0");
        for (std::size_t j = 0; j < pb_.f0.size(); ++j)
            if (pb_.f0[j] != 0.0)
                require(double(j) < pb_.p + 1.0, "WaveSolver: f0 must be subordinate to u|u|^p");
        pb_.g_hat.resize(N, 0.0);
        if (!poly_) {
            filter_.resize(N);
            for (std::size_t k = 1; k <= N; ++k)
                filter_[k - 1] = std::exp(-36.0 * std::pow(double(k) / double(N), 36.0));
        }
    }

    [[nodiscard]] const WaveProblem& problem() const noexcept { return pb_; }
    [[nodiscard]] std::size_t modes() const noexcept { return N_; }
    [[nodiscard]] std::size_t grid_cells() const noexcept { return dst_.cells(); }
    /// Accumulated int gamma |u_t|^2 since construction.
    [[nodiscard]] double dissipated() const noexcept { return W_; }

    static std::size_t pad_factor(double p, std::size_t requested) {
        if (requested) return requested;
        return polynomial_nonlinearity(p) ? static_cast<std::size_t>(std::ceil((p + 3.0) / 2.0)) : 2;
    }

    /// Grid values u(x_j), x_j = j pi / M.
    std::span<const double> grid_values(const SpectralState& s) {
        dst_.synthesize(s.u_hat, grid_);
        return grid_;
    }

    [[nodiscard]] WaveEnergy energy(const SpectralState& s) {
        check_size(s);
        WaveEnergy e;
        CompensatedSum kin, grad;
        for (std::size_t k = 1; k <= N_; ++k) {
            kin += s.v_hat[k - 1] * s.v_hat[k - 1];
            grad += double(k * k) * s.u_hat[k - 1] * s.u_hat[k - 1];
        }
        e.E_k = 0.25 * kPi * kin.value();
        dst_.synthesize(s.u_hat, grid_);
        const double w = kPi / double(dst_.cells());
        CompensatedSum pot;
        for (double u : grid_) pot += std::pow(std::abs(u), pb_.p + 2.0) / (pb_.p + 2.0) + F0(u);
        e.E_p = 0.25 * kPi * grad.value() + (pb_.linear ? 0.0 : w * pot.value());
        e.E = e.E_k + e.E_p;
        return e;
    }

    /// (u_t, u) in L2(0, pi).
    [[nodiscard]] static double velocity_displacement(const SpectralState& s) {
        CompensatedSum c;
        for (std::size_t k = 0; k < s.N(); ++k) c += s.v_hat[k] * s.u_hat[k];
        return 0.5 * kPi * c.value();
    }

    /// |u|_{L^12}^4 by grid quadrature.
    [[nodiscard]] double l12_4(const SpectralState& s) {
        dst_.synthesize(s.u_hat, grid_);
        CompensatedSum c;
        for (double u : grid_) c += std::pow(u * u, 6.0);
        return std::pow(kPi / double(dst_.cells()) * c.value(), 1.0 / 3.0);
    }

    /// One Strang step of length h with gamma held at g.
    void step_with(SpectralState& s, double g, double h) {
        check_size(s);
        kick(s, 0.5 * h);
        linear_flow(s, g, h);
        kick(s, 0.5 * h);
        s.t += h;
    }

    /// Advances to t1 with nominal step opt.dt. Steps land on every
    /// discontinuity of gamma and on t1; gamma is sampled at step midpoints.
    void advance(SpectralState& s, double t1) {
        const auto br = breakpoints(pb_.signal, s.t, t1);
        std::size_t nb = 0;
        // Step ends are base + n dt, so rounding in t does not accumulate
        // into the propagated time.
        double base = s.t;
        std::int64_t n = 0;
        while (s.t < t1) {
            while (nb < br.size() && br[nb] <= s.t) ++nb;
            const double t_event = nb < br.size() ? std::min(br[nb], t1) : t1;
            double t_next = base + double(n + 1) * opt_.dt;
            const bool lands = t_next >= t_event - 1e-12 * std::max(1.0, std::abs(t_event));
            if (lands) t_next = t_event;
            const double h = t_next - s.t;
            step_with(s, sample(pb_.signal, s.t + 0.5 * h), h);
            s.t = t_next;
            ++n;
            if (lands) {
                base = t_event;
                n = 0;
            }
            ++steps_;
        }
    }

    /// Runs from s to t1 recording a trace every opt.sample_dt.
    WaveTrace run(SpectralState s, double t1) {
        require(t1 > s.t, "WaveSolver::run: empty time span");
        WaveTrace tr;
        const double t0 = s.t;
        auto record = [&](double residual) {
            const auto e = energy(s);
            tr.times.push_back(s.t);
            tr.E.push_back(e.E);
            tr.E_k.push_back(e.E_k);
            tr.E_p.push_back(e.E_p);
            tr.identity_residual.push_back(residual);
            tr.dissipated.push_back(W_);
            tr.l12_4.push_back(l12_4(s));
            if (opt_.keep_snapshots) tr.snapshots.push_back(s);
            return e.E;
        };
        const double W0 = W_;
        const std::size_t steps0 = steps_;
        double E_prev = record(0.0) - forcing_work(s);
        double W_prev = W_;
        for (std::int64_t k = 1; s.t < t1; ++k) {
            const double ts = std::min(t0 + double(k) * opt_.sample_dt, t1);
            advance(s, ts);
            s.t = ts;
            const auto e = energy(s);
            if (!std::isfinite(e.E)) throw NumericError("WaveSolver: non-finite state");
            const double Eg = e.E - forcing_work(s);
            record(std::abs(Eg - E_prev + (W_ - W_prev)));
            E_prev = Eg;
            W_prev = W_;
            if (e.E > opt_.energy_ceiling) {
                tr.diverged = true;
                break;
            }
        }
        for (double& d : tr.dissipated) d -= W0;
        tr.steps = steps_ - steps0;
        final_ = std::move(s);
        return tr;
    }

    /// State at the end of the most recent run().
    [[nodiscard]] const SpectralState& final_state() const noexcept { return final_; }

private:
    WaveProblem pb_;
    std::size_t N_;
    WaveOptions opt_;
    bool poly_;
    SineTransform dst_;
    std::vector<double> grid_, work_, force_, force_u_, filter_;
    std::map<std::pair<double, double>, std::vector<Mat2>> prop_cache_;
    double W_ = 0.0;
    std::size_t steps_ = 0;
    SpectralState final_;

    void check_size(const SpectralState& s) const {
        require(s.u_hat.size() == N_ && s.v_hat.size() == N_, "WaveSolver: state has the wrong mode count");
    }

    [[nodiscard]] double F0(double u) const noexcept {
        double acc = 0.0, pw = u;
        for (std::size_t j = 0; j < pb_.f0.size(); ++j, pw *= u) acc += pb_.f0[j] * pw / double(j + 1);
        return acc;
    }
    [[nodiscard]] double f(double u) const noexcept {
        double acc = u * std::pow(std::abs(u), pb_.p), pw = 1.0;
        for (double c : pb_.f0) {
            acc += c * pw;
            pw *= u;
        }
        return acc;
    }

    /// (g, u) in L2(0, pi); E - (g, u) obeys the dissipation identity.
    [[nodiscard]] double forcing_work(const SpectralState& s) const {
        CompensatedSum c;
        for (std::size_t k = 0; k < N_; ++k) c += pb_.g_hat[k] * s.u_hat[k];
        return 0.5 * kPi * c.value();
    }

    void kick(SpectralState& s, double tau) {
        bool any_g = false;
        for (double g : pb_.g_hat) any_g |= g != 0.0;
        if (pb_.linear && !any_g) return;
        if (!std::equal(s.u_hat.begin(), s.u_hat.end(), force_u_.begin())) {
            if (pb_.linear) {
                std::fill(force_.begin(), force_.end(), 0.0);
            } else {
                dst_.synthesize(s.u_hat, work_);
                for (double& x : work_) x = f(x);
                dst_.analyze(work_, force_);
                if (!poly_)
                    for (std::size_t k = 0; k < N_; ++k) force_[k] *= filter_[k];
            }
            std::copy(s.u_hat.begin(), s.u_hat.end(), force_u_.begin());
        }
        for (std::size_t k = 0; k < N_; ++k) s.v_hat[k] -= tau * (force_[k] - pb_.g_hat[k]);
    }

    const std::vector<Mat2>& propagators(double g, double h) {
        const auto key = std::make_pair(g, h);
        if (auto it = prop_cache_.find(key); it != prop_cache_.end()) return it->second;
        if (prop_cache_.size() > 64) prop_cache_.clear();
        std::vector<Mat2> P(N_);
        for (std::size_t k = 1; k <= N_; ++k) P[k - 1] = constant_piece_exponential(g, double(k * k), h);
        return prop_cache_.emplace(key, std::move(P)).first->second;
    }

    void linear_flow(SpectralState& s, double g, double h) {
        const auto& P = propagators(g, h);
        CompensatedSum loss;
        for (std::size_t k = 1; k <= N_; ++k) {
            double& u = s.u_hat[k - 1];
            double& v = s.v_hat[k - 1];
            const double kk = double(k * k);
            const double before = v * v + kk * u * u;
            const auto [nu, nv] = P[k - 1].apply(u, v);
            u = nu;
            v = nv;
            if (g != 0.0) loss += before - (v * v + kk * u * u);
        }
        W_ += 0.25 * kPi * loss.value();
    }
};

/// Single stepping entry point: advances `state` by dt, subdividing at the
/// discontinuities of gamma.
inline SpectralState step(const WaveProblem& problem, SpectralState state, double dt,
                          const WaveOptions& opt = {}) {
    require(dt > 0.0, "step: dt must be > 0");
    WaveSolver solver(problem, state.N(), opt);
    const double t1 = state.t + dt;
    solver.advance(state, t1);
    state.t = t1;
    return state;
}

inline WaveEnergy energy_functional(const SpectralState& s, const WaveProblem& problem) {
    WaveSolver solver(problem, s.N());
    return solver.energy(s);
}

/// E + (gamma_bar_+ / 2 - 2/(p+4) gamma_bar_-) (u_t, u).
inline double modified_energy_pde(const SpectralState& s, const WaveProblem& problem, double gamma_bar_plus,
                                  double gamma_bar_minus) {
    const double c = 0.5 * gamma_bar_plus - 2.0 / (problem.p + 4.0) * gamma_bar_minus;
    return energy_functional(s, problem).E + c * WaveSolver::velocity_displacement(s);
}

/// Initial state proportional to the given shapes with full energy E0
/// (bisection on the amplitude; the energy is increasing in it).
inline SpectralState state_with_energy(const WaveProblem& problem, std::size_t N, std::span<const double> u_shape,
                                       std::span<const double> v_shape, double E0, double t0 = 0.0) {
    require(E0 >= 0.0, "state_with_energy: E0 must be >= 0");
    WaveSolver solver(problem, N);
    auto at = [&](double A) {
        SpectralState s(N, t0);
        for (std::size_t k = 0; k < N && k < u_shape.size(); ++k) s.u_hat[k] = A * u_shape[k];
        for (std::size_t k = 0; k < N && k < v_shape.size(); ++k) s.v_hat[k] = A * v_shape[k];
        return s;
    };
    if (E0 == 0.0) return at(0.0);
    double lo = 0.0, hi = 1.0;
    while (solver.energy(at(hi)).E < E0) {
        hi *= 2.0;
        if (hi > 1e150) throw ContractError("state_with_energy: shape carries no energy");
    }
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (solver.energy(at(mid)).E < E0 ? lo : hi) = mid;
    }
    return at(0.5 * (lo + hi));
}

/// int_{t-1}^{t} |u(s)|_{L^12}^4 ds over the trace samples (trapezoid), at the
/// last sample time if t is NaN.
inline double strichartz_diagnostic(const WaveTrace& tr, double t = std::numeric_limits<double>::quiet_NaN()) {
    require(tr.size() >= 2, "strichartz_diagnostic: trace too short");
    if (std::isnan(t)) t = tr.times.back();
    require(t - 1.0 >= tr.times.front() - 1e-12 && t <= tr.times.back() + 1e-12,
            "strichartz_diagnostic: window outside the trace");
    const double a = t - 1.0;
    CompensatedSum s;
    for (std::size_t i = 1; i < tr.size(); ++i) {
        const double lo = std::max(tr.times[i - 1], a), hi = std::min(tr.times[i], t);
        if (hi <= lo) continue;
        const double dt = tr.times[i] - tr.times[i - 1];
        auto at = [&](double x) {
            const double w = (x - tr.times[i - 1]) / dt;
            return (1.0 - w) * tr.l12_4[i - 1] + w * tr.l12_4[i];
        };
        s += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    return s.value();
}

/// |w_t|^2 + |w_x|^2 for w = u1 - u2.
inline double energy_distance(const SpectralState& a, const SpectralState& b) {
    require(a.N() == b.N(), "energy_distance: mode counts differ");
    CompensatedSum c;
    for (std::size_t k = 1; k <= a.N(); ++k) {
        const double du = a.u_hat[k - 1] - b.u_hat[k - 1];
        const double dv = a.v_hat[k - 1] - b.v_hat[k - 1];
        c += dv * dv + double(k * k) * du * du;
    }
    return 0.5 * kPi * c.value();
}

struct DistanceTrace {
    std::vector<double> times;
    std::vector<double> distance;
    [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
};

/// Evolves both states under the same signal and records their energy distance.
inline DistanceTrace two_trajectory_distance(const WaveProblem& problem, SpectralState xi1, SpectralState xi2,
                                             double t1, const WaveOptions& opt = {}) {
    require(xi1.N() == xi2.N(), "two_trajectory_distance: mode counts differ");
    require(xi1.t == xi2.t, "two_trajectory_distance: states at different times");
    WaveSolver s1(problem, xi1.N(), opt), s2(problem, xi2.N(), opt);
    DistanceTrace out;
    const double t0 = xi1.t;
    out.times.push_back(t0);
    out.distance.push_back(energy_distance(xi1, xi2));
    for (std::int64_t k = 1; xi1.t < t1; ++k) {
        const double ts = std::min(t0 + double(k) * opt.sample_dt, t1);
        s1.advance(xi1, ts);
        s2.advance(xi2, ts);
        xi1.t = xi2.t = ts;
        out.times.push_back(ts);
        out.distance.push_back(energy_distance(xi1, xi2));
    }
    return out;
}

struct PullbackContraction {
    std::vector<double> depths;
    std::vector<double> distance_at_end;
    /// -slope of log distance against depth.
    double rate = 0.0;
};

/// For each pullback depth s, starts xi1 and xi2 at t_end - s and measures
/// their energy distance at t_end.
inline PullbackContraction pullback_contraction(const WaveProblem& problem, const SpectralState& xi1,
                                                const SpectralState& xi2, std::span<const double> depths,
                                                double t_end = 0.0, const WaveOptions& opt = {},
                                                std::size_t workers = 1) {
    require(depths.size() >= 2, "pullback_contraction: need at least two depths");
    PullbackContraction out;
    out.depths.assign(depths.begin(), depths.end());
    out.distance_at_end.assign(depths.size(), 0.0);
    parallel_for(depths.size(), workers, [&](std::size_t i) {
        SpectralState a = xi1, b = xi2;
        a.t = b.t = t_end - depths[i];
        WaveSolver s1(problem, a.N(), opt), s2(problem, b.N(), opt);
        s1.advance(a, t_end);
        s2.advance(b, t_end);
        out.distance_at_end[i] = energy_distance(a, b);
    });
    std::vector<double> x, y;
    for (std::size_t i = 0; i < depths.size(); ++i)
        if (out.distance_at_end[i] > 0.0) {
            x.push_back(depths[i]);
            y.push_back(std::log(out.distance_at_end[i]));
        }
    out.rate = x.size() >= 2 ? -fit_line(x, y).slope : 0.0;
    return out;
}

struct DissipativityRun {
    double E0 = 0.0;
    DecayFit fit;
    /// Smallest C with E(t) <= C (1 + E0) e^{-alpha t} + C (1 + |g|) on the samples.
    double C = 0.0;
    bool diverged = false;
    bool anomaly = false;
    bool rerun = false;
    WaveTrace trace;
};

struct DissipativityReport {
    double drift = 0.0;
    std::vector<DissipativityRun> runs;
    bool pass = false;
};

/// Fits the dissipative estimate for each initial datum. A divergence while the
/// signal's weighted mean over the horizon is positive is flagged as an anomaly
/// and retried once with dt halved.
inline DissipativityReport dissipativity_experiment(const WaveProblem& problem,
                                                    const std::vector<SpectralState>& ensemble, double horizon,
                                                    const WaveOptions& opt = {}, std::size_t workers = 1) {
    require(!ensemble.empty(), "dissipativity_experiment: empty ensemble");
    require(horizon > 0.0, "dissipativity_experiment: horizon must be > 0");
    DissipativityReport rep;
    const double t0 = ensemble.front().t;
    rep.drift = windowed_weighted_mean(problem.signal, problem.p, t0 + horizon, horizon);
    double g_norm2 = 0.0;
    for (double g : problem.g_hat) g_norm2 += 0.5 * kPi * g * g;
    const double g_norm = std::sqrt(g_norm2);

    rep.runs.resize(ensemble.size());
    parallel_for(ensemble.size(), workers, [&](std::size_t i) {
        auto& r = rep.runs[i];
        WaveOptions o = opt;
        auto attempt = [&] {
            WaveSolver solver(problem, ensemble[i].N(), o);
            r.trace = solver.run(ensemble[i], ensemble[i].t + horizon);
        };
        attempt();
        if (r.trace.diverged && rep.drift > 0.0) {
            r.anomaly = true;
            r.rerun = true;
            o.dt *= 0.5;
            attempt();
        }
        r.E0 = r.trace.E.front();
        r.diverged = r.trace.diverged;
        r.fit = decay_rate_fit(r.trace.times, r.trace.E, r.diverged);
        const double alpha = r.fit.alpha;
        for (std::size_t j = 0; j < r.trace.size(); ++j) {
            const double env = (1.0 + r.E0) * std::exp(-alpha * (r.trace.times[j] - r.trace.times.front())) +
                               1.0 + g_norm;
            r.C = std::max(r.C, r.trace.E[j] / env);
        }
    });
    rep.pass = std::all_of(rep.runs.begin(), rep.runs.end(),
                           [](const DissipativityRun& r) { return !r.fit.non_dissipative && r.fit.alpha > 0.0; });
    return rep;
}

/// CSV snapshot dump. Columns: t, E, E_k, E_p, u_hat_1..u_hat_N, v_hat_1..v_hat_N.
inline void write_snapshots_csv(std::ostream& os, const WaveTrace& tr) {
    require(tr.snapshots.size() == tr.size(), "write_snapshots_csv: trace has no snapshots");
    const std::size_t N = tr.snapshots.empty() ? 0 : tr.snapshots.front().N();
    os << "t,E,E_k,E_p";
    for (std::size_t k = 1; k <= N; ++k) os << ",u_hat_" << k;
    for (std::size_t k = 1; k <= N; ++k) os << ",v_hat_" << k;
    os << '\n';
    for (std::size_t i = 0; i < tr.size(); ++i) {
        os << format_double(tr.times[i]) << ',' << format_double(tr.E[i]) << ',' << format_double(tr.E_k[i])
           << ',' << format_double(tr.E_p[i]);
        for (double x : tr.snapshots[i].u_hat) os << ',' << format_double(x);
        for (double x : tr.snapshots[i].v_hat) os << ',' << format_double(x);
        os << '\n';
    }
}

}  // namespace signdamp
