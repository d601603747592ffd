#pragma once

// Tempered radii R(t) = int_{-inf}^t phi(s) exp(-int_s^t beta) ds, accumulated
// backward over unit cells; Birkhoff averages; Monte-Carlo means of the
// Bernoulli radius; forward convergence in measure.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "criteria.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "signal.hpp"
#include "wave_pde.hpp"

namespace signdamp {

class NotConverged : public NumericError {
public:
    explicit NotConverged(const std::string& what) : NumericError(what) {}
};

/// One unit cell [s0, s1] seen from its right end:
/// B = int beta, W = int phi(s) exp(-int_s^{s1} beta) ds.
struct CellData {
    double B = 0.0;
    double W = 0.0;
};

/// int_0^L exp(-beta (L - s)) ds.
inline double exp_integral(double beta, double L) noexcept {
    const double x = beta * L;
    if (std::abs(x) < 1e-300) return L;
    return -std::expm1(-x) / beta;
}

struct LemmaRResult {
    double value = 0.0;
    /// Cells accumulated (the lower cutoff is t - depth).
    std::int64_t depth = 0;
    double tail_bound = 0.0;
};

struct LemmaROptions {
    double tol = 1e-12;
    std::int64_t max_depth = 100000;
    /// Extra log-margin in the tail estimate. Backward sums of a random walk
    /// with positive drift can rise again after a quiet stretch; the margin
    /// covers rises of up to e^margin.
    double margin = 30.0;
    std::int64_t min_depth = 16;
};

/// Partial sums at power-of-two depths, for the slope over the deeper half.
class RecentSlope {
public:
    void record(std::int64_t n, double S) noexcept {
        if (std::has_single_bit(static_cast<std::uint64_t>(n))) at_[std::countr_zero(static_cast<std::uint64_t>(n))] = S;
    }
    /// Needs n >= 2 and record() called for every depth up to n.
    [[nodiscard]] double operator()(std::int64_t n, double S) const noexcept {
        const std::uint64_t p = std::bit_floor(static_cast<std::uint64_t>(n)) / 2;
        return (S - at_[std::countr_zero(p)]) / double(static_cast<std::uint64_t>(n) - p);
    }

private:
    std::array<double, 64> at_{};
};

/// Backward accumulation R = sum_j exp(-B_0 - ... - B_{j-1}) W_j, where cell(j)
/// describes [t - j - 1, t - j].
///
/// Tail estimate after n cells: e^{D_n - S_n} max|W| e^margin / (1 - e^{-r_n}),
/// S_n = B_0 + ... + B_{n-1}, D_n the largest drop of S seen so far, which
/// stands in for the dips the deeper history may still hold, and r_n the mean
/// of B over the deeper half of the window (cells p..n-1, p = bit_floor(n)/2).
/// A burst near t inflates S_n / n while S is already falling again, so only
/// the recent slope counts. Accumulation stops once the estimate falls below
/// tol * |R|.
/// Throws NotConverged if that never happens within max_depth or the sum
/// overflows.
template <class CellFn>
LemmaRResult accumulate_cells(CellFn&& cell, const LemmaROptions& opt = {}) {
    LemmaRResult r;
    CompensatedSum value;
    double S = 0.0, peak = 0.0, drop = 0.0;
    double w_max = 0.0;
    RecentSlope slope;
    for (std::int64_t j = 0; j < opt.max_depth; ++j) {
        const CellData c = cell(j);
        value += std::exp(-S) * c.W;
        S += c.B;
        peak = std::max(peak, S);
        drop = std::max(drop, peak - S);
        w_max = std::max(w_max, std::abs(c.W));
        r.depth = j + 1;
        slope.record(r.depth, S);
        const double v = value.value();
        if (!std::isfinite(v) || !std::isfinite(S)) throw NotConverged("lemma_R: accumulation overflowed");
        if (r.depth < std::max<std::int64_t>(opt.min_depth, 2)) continue;
        const double rate = slope(r.depth, S);
        if (!(rate > 0.0)) continue;
        const double tail = std::exp(opt.margin + drop - S) * w_max / -std::expm1(-rate);
        if (tail <= opt.tol * std::abs(v)) {
            r.value = v;
            r.tail_bound = tail;
            return r;
        }
    }
    throw NotConverged("lemma_R: no decay within max depth");
}

namespace detail {

/// Cell data for general callables by integrating y' = -beta y + phi, z' = beta.
inline CellData cell_data_numeric(const std::function<double(double)>& phi,
                                  const std::function<double(double)>& beta, double s0, double s1) {
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 2>;
    State x{0.0, 0.0};
    auto rhs = [&](const State& s, State& d, double t) {
        const double b = beta(t);
        d[0] = -b * s[0] + phi(t);
        d[1] = b;
    };
    odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(1e-13, 1e-13), rhs,
                               x, s0, s1, (s1 - s0) / 64.0);
    return {x[1], x[0]};
}

}  // namespace detail

/// R(t) = int_{-inf}^t phi(s) exp(-int_s^t beta) ds for general callables.
/// Cells are unit intervals ending at t; put discontinuities on cell ends.
inline LemmaRResult lemma_R(const std::function<double(double)>& phi, const std::function<double(double)>& beta,
                            double t, const LemmaROptions& opt = {}) {
    return accumulate_cells(
        [&](std::int64_t j) { return detail::cell_data_numeric(phi, beta, t - double(j) - 1.0, t - double(j)); },
        opt);
}

// ---------------------------------------------------------------------------
// beta_eps

/// nu such that |gamma - gamma_bar|_{L1_b} <= eps. For a Bernoulli path a unit
/// window meets at most two jumps of size <= a + b, each contributing
/// (jump) nu / 2 (the kernel is symmetric), so nu = eps / (a + b) suffices.
/// Other signals halve nu until the measured distance on [0, 20] complies.
inline double mollifier_width(const DampingSignal& signal, double eps) {
    require(eps > 0.0, "mollifier_width: eps must be > 0");
    if (auto* b = signal.get_if<BernoulliPath>()) return std::min(0.5, eps / (b->a + b->b));
    double nu = 0.5;
    for (int i = 0; i < 60; ++i, nu *= 0.5)
        if (l1b_distance(signal, mollify(signal, nu), 0.0, 20.0) <= eps) return nu;
    throw NumericError("mollifier_width: no width found");
}

/// beta_eps(t) = 2 (gbar_+/2 - (p+2)/(p+4) gbar_- - |gamma - gbar| - kappa |gamma| - kappa).
class BetaEps {
public:
    BetaEps(DampingSignal signal, double p, double eps, double kappa)
        : signal_(std::move(signal)), p_(p), kappa_(kappa), nu_(mollifier_width(signal_, eps)),
          bar_(mollify(signal_, nu_)) {
        require(kappa > 0.0, "beta_eps: kappa must be > 0");
        require(p >= 0.0, "beta_eps: p must be >= 0");
    }
    [[nodiscard]] double nu() const noexcept { return nu_; }
    [[nodiscard]] const DampingSignal& gamma_bar() const noexcept { return bar_; }

    double operator()(double t) const {
        const double g = sample(signal_, t), gb = sample(bar_, t);
        return 2.0 * (weighted_integrand(gb, p_) - std::abs(g - gb) - kappa_ * std::abs(g) - kappa_);
    }

private:
    DampingSignal signal_;
    double p_, kappa_, nu_;
    DampingSignal bar_;
};

inline double beta_eps(const DampingSignal& signal, double p, double eps, double kappa, double t) {
    return BetaEps(signal, p, eps, kappa)(t);
}

/// Defaults: eps = 0.05 (a + b), kappa = 0.1 * weighted drift / (1 + a + b).
inline double default_eps(double a, double b) { return 0.05 * (a + b); }
inline double default_kappa(double a, double b, double q, double p) {
    return 0.1 * bernoulli_weighted_drift(a, b, q, p) / (1.0 + a + b);
}

// ---------------------------------------------------------------------------
// Tempered radius of the Bernoulli wave equation

struct RadiusParams {
    double p = 2.0;
    /// eps = 0 uses gamma itself (no mollification).
    double eps = 0.0;
    double kappa = 0.0;
    double g_norm = 0.0;
    double C = 1.0;
};

struct TemperedRadius {
    BernoulliPath eta;
    double t = 0.0;
    double value = 0.0;
    double truncation = 0.0;
    double tail_bound = 0.0;
};

/// Cellwise closed form of the radius integrand along a Bernoulli path.
///
/// On the cell [n, n+1] gamma = eta_n and gamma_bar blends eta_{n-1} into eta_n
/// over [n, n + nu]; beyond that gamma_bar = gamma. The blend depends only on
/// the pair (eta_{n-1}, eta_n), so its contribution is tabulated once per pair.
class BernoulliRadiusCells {
public:
    BernoulliRadiusCells(const BernoulliPath& eta, const RadiusParams& par) : eta_(eta), par_(par) {
        require(eta.a > 0.0 && eta.b > 0.0, "tempered_radius: a, b must be > 0");
        require(eta.q > 0.0 && eta.q <= 1.0, "tempered_radius: q must lie in (0, 1]");
        require(par.eps >= 0.0 && par.kappa >= 0.0, "tempered_radius: eps, kappa must be >= 0");
        require(par.C > 0.0, "tempered_radius: C must be > 0");
        nu_ = par.eps > 0.0 ? std::min(0.5, par.eps / (eta.a + eta.b)) : 0.0;
        for (int x = 0; x < 2; ++x)
            for (int y = 0; y < 2; ++y) zone_[x][y] = nu_ > 0.0 ? zone(value_of(x), value_of(y), nu_) : CellData{};
    }

    [[nodiscard]] double nu() const noexcept { return nu_; }

    /// beta on the part of a cell where gamma_bar = gamma = g.
    [[nodiscard]] double beta_const(double g) const noexcept {
        return 2.0 * (weighted_integrand(g, par_.p) - par_.kappa * std::abs(g) - par_.kappa);
    }
    [[nodiscard]] double phi(double g) const noexcept {
        return 2.0 * par_.C * (1.0 + par_.g_norm * par_.g_norm + std::abs(g));
    }

    /// Full cell [n, n+1].
    [[nodiscard]] CellData cell(std::int64_t n) const {
        const bool y = eta_.positive(n);
        const double g = value_of(y);
        const double bc = beta_const(g), L = 1.0 - nu_;
        CellData c;
        if (nu_ > 0.0) {
            const CellData& z = zone_[eta_.positive(n - 1)][y];
            c.B = z.B + bc * L;
            c.W = phi(g) * (z.W * std::exp(-bc * L) + exp_integral(bc, L));
        } else {
            c.B = bc;
            c.W = phi(g) * exp_integral(bc, 1.0);
        }
        return c;
    }

    /// Partial cell [n, n + L], 0 < L < 1.
    [[nodiscard]] CellData partial(std::int64_t n, double L) const {
        const bool y = eta_.positive(n);
        const double g = value_of(y);
        const double bc = beta_const(g);
        if (nu_ == 0.0) return {bc * L, phi(g) * exp_integral(bc, L)};
        const double x = value_of(eta_.positive(n - 1));
        const CellData z = L >= nu_ ? zone_[eta_.positive(n - 1)][y] : zone(x, g, L);
        const double rest = std::max(0.0, L - nu_);
        return {z.B + bc * rest, phi(g) * (z.W * std::exp(-bc * rest) + exp_integral(bc, rest))};
    }

private:
    BernoulliPath eta_;
    RadiusParams par_;
    double nu_ = 0.0;
    CellData zone_[2][2];

    [[nodiscard]] double value_of(bool positive) const noexcept { return positive ? eta_.a : -eta_.b; }

    /// Blend zone [0, L] (L <= nu) after a jump x -> y, with phi factored out.
    /// Integrates K' = k(s/nu)/nu alongside, so the right-hand side is smooth
    /// apart from the kink of the weighted integrand at gamma_bar = 0.
    [[nodiscard]] CellData zone(double x, double y, double L) const {
        if (x == y) return {beta_const(y) * L, exp_integral(beta_const(y), L)};
        const std::array<double, 6> key{x, y, L, nu_, par_.p, par_.kappa};
        {
            std::lock_guard lock(zone_cache_mutex());
            if (auto it = zone_cache().find(key); it != zone_cache().end()) return it->second;
        }
        namespace odeint = boost::numeric::odeint;
        using State = std::array<double, 3>;  // K, int beta, W
        State st{0.0, 0.0, 0.0};
        auto rhs = [&](const State& v, State& d, double s) {
            const double gb = x * (1.0 - v[0]) + y * v[0];
            const double beta = 2.0 * (weighted_integrand(gb, par_.p) - std::abs(y - gb) -
                                       par_.kappa * std::abs(y) - par_.kappa);
            d[0] = mollifier_kernel(s / nu_) / nu_;
            d[1] = beta;
            d[2] = -beta * v[2] + 1.0;
        };
        odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(1e-14, 1e-14), rhs,
                                   st, 0.0, L, L / 256.0);
        const CellData out{st[1], st[2]};
        std::lock_guard lock(zone_cache_mutex());
        zone_cache().emplace(key, out);
        return out;
    }

    static std::map<std::array<double, 6>, CellData>& zone_cache() {
        static std::map<std::array<double, 6>, CellData> cache;
        return cache;
    }
    static std::mutex& zone_cache_mutex() {
        static std::mutex m;
        return m;
    }
};

/// R_eta(t) with phi = 2C(1 + |g|^2 + |eta|) and beta = beta_eps.
inline TemperedRadius tempered_radius(const BernoulliPath& eta, const RadiusParams& par, double t,
                                      const LemmaROptions& opt = {}) {
    const BernoulliRadiusCells cells(eta, par);
    const double top = std::floor(t);
    const double frac = t - top;
    const auto n_top = static_cast<std::int64_t>(top);
    CellData head{};
    if (frac > 0.0) head = cells.partial(n_top, frac);
    const auto r = accumulate_cells(
        [&](std::int64_t j) {
            if (frac > 0.0) return j == 0 ? head : cells.cell(n_top - j);
            return cells.cell(n_top - 1 - j);
        },
        opt);
    TemperedRadius out;
    out.eta = eta;
    out.t = t;
    out.value = r.value;
    out.truncation = frac > 0.0 ? top - double(r.depth - 1) : top - double(r.depth);
    out.tail_bound = r.tail_bound;
    return out;
}

/// |R(t) - R(tau) e^{-int beta} - int_tau^t phi e^{-int beta}| / R(t) for integers tau < t.
inline double radius_recursion_residual(const BernoulliPath& eta, const RadiusParams& par, std::int64_t tau,
                                        std::int64_t t, const LemmaROptions& opt = {}) {
    require(tau < t, "radius_recursion_residual: need tau < t");
    const BernoulliRadiusCells cells(eta, par);
    const double Rt = tempered_radius(eta, par, double(t), opt).value;
    double R = tempered_radius(eta, par, double(tau), opt).value;
    for (std::int64_t n = tau; n < t; ++n) {
        const auto c = cells.cell(n);
        R = R * std::exp(-c.B) + c.W;
    }
    return std::abs(Rt - R) / Rt;
}

/// log(e^{-theta t} R_eta(-t)) at each t (ascending, integer-valued). The
/// radius at -max(t) comes from lemma_R; later values follow by the forward
/// recursion.
inline std::vector<double> temperedness_probe(const BernoulliPath& eta, const RadiusParams& par, double theta,
                                              std::span<const double> ts, const LemmaROptions& opt = {}) {
    require(!ts.empty() && std::is_sorted(ts.begin(), ts.end()), "temperedness_probe: times must be ascending");
    const BernoulliRadiusCells cells(eta, par);
    auto n_of = [](double x) { return static_cast<std::int64_t>(std::llround(x)); };
    std::int64_t n = -n_of(ts.back());
    double R = tempered_radius(eta, par, double(n), opt).value;
    std::vector<double> out(ts.size());
    for (std::size_t i = ts.size(); i-- > 0;) {
        const std::int64_t target = -n_of(ts[i]);
        for (; n < target; ++n) {
            const auto c = cells.cell(n);
            R = R * std::exp(-c.B) + c.W;
        }
        out[i] = std::log(R) - theta * ts[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo mean of R_eta(0)

struct MeanLevel {
    std::size_t samples = 0;
    double mean = 0.0;
    std::size_t excluded = 0;
};

struct MeanRadiusReport {
    double a = 0.0, b = 0.0, q = 0.0, p = 0.0;
    double exponent = 0.0;
    bool divergence_flag = false;
    std::vector<MeanLevel> levels;
    /// Quantiles 0.5, 0.9, 0.99 and the maximum of the largest sample.
    std::array<double, 4> quantiles{};
    /// R_eta(0) per seed (NaN where excluded), seed i uses derive_seed(seed, i).
    std::vector<double> radii;
};

/// Sample means of R_eta(0) for the radius with beta = 2(eta_+/2 - (p+2)/(p+4) eta_-)
/// and phi = 2(1 + |eta|), the cellwise model whose mean is the geometric series
/// with ratio e^{finite_mean_exponent}. Levels are nested: M, 10M and, when the
/// exponent is positive, 100M. Samples that fail to converge are excluded and
/// counted.
inline MeanRadiusReport mean_radius_mc(double a, double b, double q, double p, std::size_t M, double tol = 1e-12,
                                       std::uint64_t seed = 1, std::size_t workers = 1) {
    detail::check_bernoulli(a, b, q, p);
    require(M >= 1, "mean_radius_mc: M must be >= 1");
    MeanRadiusReport rep;
    rep.a = a, rep.b = b, rep.q = q, rep.p = p;
    rep.exponent = finite_mean_exponent(a, b, q, p);
    rep.divergence_flag = classify_mean_exponent(rep.exponent) != MeanRadiusRegime::FiniteMeanRadius;

    std::vector<std::size_t> sizes{M, 10 * M};
    if (rep.divergence_flag) sizes.push_back(100 * M);
    const std::size_t total = sizes.back();
    rep.radii.assign(total, std::numeric_limits<double>::quiet_NaN());
    RadiusParams par;
    par.p = p;
    LemmaROptions opt;
    opt.tol = tol;
    parallel_for(total, workers, [&](std::size_t i) {
        try {
            rep.radii[i] = tempered_radius(BernoulliPath{a, b, q, derive_seed(seed, i), 0}, par, 0.0, opt).value;
        } catch (const NotConverged&) {
        }
    });

    CompensatedSum sum;
    std::size_t used = 0, excluded = 0, next = 0;
    for (std::size_t i = 0; i < total; ++i) {
        if (std::isnan(rep.radii[i]))
            ++excluded;
        else {
            sum += rep.radii[i];
            ++used;
        }
        if (i + 1 == sizes[next]) {
            rep.levels.push_back({i + 1, used ? sum.value() / double(used) : 0.0, excluded});
            ++next;
        }
    }
    std::vector<double> sorted;
    sorted.reserve(used);
    for (double r : rep.radii)
        if (!std::isnan(r)) sorted.push_back(r);
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty())
        rep.quantiles = {quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.9), quantile_sorted(sorted, 0.99),
                         sorted.back()};
    return rep;
}

struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
};

/// Monte-Carlo estimate of E[exp(-eta_+ + 2(p+2)/(p+4) eta_-)] over single cells.
inline McEstimate geometric_factor_mc(double a, double b, double q, double p, std::size_t samples,
                                      std::uint64_t seed = 1) {
    detail::check_bernoulli(a, b, q, p);
    require(samples >= 2, "geometric_factor_mc: need at least two samples");
    const BernoulliPath eta{a, b, q, seed, 0};
    const double c = 2.0 * (p + 2.0) / (p + 4.0);
    CompensatedSum s, s2;
    for (std::size_t i = 0; i < samples; ++i) {
        const double x = eta.positive(std::int64_t(i)) ? std::exp(-a) : std::exp(c * b);
        s += x;
        s2 += x * x;
    }
    const double n = double(samples);
    const double mean = s.value() / n;
    const double var = std::max(0.0, (s2.value() - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// Birkhoff averages

/// (1/T) int_{-T}^0 f(gamma(s)) ds, exact on piecewise-constant signals.
template <class F>
double birkhoff_average(const DampingSignal& signal, F&& f, double T) {
    require(T > 0.0, "birkhoff_average: T must be > 0");
    if (auto ps = pieces(signal, -T, 0.0)) {
        CompensatedSum s;
        for (const auto& pc : *ps) s += f(pc.value) * (pc.t1 - pc.t0);
        return s.value() / T;
    }
    return integrate_functional(signal, f, -T, 0.0) / T;
}

// ---------------------------------------------------------------------------
// Forward convergence in measure

/// For each time t_i, the fraction of seeds whose distance exceeds delta.
/// `distances(seed_index)` returns the distances at all times for one seed.
template <class DistFn>
std::vector<double> forward_convergence_in_measure(std::size_t seeds, std::size_t n_times, double delta,
                                                   DistFn&& distances, std::size_t workers = 1) {
    require(seeds >= 1, "forward_convergence_in_measure: need at least one seed");
    std::vector<std::vector<double>> d(seeds);
    parallel_for(seeds, workers, [&](std::size_t i) {
        d[i] = distances(i);
        require(d[i].size() == n_times, "forward_convergence_in_measure: wrong number of distances");
    });
    std::vector<double> frac(n_times, 0.0);
    for (std::size_t k = 0; k < n_times; ++k) {
        std::size_t over = 0;
        for (const auto& row : d) over += row[k] > delta;
        frac[k] = double(over) / double(seeds);
    }
    return frac;
}

/// Wave version. Seed i drives the equation with Bernoulli(a, b, q,
/// derive_seed(seed, i)); the trajectory from `initial` at time 0 is compared at
/// each t with the attractor proxy: the trajectory started from zero data at
/// t - reference_depth.
inline std::vector<double> wave_forward_convergence(WaveProblem problem, double a, double b, double q,
                                                    std::uint64_t seed, std::size_t seeds,
                                                    const SpectralState& initial, std::span<const double> times,
                                                    double delta, double reference_depth,
                                                    const WaveOptions& opt = {}, std::size_t workers = 1) {
    require(std::is_sorted(times.begin(), times.end()), "wave_forward_convergence: times must be ascending");
    return forward_convergence_in_measure(
        seeds, times.size(), delta,
        [&](std::size_t i) {
            WaveProblem pb = problem;
            pb.signal = DampingSignal::bernoulli(a, b, q, derive_seed(seed, i));
            WaveSolver solver(pb, initial.N(), opt), ref(pb, initial.N(), opt);
            SpectralState s = initial;
            s.t = 0.0;
            std::vector<double> out;
            for (double t : times) {
                solver.advance(s, t);
                s.t = t;
                SpectralState r(initial.N(), t - reference_depth);
                ref.advance(r, t);
                r.t = t;
                out.push_back(energy_distance(s, r));
            }
            return out;
        },
        workers);
}

}  // namespace signdamp
