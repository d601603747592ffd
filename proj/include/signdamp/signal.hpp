#pragma once

// Damping-rate signals gamma(t): constant, piecewise constant, kick trains,
// two-sided Bernoulli paths and their mollifications.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace signdamp {

enum class Extension { Periodic, Clamped };

struct Constant {
    double value = 0.0;
};

/// values[i] holds on [knots[i], knots[i+1]).
struct PiecewiseConstant {
    std::vector<double> knots;
    std::vector<double> values;
    Extension extension = Extension::Periodic;
};

/// 2*pi-periodic kick train: a/h on [0, h), -b/h on [at, at + h), zero elsewhere.
struct KickTrain {
    double a = 0.0;
    double b = 0.0;
    double h = 0.0;
    double negative_kick_at = kPi;
    static constexpr double period = kTwoPi;
};

/// gamma(t) = eta_floor(t) with eta_n = a (probability q) or -b, drawn from a
/// keyed splitmix64 stream so that any cell is addressable directly.
struct BernoulliPath {
    double a = 1.0;
    double b = 1.0;
    double q = 0.5;
    std::uint64_t seed = 0;
    std::int64_t offset = 0;

    [[nodiscard]] bool positive(std::int64_t n) const noexcept {
        return unit_double(keyed_word(seed, n + offset)) < q;
    }
    [[nodiscard]] double cell(std::int64_t n) const noexcept { return positive(n) ? a : -b; }
    /// (T_m eta)(t) = eta(t + m).
    [[nodiscard]] BernoulliPath shifted(std::int64_t m) const noexcept {
        BernoulliPath s = *this;
        s.offset += m;
        return s;
    }
};

class DampingSignal;

struct Mollified {
    std::shared_ptr<const DampingSignal> base;
    double nu = 0.0;
};

/// A constant-valued piece [t0, t1) of a signal.
struct Piece {
    double t0;
    double t1;
    double value;
};

class DampingSignal {
public:
    using Variant = std::variant<Constant, PiecewiseConstant, KickTrain, BernoulliPath, Mollified>;

    static DampingSignal constant(double c) {
        require(std::isfinite(c), "constant signal must be finite");
        return DampingSignal(Constant{c});
    }

    static DampingSignal piecewise(std::vector<double> knots, std::vector<double> values,
                                   Extension ext = Extension::Periodic) {
        require(knots.size() >= 2, "piecewise signal needs at least two knots");
        require(values.size() + 1 == knots.size(), "piecewise signal needs knots.size()-1 values");
        for (std::size_t i = 0; i + 1 < knots.size(); ++i)
            require(knots[i] < knots[i + 1], "piecewise knots must be strictly increasing");
        for (double v : values) require(std::isfinite(v), "piecewise values must be finite");
        return DampingSignal(PiecewiseConstant{std::move(knots), std::move(values), ext});
    }

    static DampingSignal kick_train(double a, double b, double h, double negative_kick_at = kPi) {
        require(a >= 0.0 && b >= 0.0, "kick train needs a, b >= 0");
        require(h > 0.0 && h < kPi, "kick train needs 0 < h < pi");
        require(negative_kick_at >= h && negative_kick_at + h <= kTwoPi,
                "kick train: kicks must not overlap within one period");
        return DampingSignal(KickTrain{a, b, h, negative_kick_at});
    }

    /// Kick train whose negative kick sits a quarter oscillation (pi / (2 omega))
    /// after the positive one. For 2*omega a positive integer both free
    /// rotations swap y and y', and the period map tends to diag(e^b, e^-a).
    static DampingSignal extremal_kick_train(double a, double b, double h, double omega) {
        require(omega > 0.0, "extremal kick train needs omega > 0");
        return kick_train(a, b, h, kPi / (2.0 * omega));
    }

    static DampingSignal bernoulli(const BernoulliPath& path) {
        require(path.a > 0.0 && path.b > 0.0, "Bernoulli path needs a > 0 and b > 0");
        require(path.q > 0.0 && path.q < 1.0, "Bernoulli path needs 0 < q < 1");
        return DampingSignal(path);
    }
    static DampingSignal bernoulli(double a, double b, double q, std::uint64_t seed) {
        return bernoulli(BernoulliPath{a, b, q, seed, 0});
    }

    static DampingSignal mollified(DampingSignal base, double nu) {
        require(nu > 0.0 && std::isfinite(nu), "mollifier width must be positive");
        return DampingSignal(
            Mollified{std::make_shared<const DampingSignal>(std::move(base)), nu});
    }

    [[nodiscard]] const Variant& variant() const noexcept { return v_; }

    template <class T>
    [[nodiscard]] const T* get_if() const noexcept {
        return std::get_if<T>(&v_);
    }

    [[nodiscard]] bool is_piecewise_constant() const noexcept {
        return !std::holds_alternative<Mollified>(v_);
    }

    /// Declared period, if the signal has one.
    [[nodiscard]] std::optional<double> period() const {
        if (std::holds_alternative<KickTrain>(v_)) return KickTrain::period;
        if (auto* pc = std::get_if<PiecewiseConstant>(&v_); pc && pc->extension == Extension::Periodic)
            return pc->knots.back() - pc->knots.front();
        if (auto* m = std::get_if<Mollified>(&v_)) return m->base->period();
        return std::nullopt;
    }

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Constant>)
                    os << "constant(" << s.value << ")";
                else if constexpr (std::is_same_v<T, PiecewiseConstant>)
                    os << "piecewise(" << s.values.size() << " pieces, "
                       << (s.extension == Extension::Periodic ? "periodic" : "clamped") << ")";
                else if constexpr (std::is_same_v<T, KickTrain>)
                    os << "kick(a=" << s.a << ",b=" << s.b << ",h=" << s.h
                       << ",at=" << s.negative_kick_at << ")";
                else if constexpr (std::is_same_v<T, BernoulliPath>)
                    os << "bernoulli(a=" << s.a << ",b=" << s.b << ",q=" << s.q
                       << ",seed=" << s.seed << ",offset=" << s.offset << ")";
                else
                    os << "mollified(" << s.base->describe() << ",nu=" << s.nu << ")";
            },
            v_);
        return os.str();
    }

private:
    explicit DampingSignal(Variant v) : v_(std::move(v)) {}
    Variant v_;
};

// ---------------------------------------------------------------------------
// Mollifier kernel k(s) = C exp(-1/(s(1-s))) on (0, 1), unit mass.

namespace detail {

inline double bump_raw(double s) noexcept {
    if (s <= 0.0 || s >= 1.0) return 0.0;
    return std::exp(-1.0 / (s * (1.0 - s)));
}

/// Cumulative integral of bump_raw on a uniform grid, built once. Interpolated
/// with cubic Hermite using the exact derivative bump_raw at the nodes.
struct BumpTable {
    static constexpr int kCells = 4096;
    std::vector<double> cum;
    double mass = 0.0;

    BumpTable() : cum(kCells + 1, 0.0) {
        constexpr double h = 1.0 / kCells;
        CompensatedSum acc;
        for (int i = 0; i < kCells; ++i) {
            acc += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
                bump_raw, i * h, (i + 1) * h, 0, 0.0);
            cum[i + 1] = acc.value();
        }
        mass = cum.back();
    }

    [[nodiscard]] double cdf_raw(double x) const noexcept {
        constexpr double h = 1.0 / kCells;
        const int i = std::min(kCells - 1, static_cast<int>(x * kCells));
        const double x0 = i * h;
        const double t = (x - x0) / h;
        const double t2 = t * t;
        const double t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * cum[i] + (t3 - 2 * t2 + t) * h * bump_raw(x0) +
               (-2 * t3 + 3 * t2) * cum[i + 1] + (t3 - t2) * h * bump_raw(x0 + h);
    }
};

inline const BumpTable& bump_table() {
    static const BumpTable table;
    return table;
}

}  // namespace detail

/// Unit-mass smooth bump supported on [0, 1].
inline double mollifier_kernel(double s) { return detail::bump_raw(s) / detail::bump_table().mass; }

/// K(x) = integral of the kernel over [0, x], clamped to [0, 1].
inline double mollifier_cdf(double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    if (x > 0.5) return 1.0 - mollifier_cdf(1.0 - x);
    const auto& tab = detail::bump_table();
    return tab.cdf_raw(x) / tab.mass;
}

// ---------------------------------------------------------------------------

namespace detail {

inline double floor_mod(double x, double p) {
    double r = std::fmod(x, p);
    if (r < 0.0) r += p;
    return r;
}

inline double sample_piecewise(const PiecewiseConstant& s, double t) {
    const double t0 = s.knots.front();
    const double tm = s.knots.back();
    double x = t;
    if (s.extension == Extension::Periodic) {
        x = t0 + floor_mod(t - t0, tm - t0);
    } else {
        if (t < t0 || t > tm) throw DomainError("sample: t outside clamped signal domain");
        if (t == tm) return s.values.back();
    }
    auto it = std::upper_bound(s.knots.begin(), s.knots.end(), x);
    const auto idx = static_cast<std::size_t>(std::distance(s.knots.begin(), it)) - 1;
    return s.values[std::min(idx, s.values.size() - 1)];
}

inline double sample_kick(const KickTrain& s, double t) {
    const double tau = floor_mod(t, KickTrain::period);
    if (tau < s.h) return s.a / s.h;
    if (tau >= s.negative_kick_at && tau < s.negative_kick_at + s.h) return -s.b / s.h;
    return 0.0;
}

inline void push_clipped(std::vector<Piece>& out, double a, double b, double v, double t0, double t1) {
    const double lo = std::max(a, t0);
    const double hi = std::min(b, t1);
    if (hi > lo) out.push_back({lo, hi, v});
}

}  // namespace detail

std::optional<std::vector<Piece>> pieces(const DampingSignal& signal, double t0, double t1);
double sample(const DampingSignal& signal, double t);

/// Constant pieces covering [t0, t1] in increasing order, or nullopt for smooth
/// (mollified) signals.
inline std::optional<std::vector<Piece>> pieces(const DampingSignal& signal, double t0, double t1) {
    require(t1 >= t0, "pieces: t1 < t0");
    std::vector<Piece> out;
    if (t1 == t0) return out;
    const auto& v = signal.variant();
    if (auto* c = std::get_if<Constant>(&v)) {
        out.push_back({t0, t1, c->value});
    } else if (auto* pc = std::get_if<PiecewiseConstant>(&v)) {
        const double k0 = pc->knots.front();
        const double km = pc->knots.back();
        if (pc->extension == Extension::Clamped) {
            if (t0 < k0 || t1 > km) throw DomainError("pieces: range outside clamped signal domain");
            for (std::size_t i = 0; i < pc->values.size(); ++i)
                detail::push_clipped(out, pc->knots[i], pc->knots[i + 1], pc->values[i], t0, t1);
        } else {
            const double P = km - k0;
            auto m0 = static_cast<std::int64_t>(std::floor((t0 - k0) / P));
            auto m1 = static_cast<std::int64_t>(std::floor((t1 - k0) / P));
            for (std::int64_t m = m0; m <= m1; ++m) {
                const double shift = double(m) * P;
                for (std::size_t i = 0; i < pc->values.size(); ++i)
                    detail::push_clipped(out, pc->knots[i] + shift, pc->knots[i + 1] + shift,
                                         pc->values[i], t0, t1);
            }
        }
    } else if (auto* k = std::get_if<KickTrain>(&v)) {
        const double P = KickTrain::period;
        auto m0 = static_cast<std::int64_t>(std::floor(t0 / P));
        auto m1 = static_cast<std::int64_t>(std::floor(t1 / P));
        for (std::int64_t m = m0; m <= m1; ++m) {
            const double s = double(m) * P;
            const double at = k->negative_kick_at;
            detail::push_clipped(out, s, s + k->h, k->a / k->h, t0, t1);
            detail::push_clipped(out, s + k->h, s + at, 0.0, t0, t1);
            detail::push_clipped(out, s + at, s + at + k->h, -k->b / k->h, t0, t1);
            detail::push_clipped(out, s + at + k->h, s + P, 0.0, t0, t1);
        }
    } else if (auto* bp = std::get_if<BernoulliPath>(&v)) {
        auto n0 = static_cast<std::int64_t>(std::floor(t0));
        auto n1 = static_cast<std::int64_t>(std::ceil(t1));
        out.reserve(static_cast<std::size_t>(n1 - n0));
        for (std::int64_t n = n0; n < n1; ++n)
            detail::push_clipped(out, double(n), double(n + 1), bp->cell(n), t0, t1);
    } else {
        return std::nullopt;
    }
    return out;
}

/// Points in (t0, t1) where the signal, or an integrand built from it, may fail
/// to be smooth.
inline std::vector<double> breakpoints(const DampingSignal& signal, double t0, double t1) {
    std::vector<double> br;
    if (auto ps = pieces(signal, t0, t1)) {
        for (std::size_t i = 1; i < ps->size(); ++i) br.push_back((*ps)[i].t0);
        return br;
    }
    const auto& m = std::get<Mollified>(signal.variant());
    for (double x : breakpoints(*m.base, t0 - m.nu, t1)) {
        if (x > t0 && x < t1) br.push_back(x);
        if (x + m.nu > t0 && x + m.nu < t1) br.push_back(x + m.nu);
    }
    std::sort(br.begin(), br.end());
    br.erase(std::unique(br.begin(), br.end()), br.end());
    return br;
}

/// gamma(t).
inline double sample(const DampingSignal& signal, double t) {
    const auto& v = signal.variant();
    if (auto* c = std::get_if<Constant>(&v)) return c->value;
    if (auto* pc = std::get_if<PiecewiseConstant>(&v)) return detail::sample_piecewise(*pc, t);
    if (auto* k = std::get_if<KickTrain>(&v)) return detail::sample_kick(*k, t);
    if (auto* bp = std::get_if<BernoulliPath>(&v))
        return bp->cell(static_cast<std::int64_t>(std::floor(t)));
    const auto& m = std::get<Mollified>(v);
    // gamma_bar(t) = int_0^nu k_nu(s) gamma(t - s) ds.
    if (auto ps = pieces(*m.base, t - m.nu, t)) {
        CompensatedSum acc;
        for (const Piece& p : *ps)
            acc += p.value * (mollifier_cdf((t - p.t0) / m.nu) - mollifier_cdf((t - p.t1) / m.nu));
        return acc.value();
    }
    std::vector<double> br;
    for (double x : breakpoints(*m.base, t - m.nu, t)) br.push_back(t - x);
    return integrate_split(
        [&](double s) { return mollifier_kernel(s / m.nu) / m.nu * sample(*m.base, t - s); }, 0.0,
        m.nu, br, 1e-12);
}

/// Mollified signal gamma_bar = k_nu * gamma with the causal bump kernel.
inline DampingSignal mollify(const DampingSignal& signal, double nu) {
    return DampingSignal::mollified(signal, nu);
}

/// (gamma_+(t), gamma_-(t)).
inline std::pair<double, double> positive_negative_parts(double g) noexcept {
    return {g > 0.0 ? g : 0.0, g < 0.0 ? -g : 0.0};
}
inline std::pair<double, double> positive_negative_parts(const DampingSignal& signal, double t) {
    return positive_negative_parts(sample(signal, t));
}

}  // namespace signdamp
