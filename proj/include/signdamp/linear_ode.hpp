#pragma once

// y'' + gamma(t) y' + omega^2 y = 0 on the column state (y, y').

#include <array>
#include <cmath>
#include <complex>
#include <functional>

#include <boost/numeric/odeint.hpp>

#include "errors.hpp"
#include "numerics.hpp"
#include "signal.hpp"

namespace signdamp {

struct Mat2 {
    double a = 1.0, b = 0.0;  // row 0
    double c = 0.0, d = 1.0;  // row 1

    static Mat2 identity() { return {}; }
    static Mat2 diag(double x, double y) { return {x, 0.0, 0.0, y}; }

    [[nodiscard]] double det() const noexcept { return a * d - b * c; }
    [[nodiscard]] double trace() const noexcept { return a + d; }
    [[nodiscard]] double max_abs() const noexcept {
        return std::max(std::max(std::abs(a), std::abs(b)), std::max(std::abs(c), std::abs(d)));
    }
    [[nodiscard]] std::array<double, 2> apply(double x, double y) const noexcept {
        return {a * x + b * y, c * x + d * y};
    }

    friend Mat2 operator*(const Mat2& L, const Mat2& R) noexcept {
        return {L.a * R.a + L.b * R.c, L.a * R.b + L.b * R.d, L.c * R.a + L.d * R.c,
                L.c * R.b + L.d * R.d};
    }
    friend Mat2 operator-(const Mat2& L, const Mat2& R) noexcept {
        return {L.a - R.a, L.b - R.b, L.c - R.c, L.d - R.d};
    }
};

/// exp(A tau) for A = [[0, 1], [-omega2, -g]].
///
/// With M = A + g/2 I one has M^2 = Delta I, Delta = g^2/4 - omega2, so
/// exp(A tau) = e^{-g tau / 2} (C I + S M) where C, S are the even/odd parts of
/// the scalar exponential. A Taylor branch covers |Delta| tau^2 small, where the
/// closed forms lose digits to cancellation.
inline Mat2 constant_piece_exponential(double g, double omega2, double tau) {
    require(tau >= 0.0, "constant_piece_exponential: tau must be >= 0");
    const double delta = 0.25 * g * g - omega2;
    const double x = delta * tau * tau;
    double eC, eS;  // e^{-g tau/2} C and e^{-g tau/2} S
    if (std::abs(x) < 0.25) {
        double c = 0.0, s = 0.0, term = 1.0;
        for (int k = 0; k < 30; ++k) {
            // term = x^k / (2k)!
            c += term;
            s += term / double(2 * k + 1);
            term *= x / double((2 * k + 1) * (2 * k + 2));
            if (std::abs(term) < 1e-18 * std::abs(c)) break;
        }
        const double e = std::exp(-0.5 * g * tau);
        eC = e * c;
        eS = e * s * tau;
    } else if (delta > 0.0) {
        const double s = std::sqrt(delta);
        const double e1 = std::exp((-0.5 * g + s) * tau);
        const double e2 = std::exp((-0.5 * g - s) * tau);
        eC = 0.5 * (e1 + e2);
        eS = 0.5 * (e1 - e2) / s;
    } else {
        const double w = std::sqrt(-delta);
        const double e = std::exp(-0.5 * g * tau);
        eC = e * std::cos(w * tau);
        eS = e * std::sin(w * tau) / w;
    }
    return {eC + eS * 0.5 * g, eS, -omega2 * eS, eC - eS * 0.5 * g};
}

/// Solution matrix U(t1, t0) as the ordered product of exact piece exponentials.
inline Mat2 propagate_linear(const DampingSignal& signal, double omega, double t0, double t1) {
    require(t1 >= t0, "propagate_linear: t1 < t0");
    require(std::isfinite(omega), "propagate_linear: omega must be finite");
    auto ps = pieces(signal, t0, t1);
    if (!ps)
        throw ContractError(
            "propagate_linear: signal is not piecewise constant; use fundamental_matrix");
    Mat2 U;
    const double w2 = omega * omega;
    for (const Piece& p : *ps) U = constant_piece_exponential(p.value, w2, p.t1 - p.t0) * U;
    return U;
}

struct MonodromyResult {
    Mat2 matrix;
    std::complex<double> multiplier_plus;
    std::complex<double> multiplier_minus;
    double mu_plus = 0.0;
    double mu_minus = 0.0;
    double period = 0.0;
};

/// Eigenvalues of a real 2x2 matrix, larger modulus first.
inline std::array<std::complex<double>, 2> eigenvalues(const Mat2& P) {
    const double half_tr = 0.5 * P.trace();
    const double det = P.det();
    const double disc = half_tr * half_tr - det;
    if (disc >= 0.0) {
        const double r = std::sqrt(disc);
        const double big = half_tr >= 0.0 ? half_tr + r : half_tr - r;
        const double small = big != 0.0 ? det / big : 0.0;
        return {std::complex<double>(big), std::complex<double>(small)};
    }
    const double im = std::sqrt(-disc);
    return {std::complex<double>(half_tr, im), std::complex<double>(half_tr, -im)};
}

inline MonodromyResult monodromy_from_matrix(const Mat2& P, double period) {
    MonodromyResult r;
    r.matrix = P;
    r.period = period;
    const auto ev = eigenvalues(P);
    r.multiplier_plus = ev[0];
    r.multiplier_minus = ev[1];
    if (ev[0].imag() != 0.0) {
        // Complex pair: equal moduli sqrt(det).
        r.mu_plus = r.mu_minus = 0.5 * std::log(std::abs(P.det())) / period;
    } else {
        r.mu_plus = std::log(std::abs(ev[0])) / period;
        r.mu_minus = std::log(std::abs(ev[1])) / period;
    }
    return r;
}

inline MonodromyResult monodromy(const DampingSignal& signal, double omega) {
    const auto T = signal.period();
    if (!T) throw ContractError("monodromy: signal has no declared period");
    double t0 = 0.0;
    if (auto* pc = signal.get_if<PiecewiseConstant>()) t0 = pc->knots.front();
    return monodromy_from_matrix(propagate_linear(signal, omega, t0, t0 + *T), *T);
}

/// diag(e^b, e^{-a}): period map of the kick train in the h -> 0 limit.
inline Mat2 kick_period_map_limit(double a, double b) {
    require(a >= 0.0 && b >= 0.0, "kick_period_map_limit: a, b must be >= 0");
    return Mat2::diag(std::exp(b), std::exp(-a));
}

/// Fundamental matrix of y'' + damping(t) y' + stiffness(t) y = 0 on [t0, t1]
/// with an adaptive Dormand-Prince integrator, for smooth coefficients.
template <class Damping, class Stiffness>
Mat2 fundamental_matrix(Damping&& damping, Stiffness&& stiffness, double t0, double t1,
                        double tol = 1e-12) {
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 4>;  // columns (y, y') for e1 and e2
    State x{1.0, 0.0, 0.0, 1.0};
    auto rhs = [&](const State& s, State& dx, double t) {
        const double g = damping(t);
        const double k = stiffness(t);
        dx[0] = s[1];
        dx[1] = -g * s[1] - k * s[0];
        dx[2] = s[3];
        dx[3] = -g * s[3] - k * s[2];
    };
    odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(tol, tol),
                               rhs, x, t0, t1, (t1 - t0) / 1000.0);
    for (double v : x)
        if (!std::isfinite(v)) throw NumericError("fundamental_matrix: non-finite state");
    return {x[0], x[2], x[1], x[3]};
}

/// psi(t) = 1/4 (gamma0^2 - gamma(t)^2 - 2 gamma'(t)). With
/// y = e^{-1/2 int (gamma - gamma0)} z the damped equation becomes
/// z'' + gamma0 z' + (omega^2 + psi(t)) z = 0.
inline std::function<double(double)> mathieu_hill_transform(std::function<double(double)> gamma,
                                                            std::function<double(double)> gamma_prime,
                                                            double gamma0) {
    return [g = std::move(gamma), gp = std::move(gamma_prime), gamma0](double t) {
        const double v = g(t);
        return 0.25 * (gamma0 * gamma0 - v * v - 2.0 * gp(t));
    };
}

}  // namespace signdamp
