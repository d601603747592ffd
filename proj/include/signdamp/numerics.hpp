#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "errors.hpp"

namespace signdamp {

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Neumaier compensated summation. Order-insensitive to ~1 ulp of the total.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    CompensatedSum& operator+=(double x) noexcept {
        add(x);
        return *this;
    }
    void merge(const CompensatedSum& other) noexcept {
        add(other.sum_);
        add(other.comp_);
    }
    [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Adaptive Gauss-Kronrod (31 point) on [a, b].
template <class F>
double integrate(F&& f, double a, double b, double rel_tol = 1e-12, unsigned max_depth = 20) {
    if (a == b) return 0.0;
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, a, b, max_depth, rel_tol, &err);
    if (!std::isfinite(v)) throw NumericError("integrate: non-finite result");
    return v;
}

/// Integrates over [a, b] splitting at the given interior breakpoints, where the
/// integrand may fail to be smooth.
template <class F>
double integrate_split(F&& f, double a, double b, std::span<const double> breaks,
                       double rel_tol = 1e-12, unsigned max_depth = 20) {
    std::vector<double> pts{a};
    for (double x : breaks)
        if (x > a && x < b) pts.push_back(x);
    pts.push_back(b);
    std::sort(pts.begin(), pts.end());
    CompensatedSum s;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        if (pts[i + 1] > pts[i]) s += integrate(f, pts[i], pts[i + 1], rel_tol, max_depth);
    return s.value();
}

/// log(exp(x) + exp(y)) without overflow; -inf is the neutral element.
inline double log_add_exp(double x, double y) noexcept {
    if (x == -std::numeric_limits<double>::infinity()) return y;
    if (y == -std::numeric_limits<double>::infinity()) return x;
    const double m = std::max(x, y);
    return m + std::log1p(std::exp(-std::abs(x - y)));
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "fit_line: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw DiagnosticError("fit_line: need at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DiagnosticError("fit_line: degenerate abscissae");
    LinearFit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (n > 2) {
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - f.intercept - f.slope * x[i];
            ss += r * r;
        }
        f.slope_stderr = std::sqrt(ss / double(n - 2) / sxx);
    }
    return f;
}

/// Trapezoidal mean of y over the abscissae x.
inline double trapezoid_mean(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, "trapezoid_mean: need two samples");
    CompensatedSum s;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) s += 0.5 * (y[i] + y[i + 1]) * (x[i + 1] - x[i]);
    return s.value() / (x.back() - x.front());
}

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Empirical quantile with linear interpolation; `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
    require(!sorted.empty(), "quantile: empty sample");
    const double pos = prob * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace signdamp
