#pragma once

// Sine transform between N mode coefficients on (0, pi) and values on the
// interior grid x_j = j pi / M, j = 1..M-1. Backed by FFTW's RODFT00 (DST-I).

#include <fftw3.h>

#include <algorithm>
#include <cstddef>
#include <mutex>
#include <span>

#include "errors.hpp"

namespace signdamp {

namespace detail {
// FFTW's planner is not re-entrant; execution on distinct arrays is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

class SineTransform {
public:
    /// N modes, M grid cells (M - 1 interior points). Requires M > N.
    SineTransform(std::size_t modes, std::size_t cells) : N_(modes), M_(cells) {
        require(modes >= 1 && cells > modes, "SineTransform: need cells > modes >= 1");
        const int n = static_cast<int>(M_ - 1);
        in_ = fftw_alloc_real(M_ - 1);
        out_ = fftw_alloc_real(M_ - 1);
        std::lock_guard lock(detail::fftw_planner_mutex());
        plan_ = fftw_plan_r2r_1d(n, in_, out_, FFTW_RODFT00, FFTW_ESTIMATE);
        if (!plan_) throw NumericError("SineTransform: FFTW planning failed");
    }
    SineTransform(const SineTransform&) = delete;
    SineTransform& operator=(const SineTransform&) = delete;
    ~SineTransform() {
        {
            std::lock_guard lock(detail::fftw_planner_mutex());
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }

    [[nodiscard]] std::size_t modes() const noexcept { return N_; }
    [[nodiscard]] std::size_t cells() const noexcept { return M_; }
    [[nodiscard]] std::size_t points() const noexcept { return M_ - 1; }

    /// u(x_j) = sum_k c_k sin(k x_j).
    void synthesize(std::span<const double> coeffs, std::span<double> values) {
        std::fill(in_, in_ + (M_ - 1), 0.0);
        std::copy_n(coeffs.begin(), std::min(coeffs.size(), N_), in_);
        fftw_execute(plan_);
        for (std::size_t j = 0; j < M_ - 1; ++j) values[j] = 0.5 * out_[j];
    }

    /// c_k = (2/M) sum_j u(x_j) sin(k x_j), k = 1..N: the L2 projection for
    /// trigonometric data of degree < M.
    void analyze(std::span<const double> values, std::span<double> coeffs) {
        std::copy_n(values.begin(), M_ - 1, in_);
        fftw_execute(plan_);
        const double s = 1.0 / double(M_);
        for (std::size_t k = 0; k < N_; ++k) coeffs[k] = s * out_[k];
    }

private:
    std::size_t N_, M_;
    double* in_ = nullptr;
    double* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

}  // namespace signdamp
