#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <signdamp/toy_model.hpp>

using namespace signdamp;
using Catch::Approx;

namespace {

BernoulliPath constant_path(double c) { return BernoulliPath{c, 1.0, 1.0, 0, 0}; }

std::vector<double> attractor_point(const ToyAttractor& A) {
    std::vector<double> x{A.u1};
    for (int k = 2; k <= A.K; ++k) x.push_back(A.half_width(k));
    return x;
}

}  // namespace

TEST_CASE("u1 closed form", "[toy][u1]") {
    CHECK(u1_tempered(constant_path(1.0), 0.0) == Approx(1.0).epsilon(1e-12));
    CHECK(u1_tempered(constant_path(2.5), -3.3) == Approx(0.4).epsilon(1e-12));

    for (std::uint64_t s = 0; s < 5; ++s) {
        const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(3, s), 0};
        // Forward integration of u1' + eta u1 = 1 from arbitrary data at -50.
        double u = 7.0;
        for (std::int64_t n = -50; n < 0; ++n) u = detail::u1_after(u, eta.cell(n), 1.0);
        const double closed = u1_tempered(eta, 0.0);
        CHECK(std::abs(u - closed) <= 1e-8 * std::max(1.0, closed));
        for (double t : {0.0, 0.375, -6.0})
            CHECK(u1_tempered(eta, t + 2.0) == u1_tempered(eta.shifted(2), t));
    }

    // Drift condition violated: no decay.
    LemmaROptions opt;
    opt.max_depth = 5000;
    CHECK_THROWS_AS(u1_tempered(BernoulliPath{0.5, 2.0, 0.5, 4, 0}, 0.0, opt), NotConverged);
}

TEST_CASE("u_k closed form", "[toy][uk]") {
    SECTION("constant paths") {
        // eta = 1 gives u1 = 1 < k^4: only the zero equilibrium.
        const auto zero = uk_tempered(constant_path(1.0), 2, 0.0);
        CHECK(zero.status == ToyStatus::DivergedIntegral);
        CHECK(zero.value() == 0.0);
        // u1 = 17: u_2 = sqrt(17 - 16) = 1, u_3 = 0.
        const auto c17 = constant_path(1.0 / 17.0);
        CHECK(uk_tempered(c17, 2, 0.0).value() == Approx(1.0).epsilon(1e-10));
        CHECK(uk_tempered(c17, 3, 0.0).value() == 0.0);
        const auto c300 = constant_path(1.0 / 300.0);
        CHECK(uk_tempered(c300, 3, 0.5).value() == Approx(std::sqrt(300.0 - 81.0)).epsilon(1e-10));
    }

    SECTION("log domain against direct evaluation") {
        for (std::uint64_t s = 0; s < 3; ++s) {
            const BernoulliPath eta{0.05, 0.01, 0.8, derive_seed(12, s), 0};
            U1History u1(eta);
            for (double t : {0.0, -2.5}) {
                const auto r = uk_tempered(u1, 2, t);
                REQUIRE(r.status == ToyStatus::Converged);
                const auto direct = lemma_R([](double) { return 2.0; },
                                            [&](double x) { return 2.0 * (u1.at(x) - 16.0); }, t);
                CHECK(r.value() == Approx(1.0 / std::sqrt(direct.value)).epsilon(1e-10));
            }
        }
    }

    SECTION("non-increasing in k") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto A = toy_attractor(BernoulliPath{2.0, 1.0, 0.6, derive_seed(8, s), 0}, 8);
            CHECK(A.u1 > 0.0);
            for (int k = 3; k <= 8; ++k) CHECK(A.log_half_width(k) <= A.log_half_width(k - 1));
        }
    }

    SECTION("no early stop after a recent peak of u1") {
        // u1(0) ~ 2550 after a run of negative cells; before it, int (u1 - 81)
        // falls by about 80 per unit time, so u_3(0) is far below e^-1000.
        const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(71, 2), 0};
        REQUIRE(u1_tempered(eta, 0.0) > 2000.0);
        const auto r = uk_tempered(eta, 3, 0.0);
        CHECK((r.status == ToyStatus::DivergedIntegral || r.log_half_width < -1000.0));
        CHECK(uk_tempered(eta, 2, 0.0).log_half_width < -100.0);
    }

    SECTION("shift covariance") {
        const BernoulliPath eta{0.05, 0.01, 0.8, 31, 0};
        CHECK(uk_tempered(eta, 2, 3.0).log_half_width == uk_tempered(eta.shifted(3), 2, 0.0).log_half_width);
    }
}

TEST_CASE("toy simulation", "[toy][simulate]") {
    SECTION("second order against the exact constant-path solution") {
        // u1 = 17, k = 2: v = u^{-2} solves v' = -2 v + 2.
        const auto eta = constant_path(1.0 / 17.0);
        const std::vector<double> x0{17.0, 3.0};
        const std::vector<double> ts{2.0};
        auto err = [&](double dt) {
            const double v = 1.0 + (1.0 / 9.0 - 1.0) * std::exp(-4.0);
            return std::abs(simulate_toy(eta, x0, 0.0, ts, dt, 1.0).states[0][1] - 1.0 / std::sqrt(v));
        };
        const double e1 = err(0.1), e2 = err(0.05);
        CHECK(e1 < 1e-3);
        CHECK(e1 / e2 == Approx(4.0).epsilon(0.1));
    }

    SECTION("stiff equilibrium") {
        // u1 = 2500: relaxation rate 2(u1 - 16) ~ 5000 against dt = 1e-3.
        const auto eta = constant_path(1.0 / 2500.0);
        const std::vector<double> x0{2500.0, 1.0, -3.0}, ts{3.0};
        const auto x = simulate_toy(eta, x0, 0.0, ts).states[0];
        CHECK(std::abs(x[1] - std::sqrt(2500.0 - 16.0)) <= 1e-6);
        CHECK(std::abs(x[2] + std::sqrt(2500.0 - 81.0)) <= 1e-6);
    }

    SECTION("invariance of the closed-form attractor") {
        for (std::uint64_t s = 0; s < 3; ++s) {
            const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(9, s), 0};
            const auto A0 = toy_attractor(eta, 5, 0.0);
            const std::vector<double> ts{20.0};
            const auto tr = simulate_toy(eta, attractor_point(A0), 0.0, ts);
            const auto x = attractor_point(toy_attractor(eta.shifted(20), 5, 0.0));
            CHECK(std::abs(tr.states[0][0] - x[0]) <= 1e-6 * std::max(1.0, x[0]));
            for (std::size_t k = 1; k < x.size(); ++k) CHECK(std::abs(tr.states[0][k] - x[k]) <= 1e-6);
        }
    }

    SECTION("large data enters the absorbing neighbourhood") {
        const BernoulliPath eta{2.0, 1.0, 0.6, 17, 0};
        std::vector<double> x0(6, 1e3);
        x0[0] = 1.0;
        double u1_max = 1.0;
        for (int k = 2; k <= 6; ++k) {
            const double t = 10.0 / std::pow(double(k), 4);
            const std::vector<double> ts{t};
            for (double s = 0.0; s <= t; s += 1e-3) u1_max = std::max(u1_max, detail::u1_after(1.0, eta.cell(0), s));
            CHECK(std::abs(simulate_toy(eta, x0, 0.0, ts).states[0][k - 1]) <= std::sqrt(u1_max));
        }
    }

    SECTION("pullback reproduces the closed forms") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(21, s), 0};
            SplitMix64 rng(derive_seed(5, s));
            std::vector<double> x0{5.0 * rng.uniform()};
            for (int k = 2; k <= 8; ++k) x0.push_back(4.0 * rng.uniform() - 2.0);
            const std::vector<double> ts{0.0};
            const auto x = simulate_toy(eta, x0, -50.0, ts).states[0];
            const auto A = toy_attractor(eta, 8, 0.0);
            CHECK(std::abs(x[0] - A.u1) <= 1e-6 * std::max(1.0, A.u1));
            for (int k = 2; k <= 8; ++k)
                CHECK(std::abs(x[k - 1] - std::copysign(A.half_width(k), x0[k - 1])) <= 1e-6);
        }
    }
}

TEST_CASE("deep pullback after a recent peak of u1", "[toy][simulate]") {
    // s = 50 is too shallow here: the last 50 units lift u_2 to its
    // equilibrium, while the deeper past pins the tempered solution near e^-5348.
    const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(71, 2), 0};
    const double lw = uk_tempered(eta, 2, 0.0).log_half_width;
    REQUIRE(lw < -1000.0);
    auto pulled = [&](double s) {
        ToyState x = ToyState::from_values(std::vector<double>{1.0, 1.0});
        advance_toy(eta, x, -s, 0.0, 1e-3);
        return x.log_abs[0];
    };
    CHECK(pulled(50.0) > 0.0);
    CHECK(std::abs(pulled(1600.0) - lw) <= 1e-6 * std::abs(lw));
}

TEST_CASE("dimension proxy", "[toy][dimension]") {
    for (double c : {17.0, 100.0, 300.0}) {
        const auto d = dimension_proxy(constant_path(1.0 / c), 6, 1e-300);
        CHECK(d.count == equilibrium_cutoff(c));
        CHECK(d.profile.size() == 5);
    }
    CHECK(equilibrium_cutoff(17.0) == 1);
    CHECK(equilibrium_cutoff(100.0) == 2);

    // Finite-mean, low-drive: positive exactly for k^4 below the mean of u1.
    const double a = 0.05, b = 0.01, q = 0.8;
    const double m = toy_u1_mean(a, b, q);
    CHECK(std::isfinite(m));
    for (std::uint64_t s = 0; s < 4; ++s)
        CHECK(dimension_proxy(BernoulliPath{a, b, q, derive_seed(40, s), 0}, 5, 1e-300).count ==
              equilibrium_cutoff(m));
    CHECK_FALSE(std::isfinite(toy_u1_mean(2.0, 1.0, 0.6)));
}

TEST_CASE("toy forward convergence in measure", "[toy][forward]") {
    const std::vector<double> ts{5.0, 50.0};
    const auto on = toy_forward_convergence(
        2.0, 1.0, 0.6, 2, 10, 4, [](std::size_t, const BernoulliPath& eta) { return attractor_point(toy_attractor(eta, 4)); },
        ts, 1e-3, 1e-2);
    CHECK(on[0] == 0.0);
    CHECK(on[1] == 0.0);

    const auto off = toy_forward_convergence(
        2.0, 1.0, 0.6, 2, 40, 4,
        [](std::size_t i, const BernoulliPath&) {
            SplitMix64 rng(derive_seed(99, i));
            std::vector<double> x{5.0 * rng.uniform()};
            for (int k = 2; k <= 4; ++k) x.push_back(4.0 * rng.uniform() - 2.0);
            return x;
        },
        ts, 1e-3, 1e-2);
    CHECK(off[1] < off[0]);
}
