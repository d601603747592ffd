#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <signdamp/random_attractor.hpp>

using namespace signdamp;
using Catch::Approx;

TEST_CASE("lemma_R on simple inputs", "[radius][lemma]") {
    const auto r = lemma_R([](double) { return 1.0; }, [](double) { return 0.4; }, 3.7);
    CHECK(r.value == Approx(1.0 / 0.4).epsilon(1e-11));
    CHECK(r.tail_bound <= 1e-12 * r.value);

    // Piecewise +-: against the forward recursion R(n+1) = e^{-b_n} R(n) + (1 - e^{-b_n}) / b_n.
    const BernoulliPath eta{1.5, 1.0, 0.7, 8, 0};
    auto beta = [&](double s) { return eta.cell(static_cast<std::int64_t>(std::floor(s))); };
    const auto num = lemma_R([](double) { return 1.0; }, beta, 0.0);
    double R = 0.0;
    for (std::int64_t n = -400; n < 0; ++n) {
        const double b = eta.cell(n);
        R = std::exp(-b) * R + exp_integral(b, 1.0);
    }
    CHECK(num.value == Approx(R).epsilon(1e-10));

    LemmaROptions short_run;
    short_run.max_depth = 2000;
    CHECK_THROWS_AS(accumulate_cells([](std::int64_t) { return CellData{-0.1, 1.0}; }, short_run), NotConverged);
    CHECK_THROWS_AS(lemma_R([](double) { return 1.0; }, [](double) { return -0.2; }, 0.0, short_run), NotConverged);
}

TEST_CASE("cellwise accumulation is exact for piecewise-constant data", "[radius][lemma]") {
    // 50-cell periodic fixture, summed in closed form over whole periods.
    std::vector<double> b(50), w(50);
    SplitMix64 rng(5);
    for (int i = 0; i < 50; ++i) {
        b[i] = rng.uniform() * 2.0 - 0.6;
        w[i] = 0.5 + rng.uniform();
    }
    const auto r = accumulate_cells([&](std::int64_t j) { return CellData{b[j % 50], w[j % 50]}; });
    double S = 0.0, Bp = 0.0;
    for (int j = 0; j < 50; ++j) {
        S += std::exp(-Bp) * w[j];
        Bp += b[j];
    }
    const double exact = S / -std::expm1(-Bp);
    CHECK(r.value == Approx(exact).epsilon(1e-13));
}

TEST_CASE("beta_eps", "[radius][beta]") {
    const double c = 0.8;
    CHECK(beta_eps(DampingSignal::constant(c), 2.0, 1e-9, 1e-9, 3.3) == Approx(c).epsilon(1e-8));

    // Windowed mean: 2 weighted drift - 2 kappa (1 + mean |gamma|) up to O(eps).
    const double a = 1.0, b = 1.0, q = 0.7, p = 2.0;
    const auto g = DampingSignal::bernoulli(a, b, q, 21);
    const double eps = default_eps(a, b), kappa = default_kappa(a, b, q, p);
    const BetaEps be(g, p, eps, kappa);
    CHECK(l1b_distance(g, be.gamma_bar(), 0.0, 60.0) <= eps);
    const double T = 200.0;
    std::vector<double> br;
    for (int n = 1; n <= 200; ++n) {
        br.push_back(n);
        br.push_back(n + be.nu());
    }
    const double mean_beta = integrate_split(be, 1.0, 1.0 + T, br, 1e-10, 8) / T;
    const double drift_path = windowed_weighted_mean(g, p, 1.0 + T, T);
    const double abs_path = integrate_functional(g, [](double x) { return std::abs(x); }, 1.0, 1.0 + T) / T;
    CHECK(std::abs(mean_beta - (2.0 * drift_path - 2.0 * kappa * (1.0 + abs_path))) <= 4.0 * eps);

    // The tabulated cells reproduce the same integral.
    RadiusParams par{p, eps, kappa, 0.0, 1.0};
    const BernoulliRadiusCells cells(*g.get_if<BernoulliPath>(), par);
    CompensatedSum B;
    for (int n = 1; n <= 200; ++n) B += cells.cell(n).B;
    CHECK(B.value() / T == Approx(mean_beta).epsilon(1e-8));

    // Drift-positive parameters keep a positive long-run mean.
    CHECK(mean_beta > 0.0);
}

TEST_CASE("tempered radius", "[radius]") {
    const double a = 1.0, b = 1.0, q = 0.7, p = 2.0;
    RadiusParams par{p, default_eps(a, b), default_kappa(a, b, q, p), 0.5, 1.0};

    SECTION("degenerate path eta = a") {
        const BernoulliPath all_a{a, b, 1.0, 3, 0};
        const double beta_bar = 2.0 * (0.5 * a - par.kappa * a - par.kappa);
        const auto R = tempered_radius(all_a, par, 0.0);
        CHECK(R.value == Approx(2.0 * (1.0 + 0.25 + a) / beta_bar).epsilon(1e-11));
        CHECK(tempered_radius(all_a, par, 2.6).value == Approx(R.value).epsilon(1e-11));
    }

    SECTION("integral recursion and shift covariance") {
        LemmaROptions opt;
        opt.tol = 1e-12;
        for (std::uint64_t s = 0; s < 10; ++s) {
            const BernoulliPath eta{a, b, q, derive_seed(77, s), 0};
            CHECK(radius_recursion_residual(eta, par, -17, 3, opt) <= 10.0 * opt.tol);
            const auto R = tempered_radius(eta, par, 0.0, opt);
            CHECK(R.value > 0.0);
            CHECK(R.truncation < 0.0);
            for (double t : {0.0, 0.375, -4.0})
                CHECK(tempered_radius(eta, par, t + 1.0, opt).value ==
                      tempered_radius(eta.shifted(1), par, t, opt).value);
        }
    }

    SECTION("non-integer end time inside the blend zone") {
        const BernoulliPath eta{a, b, q, 12, 0};
        const double t = 4.0 + 0.3 * std::min(0.5, par.eps / (a + b));
        // Direct: radius at 4 propagated over [4, t] by integrating beta_eps.
        const BetaEps be(DampingSignal::bernoulli(eta), p, par.eps, par.kappa);
        const double phi = 2.0 * (1.0 + 0.25 + std::abs(eta.cell(4)));
        const auto c = detail::cell_data_numeric([&](double) { return phi; }, be, 4.0, t);
        const double direct = tempered_radius(eta, par, 4.0).value * std::exp(-c.B) + c.W;
        CHECK(tempered_radius(eta, par, t).value == Approx(direct).epsilon(1e-9));
    }

    SECTION("temperedness probe") {
        const BernoulliPath eta{a, b, q, 99, 0};
        const std::vector<double> ts{100, 200, 500, 1000, 2000, 5000, 10000};
        for (double theta : {0.01, 0.1}) {
            const auto v = temperedness_probe(eta, par, theta, ts);
            CHECK(fit_line(ts, v).slope < 0.0);
            CHECK(v.back() < v.front());
        }
    }
}

TEST_CASE("Monte-Carlo radius means", "[radius][mc]") {
    SECTION("finite mean") {
        const auto r = mean_radius_mc(2.0, 0.5, 0.8, 0.0, 10000, 1e-12, 3);
        CHECK_FALSE(r.divergence_flag);
        REQUIRE(r.levels.size() == 2);
        CHECK(r.levels[1].samples == 100000);
        CHECK(std::abs(r.levels[1].mean / r.levels[0].mean - 1.0) < 0.05);
        CHECK(r.levels[1].excluded == 0);
        CHECK(r.quantiles[0] <= r.quantiles[1]);
    }
    SECTION("flag matches the exponent sign") {
        for (double q : {0.5, 0.6, 0.7, 0.9}) {
            const auto r = mean_radius_mc(2.0, 1.0, q, 0.0, 10, 1e-12, 1);
            CHECK(r.divergence_flag == (finite_mean_exponent(2.0, 1.0, q, 0.0) > 0.0));
        }
    }
    SECTION("geometric factor") {
        for (auto [a, b, q, p] : {std::array{2.0, 1.0, 0.6, 0.0}, std::array{2.0, 0.5, 0.8, 0.0},
                                  std::array{1.0, 1.0, 0.7, 2.0}}) {
            const auto m = geometric_factor_mc(a, b, q, p, 200000, 5);
            CHECK(std::abs(m.mean - std::exp(finite_mean_exponent(a, b, q, p))) <= 3.0 * m.standard_error);
        }
    }
}

TEST_CASE("Birkhoff averages", "[radius][birkhoff]") {
    const double a = 2.0, b = 1.0, q = 0.6, T = 1e4;
    const auto g = DampingSignal::bernoulli(a, b, q, 13);
    const double se = (a + b) * std::sqrt(q * (1 - q) / T);
    CHECK(std::abs(birkhoff_average(g, [](double x) { return x; }, T) - bernoulli_raw_drift(a, b, q)) <= 3 * se);
    const double sw = (0.5 * a + 0.5 * b) * std::sqrt(q * (1 - q) / T);
    CHECK(std::abs(birkhoff_average(g, [](double x) { return weighted_integrand(x, 0.0); }, T) -
                   bernoulli_weighted_drift(a, b, q, 0.0)) <= 3 * sw);
    for (double t : {0.5, 7.0, 123.4})
        CHECK(birkhoff_average(DampingSignal::constant(0.3), [](double x) { return x * x; }, t) ==
              Approx(0.09).epsilon(1e-15));
}

TEST_CASE("wave forward convergence in measure", "[radius][forward]") {
    WaveProblem pb;
    pb.p = 2.0;
    WaveOptions o;
    o.dt = 2e-3;
    SpectralState init(16);
    init.u_hat[0] = 1.0;
    init.v_hat[1] = 0.5;
    const std::vector<double> ts{10.0, 20.0, 40.0};
    const auto frac = wave_forward_convergence(pb, 1.0, 1.0, 0.7, 4, 12, init, ts, 1e-3, 5.0, o);
    CHECK(frac[1] <= frac[0]);
    CHECK(frac[2] <= frac[1]);
    CHECK(frac[2] < frac[0]);
}
