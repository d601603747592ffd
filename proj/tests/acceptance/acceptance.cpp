// Acceptance driver: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 4 9a       run a subset
//
// Exit status is 0 only if every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <signdamp/criteria.hpp>
#include <signdamp/linear_ode.hpp>
#include <signdamp/nonlinear_ode.hpp>
#include <signdamp/random_attractor.hpp>
#include <signdamp/rng.hpp>
#include <signdamp/toy_model.hpp>
#include <signdamp/wave_pde.hpp>

using namespace signdamp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome extremal_exponent() {
    const double a = 1.0, b = 1.0, target = b / kTwoPi;
    const auto t0 = Clock::now();
    const auto r = monodromy(DampingSignal::extremal_kick_train(a, b, 1e-3, 1.0), 1.0);
    const double elapsed = seconds_since(t0);
    const double ratio = r.mu_plus / (1.0 / kTwoPi);

    bool monotone = true;
    double prev = -1.0;
    std::string trend;
    for (double h : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
        const double mu = monodromy(DampingSignal::extremal_kick_train(a, b, h, 1.0), 1.0).mu_plus;
        monotone = monotone && mu > prev && mu <= target + 1e-12;
        prev = mu;
        trend += fmt(" %.6f", mu);
    }
    const bool ok = ratio >= 0.9 && ratio <= 1.01 && monotone && elapsed < 1.0;
    return {ok, fmt("mu+=%.7f (%.5f x 1/2pi), h->0 trend%s monotone=%s, %.2g s", r.mu_plus, ratio, trend.c_str(),
                    monotone ? "yes" : "no", elapsed)};
}

// Periodic piecewise-constant gamma on [0, 2 pi] with int gamma_+ = a, int gamma_- = b.
DampingSignal random_gamma_ab(SplitMix64& rng, double a, double b) {
    const int n = 2 + static_cast<int>(rng() % 12);
    std::vector<double> knots{0.0};
    for (int i = 1; i < n; ++i) knots.push_back(rng.uniform() * kTwoPi);
    knots.push_back(kTwoPi);
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    std::vector<double> raw(knots.size() - 1);
    for (double& v : raw) v = (rng.uniform() - 0.5) * 4.0;
    raw.front() = std::abs(raw.front()) + 0.1;
    raw.back() = -std::abs(raw.back()) - 0.1;
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) (raw[i] > 0 ? pos : neg) += std::abs(raw[i]) * (knots[i + 1] - knots[i]);
    for (double& v : raw) v = v > 0 ? v * a / pos : v * b / neg;
    return DampingSignal::piecewise(knots, raw);
}

Outcome liouville() {
    SplitMix64 rng(20240601);
    double worst_sum = 0.0, worst_bound = -1e300;
    for (int trial = 0; trial < 100; ++trial) {
        const double a = 0.1 + 2.9 * rng.uniform(), b = 0.1 + 2.9 * rng.uniform();
        const auto r = monodromy(random_gamma_ab(rng, a, b), 0.25 + 2.0 * rng.uniform());
        worst_sum = std::max(worst_sum, std::abs(r.mu_plus + r.mu_minus - (b - a) / kTwoPi));
        worst_bound = std::max(worst_bound, r.mu_plus - b / kTwoPi);
    }
    return {worst_sum <= 1e-10 && worst_bound <= 1e-9,
            fmt("100 signals: max |mu+ + mu- - (b-a)/2pi| = %.2e, max mu+ - b/2pi = %.2e", worst_sum, worst_bound)};
}

Outcome averaged_ratio_check() {
    bool ok = true;
    std::string d;
    for (double p : {2.0, 4.0}) {
        const double E0 = 1e6, lam = oscillation_period(E0, p);
        SimOptions o;
        o.sample_dt = lam / 100.0;
        const auto t0 = Clock::now();
        const auto tr = simulate(DampingSignal::constant(0.0), p, std::pow((p + 2.0) * E0, 1.0 / (p + 2.0)), 0.0, 0.0,
                                 30.0 * lam, o);
        const double ratio = averaged_ratio(tr, 25.0 * lam);
        const double elapsed = seconds_since(t0);
        const double rel = std::abs(ratio / predicted_ratio(p) - 1.0);
        ok = ok && rel <= 0.02 && elapsed < 10.0;
        d += fmt("p=%g: <E_k>/<E>=%.6f target %.6f (rel %.1e, %.2f s)  ", p, ratio, predicted_ratio(p), rel, elapsed);
    }
    return {ok, d};
}

Outcome ode_boundary() {
    const double qstar = 4.0 / 7.0, step = 0.025;
    SimOptions o;
    o.step = StepControl::per_period(40.0);
    o.sample_dt = 0.5;
    const auto t0 = Clock::now();
    std::vector<double> qs, alpha;
    for (int i = 0; i <= 12; ++i) {
        const double q = 0.45 + step * i;
        qs.push_back(q);
        alpha.push_back(bernoulli_ensemble_fit(1.0, 1.0, q, 2.0, 1e6, 300.0, 10, 1, o).mean_alpha);
    }
    const double elapsed = seconds_since(t0);
    const auto cross = sign_changes(qs, alpha);
    std::string list;
    for (double c : cross) list += fmt(" %.4f", c);
    const bool ok = cross.size() == 1 && std::abs(cross[0] - qstar) <= step && elapsed < 300.0;
    return {ok, fmt("mean-alpha sign change at q =%s (q* = %.4f, window %.3f), %.0f s", cross.empty() ? " none" : list.c_str(),
                    qstar, step, elapsed)};
}

SpectralState smooth_state(std::size_t N, double scale) {
    SpectralState s(N);
    s.u_hat[0] = scale;
    s.u_hat[2] = -0.3 * scale;
    s.v_hat[1] = 0.5 * scale;
    return s;
}

Outcome wave_exactness() {
    WaveProblem lin;
    lin.linear = true;
    WaveOptions o;
    o.sample_dt = 1.0;
    double err = 0.0;
    {
        SpectralState s(32);
        s.u_hat[2] = 1.0;
        WaveSolver solver(lin, 32, o);
        solver.run(s, 100.0);
        const auto& f = solver.final_state();
        err = std::max({err, std::abs(f.u_hat[2] - std::cos(300.0)), std::abs(f.v_hat[2] + 3.0 * std::sin(300.0))});
    }
    for (double c : {0.7, -0.2, 6.5}) {
        lin.signal = DampingSignal::constant(c);
        SpectralState s(8);
        for (std::size_t k = 0; k < 8; ++k) s.u_hat[k] = 1.0 / double(k + 1);
        const double t = 3.0;
        const auto f = step(lin, s, t, o);
        for (int k = 1; k <= 8; ++k) {
            const double u0 = 1.0 / k, disc = k * k - 0.25 * c * c;
            const double w = std::sqrt(std::abs(disc));
            const double u = disc > 0 ? u0 * std::exp(-0.5 * c * t) * (std::cos(w * t) + 0.5 * c / w * std::sin(w * t))
                                      : u0 * std::exp(-0.5 * c * t) * (std::cosh(w * t) + 0.5 * c / w * std::sinh(w * t));
            err = std::max(err, std::abs(f.u_hat[k - 1] - u));
        }
    }

    WaveProblem cubic;
    cubic.signal = DampingSignal::bernoulli(1.0, 1.0, 0.7, 4);
    const double T = 4.0;
    double r1 = 0.0, r2 = 0.0;
    for (double dt : {1e-3, 5e-4}) {
        WaveOptions w;
        w.dt = dt;
        w.sample_dt = 0.5;
        WaveSolver solver(cubic, 128, w);
        const double r = solver.run(smooth_state(128, 1.0), T).total_residual() / T;
        (dt == 1e-3 ? r1 : r2) = r;
    }
    const double order = std::log2(r1 / r2);
    const bool ok = err <= 1e-10 && r1 <= 1e-5 && order >= 1.8 && order <= 2.2;
    return {ok, fmt("closed-form error %.2e; identity residual %.2e per unit time at dt=1e-3, %.2e at 5e-4 (order %.2f)",
                    err, r1, r2, order)};
}

Outcome wave_dissipativity() {
    WaveProblem pb;
    pb.signal = DampingSignal::bernoulli(1.0, 1.0, 0.7, 3);
    pb.p = 2.0;
    WaveOptions o;
    o.sample_dt = 0.5;
    const std::size_t N = 64;
    const std::vector<double> shape{1.0, 0.0, 0.4};
    std::vector<SpectralState> ens;
    for (double E0 : {1e2, 1e3, 1e4}) ens.push_back(state_with_energy(pb, N, shape, {}, E0));

    // Ball of radius C(1 + |g|) with C = 1 and g = 0: entry by t = 100, checked up to t = 150.
    const double rho = 1.0, enter_by = 100.0, horizon = 150.0;
    const auto t0 = Clock::now();
    const auto rep = dissipativity_experiment(pb, ens, horizon, o);
    bool inside = true;
    std::string entries;
    for (const auto& r : rep.runs) {
        std::size_t j = r.trace.size();
        while (j > 0 && r.trace.E[j - 1] <= rho) --j;
        const bool ok = !r.diverged && j < r.trace.size() && r.trace.times[j] <= enter_by;
        inside = inside && ok;
        entries += ok ? fmt(" %.1f", r.trace.times[j]) : std::string(" never");
    }
    const std::vector<double> depths{5.0, 10.0, 15.0, 20.0, 25.0};
    const auto pc = pullback_contraction(pb, ens.front(), ens.back(), depths, 0.0, o);
    const double elapsed = seconds_since(t0);
    const bool ok = inside && pc.rate > 0.0 && elapsed < 600.0;
    return {ok, fmt("E0 = 1e2,1e3,1e4 enter E <= %g at t =%s and stay to t = %g; pullback rate %.3f, %.1f s", rho,
                    entries.c_str(), horizon, pc.rate, elapsed)};
}

std::vector<double> attractor_point(const ToyAttractor& A) {
    std::vector<double> x{A.u1};
    for (int k = 2; k <= A.K; ++k) x.push_back(A.half_width(k));
    return x;
}

Outcome toy_closed_forms() {
    double err = 0.0;
    const int K = 8;
    int within = 0;
    std::string off;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const BernoulliPath eta{2.0, 1.0, 0.6, derive_seed(71, s), 0};
        SplitMix64 rng(derive_seed(72, s));
        std::vector<double> x0{5.0 * rng.uniform()};
        for (int k = 2; k <= K; ++k) x0.push_back(4.0 * rng.uniform() - 2.0);
        const std::vector<double> ts{0.0};
        const auto x = simulate_toy(eta, x0, -50.0, ts).states[0];
        const auto A = toy_attractor(eta, K, 0.0);
        double e = std::abs(x[0] - A.u1) / std::max(1.0, A.u1);
        for (int k = 2; k <= K; ++k) e = std::max(e, std::abs(x[k - 1] - std::copysign(A.half_width(k), x0[k - 1])));
        err = std::max(err, e);
        if (e <= 1e-6) {
            ++within;
        } else {
            off += fmt(" seed %d (u1(0) = %.4g, error %.3g)", int(s), A.u1, e);
        }
    }
    double cerr = 0.0;
    for (double a : {0.5, 1.0 / 17.0, 1.0 / 300.0}) {
        const BernoulliPath c{a, 1.0, 1.0, 0, 0};
        const double u1 = 1.0 / a;
        cerr = std::max(cerr, std::abs(u1_tempered(c, 0.0) - u1) / u1);
        for (int k = 2; k <= 5; ++k) {
            const double exact = u1 > std::pow(k, 4) ? std::sqrt(u1 - std::pow(k, 4)) : 0.0;
            cerr = std::max(cerr, std::abs(uk_tempered(c, k, 0.0).value() - exact) / std::max(1.0, exact));
        }
    }
    return {err <= 1e-6 && cerr <= 1e-10,
            fmt("pullback from s=50, k<=8: %d/20 seeds within 1e-6, max error %.2e%s; constant paths: max rel error %.2e",
                within, err, off.empty() ? "" : (";" + off).c_str(), cerr)};
}

Outcome infinite_mean() {
    const auto t0 = Clock::now();
    const auto inf = mean_radius_mc(2.0, 1.0, 0.6, 0.0, 10000);
    const auto fin = mean_radius_mc(2.0, 0.5, 0.8, 0.0, 10000);
    const double grow = inf.levels[1].mean / inf.levels[0].mean - 1.0;
    const double drift = std::abs(fin.levels[1].mean / fin.levels[0].mean - 1.0);
    const bool ok = std::abs(inf.exponent - 0.1558) <= 5e-4 && std::abs(fin.exponent + 0.8255) <= 5e-4 && inf.divergence_flag &&
                    !fin.divergence_flag && grow > 0.2 && drift < 0.05;
    return {ok, fmt("(2,1,0.6): exponent %+.4f, mean 1e4->1e5 %.4g -> %.4g (%+.0f%%); (2,0.5,0.8): exponent %+.4f, "
                    "mean %.4g -> %.4g (%+.2f%%), %.1f s",
                    inf.exponent, inf.levels[0].mean, inf.levels[1].mean, 100 * grow, fin.exponent, fin.levels[0].mean,
                    fin.levels[1].mean, 100 * (fin.levels[1].mean / fin.levels[0].mean - 1.0), seconds_since(t0))};
}

Outcome toy_all_positive() {
    const int K = 32, seeds = 20;
    int positive = 0, full = 0, lowest_gap = K + 1;
    for (std::uint64_t s = 0; s < seeds; ++s) {
        const auto A = toy_attractor(BernoulliPath{2.0, 1.0, 0.6, derive_seed(1, s), 0}, K, 0.0);
        int here = 0;
        for (int k = 2; k <= K; ++k) {
            if (std::isfinite(A.log_half_width(k))) {
                ++here;
            } else {
                lowest_gap = std::min(lowest_gap, k);
            }
        }
        positive += here;
        full += here == K - 1;
    }
    return {full == seeds, fmt("%d/%d seeds positive for all k<=%d; %d/%d (seed,k) pairs resolved; first unresolved k = %d",
                               full, seeds, K, positive, seeds * (K - 1), lowest_gap)};
}

Outcome toy_saturation() {
    bool ok = true;
    std::string d;
    for (double c : {17.0, 100.0, 300.0, 1000.0}) {
        const auto r = dimension_proxy(BernoulliPath{1.0 / c, 1.0, 1.0, 0, 0}, 8, 1e-300);
        ok = ok && r.count == equilibrium_cutoff(c);
        d += fmt("c=%g: %d/%d  ", c, r.count, equilibrium_cutoff(c));
    }
    const double a = 0.05, b = 0.01, q = 0.8, m = toy_u1_mean(a, b, q);
    int agree = 0;
    for (std::uint64_t s = 0; s < 10; ++s)
        agree += dimension_proxy(BernoulliPath{a, b, q, derive_seed(40, s), 0}, 6, 1e-300).count == equilibrium_cutoff(m);
    ok = ok && agree == 10;
    return {ok, d + fmt("low drive (%g,%g,%g), E u1 = %.2f: count = cutoff %d on %d/10 seeds", a, b, q, m,
                        equilibrium_cutoff(m), agree)};
}

#ifdef SIGNDAMP_CLI
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string run_csv(const std::string& args, const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cmd = std::string(SIGNDAMP_CLI) + " " + args + " --out " + dir.string() + " > " +
                            (dir / "log.txt").string() + " 2>&1";
    if (std::system(cmd.c_str()) != 0) return {};
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") return slurp(e.path());
    return {};
}
#endif

Outcome determinism() {
#ifdef SIGNDAMP_CLI
    const fs::path root = fs::temp_directory_path() / "signdamp-acceptance";
    bool ok = true;
    std::string d;
    for (const std::string args : {"criterion --a 1 --b 1 --q 0.9 --p 2", "linear-lyapunov --kick a=1,b=1,h=1e-3 --omega 1",
                                   "toy-attractor --a 2 --b 1 --q 0.6 --K 8 --seeds 5 --workers 2"}) {
        const auto a = run_csv(args, root / "a"), b = run_csv(args, root / "b");
        const bool same = !a.empty() && a == b;
        ok = ok && same;
        d += args.substr(0, args.find(' ')) + (same ? fmt(" identical (%zu bytes)  ", a.size()) : std::string(" differs  "));
    }
    fs::remove_all(root);
    return {ok, d};
#else
    return {false, "CLI binary not built"};
#endif
}

struct Criterion {
    std::string id;
    std::string name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {"1", "extremal Lyapunov exponent", extremal_exponent},
        {"2", "Liouville identity", liouville},
        {"3", "averaged kinetic ratio", averaged_ratio_check},
        {"4", "nonlinear dissipativity boundary", ode_boundary},
        {"5", "wave solver exactness", wave_exactness},
        {"6", "wave dissipativity", wave_dissipativity},
        {"7", "toy closed forms", toy_closed_forms},
        {"8", "infinite-mean detection", infinite_mean},
        {"9a", "toy half-widths positive to k=32", toy_all_positive},
        {"9b", "toy positive count saturates", toy_saturation},
        {"10", "determinism", determinism},
    };
    std::vector<std::string> want(argv + 1, argv + argc);
    int failed = 0, ran = 0;
    for (const auto& c : all) {
        if (!want.empty() && std::find(want.begin(), want.end(), c.id) == want.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        ++ran;
        failed += !o.pass;
        std::printf("%s [%s] %s: %s\n", o.pass ? "PASS" : "FAIL", c.id.c_str(), c.name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    if (ran == 0) {
        std::fprintf(stderr, "no criterion matches\n");
        return 2;
    }
    return failed == 0 ? 0 : 1;
}
