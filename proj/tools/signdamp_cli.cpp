// signdamp: batch runner for the damping experiments.
//
// Every subcommand reads flat key=value parameters from --config and from
// --key flags (flags win), writes one data file and one manifest:
//   <out>/<subcommand>-<runid>.csv|json, <out>/manifest-<runid>.json
// The run id hashes the subcommand and the resolved parameters (not --out or
// --workers), so identical configurations produce identical file names and bytes.
// Exit status: 0 ok, 2 validation error, 3 numeric failure.

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <signdamp/criteria.hpp>
#include <signdamp/linear_ode.hpp>
#include <signdamp/nonlinear_ode.hpp>
#include <signdamp/parallel.hpp>
#include <signdamp/random_attractor.hpp>
#include <signdamp/toy_model.hpp>
#include <signdamp/wave_pde.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace signdamp;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Param {
    std::string name;
    std::string fallback;
    std::string help;
};

// Keys shared by every subcommand.
const std::vector<Param> kCommon = {
    {"seed", "1", "base seed (u64)"},
    {"out", ".", "output directory"},
    {"format", "csv", "data file format: csv or json"},
    {"workers", "", "worker threads (default: SIGNDAMP_WORKERS or hardware concurrency)"},
};

const std::map<std::string, std::vector<Param>> kParams = {
    {"criterion",
     {{"a", "1", "positive level"},
      {"b", "1", "negative level magnitude"},
      {"q", "0.5", "probability of the positive level"},
      {"p", "2", "nonlinearity exponent"},
      {"expect", "", "expected dissipativity regime; a mismatch is reported as a warning"}}},
    {"linear-lyapunov",
     {{"kick", "", "kick train a=..,b=..,h=..[,at=..]; without at= the extremal placement is used"},
      {"constant", "", "constant damping value"},
      {"pieces", "", "periodic piecewise-constant damping: len:value;len:value;..."},
      {"omega", "1", "frequency"}}},
    {"ode-sim",
     {{"signal", "bernoulli", "bernoulli or constant"},
      {"a", "1", ""}, {"b", "1", ""}, {"q", "0.7", ""}, {"c", "0", "constant damping value"},
      {"p", "2", ""}, {"E0", "1e6", "initial energy (start at rest)"}, {"T", "300", "horizon"},
      {"seeds", "10", "ensemble size"}, {"sample_dt", "0.5", ""},
      {"step", "per_period", "residual, per_period or fixed"}, {"steps_per_period", "40", ""},
      {"dt", "1e-3", "fixed step"}, {"tol", "1e-6", "residual tolerance"}}},
    {"wave-sim",
     {{"signal", "bernoulli", "bernoulli or constant"},
      {"a", "1", ""}, {"b", "1", ""}, {"q", "0.7", ""}, {"c", "0", ""},
      {"p", "2", ""}, {"N", "64", "sine modes (power of two)"}, {"dt", "1e-3", ""}, {"T", "10", ""},
      {"sample_dt", "0.1", ""}, {"E0", "1", "initial energy of u = sin x - 0.3 sin 3x, u_t = 0.5 sin 2x"}}},
    {"pullback",
     {{"a", "1", ""}, {"b", "1", ""}, {"q", "0.7", ""}, {"p", "2", ""}, {"N", "16", ""}, {"dt", "2e-3", ""},
      {"depths", "5,10,20,40", "pullback depths"}, {"E1", "1", "energy of the first state"},
      {"E2", "100", "energy of the second state"}, {"t_end", "0", ""}}},
    {"radius-mc",
     {{"a", "2", ""}, {"b", "1", ""}, {"q", "0.6", ""}, {"p", "0", ""}, {"M", "10000", "first level size"},
      {"tol", "1e-12", "truncation tolerance per radius"}}},
    {"toy-attractor",
     {{"a", "2", ""}, {"b", "1", ""}, {"q", "0.6", ""}, {"K", "32", "truncation"}, {"seeds", "20", ""},
      {"t", "0", "evaluation time"}, {"log_floor", "-1e6", "log half-widths below this count as zero"}}},
    {"sweep",
     {{"target", "criterion", "criterion or ode-sim"},
      {"metric", "", "column used for the boundary summary (default per target)"},
      {"axis1", "", "name:start:stop:step over a, b, q or p"}, {"axis2", "", ""}, {"axis3", "", ""},
      {"a", "1", ""}, {"b", "1", ""}, {"q", "0.5", ""}, {"p", "2", ""},
      {"E0", "1e6", ""}, {"T", "300", ""}, {"seeds", "10", ""}, {"sample_dt", "0.5", ""},
      {"steps_per_period", "40", ""}}},
};

// ---------------------------------------------------------------------------
// Parameters

class Config {
public:
    Config(std::string sub, std::map<std::string, std::string> v) : sub_(std::move(sub)), v_(std::move(v)) {}

    [[nodiscard]] const std::string& sub() const { return sub_; }
    [[nodiscard]] const std::map<std::string, std::string>& values() const { return v_; }

    [[nodiscard]] std::string str(const std::string& k) const { return v_.at(k); }

    [[nodiscard]] double num(const std::string& k) const { return parse_double(k, v_.at(k)); }

    [[nodiscard]] std::uint64_t u64(const std::string& k) const {
        const std::string& s = v_.at(k);
        std::uint64_t x = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError(k + ": not an unsigned integer: " + s);
        return x;
    }

    [[nodiscard]] std::vector<double> list(const std::string& k, char sep = ',') const {
        std::vector<double> out;
        std::stringstream ss(v_.at(k));
        for (std::string item; std::getline(ss, item, sep);) out.push_back(parse_double(k, item));
        return out;
    }

    static double parse_double(const std::string& k, const std::string& s) {
        double x = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty())
            throw ValidationError(k + ": not a number: '" + s + "'");
        return x;
    }

private:
    std::string sub_;
    std::map<std::string, std::string> v_;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError(path + ":" + std::to_string(n) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

// ---------------------------------------------------------------------------
// Output

/// Rows of typed cells; CSV uses shortest round-trip decimals.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<json>> rows;
};

std::string csv_cell(const json& v) {
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_number()) return v.dump();
    if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
    if (v.is_null()) return "";
    const std::string s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

json json_number(double x) {
    // JSON has no inf/nan; keep them as strings.
    if (std::isfinite(x)) return x;
    return format_double(x);
}

struct Result {
    Table table;
    json summary = json::object();
    std::map<std::string, int> warnings{{"boundary", 0}, {"not_converged", 0}, {"diverged", 0}};
    std::vector<std::string> notes;
    std::optional<json> json_data;  // replaces the table in json format
};

void write_csv(std::ostream& os, const Table& t) {
    for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
    os << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_cell(r[i]);
        os << '\n';
    }
}

json table_json(const Table& t) {
    json arr = json::array();
    for (const auto& r : t.rows) {
        json o = json::object();
        for (std::size_t i = 0; i < r.size(); ++i) {
            const json& v = r[i];
            o[t.header[i]] = v.is_number_float() ? json_number(v.get<double>()) : v;
        }
        arr.push_back(o);
    }
    return arr;
}

std::string run_id(const Config& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    };
    mix(cfg.sub());
    for (const auto& [k, v] : cfg.values())
        if (k != "out" && k != "workers") mix(k + "=" + v);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::size_t workers_of(const Config& cfg) {
    const std::string w = cfg.str("workers");
    if (w.empty()) return default_workers();
    const auto n = cfg.u64("workers");
    if (n == 0) throw ValidationError("workers must be positive");
    return static_cast<std::size_t>(n);
}

// ---------------------------------------------------------------------------
// Subcommands

DampingSignal bernoulli_or_constant(const Config& c, std::uint64_t seed) {
    const std::string s = c.str("signal");
    if (s == "bernoulli") return DampingSignal::bernoulli(c.num("a"), c.num("b"), c.num("q"), seed);
    if (s == "constant") return DampingSignal::constant(c.num("c"));
    throw ValidationError("signal must be bernoulli or constant, got " + s);
}

Result run_criterion(const Config& c) {
    const auto r = criterion_report(c.num("a"), c.num("b"), c.num("q"), c.num("p"));
    Result out;
    out.table.header = {"a", "b", "q", "p", "weighted_drift", "raw_drift", "finite_mean_exponent", "dissipativity",
                        "mean_radius"};
    out.table.rows.push_back({c.num("a"), c.num("b"), c.num("q"), c.num("p"), r.weighted_drift, r.raw_drift,
                              r.finite_mean_exponent, to_string(r.dissipativity), to_string(r.mean_radius)});
    out.summary["weighted_drift"] = r.weighted_drift;
    out.summary["regime"] = to_string(r.dissipativity);
    out.summary["mean_radius_regime"] = to_string(r.mean_radius);
    out.warnings["boundary"] = (r.dissipativity == DissipativityRegime::Boundary) +
                               (r.mean_radius == MeanRadiusRegime::Boundary);
    const std::string expect = c.str("expect");
    if (!expect.empty() && expect != to_string(r.dissipativity))
        out.notes.push_back("expected regime " + expect + " but found " + to_string(r.dissipativity));
    char line[160];
    std::snprintf(line, sizeof line, "weighted drift %.6f regime %s", r.weighted_drift,
                  to_string(r.dissipativity).c_str());
    std::cout << line << '\n';
    return out;
}

std::map<std::string, std::string> parse_assignments(const std::string& spec) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("expected k=v in '" + spec + "'");
        kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
    }
    return kv;
}

Result run_linear_lyapunov(const Config& c) {
    const double omega = c.num("omega");
    const int given = !c.str("kick").empty() + !c.str("constant").empty() + !c.str("pieces").empty();
    if (given != 1) throw ValidationError("give exactly one of kick, constant, pieces");
    std::optional<DampingSignal> sig;
    if (!c.str("kick").empty()) {
        auto kv = parse_assignments(c.str("kick"));
        for (const auto& [k, v] : kv)
            if (k != "a" && k != "b" && k != "h" && k != "at") throw ValidationError("kick: unknown field " + k);
        for (const char* k : {"a", "b", "h"})
            if (!kv.count(k)) throw ValidationError(std::string("kick: missing ") + k);
        const double a = Config::parse_double("kick.a", kv["a"]), b = Config::parse_double("kick.b", kv["b"]),
                     h = Config::parse_double("kick.h", kv["h"]);
        sig = kv.count("at") ? DampingSignal::kick_train(a, b, h, Config::parse_double("kick.at", kv["at"]))
                             : DampingSignal::extremal_kick_train(a, b, h, omega);
    } else if (!c.str("constant").empty()) {
        sig = DampingSignal::piecewise({0.0, kTwoPi}, {c.num("constant")});
    } else {
        std::vector<double> knots{0.0}, values;
        std::stringstream ss(c.str("pieces"));
        for (std::string item; std::getline(ss, item, ';');) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) throw ValidationError("pieces: expected len:value");
            knots.push_back(knots.back() + Config::parse_double("pieces", trim(item.substr(0, colon))));
            values.push_back(Config::parse_double("pieces", trim(item.substr(colon + 1))));
        }
        sig = DampingSignal::piecewise(knots, values);
    }
    const auto m = monodromy(*sig, omega);
    Result out;
    out.table.header = {"signal", "omega", "period", "mu_plus", "mu_minus", "multiplier_plus_re",
                        "multiplier_plus_im", "multiplier_minus_re", "multiplier_minus_im", "m11", "m12", "m21",
                        "m22"};
    out.table.rows.push_back({sig->describe(), omega, m.period, m.mu_plus, m.mu_minus, m.multiplier_plus.real(),
                              m.multiplier_plus.imag(), m.multiplier_minus.real(), m.multiplier_minus.imag(),
                              m.matrix.a, m.matrix.b, m.matrix.c, m.matrix.d});
    out.summary["mu_plus"] = m.mu_plus;
    out.summary["mu_minus"] = m.mu_minus;
    std::cout << "mu_plus " << format_double(m.mu_plus) << " mu_minus " << format_double(m.mu_minus) << '\n';
    return out;
}

SimOptions ode_options(const Config& c) {
    SimOptions o;
    o.sample_dt = c.num("sample_dt");
    const std::string step = c.values().count("step") ? c.str("step") : "per_period";
    if (step == "per_period")
        o.step = StepControl::per_period(c.num("steps_per_period"));
    else if (step == "fixed")
        o.step = StepControl::fixed(c.num("dt"));
    else if (step == "residual")
        o.step = StepControl::residual(c.num("tol"));
    else
        throw ValidationError("step must be residual, per_period or fixed");
    if (step != "per_period" && c.values().count("steps_per_period")) o.step.steps_per_period = c.num("steps_per_period");
    return o;
}

Result run_ode_sim(const Config& c, std::size_t workers) {
    const auto seeds = c.u64("seeds");
    if (seeds == 0) throw ValidationError("seeds must be positive");
    const double p = c.num("p"), E0 = c.num("E0"), T = c.num("T");
    const std::uint64_t seed = c.u64("seed");
    const SimOptions opt = ode_options(c);
    std::vector<DecayFit> fits(seeds);
    std::vector<double> finalE(seeds);
    const double y0 = std::pow((p + 2.0) * E0, 1.0 / (p + 2.0));
    parallel_for(seeds, workers, [&](std::size_t i) {
        const auto tr = simulate(bernoulli_or_constant(c, derive_seed(seed, i)), p, y0, 0.0, 0.0, T, opt);
        fits[i] = decay_rate_fit(tr);
        finalE[i] = tr.E.back();
    });
    Result out;
    out.table.header = {"seed_index", "seed", "alpha", "C_star", "non_dissipative", "points", "final_E"};
    CompensatedSum mean;
    int nd = 0;
    for (std::size_t i = 0; i < seeds; ++i) {
        out.table.rows.push_back({i, derive_seed(seed, i), fits[i].alpha, fits[i].C_star, fits[i].non_dissipative,
                                  fits[i].points, finalE[i]});
        mean += fits[i].alpha;
        nd += fits[i].non_dissipative;
    }
    const double mean_alpha = mean.value() / double(seeds);
    out.summary["mean_alpha"] = json_number(mean_alpha);
    out.summary["non_dissipative"] = nd;
    if (c.str("signal") == "bernoulli")
        out.summary["weighted_drift"] = bernoulli_weighted_drift(c.num("a"), c.num("b"), c.num("q"), p);
    out.warnings["diverged"] = nd;
    std::cout << "mean alpha " << format_double(mean_alpha) << " over " << seeds << " seeds\n";
    return out;
}

std::vector<double> sine_shape(std::size_t N, std::initializer_list<std::pair<std::size_t, double>> terms) {
    std::vector<double> v(N, 0.0);
    for (auto [k, c] : terms)
        if (k >= 1 && k <= N) v[k - 1] = c;
    return v;
}

Result run_wave_sim(const Config& c, const std::string& format) {
    WaveProblem pb;
    pb.p = c.num("p");
    pb.signal = bernoulli_or_constant(c, c.u64("seed"));
    const auto N = static_cast<std::size_t>(c.u64("N"));
    WaveOptions o;
    o.dt = c.num("dt");
    o.sample_dt = c.num("sample_dt");
    o.keep_snapshots = true;
    const auto u = sine_shape(N, {{1, 1.0}, {3, -0.3}}), v = sine_shape(N, {{2, 0.5}});
    const auto s0 = state_with_energy(pb, N, u, v, c.num("E0"));
    WaveSolver solver(pb, N, o);
    const auto tr = solver.run(s0, c.num("T"));

    Result out;
    std::ostringstream csv;
    write_snapshots_csv(csv, tr);
    // Re-read into a table so both formats share one path.
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    {
        std::stringstream hs(line);
        for (std::string h; std::getline(hs, h, ',');) out.table.header.push_back(h);
    }
    for (std::size_t i = 0; i < tr.size(); ++i) {
        std::vector<json> row{tr.times[i], tr.E[i], tr.E_k[i], tr.E_p[i]};
        for (double x : tr.snapshots[i].u_hat) row.push_back(x);
        for (double x : tr.snapshots[i].v_hat) row.push_back(x);
        out.table.rows.push_back(std::move(row));
    }
    if (format == "json") {
        json arr = json::array();
        for (std::size_t i = 0; i < tr.size(); ++i) {
            json rec;
            rec["t"] = json_number(tr.times[i]);
            rec["u_hat"] = tr.snapshots[i].u_hat;
            rec["v_hat"] = tr.snapshots[i].v_hat;
            rec["E"] = json_number(tr.E[i]);
            rec["E_k"] = json_number(tr.E_k[i]);
            rec["E_p"] = json_number(tr.E_p[i]);
            arr.push_back(rec);
        }
        out.json_data = arr;
    }
    const double span = tr.times.back() - tr.times.front();
    out.summary["E0"] = tr.E.front();
    out.summary["E_final"] = json_number(tr.E.back());
    out.summary["identity_residual_per_time"] = json_number(span > 0 ? tr.total_residual() / span : 0.0);
    out.summary["steps"] = tr.steps;
    out.summary["diverged"] = tr.diverged;
    out.warnings["diverged"] = tr.diverged;
    std::cout << "E " << format_double(tr.E.front()) << " -> " << format_double(tr.E.back()) << '\n';
    return out;
}

Result run_pullback(const Config& c, std::size_t workers) {
    WaveProblem pb;
    pb.p = c.num("p");
    pb.signal = DampingSignal::bernoulli(c.num("a"), c.num("b"), c.num("q"), c.u64("seed"));
    const auto N = static_cast<std::size_t>(c.u64("N"));
    WaveOptions o;
    o.dt = c.num("dt");
    const auto xi1 = state_with_energy(pb, N, sine_shape(N, {{1, 1.0}, {3, -0.3}}), sine_shape(N, {{2, 0.5}}),
                                       c.num("E1"));
    const auto xi2 = state_with_energy(pb, N, sine_shape(N, {{2, 1.0}}), sine_shape(N, {{1, 1.0}}), c.num("E2"));
    const auto depths = c.list("depths");
    const auto r = pullback_contraction(pb, xi1, xi2, depths, c.num("t_end"), o, workers);
    Result out;
    out.table.header = {"depth", "distance"};
    for (std::size_t i = 0; i < r.depths.size(); ++i) out.table.rows.push_back({r.depths[i], r.distance_at_end[i]});
    out.summary["rate"] = json_number(r.rate);
    std::cout << "pullback rate " << format_double(r.rate) << '\n';
    return out;
}

Result run_radius_mc(const Config& c, std::size_t workers) {
    const auto r = mean_radius_mc(c.num("a"), c.num("b"), c.num("q"), c.num("p"), c.u64("M"), c.num("tol"),
                                  c.u64("seed"), workers);
    Result out;
    out.table.header = {"level", "samples", "mean", "excluded"};
    int excluded = 0;
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
        out.table.rows.push_back({i, r.levels[i].samples, r.levels[i].mean, r.levels[i].excluded});
        excluded = static_cast<int>(r.levels[i].excluded);
    }
    out.summary["exponent"] = r.exponent;
    out.summary["divergence_flag"] = r.divergence_flag;
    out.summary["quantiles"] = {{"q50", json_number(r.quantiles[0])}, {"q90", json_number(r.quantiles[1])},
                                {"q99", json_number(r.quantiles[2])}, {"max", json_number(r.quantiles[3])}};
    if (r.levels.size() >= 2)
        out.summary["mean_ratio_last"] = json_number(r.levels.back().mean / r.levels[r.levels.size() - 2].mean);
    out.warnings["not_converged"] = excluded;
    out.warnings["boundary"] = classify_mean_exponent(r.exponent) == MeanRadiusRegime::Boundary;
    std::cout << "exponent " << format_double(r.exponent) << " flag " << r.divergence_flag << '\n';
    return out;
}

Result run_toy_attractor(const Config& c, std::size_t workers) {
    const double a = c.num("a"), b = c.num("b"), q = c.num("q"), t = c.num("t");
    const auto K = static_cast<int>(c.u64("K"));
    const auto seeds = c.u64("seeds");
    if (K < 2 || seeds == 0) throw ValidationError("need K >= 2 and seeds >= 1");
    UkOptions uo;
    uo.log_floor = c.num("log_floor");
    const std::uint64_t seed = c.u64("seed");
    std::vector<ToyAttractor> att(seeds);
    parallel_for(seeds, workers, [&](std::size_t i) {
        att[i] = toy_attractor(BernoulliPath{a, b, q, derive_seed(seed, i), 0}, K, t, uo);
    });
    Result out;
    out.table.header = {"seed_index", "seed", "k", "log_half_width", "status", "depth"};
    int diverged = 0, min_positive = K;
    for (std::size_t i = 0; i < seeds; ++i) {
        out.table.rows.push_back({i, derive_seed(seed, i), 1, std::log(att[i].u1), "u1", 0});
        int positive = 0;
        for (int k = 2; k <= K; ++k) {
            const auto& h = att[i].half_widths[static_cast<std::size_t>(k - 2)];
            const bool ok = h.status == ToyStatus::Converged;
            out.table.rows.push_back({i, derive_seed(seed, i), k, h.log_half_width,
                                      ok ? "converged" : (h.budget_exhausted ? "budget" : "diverged"), h.depth});
            positive += ok;
            diverged += !ok;
        }
        min_positive = std::min(min_positive, positive);
    }
    out.summary["min_positive_count"] = min_positive;
    out.summary["all_finite"] = diverged == 0;
    out.summary["u1_mean_finite"] = std::isfinite(toy_u1_mean(a, b, q));
    out.warnings["diverged"] = diverged;
    std::cout << "positive half-widths per seed: at least " << min_positive << " of " << K - 1 << '\n';
    return out;
}

struct Axis {
    std::string name;
    std::vector<double> values;
};

Axis parse_axis(const std::string& spec) {
    std::vector<std::string> f;
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ':');) f.push_back(trim(item));
    if (f.size() != 4) throw ValidationError("axis: expected name:start:stop:step, got '" + spec + "'");
    if (f[0] != "a" && f[0] != "b" && f[0] != "q" && f[0] != "p")
        throw ValidationError("axis: parameter must be a, b, q or p");
    const double x0 = Config::parse_double("axis", f[1]), x1 = Config::parse_double("axis", f[2]),
                 dx = Config::parse_double("axis", f[3]);
    if (!(dx > 0.0) || !(x1 >= x0)) throw ValidationError("axis: need step > 0 and stop >= start");
    Axis ax{f[0], {}};
    const auto n = static_cast<std::size_t>(std::floor((x1 - x0) / dx + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) ax.values.push_back(x0 + double(i) * dx);
    return ax;
}

Result run_sweep(const Config& c, std::size_t workers) {
    std::vector<Axis> axes;
    for (const char* k : {"axis1", "axis2", "axis3"})
        if (!c.str(k).empty()) axes.push_back(parse_axis(c.str(k)));
    if (axes.empty()) throw ValidationError("sweep: empty grid (set axis1)");
    const std::string target = c.str("target");
    std::vector<std::string> metrics;
    if (target == "criterion")
        metrics = {"weighted_drift", "raw_drift", "finite_mean_exponent"};
    else if (target == "ode-sim")
        metrics = {"mean_alpha", "non_dissipative"};
    else
        throw ValidationError("sweep: target must be criterion or ode-sim");
    std::string metric = c.str("metric");
    if (metric.empty()) metric = target == "criterion" ? "weighted_drift" : "mean_alpha";
    const auto mcol = std::find(metrics.begin(), metrics.end(), metric);
    if (mcol == metrics.end()) throw ValidationError("sweep: unknown metric " + metric);

    std::size_t cells = 1;
    for (const auto& a : axes) cells *= a.values.size();
    auto coords = [&](std::size_t cell) {
        std::map<std::string, double> p{{"a", c.num("a")}, {"b", c.num("b")}, {"q", c.num("q")}, {"p", c.num("p")}};
        std::vector<double> at(axes.size());
        for (std::size_t j = axes.size(); j-- > 0;) {
            at[j] = axes[j].values[cell % axes[j].values.size()];
            p[axes[j].name] = at[j];
            cell /= axes[j].values.size();
        }
        return std::make_pair(p, at);
    };

    std::vector<std::vector<double>> vals(cells, std::vector<double>(metrics.size(), std::nan("")));
    std::vector<std::string> errors(cells);
    SimOptions so;
    so.sample_dt = c.num("sample_dt");
    so.step = StepControl::per_period(c.num("steps_per_period"));
    parallel_for(cells, workers, [&](std::size_t i) {
        try {
            const auto [p, at] = coords(i);
            if (target == "criterion") {
                const auto r = criterion_report(p.at("a"), p.at("b"), p.at("q"), p.at("p"));
                vals[i] = {r.weighted_drift, r.raw_drift, r.finite_mean_exponent};
            } else {
                const auto f = bernoulli_ensemble_fit(p.at("a"), p.at("b"), p.at("q"), p.at("p"), c.num("E0"),
                                                      c.num("T"), c.u64("seeds"), c.u64("seed"), so, 1);
                vals[i] = {f.mean_alpha, double(f.non_dissipative)};
            }
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    Result out;
    out.table.header.push_back("cell");
    for (const auto& a : axes) out.table.header.push_back(a.name);
    for (const auto& m : metrics) out.table.header.push_back(m);
    out.table.header.push_back("error");
    int failed = 0;
    for (std::size_t i = 0; i < cells; ++i) {
        std::vector<json> row{i};
        for (double x : coords(i).second) row.push_back(x);
        for (double x : vals[i]) row.push_back(x);
        row.push_back(errors[i]);
        failed += !errors[i].empty();
        out.table.rows.push_back(std::move(row));
    }

    // Sign changes of the metric along the last axis, per setting of the others.
    const auto mi = static_cast<std::size_t>(mcol - metrics.begin());
    const std::size_t inner = axes.back().values.size();
    json boundary = json::array();
    for (std::size_t blk = 0; blk < cells / inner; ++blk) {
        std::vector<double> ys;
        for (std::size_t j = 0; j < inner; ++j) ys.push_back(vals[blk * inner + j][mi]);
        json entry;
        const auto at = coords(blk * inner).second;
        json fixed = json::object();
        for (std::size_t j = 0; j + 1 < axes.size(); ++j) fixed[axes[j].name] = at[j];
        entry["fixed"] = fixed;
        json xs = json::array();
        for (double x : sign_changes(axes.back().values, ys)) xs.push_back(x);
        entry["crossings"] = xs;
        boundary.push_back(entry);
    }
    out.summary["metric"] = metric;
    out.summary["axis"] = axes.back().name;
    out.summary["boundary"] = boundary;
    out.summary["failed_cells"] = failed;
    out.warnings["not_converged"] = failed;
    std::cout << cells << " cells, " << failed << " failed\n";
    return out;
}

// ---------------------------------------------------------------------------

int run(const std::string& sub, const Config& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string format = cfg.str("format");
    if (format != "csv" && format != "json") throw ValidationError("format must be csv or json");
    const std::size_t workers = workers_of(cfg);
    (void)cfg.u64("seed");

    Result r;
    if (sub == "criterion") r = run_criterion(cfg);
    else if (sub == "linear-lyapunov") r = run_linear_lyapunov(cfg);
    else if (sub == "ode-sim") r = run_ode_sim(cfg, workers);
    else if (sub == "wave-sim") r = run_wave_sim(cfg, format);
    else if (sub == "pullback") r = run_pullback(cfg, workers);
    else if (sub == "radius-mc") r = run_radius_mc(cfg, workers);
    else if (sub == "toy-attractor") r = run_toy_attractor(cfg, workers);
    else if (sub == "sweep") r = run_sweep(cfg, workers);

    const fs::path dir = cfg.str("out");
    fs::create_directories(dir);
    const std::string id = run_id(cfg);
    const fs::path data = dir / (sub + "-" + id + "." + format);
    {
        std::ofstream os(data, std::ios::binary);
        if (format == "csv")
            write_csv(os, r.table);
        else
            os << (r.json_data ? *r.json_data : table_json(r.table)).dump(2) << '\n';
        if (!os) throw std::runtime_error("cannot write " + data.string());
    }

    json m;
    m["subcommand"] = sub;
    m["run_id"] = id;
    m["artifact_version"] = kVersion;
    json conf = json::object();
    for (const auto& [k, v] : cfg.values()) conf[k] = v;
    m["config"] = conf;
    m["outputs"] = {data.filename().string()};
    m["summary"] = r.summary;
    m["warnings"] = r.warnings;
    m["notes"] = r.notes;
    m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m["timestamp"] = utc_timestamp();
    std::ofstream ms(dir / ("manifest-" + id + ".json"), std::ios::binary);
    ms << m.dump(2) << '\n';
    for (const auto& n : r.notes) std::cerr << "warning: " << n << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Experiments on oscillators and wave equations with sign-changing damping"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    std::map<std::string, std::string> flags;
    std::string config_path;
    app.add_option("--config", config_path, "key=value parameter file");
    for (const auto& p : kCommon)
        app.add_option_function<std::string>("--" + p.name, [&flags, n = p.name](const std::string& v) { flags[n] = v; },
                                             p.help);

    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, params] : kParams) {
        auto* s = app.add_subcommand(name);
        for (const auto& p : params)
            s->add_option_function<std::string>("--" + p.name,
                                                [&flags, n = p.name](const std::string& v) { flags[n] = v; }, p.help);
        subs[name] = s;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::string sub;
    for (const auto& [name, s] : subs)
        if (s->parsed()) sub = name;

    try {
        std::map<std::string, std::string> values;
        std::set<std::string> allowed;
        for (const auto& p : kCommon) {
            values[p.name] = p.fallback;
            allowed.insert(p.name);
        }
        for (const auto& p : kParams.at(sub)) {
            values[p.name] = p.fallback;
            allowed.insert(p.name);
        }
        if (!config_path.empty()) {
            std::vector<std::string> unknown;
            for (const auto& [k, v] : read_config_file(config_path)) {
                if (!allowed.count(k))
                    unknown.push_back(k);
                else
                    values[k] = v;
            }
            if (!unknown.empty()) {
                std::string msg = "unknown config keys for " + sub + ":";
                for (const auto& k : unknown) msg += " " + k;
                throw ValidationError(msg);
            }
        }
        for (const auto& [k, v] : flags) values[k] = v;
        return run(sub, Config(sub, values));
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
