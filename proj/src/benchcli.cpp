#include "hypctl/benchcli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"

#include "hypctl/adaptloop.hpp"
#include "hypctl/plant.hpp"

namespace hypctl {

namespace {

// ---------------------------------------------------------------------------
// value formatting / parsing helpers
// ---------------------------------------------------------------------------

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument(where + ": cannot parse '" + s +
                                    "' as a number");
    }
    if (used != s.size())
        throw std::invalid_argument(where + ": trailing characters in '" + s + "'");
    return v;
}

long long parse_int(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument(where + ": cannot parse '" + s +
                                    "' as an integer");
    }
    if (used != s.size())
        throw std::invalid_argument(where + ": trailing characters in '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true")
        return true;
    if (s == "false")
        return false;
    throw std::invalid_argument(where + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& where) {
    std::vector<int> out;
    for (const std::string& p : split_on(s, ','))
        out.push_back(static_cast<int>(parse_int(p, where)));
    return out;
}

std::vector<double> parse_double_list(const std::string& s,
                                      const std::string& where) {
    std::vector<double> out;
    for (const std::string& p : split_on(s, ','))
        out.push_back(parse_double(p, where));
    return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt_double_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + fmt_double(v[i]);
    return s;
}

CoeffSpec parse_coeff(const std::string& s, const std::string& where) {
    const auto sp = s.find(' ');
    const std::string kind = sp == std::string::npos ? s : s.substr(0, sp);
    const std::string arg = sp == std::string::npos ? "" : s.substr(sp + 1);
    if (kind == "chebyshev")
        return CoeffSpec::chebyshev(parse_double(arg, where));
    if (kind == "sin_shift")
        return CoeffSpec::sin_shift(parse_double(arg, where));
    if (kind == "cos_scale")
        return CoeffSpec::cos_scale(parse_double(arg, where));
    throw std::invalid_argument(where + ": unknown coefficient family '" + kind +
                                "' (expected chebyshev, sin_shift, or cos_scale)");
}

std::string fmt_coeff(const CoeffSpec& c) {
    switch (c.kind) {
    case CoeffKind::chebyshev: return "chebyshev " + fmt_double(c.shape);
    case CoeffKind::sin_shift: return "sin_shift " + fmt_double(c.shape);
    case CoeffKind::cos_scale: return "cos_scale " + fmt_double(c.shape);
    case CoeffKind::tabulated: break;
    }
    throw std::invalid_argument(
        "config: tabulated coefficients cannot be expressed in config text");
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// ---------------------------------------------------------------------------
// the config schema: one setter, one dumper, shared by files and --set
// ---------------------------------------------------------------------------

void set_key(ExperimentConfig& c, const std::string& sec, const std::string& key,
             const std::string& val, const std::string& where) {
    auto bad_key = [&]() -> std::invalid_argument {
        return std::invalid_argument(where + ": unknown key '" + sec + "." + key + "'");
    };
    if (sec == "plant") {
        if (key == "lambda") c.lambda = parse_double(val, where);
        else if (key == "mu") c.mu = parse_double(val, where);
        else if (key == "c1") c.c1 = parse_coeff(val, where);
        else if (key == "c2") c.c2 = parse_coeff(val, where);
        else if (key == "c3") c.c3 = parse_coeff(val, where);
        else if (key == "c4") c.c4 = parse_coeff(val, where);
        else if (key == "r") c.r = parse_double(val, where);
        else if (key == "n_points") c.plant_points = static_cast<int>(parse_int(val, where));
        else if (key == "dt") c.dt = parse_double(val, where);
        else if (key == "T") c.T = parse_double(val, where);
        else if (key == "u0_omega") c.u0_omega = parse_double(val, where);
        else throw bad_key();
    } else if (sec == "adapt") {
        if (key == "c1_bar") c.bounds.c1_bar = parse_double(val, where);
        else if (key == "c2_bar") c.bounds.c2_bar = parse_double(val, where);
        else if (key == "c3_bar") c.bounds.c3_bar = parse_double(val, where);
        else if (key == "c4_bar") c.bounds.c4_bar = parse_double(val, where);
        else if (key == "r_bar") c.bounds.r_bar = parse_double(val, where);
        else if (key == "gamma") c.gains.gamma = parse_double(val, where);
        else if (key == "g1") c.gains.g1 = parse_double(val, where);
        else if (key == "g2") c.gains.g2 = parse_double(val, where);
        else if (key == "g3") c.gains.g3 = parse_double(val, where);
        else if (key == "g4") c.gains.g4 = parse_double(val, where);
        else if (key == "g5") c.gains.g5 = parse_double(val, where);
        else if (key == "rho") c.gains.rho = parse_double(val, where);
        else if (key == "recompute_every") c.recompute_every = static_cast<int>(parse_int(val, where));
        else throw bad_key();
    } else if (sec == "kernel") {
        if (key == "n_points") c.kernel_points = static_cast<int>(parse_int(val, where));
        else if (key == "tol") c.kernel_opts.tol = parse_double(val, where);
        else if (key == "max_iter") c.kernel_opts.max_iter = static_cast<int>(parse_int(val, where));
        else throw bad_key();
    } else if (sec == "operator") {
        if (key == "n_s") c.n_s = static_cast<int>(parse_int(val, where));
        else if (key == "p") c.p = static_cast<int>(parse_int(val, where));
        else if (key == "branch_hidden") c.branch_hidden = parse_int_list(val, where);
        else if (key == "trunk_hidden") c.trunk_hidden = parse_int_list(val, where);
        else if (key == "lr") c.train.lr = parse_double(val, where);
        else if (key == "epochs") c.train.epochs = static_cast<int>(parse_int(val, where));
        else if (key == "batch") c.train.batch = static_cast<int>(parse_int(val, where));
        else if (key == "split") c.train.split = parse_double(val, where);
        else if (key == "shuffle") c.train.shuffle = parse_bool(val, where);
        else throw bad_key();
    } else if (sec == "dataset") {
        if (key == "s1_lo") c.ranges.s1_lo = parse_double(val, where);
        else if (key == "s1_hi") c.ranges.s1_hi = parse_double(val, where);
        else if (key == "s2_lo") c.ranges.s2_lo = parse_double(val, where);
        else if (key == "s2_hi") c.ranges.s2_hi = parse_double(val, where);
        else if (key == "s3_lo") c.ranges.s3_lo = parse_double(val, where);
        else if (key == "s3_hi") c.ranges.s3_hi = parse_double(val, where);
        else if (key == "s4_lo") c.ranges.s4_lo = parse_double(val, where);
        else if (key == "s4_hi") c.ranges.s4_hi = parse_double(val, where);
        else if (key == "r_lo") c.ranges.r_lo = parse_double(val, where);
        else if (key == "r_hi") c.ranges.r_hi = parse_double(val, where);
        else if (key == "n_traj") c.ranges.n_traj = static_cast<int>(parse_int(val, where));
        else if (key == "stride") c.ranges.stride = static_cast<int>(parse_int(val, where));
        else throw bad_key();
    } else if (sec == "arz") {
        if (key == "vf") c.arz.vf = parse_double(val, where);
        else if (key == "rho_m") c.arz.rho_m = parse_double(val, where);
        else if (key == "rho_star") c.arz.rho_star = parse_double(val, where);
        else if (key == "tau") c.arz.tau = parse_double(val, where);
        else if (key == "gamma_exp") c.arz.gamma_exp = parse_double(val, where);
        else if (key == "L") c.arz.L = parse_double(val, where);
        else if (key == "c0") c.arz.c0 = (val == "default") ? std::nan("") : parse_double(val, where);
        else if (key == "n_points") c.arz.n_points = static_cast<int>(parse_int(val, where));
        else if (key == "T") c.arz_T = parse_double(val, where);
        else if (key == "dt") c.arz_dt = parse_double(val, where);
        else if (key == "c_bar") c.arz_c_bar = parse_double(val, where);
        else if (key == "gamma") c.arz_gamma = parse_double(val, where);
        else if (key == "g3") c.arz_g3 = parse_double(val, where);
        else if (key == "rho_gain") c.arz_rho = parse_double(val, where);
        else if (key == "tau_lo") c.arz_ranges.tau_lo = parse_double(val, where);
        else if (key == "tau_hi") c.arz_ranges.tau_hi = parse_double(val, where);
        else if (key == "n_traj") c.arz_ranges.n_traj = static_cast<int>(parse_int(val, where));
        else if (key == "stride") c.arz_ranges.stride = static_cast<int>(parse_int(val, where));
        else if (key == "n_s") c.arz_ranges.n_s = static_cast<int>(parse_int(val, where));
        else if (key == "probes") c.arz_probes = parse_double_list(val, where);
        else throw bad_key();
    } else if (sec == "run") {
        if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(val, where));
        else throw bad_key();
    } else {
        throw std::invalid_argument(where + ": unknown section '" + sec + "'");
    }
}

} // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": expected key = value");
        if (section.empty())
            throw std::invalid_argument(where + ": key before any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        set_key(cfg, section, key, val, where);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::invalid_argument("config file '" + path + "' cannot be opened");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_kv) {
    const std::string where = "--set " + dotted_kv;
    const auto eq = dotted_kv.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument(where + ": expected section.key=value");
    const std::string dotted = trim(dotted_kv.substr(0, eq));
    const std::string val = trim(dotted_kv.substr(eq + 1));
    const auto dot = dotted.find('.');
    if (dot == std::string::npos)
        throw std::invalid_argument(where + ": expected section.key=value");
    set_key(cfg, dotted.substr(0, dot), dotted.substr(dot + 1), val, where);
}

std::string dump_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "# resolved experiment configuration (schema config/1)\n";
    o << "[plant]\n";
    o << "lambda = " << fmt_double(c.lambda) << "\n";
    o << "mu = " << fmt_double(c.mu) << "\n";
    o << "c1 = " << fmt_coeff(c.c1) << "\n";
    o << "c2 = " << fmt_coeff(c.c2) << "\n";
    o << "c3 = " << fmt_coeff(c.c3) << "\n";
    o << "c4 = " << fmt_coeff(c.c4) << "\n";
    o << "r = " << fmt_double(c.r) << "\n";
    o << "n_points = " << c.plant_points << "\n";
    o << "dt = " << fmt_double(c.dt) << "\n";
    o << "T = " << fmt_double(c.T) << "\n";
    o << "u0_omega = " << fmt_double(c.u0_omega) << "\n";
    o << "[adapt]\n";
    o << "c1_bar = " << fmt_double(c.bounds.c1_bar) << "\n";
    o << "c2_bar = " << fmt_double(c.bounds.c2_bar) << "\n";
    o << "c3_bar = " << fmt_double(c.bounds.c3_bar) << "\n";
    o << "c4_bar = " << fmt_double(c.bounds.c4_bar) << "\n";
    o << "r_bar = " << fmt_double(c.bounds.r_bar) << "\n";
    o << "gamma = " << fmt_double(c.gains.gamma) << "\n";
    o << "g1 = " << fmt_double(c.gains.g1) << "\n";
    o << "g2 = " << fmt_double(c.gains.g2) << "\n";
    o << "g3 = " << fmt_double(c.gains.g3) << "\n";
    o << "g4 = " << fmt_double(c.gains.g4) << "\n";
    o << "g5 = " << fmt_double(c.gains.g5) << "\n";
    o << "rho = " << fmt_double(c.gains.rho) << "\n";
    o << "recompute_every = " << c.recompute_every << "\n";
    o << "[kernel]\n";
    o << "n_points = " << c.kernel_points << "\n";
    o << "tol = " << fmt_double(c.kernel_opts.tol) << "\n";
    o << "max_iter = " << c.kernel_opts.max_iter << "\n";
    o << "[operator]\n";
    o << "n_s = " << c.n_s << "\n";
    o << "p = " << c.p << "\n";
    o << "branch_hidden = " << fmt_int_list(c.branch_hidden) << "\n";
    o << "trunk_hidden = " << fmt_int_list(c.trunk_hidden) << "\n";
    o << "lr = " << fmt_double(c.train.lr) << "\n";
    o << "epochs = " << c.train.epochs << "\n";
    o << "batch = " << c.train.batch << "\n";
    o << "split = " << fmt_double(c.train.split) << "\n";
    o << "shuffle = " << (c.train.shuffle ? "true" : "false") << "\n";
    o << "[dataset]\n";
    o << "s1_lo = " << fmt_double(c.ranges.s1_lo) << "\n";
    o << "s1_hi = " << fmt_double(c.ranges.s1_hi) << "\n";
    o << "s2_lo = " << fmt_double(c.ranges.s2_lo) << "\n";
    o << "s2_hi = " << fmt_double(c.ranges.s2_hi) << "\n";
    o << "s3_lo = " << fmt_double(c.ranges.s3_lo) << "\n";
    o << "s3_hi = " << fmt_double(c.ranges.s3_hi) << "\n";
    o << "s4_lo = " << fmt_double(c.ranges.s4_lo) << "\n";
    o << "s4_hi = " << fmt_double(c.ranges.s4_hi) << "\n";
    o << "r_lo = " << fmt_double(c.ranges.r_lo) << "\n";
    o << "r_hi = " << fmt_double(c.ranges.r_hi) << "\n";
    o << "n_traj = " << c.ranges.n_traj << "\n";
    o << "stride = " << c.ranges.stride << "\n";
    o << "[arz]\n";
    o << "vf = " << fmt_double(c.arz.vf) << "\n";
    o << "rho_m = " << fmt_double(c.arz.rho_m) << "\n";
    o << "rho_star = " << fmt_double(c.arz.rho_star) << "\n";
    o << "tau = " << fmt_double(c.arz.tau) << "\n";
    o << "gamma_exp = " << fmt_double(c.arz.gamma_exp) << "\n";
    o << "L = " << fmt_double(c.arz.L) << "\n";
    o << "c0 = " << (std::isnan(c.arz.c0) ? std::string("default") : fmt_double(c.arz.c0)) << "\n";
    o << "n_points = " << c.arz.n_points << "\n";
    o << "T = " << fmt_double(c.arz_T) << "\n";
    o << "dt = " << fmt_double(c.arz_dt) << "\n";
    o << "c_bar = " << fmt_double(c.arz_c_bar) << "\n";
    o << "gamma = " << fmt_double(c.arz_gamma) << "\n";
    o << "g3 = " << fmt_double(c.arz_g3) << "\n";
    o << "rho_gain = " << fmt_double(c.arz_rho) << "\n";
    o << "tau_lo = " << fmt_double(c.arz_ranges.tau_lo) << "\n";
    o << "tau_hi = " << fmt_double(c.arz_ranges.tau_hi) << "\n";
    o << "n_traj = " << c.arz_ranges.n_traj << "\n";
    o << "stride = " << c.arz_ranges.stride << "\n";
    o << "n_s = " << c.arz_ranges.n_s << "\n";
    o << "probes = " << fmt_double_list(c.arz_probes) << "\n";
    o << "[run]\n";
    o << "seed = " << c.seed << "\n";
    return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = dump_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

EstimateState bench_estimate(const ExperimentConfig& cfg) {
    const Grid1D g(cfg.plant_points);
    EstimateState est = EstimateState::zero(g, cfg.bounds, cfg.gains);
    const CoeffSpec* specs[4] = {&cfg.c1, &cfg.c2, &cfg.c3, &cfg.c4};
    Field* chans[4] = {&est.c1h, &est.c2h, &est.c3h, &est.c4h};
    const double bars[4] = {cfg.bounds.c1_bar, cfg.bounds.c2_bar,
                            cfg.bounds.c3_bar, cfg.bounds.c4_bar};
    for (int i = 0; i < 4; ++i) {
        Field f = sample_coeff(*specs[i], g);
        for (int j = 0; j < g.n_points; ++j)
            f[j] = std::clamp(f[j], -bars[i], bars[i]);
        *chans[i] = std::move(f);
    }
    est.rh = std::clamp(cfg.r, -cfg.bounds.r_bar, cfg.bounds.r_bar);
    return est;
}

std::vector<BenchRow> bench_kernels(const OperatorModel& model,
                                    const EstimateState& est,
                                    const std::vector<double>& resolutions,
                                    double lambda, double mu,
                                    const KernelSolveOptions& opts) {
    if (resolutions.empty())
        throw std::invalid_argument("bench_kernels: no resolutions given");
    model.check_shapes();

    constexpr int kWarmups = 2, kReps = 11;
    std::vector<BenchRow> rows;
    for (double dx : resolutions) {
        if (!(dx > 0.0 && dx < 1.0))
            throw std::invalid_argument("bench_kernels: bad resolution " +
                                        fmt_double(dx));
        const double inv = 1.0 / dx;
        const long long n = std::llround(inv);
        if (std::abs(inv - static_cast<double>(n)) > 1e-9 * inv)
            throw std::invalid_argument(
                "bench_kernels: resolution " + fmt_double(dx) +
                " does not divide the unit interval evenly");
        const TriGrid tg(static_cast<int>(n) + 1);
        KernelSolver solver(tg, lambda, mu);

        auto time_ms = [](const std::function<void()>& fn) {
            std::vector<double> samples;
            samples.reserve(kReps);
            for (int rep = 0; rep < kWarmups + kReps; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                fn();
                const auto t1 = std::chrono::steady_clock::now();
                if (rep >= kWarmups)
                    samples.push_back(
                        std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            std::nth_element(samples.begin(), samples.begin() + kReps / 2,
                             samples.end());
            return samples[kReps / 2];
        };

        KernelPair exact, approx;
        const double solver_ms =
            time_ms([&]() { exact = solver.solve(est, opts); });
        const TrunkCache cache = build_trunk_cache(model, tg);
        const double no_ms =
            time_ms([&]() { approx = predict_kernels(model, est, cache); });

        BenchRow row;
        row.dx_kernel = tg.h;
        row.solver_ms = solver_ms;
        row.no_ms = no_ms;
        row.speedup = solver_ms / no_ms;
        row.error = kernel_error(exact, approx, tg);
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(),
              [](const BenchRow& a, const BenchRow& b) {
                  return a.dx_kernel > b.dx_kernel;
              });
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    std::fputs("# schema: bench/1\n", f);
    std::fputs("dx_kernel,solver_ms,no_ms,speedup,error\n", f);
    for (const BenchRow& r : rows)
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.dx_kernel,
                     r.solver_ms, r.no_ms, r.speedup, r.error);
    if (std::fclose(f) != 0)
        throw std::runtime_error("error closing '" + path + "'");
}

// ---------------------------------------------------------------------------
// subcommand runners
// ---------------------------------------------------------------------------

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    if (std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
        std::fclose(f);
        throw std::runtime_error("short write to '" + path + "'");
    }
    if (std::fclose(f) != 0)
        throw std::runtime_error("error closing '" + path + "'");
}

void write_manifest(const std::string& out, const std::string& subcommand,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["schema"] = "manifest/1";
    m["subcommand"] = subcommand;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seed;
    m["versions"] = {{"tool", "0.1.0"},      {"trajectory_csv", 1},
                     {"bench_csv", 1},       {"loss_csv", 1},
                     {"model_container", 1}, {"dataset_container", 1},
                     {"tensor_container", 1}};
    m["outputs"] = outputs;
    write_text(out + "/manifest.json", m.dump(2) + "\n");
    write_text(out + "/config.txt", dump_config(cfg));
}

PlantParams plant_from_config(const ExperimentConfig& cfg, const Grid1D& g) {
    PlantParams p;
    p.lambda = cfg.lambda;
    p.mu = cfg.mu;
    p.c1 = sample_coeff(cfg.c1, g);
    p.c2 = sample_coeff(cfg.c2, g);
    p.c3 = sample_coeff(cfg.c3, g);
    p.c4 = sample_coeff(cfg.c4, g);
    p.r = cfg.r;
    return p;
}

std::pair<Field, Field> initial_data(const ExperimentConfig& cfg,
                                     const Grid1D& g) {
    Field u0(static_cast<std::size_t>(g.n_points));
    Field m0(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        u0[j] = std::sin(cfg.u0_omega * M_PI * g.x(j));
        m0[j] = g.x(j);
    }
    return {std::move(u0), std::move(m0)};
}

ArzRunConfig arz_config(const ExperimentConfig& cfg) {
    ArzRunConfig rc;
    rc.T = cfg.arz_T;
    rc.dt = cfg.arz_dt;
    rc.kernel_grid = TriGrid(cfg.kernel_points);
    rc.kernel_opts = cfg.kernel_opts;
    rc.recompute_every = cfg.recompute_every;
    rc.c_bar = cfg.arz_c_bar;
    rc.gamma = cfg.arz_gamma;
    rc.g3 = cfg.arz_g3;
    rc.rho_gain = cfg.arz_rho;
    rc.probes = cfg.arz_probes;
    return rc;
}

int run_simulate(const ExperimentConfig& cfg, const std::string& out,
                 const std::string& kernel_kind, const std::string& model_path) {
    const Grid1D g(cfg.plant_points);
    const PlantParams truth = plant_from_config(cfg, g);
    const auto [u0, m0] = initial_data(cfg, g);
    const EstimateState est0 = EstimateState::zero(g, cfg.bounds, cfg.gains);
    const IdentifierState id0{u0, m0};

    AdaptiveRunConfig rc;
    rc.T = cfg.T;
    rc.dt = cfg.dt;
    rc.recompute_every = cfg.recompute_every;
    rc.kernel_grid = TriGrid(cfg.kernel_points);
    rc.kernel_opts = cfg.kernel_opts;

    OperatorModel model;
    TrunkCache cache;
    if (kernel_kind == "operator") {
        model = load_model(model_path);
        cache = build_trunk_cache(model, rc.kernel_grid);
        rc.approximate_kernels = [&](const EstimateState& est) {
            return predict_kernels(model, est, cache);
        };
    }

    const AdaptiveRunResult res = run_adaptive(truth, u0, m0, est0, id0, rc, g);
    res.log.write_csv(out + "/trajectory.csv");
    NamedArrays arrs = {
        {"u", res.log.final_state.u.v},  {"m", res.log.final_state.m.v},
        {"uh", res.final_id.uh.v},       {"mh", res.final_id.mh.v},
        {"c1h", res.final_est.c1h.v},    {"c2h", res.final_est.c2h.v},
        {"c3h", res.final_est.c3h.v},    {"c4h", res.final_est.c4h.v},
        {"rh", {res.final_est.rh}},      {"ku", res.final_kernels.ku.v},
        {"km", res.final_kernels.km.v},
    };
    save_tensors(out + "/final_state.ktn", arrs);
    write_manifest(out, "simulate", cfg, {"trajectory.csv", "final_state.ktn"});
    std::fprintf(stderr,
                 "simulate: %zu log rows, final |u| %.3e |m| %.3e, "
                 "V1 violations %d, bounds %s\n",
                 res.log.rows.size(), res.log.rows.back().norm_u,
                 res.log.rows.back().norm_m, res.v1_violations,
                 res.bounds_ok ? "ok" : "VIOLATED");
    return 0;
}

int run_arz_cmd(const ExperimentConfig& cfg, const std::string& out,
                const std::string& controller, const std::string& model_path) {
    ArzRunConfig rc = arz_config(cfg);
    OperatorModel model;
    if (controller == "open")
        rc.controller = ArzController::open_loop;
    else if (controller == "exact")
        rc.controller = ArzController::exact_adaptive;
    else {
        rc.controller = ArzController::neural_adaptive;
        model = load_model(model_path);
        rc.model = &model;
    }
    const ArzRunResult res = run_arz(cfg.arz, rc);
    res.log.write_csv(out + "/trajectory.csv");
    NamedArrays arrs = {
        {"u1", res.log.final_state.u.v},
        {"m1", res.log.final_state.m.v},
        {"rho", res.rho.v},
        {"v", res.v.v},
    };
    if (rc.controller != ArzController::open_loop)
        arrs.emplace_back("chat", res.chat.v);
    save_tensors(out + "/final_state.ktn", arrs);
    write_manifest(out, "arz", cfg, {"trajectory.csv", "final_state.ktn"});
    std::fprintf(stderr,
                 "arz(%s): final Riemann norms |u1| %.3e |m1| %.3e, "
                 "u1(0)-r0 m1(0) consistency %.2e\n",
                 controller.c_str(), res.log.rows.back().norm_u,
                 res.log.rows.back().norm_m, res.u10_consistency);
    return 0;
}

int run_gen_dataset(const ExperimentConfig& cfg, const std::string& out,
                    bool arz) {
    Dataset ds;
    if (arz) {
        ArzDatasetRanges ranges = cfg.arz_ranges;
        ranges.seed = cfg.seed;
        ds = generate_arz_dataset(cfg.arz, ranges, arz_config(cfg));
    } else {
        SamplingRanges ranges = cfg.ranges;
        ranges.seed = cfg.seed;
        DatasetSimParams sim;
        sim.plant_grid = Grid1D(cfg.plant_points);
        sim.lambda = cfg.lambda;
        sim.mu = cfg.mu;
        sim.dt = cfg.dt;
        sim.T = cfg.T;
        sim.kernel_grid = TriGrid(cfg.kernel_points);
        sim.kernel_opts = cfg.kernel_opts;
        sim.bounds = cfg.bounds;
        sim.gains = cfg.gains;
        sim.recompute_every = cfg.recompute_every;
        sim.n_s = cfg.n_s;
        ds = generate_dataset(ranges, sim);
    }
    save_dataset(ds, out + "/dataset.kds");
    write_manifest(out, "gen-dataset", cfg, {"dataset.kds"});
    std::fprintf(stderr, "gen-dataset: %zu records (%s protocol)\n",
                 ds.records.size(), arz ? "arz" : "plant");
    return 0;
}

int run_train(const ExperimentConfig& cfg, const std::string& out,
              const std::string& dataset_path) {
    const Dataset ds = load_dataset(dataset_path);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const OperatorModel init = make_operator_model(
        ds.n_s, cfg.p, cfg.branch_hidden, cfg.trunk_hidden, cfg.seed);
    TrainHistory hist;
    const OperatorModel model = train_operator(ds, tc, hist, &init);
    save_model(model, out + "/model.kno");

    std::ostringstream loss;
    loss << "# schema: loss/1\nepoch,train_loss,test_loss\n";
    for (std::size_t e = 0; e < hist.train_loss.size(); ++e)
        loss << e << "," << fmt_double(hist.train_loss[e]) << ","
             << fmt_double(hist.test_loss[e]) << "\n";
    write_text(out + "/loss.csv", loss.str());
    write_manifest(out, "train", cfg, {"model.kno", "loss.csv"});

    const auto [train_half, test_half] = split_dataset(ds, tc.split, tc.seed);
    std::fprintf(stderr,
                 "train: %d epochs, final train loss %.3e test loss %.3e, "
                 "mean relative L2 (test split) %.3e\n",
                 tc.epochs, hist.train_loss.back(), hist.test_loss.back(),
                 mean_relative_l2(model, test_half));
    return 0;
}

int run_eval_kernel(const ExperimentConfig& cfg, const std::string& out,
                    const std::string& model_path) {
    const EstimateState est = bench_estimate(cfg);
    const TriGrid tg(cfg.kernel_points);
    const KernelPair exact =
        solve_kernels(est, cfg.lambda, cfg.mu, tg, cfg.kernel_opts.tol,
                      cfg.kernel_opts.max_iter);
    NamedArrays arrs = {
        {"grid_n", {static_cast<double>(tg.n_points)}},
        {"ku", exact.ku.v},
        {"km", exact.km.v},
    };
    std::fprintf(stderr, "eval-kernel: converged in %d iterations\n",
                 exact.iterations);
    if (!model_path.empty()) {
        const OperatorModel model = load_model(model_path);
        const KernelPair approx = predict_kernels(model, est, tg);
        arrs.emplace_back("ku_operator", approx.ku.v);
        arrs.emplace_back("km_operator", approx.km.v);
        const double err = kernel_error(exact, approx, tg);
        arrs.emplace_back("operator_error", std::vector<double>{err});
        std::fprintf(stderr, "eval-kernel: operator error %.6e\n", err);
    }
    save_tensors(out + "/kernels.ktn", arrs);
    write_manifest(out, "eval-kernel", cfg, {"kernels.ktn"});
    return 0;
}

int run_bench(const ExperimentConfig& cfg, const std::string& out,
              const std::string& model_path,
              const std::string& resolutions_csv) {
    const OperatorModel model = load_model(model_path);
    const EstimateState est = bench_estimate(cfg);
    const std::vector<double> resolutions =
        parse_double_list(resolutions_csv, "--resolutions");
    const std::vector<BenchRow> rows = bench_kernels(
        model, est, resolutions, cfg.lambda, cfg.mu, cfg.kernel_opts);
    write_bench_csv(rows, out + "/bench.csv");
    write_manifest(out, "bench", cfg, {"bench.csv"});
    for (const BenchRow& r : rows)
        std::fprintf(stderr,
                     "bench: dx %.4g  solver %.3f ms  operator %.3f ms  "
                     "speedup %.1fx  error %.3e\n",
                     r.dx_kernel, r.solver_ms, r.no_ms, r.speedup, r.error);
    return 0;
}

int run_dataset_info(const ExperimentConfig& cfg, const std::string& out,
                     const std::string& dataset_path) {
    const Dataset ds = load_dataset(dataset_path);
    nlohmann::json info;
    info["schema"] = "dataset-info/1";
    info["record_count"] = ds.records.size();
    info["n_s"] = ds.n_s;
    info["kernel_points"] = ds.kernel_grid.n_points;
    info["seed"] = ds.seed;
    info["ranges"] = {{"s1", {ds.ranges.s1_lo, ds.ranges.s1_hi}},
                     {"s2", {ds.ranges.s2_lo, ds.ranges.s2_hi}},
                     {"s3", {ds.ranges.s3_lo, ds.ranges.s3_hi}},
                     {"s4", {ds.ranges.s4_lo, ds.ranges.s4_hi}},
                     {"r", {ds.ranges.r_lo, ds.ranges.r_hi}},
                     {"n_traj", ds.ranges.n_traj},
                     {"stride", ds.ranges.stride}};
    std::map<int, int> per_traj;
    double t_min = 0.0, t_max = 0.0, sup_k = 0.0;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const DatasetRecord& r = ds.records[i];
        ++per_traj[r.traj_id];
        t_min = i == 0 ? r.t_snapshot : std::min(t_min, r.t_snapshot);
        t_max = i == 0 ? r.t_snapshot : std::max(t_max, r.t_snapshot);
        for (std::size_t a = 0; a < r.ku.size(); ++a)
            sup_k = std::max(sup_k,
                             std::max(std::abs(r.ku[a]), std::abs(r.km[a])));
    }
    nlohmann::json traj = nlohmann::json::object();
    for (const auto& [id, count] : per_traj)
        traj[std::to_string(id)] = count;
    info["records_per_trajectory"] = traj;
    info["t_snapshot_min"] = t_min;
    info["t_snapshot_max"] = t_max;
    info["sup_abs_kernel"] = sup_k;
    const std::string text = info.dump(2) + "\n";
    write_text(out + "/dataset_info.json", text);
    write_manifest(out, "dataset-info", cfg, {"dataset_info.json"});
    std::fwrite(text.data(), 1, text.size(), stdout);
    return 0;
}

} // namespace

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"adaptive backstepping boundary control of 2x2 hyperbolic "
                 "systems: simulators, kernel solvers, operator training, "
                 "and benchmarks"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    std::vector<std::string> overrides;
    bool dump_only = false;
    app.add_option("--config", config_path, "experiment config file");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--set", overrides,
                   "override a config value as section.key=value");
    app.add_flag("--dump-config", dump_only,
                 "print the resolved config to stdout and exit");

    std::string kernel_kind = "exact", model_path, controller = "exact";
    std::string dataset_path, resolutions = "0.05,0.01,0.005";
    bool arz_protocol = false;

    CLI::App* sim = app.add_subcommand("simulate", "closed-loop benchmark run");
    sim->add_option("--kernel", kernel_kind, "exact | operator")
        ->check(CLI::IsMember({"exact", "operator"}));
    sim->add_option("--model", model_path, "trained model (operator kernels)");

    CLI::App* arz_cmd = app.add_subcommand("arz", "freeway traffic run");
    arz_cmd->add_option("--controller", controller, "open | exact | neural")
        ->check(CLI::IsMember({"open", "exact", "neural"}));
    arz_cmd->add_option("--model", model_path, "trained model (neural)");

    CLI::App* gen = app.add_subcommand("gen-dataset", "closed-loop snapshots");
    gen->add_flag("--arz", arz_protocol, "use the ARZ protocol");

    CLI::App* train = app.add_subcommand("train", "fit the kernel operator");
    train->add_option("--dataset", dataset_path, "KDS1 dataset")->required();

    CLI::App* evalk = app.add_subcommand("eval-kernel", "solve kernels once");
    evalk->add_option("--model", model_path, "also run the operator");

    CLI::App* bench = app.add_subcommand("bench", "solver vs operator timings");
    bench->add_option("--model", model_path, "trained model")->required();
    bench->add_option("--resolutions", resolutions, "comma-separated dx list");

    CLI::App* info = app.add_subcommand("dataset-info", "describe a dataset");
    info->add_option("--dataset", dataset_path, "KDS1 dataset")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    ExperimentConfig cfg;
    try {
        if (!config_path.empty())
            cfg = load_config(config_path);
        for (const std::string& kv : overrides)
            apply_override(cfg, kv);
        cfg.train.seed = cfg.seed;
        cfg.ranges.seed = cfg.seed;
        cfg.arz_ranges.seed = cfg.seed;
        if (sim->parsed() && kernel_kind == "operator" && model_path.empty())
            throw std::invalid_argument("simulate --kernel operator needs --model");
        if (arz_cmd->parsed() && controller == "neural" && model_path.empty())
            throw std::invalid_argument("arz --controller neural needs --model");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    }

    if (dump_only) {
        const std::string text = dump_config(cfg);
        std::fwrite(text.data(), 1, text.size(), stdout);
        return 0;
    }

    try {
        std::filesystem::create_directories(out_dir);
        if (sim->parsed())
            return run_simulate(cfg, out_dir, kernel_kind, model_path);
        if (arz_cmd->parsed())
            return run_arz_cmd(cfg, out_dir, controller, model_path);
        if (gen->parsed())
            return run_gen_dataset(cfg, out_dir, arz_protocol);
        if (train->parsed())
            return run_train(cfg, out_dir, dataset_path);
        if (evalk->parsed())
            return run_eval_kernel(cfg, out_dir, model_path);
        if (bench->parsed())
            return run_bench(cfg, out_dir, model_path, resolutions);
        if (info->parsed())
            return run_dataset_info(cfg, out_dir, dataset_path);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

} // namespace hypctl
