// ============================================================================
// cli.cpp — subcommand parsing (CLI11), run orchestration, PPM rendering,
// and JSON report emission.  See cli.hpp for the exit-status contract.
// ============================================================================
#include "sandpile/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sandpile/analytic.hpp"
#include "sandpile/verify.hpp"

namespace sandpile {

namespace {

using nlohmann::ordered_json;

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string::size_type start = 0;
    for (;;) {
        const auto at = text.find(sep, start);
        out.push_back(text.substr(start, at == std::string::npos ? at : at - start));
        if (at == std::string::npos) return out;
        start = at + 1;
    }
}

int parse_int(const std::string& text, const char* what) {
    int value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw ConfigError(std::string(what) + ": not an integer: '" + text + "'");
    return value;
}

double parse_real(const std::string& text, const char* what) {
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(value)) throw std::invalid_argument(text);
        return value;
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + ": not a finite real: '" + text + "'");
    }
}

std::uint64_t budget_from_real(double value, const char* what) {
    if (!(value >= 1.0) || value > 1.8e19)
        throw ConfigError(std::string(what) + ": budget out of range");
    return static_cast<std::uint64_t>(value);
}

void write_text(const std::string& path, const std::string& text, const char* op) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(std::string(op) + ": cannot open " + path);
    f << text;
    if (!f.good()) throw IoError(std::string(op) + ": write failed for " + path);
}

void emit_json(const ordered_json& j, const std::string& out_path, const char* op) {
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty())
        std::fwrite(text.data(), 1, text.size(), stdout);
    else
        write_text(out_path, text, op);
}

bool single_origin_source(const SandpileState& s) {
    bool found = false;
    for (std::size_t i = 0; i < s.mu0.size(); ++i) {
        if (s.mu0.raw()[i] == 0.0) continue;
        const Site x = s.mu0.site_of(i);
        if (std::any_of(x.begin(), x.end(), [](int c) { return c != 0; })) return false;
        found = true;
    }
    return found;
}

double max_field(const LatticeField& f) {
    double best = 0.0;
    for (const double v : f.raw()) best = std::max(best, v);
    return best;
}

// ---------------------------------------------------------------------------
// JSON stabilization report shared by `simulate --emit report` and `verify`.
// Every check carries its measured value, its tolerance, and a pass flag;
// `pass` at the top level is the conjunction.  Checks that require a single
// origin source (symmetry, monotonicity, boundary graph, minimality, scaling)
// are included only when the state has one.
// ---------------------------------------------------------------------------
struct Report {
    ordered_json j;
    bool pass = true;
};

Report make_report(const SandpileState& s, double eps_stop, double rho) {
    Report rep;
    rep.j["schema"] = 1;
    rep.j["kind"] = "stabilization-report";

    ordered_json cfg;
    cfg["d"] = s.d;
    cfg["n"] = s.n;
    cfg["m"] = s.m;
    cfg["kappa"] = s.kappa;
    cfg["eps_stop"] = eps_stop;
    rep.j["config"] = cfg;

    ordered_json checks;
    const auto add = [&](const char* name, ordered_json entry, bool ok) {
        entry["pass"] = ok;
        checks[name] = std::move(entry);
        rep.pass = rep.pass && ok;
    };

    {
        const double err = std::fabs(field_sum(s.mu) - s.n);
        const double tol = 1e-9 * s.n;
        add("mass_conservation", {{"error", err}, {"tol", tol}}, err <= tol);
    }
    {
        double err = 0.0;
        for (std::size_t i = 0; i < s.u.size(); ++i) {
            const Site x = s.u.site_of(i);
            err = std::max(err, std::fabs(discrete_laplacian(s.u, x) -
                                          (s.mu.raw()[i] - s.mu0.raw()[i])));
        }
        const double tol = 1e-9 * s.m;
        add("laplacian_identity", {{"error", err}, {"tol", tol}}, err <= tol);
    }
    {
        double max_excess = 0.0;
        double cutoff_mass = 0.0;
        for (std::size_t i = 0; i < s.mu.size(); ++i) {
            const Site x = s.mu.site_of(i);
            max_excess = std::max(max_excess, excess(s, x));
            if (s.u.raw()[i] > s.kappa) cutoff_mass = std::max(cutoff_mass, s.mu.raw()[i]);
        }
        const double cutoff_tol = 2 * s.d * eps_stop;
        add("stability",
            {{"max_excess", max_excess},
             {"tol_excess", eps_stop},
             {"cutoff_residual_mass", cutoff_mass},
             {"tol_cutoff", cutoff_tol}},
            max_excess <= eps_stop && cutoff_mass <= cutoff_tol);
    }

    const Regions reg = regions(s);
    {
        double annulus_mass = 0.0;
        for (const std::size_t i : reg.V1) annulus_mass += s.mu.raw()[i];
        const double err = std::fabs(annulus_mass - s.n);
        // All mass ends in the annulus, but at stop tolerance eps every
        // cutoff-core site may still hold up to eps of dust.
        const double tol =
            std::max(1e-9 * s.n, static_cast<double>(reg.V0.size()) * eps_stop);
        add("annulus_mass", {{"error", err}, {"tol", tol}}, err <= tol);
    }
    {
        const auto [count, bound] = boundary_count_bound(s);
        add("boundary_count", {{"count", count}, {"bound", bound}},
            static_cast<double>(count) <= bound);
    }

    ordered_json meas;
    meas["sites_visited"] = reg.V.size();
    meas["sites_core"] = reg.V0.size();
    meas["sites_annulus"] = reg.V1.size();
    meas["max_odometer"] = max_field(s.u);

    const bool origin = single_origin_source(s);
    rep.j["single_origin_source"] = origin;
    if (origin) {
        const double max_u = max_field(s.u);
        const ShapeReport shape = measure_regions(s);
        {
            const double tol = 1e-9 * max_u;
            add("symmetry", {{"error", shape.symmetry_max_err}, {"tol", tol}},
                shape.symmetry_max_err <= tol);
        }
        add("monotonicity", {{"violations", shape.monotonicity_violations}},
            shape.monotonicity_violations == 0);
        add("boundary_graph", ordered_json::object(), check_boundary_graph(s));
        {
            const double tol = 2 * s.d * eps_stop + 1e-9 * s.m;
            const SupersolutionReport sup = analyze_supersolution(s.u, s, tol);
            const double margin_tol = 1e-9 * max_u;
            add("supersolution_minimality",
                {{"accepted", sup.accepted},
                 {"margin", sup.minimality_margin},
                 {"tol", margin_tol}},
                sup.accepted && sup.minimality_margin <= margin_tol);
        }

        meas["inradius_core"] = shape.inradius_V0;
        meas["outradius_core"] = shape.outradius_V0;
        meas["annulus_min"] = shape.annulus_min;
        meas["annulus_max"] = shape.annulus_max;
        meas["lipschitz_max"] = shape.lipschitz_max;
        meas["c11_max"] = shape.c11_max;

        if (rho > 0.0) {
            const RadialSolution sol = solve_radial(RadialProblem::scaled_limit(s.d, s.m));
            const double h = std::pow(s.n, -1.0 / s.d);
            double support2 = 0.0, plateau2 = 0.0;
            for (std::size_t i = 0; i < s.u.size(); ++i) {
                if (s.u.raw()[i] <= 0.0) continue;
                const Site x = s.u.site_of(i);
                double q = 0.0;
                for (const int c : x) q += static_cast<double>(c) * c;
                support2 = std::max(support2, q);
                if (s.u.raw()[i] > s.kappa) plateau2 = std::max(plateau2, q);
            }
            ordered_json scaling;
            scaling["rho"] = rho;
            scaling["sup_err"] = scaling_sup_err(s, sol, rho);
            scaling["analytic_r1"] = sol.r1;
            scaling["analytic_r2"] = sol.r2;
            scaling["support_radius"] = h * std::sqrt(support2);
            scaling["plateau_radius"] = h * std::sqrt(plateau2);
            rep.j["scaling"] = scaling;  // measurements, not pass/fail checks
        }
    }

    rep.j["checks"] = checks;
    rep.j["measurements"] = meas;
    rep.j["pass"] = rep.pass;
    return rep;
}

}  // namespace

std::string to_string(Emit e) {
    switch (e) {
        case Emit::image: return "image";
        case Emit::csv: return "csv";
        case Emit::json: return "json";
        case Emit::report: return "report";
    }
    throw ConfigError("to_string: unknown emit kind");
}

Emit emit_from_string(const std::string& name) {
    if (name == "image") return Emit::image;
    if (name == "csv") return Emit::csv;
    if (name == "json") return Emit::json;
    if (name == "report") return Emit::report;
    throw ConfigError("emit: unknown artifact '" + name +
                      "' (expected image, csv, json, or report)");
}

std::pair<Site, double> parse_source_spec(const std::string& spec, int d) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size())
        throw ConfigError("source: expected \"x1,...,xd:mass\", got '" + spec + "'");
    const std::vector<std::string> coords = split(spec.substr(0, colon), ',');
    if (static_cast<int>(coords.size()) != d)
        throw ConfigError("source: got " + std::to_string(coords.size()) +
                          " coordinates for d = " + std::to_string(d) + " in '" + spec + "'");
    Site x;
    x.reserve(coords.size());
    for (const std::string& c : coords) x.push_back(parse_int(c, "source"));
    return {std::move(x), parse_real(spec.substr(colon + 1), "source")};
}

void render_image(const SandpileState& s, const std::string& path) {
    if (s.d != 2) throw ConfigError("render_image: only d = 2 states can be rendered");

    long xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (std::size_t i = 0; i < s.visited.size(); ++i) {
        if (!s.visited.raw()[i]) continue;
        const Site x = s.visited.site_of(i);
        if (!any) {
            xmin = xmax = x[0];
            ymin = ymax = x[1];
            any = true;
        } else {
            xmin = std::min<long>(xmin, x[0]);
            xmax = std::max<long>(xmax, x[0]);
            ymin = std::min<long>(ymin, x[1]);
            ymax = std::max<long>(ymax, x[1]);
        }
    }
    if (!any) throw ConfigError("render_image: the state has no visited sites");

    const long width = xmax - xmin + 1;
    const long height = ymax - ymin + 1;
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    const double mass_floor = 1e-6 * s.m;  // residual dust renders as mass-free
    Site x(2, 0);
    for (long y = ymax; y >= ymin; --y) {      // top row = largest y
        x[1] = static_cast<int>(y);
        for (long cx = xmin; cx <= xmax; ++cx) {
            x[0] = static_cast<int>(cx);
            unsigned char r = 255, g = 255, b = 255;  // unvisited
            if (s.visited.at(x)) {
                const double mu = s.mu.at(x);
                if (s.mu0.at(x) > 0.0) {
                    r = 220; g = 0; b = 0;             // source
                } else if (mu <= mass_floor) {
                    r = 160; g = 160; b = 160;         // visited, mass-free
                } else {
                    const double t = std::clamp(mu / s.m, 0.0, 1.0);
                    const auto ch = [](double v) {
                        return static_cast<unsigned char>(std::lround(v));
                    };
                    r = ch(200.0 * (1.0 - t));
                    g = ch(200.0 * (1.0 - t));
                    b = ch(255.0 - 100.0 * t);         // light → dark blue
                }
            }
            bytes.push_back(static_cast<char>(r));
            bytes.push_back(static_cast<char>(g));
            bytes.push_back(static_cast<char>(b));
        }
    }

    std::ostringstream header;
    header << "P6\n" << width << " " << height << "\n255\n";
    write_text(path, header.str() + bytes, "render_image");
}

int run(const RunConfig& cfg) {
    if (cfg.emit.count(Emit::image) && cfg.d != 2)
        throw ConfigError("simulate: --emit image requires --dim 2");
    if (cfg.eps_stop && !(*cfg.eps_stop > 0.0))
        throw ConfigError("simulate: --eps-stop must be positive");

    SandpileState s = new_state(cfg.d, cfg.sources, cfg.m);
    const double eps = cfg.eps_stop ? *cfg.eps_stop : default_eps_stop(s.n);
    const StabilizeOutcome outcome =
        stabilize(s, cfg.schedule, eps,
                  {.max_topplings = cfg.max_topplings, .threads = cfg.threads});

    std::printf("stabilized: d=%d n=%g m=%g schedule=%s sweeps=%lld topplings=%llu "
                "residual=%.3e elapsed=%.1fs\n",
                s.d, s.n, s.m, to_string(cfg.schedule.kind).c_str(), outcome.sweeps,
                static_cast<unsigned long long>(outcome.topplings), outcome.residual_excess,
                outcome.elapsed_seconds);

    if (cfg.emit.count(Emit::image)) {
        const std::string path = cfg.out_prefix + ".ppm";
        render_image(s, path);
        std::printf("wrote %s\n", path.c_str());
    }
    if (cfg.emit.count(Emit::csv) || cfg.emit.count(Emit::json)) {
        const std::string csv = cfg.out_prefix + ".csv";
        const std::string json = cfg.out_prefix + ".json";
        write_checkpoint(s, outcome, cfg.schedule, eps, csv, json);
        std::printf("wrote %s\nwrote %s\n", csv.c_str(), json.c_str());
    }

    bool pass = true;
    if (cfg.emit.count(Emit::report)) {
        Report rep = make_report(s, eps, 0.0);
        ordered_json outcome_j;
        outcome_j["schedule"] = to_string(cfg.schedule.kind);
        outcome_j["seed"] = cfg.schedule.seed;
        outcome_j["threads"] = cfg.threads;
        outcome_j["sweeps"] = outcome.sweeps;
        outcome_j["topplings"] = outcome.topplings;
        outcome_j["total_toppled_mass"] = outcome.total_toppled_mass;
        outcome_j["residual_excess"] = outcome.residual_excess;
        outcome_j["elapsed_seconds"] = outcome.elapsed_seconds;
        rep.j["outcome"] = outcome_j;
        const std::string path = cfg.out_prefix + ".report.json";
        emit_json(rep.j, path, "report");
        std::printf("wrote %s\n", path.c_str());
        pass = rep.pass;
    }
    return pass ? 0 : 1;
}

int run_radial(const RadialConfig& cfg) {
    RadialProblem p = cfg.unscaled ? RadialProblem::unscaled(cfg.d, cfg.m, cfg.plateau)
                                   : RadialProblem::scaled_limit(cfg.d, cfg.m);
    if (cfg.amplitude > 0.0) p.A = cfg.amplitude;
    if (cfg.lambda > 0.0) p.lambda = cfg.lambda;
    const RadialSolution sol = solve_radial(p);

    ordered_json j;
    j["schema"] = 1;
    j["kind"] = "radial-solution";
    j["d"] = p.d;
    j["threshold_m"] = cfg.m;
    j["lambda"] = p.lambda;
    j["A"] = p.A;
    j["k"] = p.k;
    j["omega"] = sol.omega;
    j["a1"] = sol.a1;
    j["a2"] = sol.a2;
    j["a3"] = sol.a3;
    j["r1"] = sol.r1;
    j["r2"] = sol.r2;
    j["residuals"] = sol.residuals();
    emit_json(j, cfg.out, "radial");
    return 0;
}

int run_verify(const VerifyConfig& cfg) {
    if (cfg.in_prefix.empty()) throw ConfigError("verify: --in prefix is required");
    if (cfg.rho < 0.0) throw ConfigError("verify: --rho must be non-negative");
    const std::string csv = cfg.in_prefix + ".csv";
    const std::string json = cfg.in_prefix + ".json";

    ordered_json sidecar;
    {
        std::ifstream f(json);
        if (!f) throw IoError("verify: cannot open " + json);
        try {
            f >> sidecar;
        } catch (const std::exception& e) {
            throw IoError("verify: bad sidecar " + json + ": " + e.what());
        }
    }
    if (!sidecar.contains("eps_stop"))
        throw IoError("verify: sidecar " + json + " lacks eps_stop");

    const SandpileState s = read_checkpoint(csv, json);
    Report rep = make_report(s, sidecar["eps_stop"].get<double>(), cfg.rho);
    rep.j["checkpoint"] = sidecar;
    emit_json(rep.j, cfg.out, "verify");
    return rep.pass ? 0 : 1;
}

int run_calibrate(const CalibrateConfig& cfg) {
    std::function<double(double)> rho_fn;
    std::function<double(double)> tol_fn;
    if (cfg.rho > 0.0) rho_fn = [r = cfg.rho](double) { return r; };
    if (cfg.tol > 0.0) tol_fn = [t = cfg.tol](double) { return t; };

    const CalibrationReport cal =
        calibrate_F(cfg.thresholds, rho_fn, tol_fn,
                    {.d = cfg.d,
                     .n_start = cfg.n_start,
                     .n_cap = cfg.n_cap,
                     .max_topplings = cfg.max_topplings});

    ordered_json j;
    j["schema"] = 1;
    j["kind"] = "calibration";
    j["d"] = cfg.d;
    j["n_start"] = cfg.n_start;
    j["n_cap"] = cfg.n_cap;
    ordered_json pairs = ordered_json::array();
    for (const auto& [m, n] : cal.pairs) pairs.push_back({m, n});
    j["pairs"] = pairs;
    j["truncated"] = cal.truncated;
    emit_json(j, cfg.out, "calibrate");
    return 0;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Lattice-growth simulator: a divisible sandpile with an odometer cutoff,\n"
                 "its continuum radial profile, and structural verification tools."};
    app.require_subcommand(1);

    // --- simulate ----------------------------------------------------------
    auto* sim = app.add_subcommand("simulate",
                                   "Stabilize a source configuration and emit artifacts");
    int sim_dim = 2;
    std::vector<std::string> sim_sources;
    double sim_m = 10.0;
    double sim_eps = 0.0;
    std::string sim_schedule = "sweep";
    std::uint64_t sim_seed = 0;
    std::string sim_out = "run";
    std::string sim_emit = "csv,json";
    int sim_threads = 1;
    double sim_budget = 1e12;
    sim->add_option("--dim", sim_dim, "lattice dimension d >= 2")->capture_default_str();
    sim->add_option("--source", sim_sources,
                    "source site and mass as \"x1,...,xd:mass\" (repeatable)")
        ->required()
        ->type_size(1);
    sim->add_option("--threshold", sim_m, "stability threshold m")->capture_default_str();
    auto* eps_opt = sim->add_option("--eps-stop", sim_eps,
                                    "stop once every excess is <= this (default 1e-12*n)")
                        ->check(CLI::PositiveNumber);
    sim->add_option("--schedule", sim_schedule, "toppling order")
        ->check(CLI::IsMember({"sweep", "random", "priority"}))
        ->capture_default_str();
    sim->add_option("--seed", sim_seed, "seed for the random schedule")->capture_default_str();
    sim->add_option("--out", sim_out, "output path prefix")->capture_default_str();
    sim->add_option("--emit", sim_emit, "comma list of image,csv,json,report")
        ->capture_default_str();
    sim->add_option("--threads", sim_threads, "parallel sweep workers")
        ->envname("SANDPILE_THREADS")
        ->capture_default_str();
    sim->add_option("--max-topplings", sim_budget, "toppling budget before giving up")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    // --- radial ------------------------------------------------------------
    auto* rad = app.add_subcommand("radial",
                                   "Solve the continuum radial profile and emit JSON");
    RadialConfig rad_cfg;
    rad->add_option("--dim", rad_cfg.d, "ambient dimension d >= 2")->capture_default_str();
    rad->add_option("--threshold", rad_cfg.m, "threshold m of the scaled problem")
        ->capture_default_str();
    rad->add_flag("--unscaled", rad_cfg.unscaled,
                  "solve the unscaled problem (lambda = m, A = 1) instead of the scaled limit");
    rad->add_option("--plateau", rad_cfg.plateau, "plateau level k of the unscaled problem")
        ->capture_default_str();
    rad->add_option("--amplitude", rad_cfg.amplitude,
                    "override the point-source amplitude A (investigation knob)");
    rad->add_option("--lambda", rad_cfg.lambda, "override the bulk coefficient lambda");
    rad->add_option("--out", rad_cfg.out, "write JSON here instead of stdout");

    // --- verify ------------------------------------------------------------
    auto* ver = app.add_subcommand("verify",
                                   "Check a stored checkpoint and emit a JSON report");
    VerifyConfig ver_cfg;
    ver->add_option("--in", ver_cfg.in_prefix, "checkpoint prefix (reads <in>.csv + <in>.json)")
        ->required();
    ver->add_option("--rho", ver_cfg.rho,
                    "probe radius for the scaling-limit comparison (0 = skip)")
        ->capture_default_str();
    ver->add_option("--out", ver_cfg.out, "write the report here instead of stdout");

    // --- calibrate ---------------------------------------------------------
    auto* cal = app.add_subcommand("calibrate",
                                   "Search the threshold -> lattice-size calibration");
    std::string cal_thresholds;
    CalibrateConfig cal_cfg;
    double cal_budget = 4e9;
    cal->add_option("--thresholds", cal_thresholds, "comma list of thresholds m (increasing)")
        ->required();
    cal->add_option("--dim", cal_cfg.d, "lattice dimension d >= 2")->capture_default_str();
    cal->add_option("--n-start", cal_cfg.n_start, "smallest lattice mass tried")
        ->capture_default_str();
    cal->add_option("--n-cap", cal_cfg.n_cap, "largest lattice mass tried")
        ->capture_default_str();
    cal->add_option("--max-topplings", cal_budget, "per-run toppling budget")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cal->add_option("--rho", cal_cfg.rho, "probe radius (default 1/m)");
    cal->add_option("--tol", cal_cfg.tol, "sup-error tolerance (default 1/m)");
    cal->add_option("--out", cal_cfg.out, "write JSON here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) {
            RunConfig cfg;
            cfg.d = sim_dim;
            for (const std::string& spec : sim_sources)
                cfg.sources.push_back(parse_source_spec(spec, cfg.d));
            cfg.m = sim_m;
            cfg.schedule = {schedule_from_string(sim_schedule), sim_seed};
            if (eps_opt->count() > 0) cfg.eps_stop = sim_eps;
            cfg.out_prefix = sim_out;
            cfg.emit.clear();
            for (const std::string& name : split(sim_emit, ','))
                cfg.emit.insert(emit_from_string(name));
            cfg.threads = sim_threads;
            cfg.max_topplings = budget_from_real(sim_budget, "simulate");
            return run(cfg);
        }
        if (rad->parsed()) return run_radial(rad_cfg);
        if (ver->parsed()) return run_verify(ver_cfg);
        if (cal->parsed()) {
            for (const std::string& t : split(cal_thresholds, ','))
                cal_cfg.thresholds.push_back(parse_real(t, "calibrate"));
            cal_cfg.max_topplings = budget_from_real(cal_budget, "calibrate");
            return run_calibrate(cal_cfg);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const NonConvergenceError& e) {
        std::fprintf(stderr, "non-convergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;  // unreachable: require_subcommand(1) guarantees a dispatch
}

}  // namespace sandpile
