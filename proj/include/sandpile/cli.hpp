// ============================================================================
// cli.hpp — command-line front end: configuration parsing, run orchestration,
// PPM figure rendering, and JSON report emission.
//
// Subcommands
//   simulate   build a state, stabilize it, emit artifacts per --emit
//   radial     solve the continuum radial profile, emit its coefficients
//   verify     load a checkpoint, run the structural checkers, emit a report
//   calibrate  threshold → lattice-size calibration by doubling search
//
// Exit-status contract (run_cli): 0 success, 1 check failure or I/O/numeric
// error, 2 usage error (--help exits 0), 3 non-convergence within the
// toppling budget.
//
// Reproducibility: an identical configuration (including seed and thread
// count) produces byte-identical CSV and PPM artifacts across runs.  JSON
// reports repeat except for the elapsed-seconds field.
// ============================================================================
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sandpile/engine.hpp"
#include "sandpile/errors.hpp"
#include "sandpile/lattice.hpp"

namespace sandpile {

// Artifact classes `simulate` can emit.  csv and json form one checkpoint
// unit (the CSV field dump plus its JSON sidecar): requesting either writes
// both files, since neither is reloadable alone.
enum class Emit { image, csv, json, report };

std::string to_string(Emit e);
Emit emit_from_string(const std::string& name);

// Configuration of one `simulate` run; validated against the engine
// preconditions before any allocation.
struct RunConfig {
    int d = 2;
    std::vector<std::pair<Site, double>> sources;
    double m = 10.0;
    Schedule schedule;                    // sweep, seed 0
    std::optional<double> eps_stop;       // unset → 10⁻¹²·n; explicit ≤ 0 rejected
    std::string out_prefix = "run";
    std::set<Emit> emit = {Emit::csv, Emit::json};
    int threads = 1;                      // env SANDPILE_THREADS, overridden by --threads
    std::uint64_t max_topplings = 1'000'000'000'000ull;
};

// Configuration of one `radial` solve.  The base problem is the scaled
// sandpile limit at the given threshold (λ = 2dm, A = 2d, k = 1/m), or the
// unscaled problem (λ = m, A = 1, plateau --plateau) with --unscaled.
// Positive overrides replace individual coefficients afterwards — the
// amplitude knob in particular exposes the A = 2d versus A = 1 comparison.
struct RadialConfig {
    int d = 2;
    double m = 10.0;
    bool unscaled = false;
    double plateau = 1.0;     // k of the unscaled problem
    double amplitude = 0.0;   // > 0 → override A
    double lambda = 0.0;      // > 0 → override λ
    std::string out;          // empty → stdout
};

// Configuration of one `verify` run over a stored checkpoint pair
// <in_prefix>.csv / <in_prefix>.json.
struct VerifyConfig {
    std::string in_prefix;
    std::string out;          // empty → stdout
    double rho = 0.0;         // > 0 → add the scaling-limit comparison
};

// Configuration of one `calibrate` search (see verify::calibrate_F).
struct CalibrateConfig {
    std::vector<double> thresholds;
    int d = 2;
    double n_start = 1024;
    double n_cap = 1 << 20;
    std::uint64_t max_topplings = 4'000'000'000ull;
    double rho = 0.0;         // > 0 → fixed probe radius (default 1/m)
    double tol = 0.0;         // > 0 → fixed sup-error tolerance (default 1/m)
    std::string out;          // empty → stdout
};

// Parses one "x1,...,xd:mass" source specification (coordinates are signed
// integers, the mass accepts scientific notation).  Throws ConfigError on
// malformed input or a coordinate count different from d.
std::pair<Site, double> parse_source_spec(const std::string& spec, int d);

// Renders a d = 2 state as a binary PPM (P6, maxval 255), one pixel per
// lattice site over the bounding box of the visited set, top row = largest y:
//   unvisited                  white (255,255,255)
//   visited, mass ≤ 10⁻⁶·m     gray  (160,160,160)
//   mass-carrying, t = μ/m     blue ramp (200(1−t), 200(1−t), 255−100t),
//                              light at μ → 0⁺, dark at μ = m
//   source sites               red   (220,0,0)
// The palette is a documented convention of this tool.  Throws ConfigError
// for d ≠ 2 and IoError on write failure.
void render_image(const SandpileState& s, const std::string& path);

// Orchestrators.  Each returns the process exit status for its subcommand
// (0, or 1 when an emitted report contains a failing check) and throws
// ConfigError / NonConvergenceError / IoError / NumericError for the error
// classes listed above; run_cli maps those onto the exit contract.
int run(const RunConfig& cfg);
int run_radial(const RadialConfig& cfg);
int run_verify(const VerifyConfig& cfg);
int run_calibrate(const CalibrateConfig& cfg);

// Full argv → exit status, never throws: parses the subcommand, dispatches,
// prints diagnostics to stderr, and applies the exit-status contract.
int run_cli(int argc, const char* const* argv);

}  // namespace sandpile
