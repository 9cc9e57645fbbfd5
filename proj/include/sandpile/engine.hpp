// ============================================================================
// engine.hpp — the singularly perturbed divisible sandpile on ℤᵈ
//
// State is the triple (V, u, μ): the visited set, the odometer (cumulative
// mass emitted per site), and the current mass distribution. A site x is
// unstable iff exactly one of
//   (a) μ(x) > m                                  → excess ℰ = μ(x) − m
//   (b) 0 < μ(x) ≤ m  and  u(x) > κ = n^{2/d}/m   → excess ℰ = μ(x)
// holds; toppling moves ℰ(x) in equal parts ℰ/2d to the 2d lattice
// neighbours, adds ℰ to u(x), and marks the neighbours visited. Toppling a
// stable site is idle. The exact process only terminates in the limit, so
// stabilize() runs until every excess is ≤ eps_stop (default 10⁻¹²·n).
//
// Two structural identities hold at all times and are kept exact by
// construction (stabilization evolves u only and derives μ = μ₀ + Δ¹u):
//   mass conservation   Σμ = n
//   odometer identity   Δ¹u = μ − μ₀
// ============================================================================
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sandpile/errors.hpp"
#include "sandpile/lattice.hpp"

namespace sandpile {

struct SandpileState {
    int d = 2;
    double n = 0;      // total mass Σμ₀
    double m = 0;      // stability threshold
    double kappa = 0;  // odometer cutoff n^{2/d}/m in rule (b)
    LatticeField mu0;  // initial mass
    LatticeField mu;   // current mass
    LatticeField u;    // odometer
    MaskField visited; // V = supp μ₀ ∪ {u>0} ∪ ∂{u>0}
};

enum class ScheduleKind {
    sweep,             // Jacobi sweeps: all excesses from one snapshot, applied at once
    random_infinitive, // per-pass uniform shuffle, sequential full topplings
    priority_excess,   // greedy: always topple a currently-largest-excess site
};

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_from_string(const std::string& name);

struct Schedule {
    ScheduleKind kind = ScheduleKind::sweep;
    std::uint64_t seed = 0;  // used by random_infinitive only
};

struct StabilizeLimits {
    // Site-toppling cap; large runs (n ≥ 10⁵) need a higher cap than this
    // guard-rail default, e.g. the command-line tool passes 10¹².
    std::uint64_t max_topplings = 1'000'000'000;
    int threads = 1;  // parallel sweep workers; output is thread-count invariant
};

struct StabilizeOutcome {
    long long sweeps = 0;           // applied passes (0 for priority_excess)
    double total_toppled_mass = 0;  // Σ of all applied excesses
    double residual_excess = 0;     // max site excess at exit (≤ eps_stop)
    double elapsed_seconds = 0;
    std::uint64_t topplings = 0;    // individual site-topplings performed
};

// Fresh state: μ = μ₀ given by `sources`, u ≡ 0, visited = supp μ₀.
// Duplicate sites accumulate. Throws ConfigError on empty sources,
// non-positive masses, non-positive m, d < 2, or a site of wrong dimension.
SandpileState new_state(int d, const std::vector<std::pair<Site, double>>& sources, double m);

// Scale-invariant default stop threshold, 10⁻¹²·n.
double default_eps_stop(double n);

// Excess ℰ(x) of the current state; 0 for stable sites. Rules (a)/(b) above.
double excess(const SandpileState& s, const Site& x);

// Topple x fully (idle if stable); returns the toppled mass. Grows the
// underlying box when x sits at its edge, so neighbours always exist.
double topple(SandpileState& s, const Site& x);

// Run the chosen schedule until every site has excess ≤ eps_stop. Sites past
// the cutoff (u > κ) are drained of their full mass per event — the two rules
// compose there — so at exit μ ≤ eps_stop also holds on {u > κ}, not just
// μ ≤ m + eps_stop. The final (u, μ) is schedule-independent up to the stop
// tolerance. Throws
// NonConvergenceError once limits.max_topplings is exceeded; the state is
// left valid (and partially stabilized) in that case.
StabilizeOutcome stabilize(SandpileState& s, const Schedule& schedule, double eps_stop,
                           const StabilizeLimits& limits = {});

// Flat-index site sets (indices into s.u / s.mu / s.visited):
//   V  = visited sites,  V0 = {u > κ},  V1 = V \ V0.
struct Regions {
    std::vector<std::size_t> V, V0, V1;
};
Regions regions(const SandpileState& s);

// Inner-boundary count of V (sites of V with a neighbour outside V),
// excluding source sites, together with its theoretical upper bound
// (2d)²·n/m. The exclusion matters only for degenerate states where V is
// the sources themselves.
std::pair<long long, double> boundary_count_bound(const SandpileState& s);

// Checkpoint = the CSV field dump of `lattice` plus a JSON sidecar
// {d, n, m, kappa, eps_stop, schedule, sweeps, residual_excess}.
void write_checkpoint(const SandpileState& s, const StabilizeOutcome& outcome,
                      const Schedule& schedule, double eps_stop, const std::string& csv_path,
                      const std::string& json_path);

// Rebuild a state from a checkpoint. μ₀ is recovered as μ − Δ¹u thresholded
// at 10⁻⁷·n (the identity holds exactly on checkpoints we wrote; the
// threshold merely strips float noise).
SandpileState read_checkpoint(const std::string& csv_path, const std::string& json_path);

}  // namespace sandpile
