// ============================================================================
// verify.hpp — executable checks for the structural properties of stabilized
// sandpile states: lattice symmetry, radial monotonicity, region geometry,
// regularity bounds, super-solution minimality, scaling-limit convergence
// against the analytic radial profile, and threshold/size calibration.
//
// All checkers are read-only over the state.  Checks that are exact theorems
// of the model carry tight tolerances (1e-9 of the natural scale); geometric
// measurements return raw numbers and leave the judgement to the caller.
// ============================================================================
#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "sandpile/analytic.hpp"
#include "sandpile/engine.hpp"
#include "sandpile/errors.hpp"
#include "sandpile/lattice.hpp"

namespace sandpile {

// Measured geometry of a stabilized single-source state.  Radii are Euclidean
// lattice distances; the cutoff core is V0 = {u > kappa}, the mass annulus is
// V1 = V \ V0.
struct ShapeReport {
    double inradius_V0 = 0;        // largest ball around 0 inside V0 (clamped
                                   // to outradius_V0: integer norms are gappy)
    double outradius_V0 = 0;       // smallest ball around 0 containing V0
    double annulus_min = 0;        // min V1 thickness along the probe rays
    double annulus_max = 0;        // max V1 thickness along the probe rays
    long long boundary_count = 0;  // inner lattice boundary of V (no sources)
    double symmetry_max_err = 0;   // max |u(x) − u(x*)| over all reflections
    long long monotonicity_violations = 0;
    double lipschitz_max = 0;      // max one-step |∇¹u| outside B(0, r0·n^{1/d})
    double c11_max = 0;            // max axis second difference, same region
};

// Sup-norm distance between the rescaled odometer and the analytic radial
// profile, per n.  The rescaling is u_h(x) = h²·u(x/h) with h = n^{−1/d}.
struct ScalingReport {
    std::vector<double> n_values;
    std::vector<double> sup_err;           // sup over |x| ≥ rho of |u_h − u₀|
    std::vector<double> support_radius;    // max |x| over V, times h
    std::vector<double> plateau_radius;    // max |x| over V0, times h
    double rho = 0;
    double m = 0;
};

// Calibration m → n(m): smallest n in a doubling search such that the scaled
// odometer tracks the analytic profile within tol(m) outside radius rho(m).
struct CalibrationReport {
    std::vector<std::pair<double, double>> pairs;  // (m, n(m)), monotonized
    bool truncated = false;  // a search hit the n or toppling budget
};

struct CalibrateOptions {
    int d = 2;
    double n_start = 1024;
    double n_cap = 1 << 20;
    std::uint64_t max_topplings = 4'000'000'000ull;
};

// Max over all sites and all d² mirror reflections (d coordinate hyperplanes,
// the swap and anti-swap hyperplanes for each axis pair) of |u(x) − u(x*)|.
// The odometer of a single origin source is exactly invariant; the sweep
// schedule preserves this to rounding.  Throws ConfigError unless the state
// has a single source at the origin.
double check_symmetry(const SandpileState& s);

// Counts monotonicity violations: pairs (x, x+v), v running over the ±normals
// of the mirror hyperplanes, with |x+v| ≥ |x| (integer squared norms) but
// u(x+v) > u(x) + tol, tol = 1e-9·max u.  Expected 0 on a stabilized single
// origin-source state.  Throws ConfigError on multi-source states.
long long check_monotonicity(const SandpileState& s);

// Populates every ShapeReport field; the regularity scan (lipschitz_max,
// c11_max) excludes the ball of radius r0_frac·n^{1/d} around the origin.
// Throws ConfigError unless single origin source.
ShapeReport measure_regions(const SandpileState& s, double r0_frac = 0.05);

// Super-solution test for a candidate odometer w ≥ 0: with ν = μ₀ + Δ¹w,
//   (i)  ν ≤ m + tol everywhere, and
//   (ii) ν ≤ m·1{0 < w ≤ κ} + tol on {w > 0}.
// The stabilized odometer is the pointwise-smallest such field, so accepted
// candidates must dominate it: minimality_margin = max(u − w) ≤ tol'.
struct SupersolutionReport {
    bool accepted = false;
    double max_excess_everywhere = 0;  // max ν − m over the padded box
    double max_excess_support = 0;     // max ν − m·1{0<w≤κ} over {w > 0}
    double minimality_margin = 0;      // max u − w (meaningful when accepted)
};

SupersolutionReport analyze_supersolution(const LatticeField& w, const SandpileState& s,
                                          double tol);
bool check_supersolution(const LatticeField& w, const SandpileState& s, double tol);

// Sup over lattice points with |x·h| ≥ rho of |h²u(x) − u₀(|x·h|)| for a
// stabilized state against a solved radial profile.
double scaling_sup_err(const SandpileState& s, const RadialSolution& sol, double rho);

// Stabilizes a fresh single origin source for each n (sweep schedule) and
// compares the rescaled odometer with the analytic profile of the scaled
// problem (λ = 2dm, A = 2d, k = 1/m).  Requires rho > 0 and n_list strictly
// increasing (ConfigError otherwise).
ScalingReport scaling_convergence(int d, double m, const std::vector<double>& n_list,
                                  double rho);

// For each m (strictly increasing) find the smallest n = n_start·2^j ≤ n_cap
// with scaling_sup_err ≤ tol_of_m(m) outside rho_of_m(m); null callables
// default both to 1/m.  Raw results are monotonized to be non-decreasing;
// hitting the cap sets `truncated` and records the cap value.
CalibrationReport calibrate_F(const std::vector<double>& m_list,
                              const std::function<double(double)>& rho_of_m = nullptr,
                              const std::function<double(double)>& tol_of_m = nullptr,
                              const CalibrateOptions& options = {});

// True iff inside the cone {x_d ≥ |x_i| for all i < d} every lattice line
// parallel to the last axis meets the inner boundary of the region in exactly
// one site — the boundary is a graph over the first d−1 coordinates there.
bool boundary_graph_property(const MaskField& region);
bool check_boundary_graph(const SandpileState& s);

}  // namespace sandpile
