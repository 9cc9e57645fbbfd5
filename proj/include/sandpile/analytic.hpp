// ============================================================================
// analytic.hpp — closed-form radial solutions of the continuum free-boundary
// problem  Δu = λ·1_{0<u<k} − A·δ₀  on R^d  (d ≥ 2)
//
// The solution is radial and piecewise explicit.  With Ω = A·ω_d, where ω_d
// is the Green's-kernel constant (ω₂ = −1/(2π), ω_d = 1/(d(d−2)|B₁|) for
// d ≥ 3), and G(r) = r^{2−d} (d ≥ 3) or log r (d = 2):
//
//   u(r) = a₁ + Ω·G(r)                        0 < r ≤ r₁   (plateau u ≥ k)
//   u(r) = a₂ + a₃·G(r) + (λ/2d)·r²           r₁ < r ≤ r₂  (active annulus)
//   u(r) = 0                                  r > r₂
//
// The five defining equations are u(r₂)=0, u'(r₂)=0, u(r₁)=k from both
// branches, and u' continuous at r₁.  Eliminating the coefficients leaves a
// scalar residual in r₁ with a unique positive zero; r₂ and a₁..a₃ follow by
// back-substitution.
//
// Two independent routes are implemented and cross-checked:
//   (1) the generic (λ, A, k) system above, and
//   (2) the literal scaled residuals for the sandpile limit λ=2dm, A=2d,
//       k=1/m, whose root x_m is the rescaled plateau radius at threshold m.
// ============================================================================
#pragma once

#include <functional>
#include <vector>

#include "sandpile/errors.hpp"

namespace sandpile {

struct RadialProblem {
    int d = 2;          // ambient dimension, >= 2
    double lambda = 1;  // bulk density coefficient, > 0
    double A = 1;       // point-source amplitude, > 0
    double k = 1;       // plateau threshold, > 0

    // The unscaled problem: Δu = m·1_{0<u<k} − δ₀.
    static RadialProblem unscaled(int d, double m, double k);
    // The scaled sandpile limit at threshold m: Δu = 2dm·1_{0<u<1/m} − 2d·δ₀.
    static RadialProblem scaled_limit(int d, double m);
};

struct RadialSolution {
    RadialProblem problem;
    double a1 = 0, a2 = 0, a3 = 0;
    double r1 = 0;     // plateau radius (boundary of {u >= k})
    double r2 = 0;     // support radius
    double omega = 0;  // Ω = A·ω_d, the coefficient of G(r) in the plateau branch

    // Residuals of the five defining equations, evaluated at the stored
    // coefficients; all must be below the solver tolerance.
    std::vector<double> residuals() const;
};

// Green's-kernel normalizing constant ω_d; negative iff d = 2.
double omega(int d);

// Volume of the unit ball in R^d.
double unit_ball_volume(int d);

// Solve the five-equation system by bracketed bisection + Newton polish on
// the scalar r₁-residual, then back-substitute.  Throws NumericError when the
// bracket [1e-6, 1e3] contains no sign change, ConfigError for bad problems.
RadialSolution solve_radial(const RadialProblem& p, double tol = 1e-10);

// Scalar residual whose unique positive zero is r₁ (route 1).  Strictly
// decreasing from +∞ at 0⁺ to −k at ∞.
double radial_r1_residual(const RadialProblem& p, double x);

// Literal scaled residual at threshold m (route 2); its unique positive zero
// is x_m.  Under the substitution λ=2dm, A=2d, k=1/m the two routes satisfy
// scaled_xm_residual = −m·radial_r1_residual (d ≥ 3) and −(1/m)·… (d = 2),
// so their roots must coincide — kept separate precisely to cross-check.
double scaled_xm_residual(int d, double m, double x);

// Root x_m of the literal scaled residual at threshold m: the rescaled
// plateau radius.  Independent of solve_radial (route 2); the two must agree.
double inner_radius_xm(int d, double m, double tol = 1e-12);

// m → ∞ limit of x_m.  d=2: 1/(√2·π) in closed form.  d≥3: pinned
// numerically by evaluating inner_radius_xm at m = 1e8.
double limit_radius(int d);

// Evaluate the piecewise radial profile at r > 0 (0 beyond r₂; throws on
// r <= 0 — the profile is singular at the origin).
double eval_radial(const RadialSolution& sol, double r);

// Mean-value check used as the quadrature-surface identity in the m → ∞
// limit: for the ball of radius r₁(last solution of the sequence) — or
// limit_radius(d) when the sequence is empty — carrying uniform boundary
// density of total mass 1, returns |h(0) − average of h over the sphere| for
// a harmonic test polynomial h.  Supported for d ∈ {2, 3}.
double quadrature_identity_check(int d, const std::vector<RadialSolution>& sol_m_sequence,
                                 const std::function<double(const std::vector<double>&)>& h);

// ---------------------------------------------------------------------------
// Scalar root finding: bracketed bisection to width `bisect_width`, then
// safeguarded Newton polish (numeric derivative when df is null).  Throws
// NumericError with bracket diagnostics when f(lo) and f(hi) share a sign.
// ---------------------------------------------------------------------------
struct RootResult {
    double x = 0;
    double residual = 0;
    int iterations = 0;
};

RootResult find_root(const std::function<double(double)>& f,
                     const std::function<double(double)>& df, double lo, double hi,
                     double bisect_width = 1e-8);

// Number of sign changes of f over `points` log-spaced samples of [lo, hi];
// the r₁-residuals must show exactly one (uniqueness of the free boundary).
int count_sign_changes(const std::function<double(double)>& f, double lo, double hi,
                       int points);

}  // namespace sandpile
