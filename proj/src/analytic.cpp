#include "sandpile/analytic.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace sandpile {

namespace {

constexpr double kPi = std::numbers::pi;

void validate(const RadialProblem& p) {
    if (p.d < 2) throw ConfigError("RadialProblem: dimension must be at least 2");
    if (!(p.lambda > 0) || !(p.A > 0) || !(p.k > 0))
        throw ConfigError("RadialProblem: lambda, A, k must all be positive");
}

// log1p(x) − x, accurate for small |x| (direct form cancels catastrophically).
double log1p_minus_x(double x) {
    if (std::fabs(x) < 1e-3) {
        // −x²/2 + x³/3 − x⁴/4 + ... ; truncation below 1e-18 relative here.
        const double x2 = x * x;
        return x2 * (-1.0 / 2 + x * (1.0 / 3 + x * (-1.0 / 4 + x * (1.0 / 5 + x * (-1.0 / 6 + x * (1.0 / 7))))));
    }
    return std::log1p(x) - x;
}

// expm1(y) − y, accurate for small |y|.
double expm1_minus_y(double y) {
    if (std::fabs(y) < 1e-3) {
        const double y2 = y * y;
        return y2 * (1.0 / 2 + y * (1.0 / 6 + y * (1.0 / 24 + y * (1.0 / 120 + y * (1.0 / 720 + y * (1.0 / 5040))))));
    }
    return std::expm1(y) - y;
}

}  // namespace

RadialProblem RadialProblem::unscaled(int d, double m, double k) {
    RadialProblem p{d, m, 1.0, k};
    validate(p);
    return p;
}

RadialProblem RadialProblem::scaled_limit(int d, double m) {
    RadialProblem p{d, 2.0 * d * m, 2.0 * d, 1.0 / m};
    validate(p);
    return p;
}

double unit_ball_volume(int d) {
    if (d < 1) throw ConfigError("unit_ball_volume: dimension must be positive");
    return std::pow(kPi, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
}

double omega(int d) {
    if (d < 2) throw ConfigError("omega: dimension must be at least 2");
    if (d == 2) return -1.0 / (2.0 * kPi);
    return 1.0 / (d * (d - 2) * unit_ball_volume(d));
}

// ---------------------------------------------------------------------------
// Root finding
// ---------------------------------------------------------------------------

RootResult find_root(const std::function<double(double)>& f,
                     const std::function<double(double)>& df, double lo, double hi,
                     double bisect_width) {
    if (!(lo < hi)) throw ConfigError("find_root: need lo < hi");
    double flo = f(lo);
    double fhi = f(hi);
    int iters = 2;
    if (flo == 0.0) return {lo, 0.0, iters};
    if (fhi == 0.0) return {hi, 0.0, iters};
    if ((flo > 0) == (fhi > 0)) {
        std::ostringstream msg;
        msg << "find_root: no sign change in bracket [" << lo << ", " << hi << "]: f(lo)=" << flo
            << ", f(hi)=" << fhi;
        throw NumericError(msg.str());
    }

    // Phase 1: bisection down to the requested bracket width.
    while (hi - lo > bisect_width) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;  // bracket at rounding resolution
        const double fmid = f(mid);
        ++iters;
        if (fmid == 0.0) return {mid, 0.0, iters};
        if ((fmid > 0) == (flo > 0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
            fhi = fmid;
        }
    }

    // Phase 2: safeguarded Newton polish inside the bracket.
    double x = 0.5 * (lo + hi);
    double fx = f(x);
    double best_x = x, best_f = std::fabs(fx);
    for (int it = 0; it < 24 && fx != 0.0; ++it) {
        double dfx;
        if (df) {
            dfx = df(x);
        } else {
            const double h = std::max(std::fabs(x) * 1e-7, 1e-12);
            dfx = (f(x + h) - f(x - h)) / (2.0 * h);
            iters += 2;
        }
        double xn = x - fx / dfx;
        if (!std::isfinite(xn) || xn <= lo || xn >= hi) xn = 0.5 * (lo + hi);
        if (xn == x) break;
        // Maintain the bracket around the root.
        if ((fx > 0) == (flo > 0)) lo = x;
        else hi = x;
        const double step = std::fabs(xn - x);
        x = xn;
        fx = f(x);
        ++iters;
        if (std::fabs(fx) < best_f) {
            best_f = std::fabs(fx);
            best_x = x;
        }
        if (step <= std::fabs(x) * 1e-15) break;
    }
    return {best_x, best_f, iters};
}

int count_sign_changes(const std::function<double(double)>& f, double lo, double hi,
                       int points) {
    if (points < 2 || !(lo > 0) || !(hi > lo))
        throw ConfigError("count_sign_changes: need 0 < lo < hi and at least 2 points");
    const double ratio = std::log(hi / lo);
    int changes = 0;
    int prev_sign = 0;
    for (int i = 0; i < points; ++i) {
        const double x = lo * std::exp(ratio * i / (points - 1));
        const double v = f(x);
        const int s = (v > 0) - (v < 0);
        if (s != 0) {
            if (prev_sign != 0 && s != prev_sign) ++changes;
            prev_sign = s;
        }
    }
    return changes;
}

// ---------------------------------------------------------------------------
// Route 1: generic five-equation system.  Eliminating a₁..a₃ and r₂ leaves a
// scalar residual on r₁ (strictly decreasing from +∞ to −k, hence a unique
// positive zero):
//
//   d ≥ 3:  g(x) = c·x² + Ω·x^{2−d} − c·(x^d + B)^{2/d} − k,
//           c = λ/(2(d−2)),  B = Ω·d(d−2)/λ
//   d = 2:  g(x) = (λ/4)·(x² − 2Ω/λ)·log1p(−2Ω/(λx²)) − (k − Ω/2)
//
// The d ≥ 3 power difference is evaluated through expm1/log1p so the large-λ
// (equivalently large-m) regime keeps full precision.
// ---------------------------------------------------------------------------

double radial_r1_residual(const RadialProblem& p, double x) {
    const double Om = p.A * omega(p.d);
    if (p.d == 2) {
        const double q = -2.0 * Om / (p.lambda * x * x);  // > 0 since Ω < 0
        return 0.25 * p.lambda * (x * x - 2.0 * Om / p.lambda) * std::log1p(q) - (p.k - 0.5 * Om);
    }
    const int d = p.d;
    const double c = p.lambda / (2.0 * (d - 2));
    const double delta = Om * d * (d - 2) / (p.lambda * std::pow(x, d));
    // c·[(x^d+B)^{2/d} − x²] = c·x²·E2 with E2 = (1+δ)^{2/d} − 1 − (2/d)δ
    // cancelling the Ω·x^{2−d} term exactly:  c·x²·(2/d)δ = Ω·x^{2−d}.
    const double y = (2.0 / d) * std::log1p(delta);
    const double e2 = expm1_minus_y(y) + (2.0 / d) * log1p_minus_x(delta);
    return -c * x * x * e2 - p.k;
}

namespace {

double generic_r1_derivative(const RadialProblem& p, double x) {
    const double Om = p.A * omega(p.d);
    if (p.d == 2) {
        const double q = -2.0 * Om / (p.lambda * x * x);
        return 0.5 * p.lambda * x * std::log1p(q) + Om / x;
    }
    const int d = p.d;
    const double c = p.lambda / (2.0 * (d - 2));
    const double B = Om * d * (d - 2) / p.lambda;
    const double xd = std::pow(x, d);
    return 2.0 * c * x + (2 - d) * Om * std::pow(x, 1 - d) -
           2.0 * c * std::pow(x, d - 1) * std::pow(xd + B, (2.0 - d) / d);
}

}  // namespace

RadialSolution solve_radial(const RadialProblem& p, double tol) {
    validate(p);
    if (!(tol > 0)) throw ConfigError("solve_radial: tolerance must be positive");
    const double Om = p.A * omega(p.d);

    const RootResult root = find_root([&](double x) { return radial_r1_residual(p, x); },
                                      [&](double x) { return generic_r1_derivative(p, x); },
                                      1e-6, 1e3);
    RadialSolution sol;
    sol.problem = p;
    sol.omega = Om;
    sol.r1 = root.x;
    if (p.d == 2) {
        sol.r2 = std::sqrt(sol.r1 * sol.r1 - 2.0 * Om / p.lambda);
        sol.a3 = -0.5 * p.lambda * sol.r2 * sol.r2;
        sol.a2 = -sol.a3 * std::log(sol.r2) - 0.25 * p.lambda * sol.r2 * sol.r2;
        sol.a1 = p.k - Om * std::log(sol.r1);
    } else {
        const int d = p.d;
        const double B = Om * d * (d - 2) / p.lambda;
        sol.r2 = std::pow(std::pow(sol.r1, d) + B, 1.0 / d);
        sol.a3 = p.lambda / (d * (d - 2)) * std::pow(sol.r2, d);
        sol.a2 = -sol.a3 * std::pow(sol.r2, 2 - d) -
                 p.lambda / (2.0 * d) * sol.r2 * sol.r2;
        sol.a1 = p.k - Om * std::pow(sol.r1, 2 - d);
    }

    double worst = 0.0;
    for (double r : sol.residuals()) worst = std::max(worst, std::fabs(r));
    if (!(worst <= tol)) {
        std::ostringstream msg;
        msg << "solve_radial: residuals " << worst << " exceed tolerance " << tol;
        throw NumericError(msg.str());
    }
    return sol;
}

std::vector<double> RadialSolution::residuals() const {
    const RadialProblem& p = problem;
    const int d = p.d;
    const auto G = [&](double r) { return d == 2 ? std::log(r) : std::pow(r, 2 - d); };
    const auto Gp = [&](double r) {
        return d == 2 ? 1.0 / r : (2 - d) * std::pow(r, 1 - d);
    };
    const double quad = p.lambda / (2.0 * d);
    return {
        a2 + a3 * G(r2) + quad * r2 * r2,                      // u(r2) = 0
        a3 * Gp(r2) + (p.lambda / d) * r2,                     // u'(r2) = 0
        a1 + omega * G(r1) - p.k,                              // plateau value at r1
        a2 + a3 * G(r1) + quad * r1 * r1 - p.k,                // annulus value at r1
        (omega - a3) * Gp(r1) - (p.lambda / d) * r1,           // u' continuous at r1
    };
}

double eval_radial(const RadialSolution& sol, double r) {
    if (!(r > 0)) throw ConfigError("eval_radial: the profile is singular at r <= 0");
    if (r > sol.r2) return 0.0;
    const int d = sol.problem.d;
    const double G = d == 2 ? std::log(r) : std::pow(r, 2 - d);
    if (r <= sol.r1) return sol.a1 + sol.omega * G;
    return sol.a2 + sol.a3 * G + sol.problem.lambda / (2.0 * d) * r * r;
}

// ---------------------------------------------------------------------------
// Route 2: literal scaled residuals.  Their unique positive root is the
// rescaled plateau radius x_m for the sandpile limit λ=2dm, A=2d, k=1/m.
//
//   d ≥ 3:  f(x) = 1 − 2dmω·x^{2−d} − m²(d/(d−2))x²
//                    + m²(d/(d−2))(x^d + ω d(d−2)/m)^{2/d}
//   d = 2:  f(x) = (1/m² + 1/(πm)) − (x² + 1/(πm))·log(1 + 1/(πm x²))
//
// For d ≥ 3 the three large terms cancel to O(1); the small-δ branch below
// removes the cancellation analytically (δ = ω d(d−2)/(m x^d)) so the root is
// still well resolved at m = 1e8 where the literal form has no digits left.
// ---------------------------------------------------------------------------

double scaled_xm_residual(int d, double m, double x) {
    if (d == 2) {
        const double c = 1.0 / (kPi * m);
        return (1.0 / (m * m) + c) - (x * x + c) * std::log1p(c / (x * x));
    }
    const double w = omega(d);
    const double dd = static_cast<double>(d) / (d - 2);
    const double delta = w * d * (d - 2) / (m * std::pow(x, d));
    if (delta >= 1e-3) {
        return 1.0 - 2.0 * d * m * w * std::pow(x, 2 - d) - m * m * dd * x * x +
               m * m * dd * std::pow(std::pow(x, d) + w * d * (d - 2) / m, 2.0 / d);
    }
    const double y = (2.0 / d) * std::log1p(delta);
    const double e2 = expm1_minus_y(y) + (2.0 / d) * log1p_minus_x(delta);
    return 1.0 + m * m * dd * x * x * e2;
}

double inner_radius_xm(int d, double m, double tol) {
    if (d < 2) throw ConfigError("inner_radius_xm: dimension must be at least 2");
    if (!(m > 0)) throw ConfigError("inner_radius_xm: threshold must be positive");
    if (!(tol > 0)) throw ConfigError("inner_radius_xm: tolerance must be positive");
    const RootResult root =
        find_root([&](double x) { return scaled_xm_residual(d, m, x); }, nullptr, 1e-6, 1e3,
                  std::min(1e-8, tol));
    return root.x;
}

double limit_radius(int d) {
    if (d < 2) throw ConfigError("limit_radius: dimension must be at least 2");
    if (d == 2) return 1.0 / (std::sqrt(2.0) * kPi);
    return inner_radius_xm(d, 1e8);
}

// ---------------------------------------------------------------------------
// Quadrature-surface identity: uniform unit mass on the sphere of radius ρ
// reproduces h(0) for harmonic h (mean value property).
// ---------------------------------------------------------------------------

namespace {

// Gauss–Legendre nodes/weights on [-1, 1] by Newton on the Legendre recurrence.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(static_cast<std::size_t>(n), 0.0);
    weights.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int j = 2; j <= n; ++j) {
                const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-15) break;
        }
        nodes[static_cast<std::size_t>(i)] = x;
        weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
}

}  // namespace

double quadrature_identity_check(int d, const std::vector<RadialSolution>& sol_m_sequence,
                                 const std::function<double(const std::vector<double>&)>& h) {
    if (d != 2 && d != 3)
        throw ConfigError("quadrature_identity_check: supported for d in {2, 3}");
    const double rho = sol_m_sequence.empty() ? limit_radius(d) : sol_m_sequence.back().r1;

    double avg = 0.0;
    if (d == 2) {
        const int K = 2048;
        std::vector<double> x(2);
        for (int j = 0; j < K; ++j) {
            const double th = 2.0 * kPi * j / K;
            x[0] = rho * std::cos(th);
            x[1] = rho * std::sin(th);
            avg += h(x);
        }
        avg /= K;
    } else {
        const int nz = 48, nphi = 96;
        std::vector<double> z, w;
        gauss_legendre(nz, z, w);
        std::vector<double> x(3);
        for (int i = 0; i < nz; ++i) {
            const double zi = z[static_cast<std::size_t>(i)];
            const double s = std::sqrt(std::max(0.0, 1.0 - zi * zi));
            double ring = 0.0;
            for (int j = 0; j < nphi; ++j) {
                const double ph = 2.0 * kPi * j / nphi;
                x[0] = rho * s * std::cos(ph);
                x[1] = rho * s * std::sin(ph);
                x[2] = rho * zi;
                ring += h(x);
            }
            avg += w[static_cast<std::size_t>(i)] * ring / nphi;
        }
        avg *= 0.5;  // ∫_{-1}^{1} dz/2 == uniform surface measure
    }

    const std::vector<double> origin(static_cast<std::size_t>(d), 0.0);
    return std::fabs(h(origin) - avg);
}

}  // namespace sandpile
