// ============================================================================
// verify.cpp — read-only structural checks over stabilized sandpile states.
//
// Geometry conventions: sites are integer vectors, |x| is the Euclidean norm
// (squared norms compared in integer arithmetic where exactness matters), and
// every scan runs over the state's storage box — reads through at() treat the
// outside as zero, so boxes of different sizes compose safely.
// ============================================================================
#include "sandpile/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <unordered_map>

namespace sandpile {
namespace {

// Advance x through the cube [-R, R]^d in odometer order; false when done.
bool next_site(Site& x, long R) {
    for (int a = static_cast<int>(x.size()) - 1; a >= 0; --a) {
        if (x[a] < R) {
            ++x[a];
            return true;
        }
        x[a] = static_cast<int>(-R);
    }
    return false;
}

long long norm2(const Site& x) {
    long long s = 0;
    for (const int c : x) s += static_cast<long long>(c) * c;
    return s;
}

double max_abs(const LatticeField& f) {
    double m = 0;
    for (std::size_t i = 0; i < f.size(); ++i) m = std::max(m, std::abs(f.raw()[i]));
    return m;
}

// Largest sup-norm coordinate reach of the support of f.
long support_reach(const LatticeField& f) {
    long reach = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f.raw()[i] != 0.0) {
            for (const int c : f.site_of(i))
                reach = std::max(reach, std::labs(static_cast<long>(c)));
        }
    }
    return reach;
}

void require_single_origin_source(const SandpileState& s, const char* op) {
    const std::size_t origin = s.mu0.index(Site(static_cast<std::size_t>(s.d), 0));
    for (std::size_t i = 0; i < s.mu0.size(); ++i)
        if (s.mu0.raw()[i] != 0.0 && i != origin)
            throw ConfigError(std::string(op) + ": requires a single source at the origin");
    if (s.mu0.raw()[origin] <= 0.0)
        throw ConfigError(std::string(op) + ": requires a single source at the origin");
}

// The d² mirror reflections: negate one coordinate, swap a pair, or negate
// and swap a pair.  All are involutions, so scanning only sites with u > 0
// still sees every discrepant pair from one of its endpoints.
struct Reflection {
    int type;  // 0 = negate axis i, 1 = swap (i, j), 2 = anti-swap (i, j)
    int i, j;
};

std::vector<Reflection> reflections(int d) {
    std::vector<Reflection> out;
    for (int i = 0; i < d; ++i) out.push_back({0, i, i});
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            out.push_back({1, i, j});
            out.push_back({2, i, j});
        }
    return out;
}

void apply_reflection(const Reflection& r, const Site& x, Site& y) {
    y = x;
    switch (r.type) {
        case 0: y[r.i] = -x[r.i]; break;
        case 1:
            y[r.i] = x[r.j];
            y[r.j] = x[r.i];
            break;
        default:
            y[r.i] = -x[r.j];
            y[r.j] = -x[r.i];
    }
}

// ±e_i and ±(e_i ± e_j): the normals of the mirror hyperplanes.
std::vector<Site> mirror_normals(int d) {
    std::vector<Site> out;
    const auto push = [&](const Site& v) {
        out.push_back(v);
        Site neg(v);
        for (int& c : neg) c = -c;
        out.push_back(neg);
    };
    for (int i = 0; i < d; ++i) {
        Site v(static_cast<std::size_t>(d), 0);
        v[i] = 1;
        push(v);
    }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            Site v(static_cast<std::size_t>(d), 0);
            v[i] = 1;
            v[j] = 1;
            push(v);
            v[j] = -1;
            push(v);
        }
    return out;
}

}  // namespace

double check_symmetry(const SandpileState& s) {
    require_single_origin_source(s, "check_symmetry");
    const auto refl = reflections(s.d);
    double max_err = 0.0;
    Site y(static_cast<std::size_t>(s.d), 0);
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        const double ux = s.u.raw()[i];
        if (ux == 0.0) continue;
        const Site x = s.u.site_of(i);
        for (const Reflection& r : refl) {
            apply_reflection(r, x, y);
            max_err = std::max(max_err, std::abs(ux - s.u.at(y)));
        }
    }
    return max_err;
}

long long check_monotonicity(const SandpileState& s) {
    require_single_origin_source(s, "check_monotonicity");
    const double tol = 1e-9 * max_abs(s.u);
    const auto dirs = mirror_normals(s.d);
    const long R = s.u.radius();
    long long violations = 0;
    Site x(static_cast<std::size_t>(s.d), static_cast<int>(-R));
    Site y(static_cast<std::size_t>(s.d), 0);
    do {
        const double ux = s.u.at(x);
        const long long nx = norm2(x);
        for (const Site& v : dirs) {
            for (std::size_t a = 0; a < y.size(); ++a) y[a] = x[a] + v[a];
            if (norm2(y) >= nx && s.u.at(y) > ux + tol) ++violations;
        }
    } while (next_site(x, R));
    return violations;
}

ShapeReport measure_regions(const SandpileState& s, double r0_frac) {
    require_single_origin_source(s, "measure_regions");
    const Regions reg = regions(s);
    std::vector<std::uint8_t> in_v0(s.u.size(), 0), in_v1(s.u.size(), 0);
    for (const std::size_t i : reg.V0) in_v0[i] = 1;
    for (const std::size_t i : reg.V1) in_v1[i] = 1;

    ShapeReport rep;

    long long out2 = 0;                  // max |x|² over V0
    long long in2 = -1;                  // min |x|² over the complement of V0
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        const long long r2 = norm2(s.u.site_of(i));
        if (in_v0[i])
            out2 = std::max(out2, r2);
        else if (in2 < 0 || r2 < in2)
            in2 = r2;
    }
    rep.outradius_V0 = std::sqrt(static_cast<double>(out2));
    // Integer norms are gappy: for an exact lattice ball the smallest
    // complement norm can exceed the largest member norm (no site lands in
    // between), so clamp to keep inradius ≤ outradius meaningful.
    rep.inradius_V0 =
        in2 < 0 ? 0.0 : std::min(std::sqrt(static_cast<double>(in2)), rep.outradius_V0);

    // Mass-annulus thickness along the 2d axis rays and the 2^d diagonals:
    // (sites of the ray in V1) × (step length).
    std::vector<Site> rays;
    for (int i = 0; i < s.d; ++i)
        for (const int sign : {-1, 1}) {
            Site v(static_cast<std::size_t>(s.d), 0);
            v[i] = sign;
            rays.push_back(v);
        }
    for (long mask = 0; mask < (1L << s.d); ++mask) {
        Site v(static_cast<std::size_t>(s.d), 0);
        for (int a = 0; a < s.d; ++a) v[a] = (mask >> a) & 1 ? 1 : -1;
        rays.push_back(v);
    }

    const long R = s.u.radius();
    bool first_ray = true;
    Site p(static_cast<std::size_t>(s.d), 0);
    for (const Site& v : rays) {
        long count = 0;
        for (long t = 0;; ++t) {
            bool inside = true;
            for (int a = 0; a < s.d; ++a) {
                const long c = t * v[a];
                if (std::labs(c) > R) inside = false;
                p[a] = static_cast<int>(c);
            }
            if (!inside) break;
            if (in_v1[s.u.index(p)]) ++count;
        }
        const double thickness = count * std::sqrt(static_cast<double>(norm2(v)));
        rep.annulus_min = first_ray ? thickness : std::min(rep.annulus_min, thickness);
        rep.annulus_max = std::max(rep.annulus_max, thickness);
        first_ray = false;
    }

    rep.boundary_count = boundary_count_bound(s).first;
    rep.symmetry_max_err = check_symmetry(s);
    rep.monotonicity_violations = check_monotonicity(s);

    // Regularity scan outside B(0, r0_frac·n^{1/d}).
    const double r0 = r0_frac * std::pow(s.n, 1.0 / s.d);
    const double r0sq = r0 * r0;
    Site x(static_cast<std::size_t>(s.d), static_cast<int>(-R));
    Site y(static_cast<std::size_t>(s.d), 0);
    do {
        if (static_cast<double>(norm2(x)) < r0sq) continue;
        const double u0 = s.u.at(x);
        if (u0 == 0.0) {
            // One-sided probe still matters on the support boundary ring.
            bool near_support = false;
            for (int a = 0; a < s.d && !near_support; ++a) {
                y = x;
                y[a] = x[a] + 1;
                near_support = s.u.at(y) != 0.0;
                y[a] = x[a] - 1;
                near_support = near_support || s.u.at(y) != 0.0;
            }
            if (!near_support) continue;
        }
        for (int a = 0; a < s.d; ++a) {
            y = x;
            y[a] = x[a] + 1;
            const double up = s.u.at(y);
            y[a] = x[a] - 1;
            const double um = s.u.at(y);
            rep.lipschitz_max =
                std::max({rep.lipschitz_max, std::abs(up - u0), std::abs(u0 - um)});
            rep.c11_max = std::max(rep.c11_max, std::abs(up - 2 * u0 + um));
        }
    } while (next_site(x, R));

    return rep;
}

SupersolutionReport analyze_supersolution(const LatticeField& w, const SandpileState& s,
                                          double tol) {
    if (w.dim() != s.d)
        throw ConfigError("analyze_supersolution: dimension mismatch");
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w.raw()[i] < 0.0)
            throw ConfigError("analyze_supersolution: candidate field must be >= 0");

    const long R = std::max({support_reach(w), support_reach(s.mu0), support_reach(s.u)}) + 1;
    const double inv2d = 1.0 / (2.0 * s.d);

    SupersolutionReport rep;
    rep.max_excess_everywhere = -std::numeric_limits<double>::infinity();
    rep.max_excess_support = -std::numeric_limits<double>::infinity();
    rep.minimality_margin = -std::numeric_limits<double>::infinity();

    Site x(static_cast<std::size_t>(s.d), static_cast<int>(-R));
    Site y(static_cast<std::size_t>(s.d), 0);
    do {
        const double wx = w.at(x);
        double acc = 0.0;
        for (int a = 0; a < s.d; ++a) {
            y = x;
            y[a] = x[a] + 1;
            acc += w.at(y);
            y[a] = x[a] - 1;
            acc += w.at(y);
        }
        const double nu = s.mu0.at(x) + (acc * inv2d - wx);
        rep.max_excess_everywhere = std::max(rep.max_excess_everywhere, nu - s.m);
        if (wx > 0.0) {
            const double cap = wx <= s.kappa ? s.m : 0.0;
            rep.max_excess_support = std::max(rep.max_excess_support, nu - cap);
        }
        rep.minimality_margin = std::max(rep.minimality_margin, s.u.at(x) - wx);
    } while (next_site(x, R));

    rep.accepted = rep.max_excess_everywhere <= tol && rep.max_excess_support <= tol;
    return rep;
}

bool check_supersolution(const LatticeField& w, const SandpileState& s, double tol) {
    return analyze_supersolution(w, s, tol).accepted;
}

double scaling_sup_err(const SandpileState& s, const RadialSolution& sol, double rho) {
    if (rho <= 0.0)
        throw ConfigError("scaling_sup_err: rho must be positive");
    const double h = std::pow(s.n, -1.0 / s.d);
    const double h2 = h * h;
    const long L =
        std::max<long>(s.u.radius(), static_cast<long>(std::ceil(sol.r2 / h)) + 1);

    double err = 0.0;
    Site x(static_cast<std::size_t>(s.d), static_cast<int>(-L));
    do {
        const double r = h * std::sqrt(static_cast<double>(norm2(x)));
        if (r < rho) continue;
        const double target = r > sol.r2 ? 0.0 : eval_radial(sol, r);
        err = std::max(err, std::abs(h2 * s.u.at(x) - target));
    } while (next_site(x, L));
    return err;
}

namespace {

// Stabilized single origin source; the toppling budget suits n up to ~10⁷.
SandpileState stabilized_origin_state(int d, double n, double m,
                                      std::uint64_t max_topplings) {
    SandpileState s = new_state(d, {{Site(static_cast<std::size_t>(d), 0), n}}, m);
    stabilize(s, {ScheduleKind::sweep, 0}, default_eps_stop(n), {.max_topplings = max_topplings});
    return s;
}

}  // namespace

ScalingReport scaling_convergence(int d, double m, const std::vector<double>& n_list,
                                  double rho) {
    if (rho <= 0.0)
        throw ConfigError("scaling_convergence: rho must be positive");
    if (n_list.empty())
        throw ConfigError("scaling_convergence: empty n list");
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (n_list[i] <= n_list[i - 1])
            throw ConfigError("scaling_convergence: n list must be strictly increasing");

    const RadialSolution sol = solve_radial(RadialProblem::scaled_limit(d, m));

    ScalingReport rep;
    rep.rho = rho;
    rep.m = m;
    for (const double n : n_list) {
        const SandpileState s = stabilized_origin_state(d, n, m, 1'000'000'000'000ull);
        const double h = std::pow(n, -1.0 / d);
        const Regions reg = regions(s);
        long long v2 = 0, v02 = 0;
        for (const std::size_t i : reg.V) v2 = std::max(v2, norm2(s.u.site_of(i)));
        for (const std::size_t i : reg.V0) v02 = std::max(v02, norm2(s.u.site_of(i)));
        rep.n_values.push_back(n);
        rep.sup_err.push_back(scaling_sup_err(s, sol, rho));
        rep.support_radius.push_back(h * std::sqrt(static_cast<double>(v2)));
        rep.plateau_radius.push_back(h * std::sqrt(static_cast<double>(v02)));
    }
    return rep;
}

CalibrationReport calibrate_F(const std::vector<double>& m_list,
                              const std::function<double(double)>& rho_of_m,
                              const std::function<double(double)>& tol_of_m,
                              const CalibrateOptions& options) {
    if (m_list.empty())
        throw ConfigError("calibrate_F: empty m list");
    for (std::size_t i = 0; i < m_list.size(); ++i)
        if (m_list[i] <= 0.0 || (i > 0 && m_list[i] <= m_list[i - 1]))
            throw ConfigError("calibrate_F: m list must be positive and strictly increasing");
    if (options.n_start < 1.0 || options.n_cap < options.n_start)
        throw ConfigError("calibrate_F: invalid n budget");

    CalibrationReport rep;
    for (const double m : m_list) {
        const double rho = rho_of_m ? rho_of_m(m) : 1.0 / m;
        const double tol = tol_of_m ? tol_of_m(m) : 1.0 / m;
        const RadialSolution sol = solve_radial(RadialProblem::scaled_limit(options.d, m));

        double n = options.n_start;
        for (;;) {
            bool ok = false;
            try {
                const SandpileState s =
                    stabilized_origin_state(options.d, n, m, options.max_topplings);
                ok = scaling_sup_err(s, sol, rho) <= tol;
            } catch (const NonConvergenceError&) {
                rep.truncated = true;  // toppling budget hit; record where we stopped
                break;
            }
            if (ok) break;
            if (n * 2 > options.n_cap) {
                n = options.n_cap;
                rep.truncated = true;
                break;
            }
            n *= 2;
        }
        rep.pairs.emplace_back(m, n);
    }
    for (std::size_t i = 1; i < rep.pairs.size(); ++i)
        rep.pairs[i].second = std::max(rep.pairs[i].second, rep.pairs[i - 1].second);
    return rep;
}

bool boundary_graph_property(const MaskField& region) {
    const int d = region.dim();
    if (d < 2)
        throw ConfigError("boundary_graph_property: dimension must be >= 2");
    const long R = region.radius();
    const long base = 2 * R + 3;

    // Column key from the first d−1 coordinates.
    const auto column_key = [&](const Site& x) {
        long long key = 0;
        for (int a = 0; a < d - 1; ++a) key = key * base + (x[a] + R + 1);
        return key;
    };
    const auto in_cone = [&](const Site& x) {
        for (int a = 0; a < d - 1; ++a)
            if (x[d - 1] < std::abs(x[a])) return false;
        return true;
    };

    struct ColumnInfo {
        bool has_region = false;
        int boundary_sites = 0;
    };
    std::unordered_map<long long, ColumnInfo> columns;

    Site x(static_cast<std::size_t>(d), static_cast<int>(-R));
    Site y(static_cast<std::size_t>(d), 0);
    do {
        if (!region.at(x) || !in_cone(x)) continue;
        ColumnInfo& info = columns[column_key(x)];
        info.has_region = true;
        bool is_boundary = false;
        for (int a = 0; a < d && !is_boundary; ++a) {
            y = x;
            y[a] = x[a] + 1;
            is_boundary = !region.at(y);
            y[a] = x[a] - 1;
            is_boundary = is_boundary || !region.at(y);
        }
        if (is_boundary) ++info.boundary_sites;
    } while (next_site(x, R));

    for (const auto& [key, info] : columns)
        if (info.boundary_sites != 1) return false;
    return true;
}

bool check_boundary_graph(const SandpileState& s) {
    require_single_origin_source(s, "check_boundary_graph");
    return boundary_graph_property(s.visited);
}

}  // namespace sandpile
