// ============================================================================
// engine.cpp — stabilization of the singularly perturbed divisible sandpile
//
// Representation choice: the three schedules evolve the odometer u only and
// derive the mass field on the fly from the identity μ = μ₀ + Δ¹u. A full
// toppling of excess ℰ at x is then the single update u(x) += ℰ — the mass
// scatter to the 2d neighbours is implicit in the next Laplacian read. This
// keeps mass conservation and the odometer identity exact by construction
// over millions of passes instead of accumulating per-update rounding.
//
// The active window. u is nonzero only on a product box [lo,hi] ⊆ box(R−2)
// (per axis, inclusive). A site outside the window carries mass only via
// rule (a), and only if it neighbours a window face site with u > 0; before
// every pass each face plane is scanned and the window is widened by one on
// the sides where that can happen. The Jacobi pass over the widened window
// is therefore an exact sweep of all of ℤᵈ. The backing box doubles whenever
// the window needs room, so neighbour reads never leave allocated storage.
// ============================================================================
#include "sandpile/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <queue>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace sandpile {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

long lmax(long a, long b) { return a > b ? a : b; }
long lmin(long a, long b) { return a < b ? a : b; }

// --------------------------------------------------------------------- state

struct SourceList {
    std::vector<Site> sites;
    std::vector<double> masses;
};

SourceList extract_sources(const LatticeField& mu0) {
    SourceList out;
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        if (mu0.raw()[i] != 0.0) {
            out.sites.push_back(mu0.site_of(i));
            out.masses.push_back(mu0.raw()[i]);
        }
    }
    return out;
}

// Per-axis inclusive bounds of the active window.
struct Window {
    std::vector<long> lo, hi;

    long reach() const {
        long r = 0;
        for (std::size_t a = 0; a < lo.size(); ++a) r = lmax(r, lmax(-lo[a], hi[a]));
        return r;
    }
    void include(const Site& x) {
        for (std::size_t a = 0; a < lo.size(); ++a) {
            lo[a] = lmin(lo[a], x[a]);
            hi[a] = lmax(hi[a], x[a]);
        }
    }
};

Window initial_window(const Grid<double>& u, const SourceList& src) {
    const int d = u.dim();
    Window w;
    w.lo.assign(static_cast<std::size_t>(d), std::numeric_limits<long>::max());
    w.hi.assign(static_cast<std::size_t>(d), std::numeric_limits<long>::min());
    for (const auto& s : src.sites) w.include(s);
    for (std::size_t i = 0; i < u.size(); ++i)
        if (u.raw()[i] > 0.0) w.include(u.site_of(i));
    return w;
}

// Widen by one on every side whose face plane holds positive odometer mass;
// after this the window covers every site that can possibly be unstable.
void expand_window(const Grid<double>& u, Window& win) {
    const int d = u.dim();
    const long R = u.radius();
    for (int a = 0; a < d; ++a) {
        for (int side = 0; side < 2; ++side) {
            const long plane = side == 0 ? win.lo[static_cast<std::size_t>(a)]
                                         : win.hi[static_cast<std::size_t>(a)];
            // Odometer over the remaining axes of the face plane.
            std::vector<long> c(win.lo.begin(), win.lo.end());
            c[static_cast<std::size_t>(a)] = plane;
            bool hit = false;
            for (;;) {
                std::size_t idx = 0;
                for (int b = 0; b < d; ++b)
                    idx += static_cast<std::size_t>(c[static_cast<std::size_t>(b)] + R) *
                           u.stride(b);
                if (u.raw()[idx] > 0.0) {
                    hit = true;
                    break;
                }
                int b = 0;
                for (; b < d; ++b) {
                    if (b == a) continue;
                    if (++c[static_cast<std::size_t>(b)] <= win.hi[static_cast<std::size_t>(b)])
                        break;
                    c[static_cast<std::size_t>(b)] = win.lo[static_cast<std::size_t>(b)];
                }
                if (b >= d) break;
            }
            if (hit) {
                if (side == 0)
                    --win.lo[static_cast<std::size_t>(a)];
                else
                    ++win.hi[static_cast<std::size_t>(a)];
            }
        }
    }
}

// Keep the window at least two sites inside the box so neighbour reads (and
// neighbour-of-neighbour reads in the priority schedule) stay in storage.
bool ensure_capacity(Grid<double>& u, const Window& win) {
    const long need = win.reach() + 2;
    if (need <= u.radius()) return false;
    u.grow(lmax(2 * u.radius(), need));
    return true;
}

std::vector<std::pair<std::size_t, double>> source_indices(const Grid<double>& u,
                                                           const SourceList& src) {
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(src.sites.size());
    for (std::size_t k = 0; k < src.sites.size(); ++k)
        out.emplace_back(u.index(src.sites[k]), src.masses[k]);
    return out;
}

// ----------------------------------------------------------------- hot sweep

struct PassStats {
    double max_e = 0.0;
    double sum_e = 0.0;
    std::uint64_t count = 0;
};

// Reduce a scratch row of excesses in four fixed lanes (vectorizable without
// reassociation ambiguity: the combine order is pinned).
PassStats reduce_row(const double* se, long len) {
    double mx[4] = {0.0, 0.0, 0.0, 0.0};
    double sm[4] = {0.0, 0.0, 0.0, 0.0};
    double ct[4] = {0.0, 0.0, 0.0, 0.0};  // counts as doubles: exact, SIMD-typed
    long k = 0;
    for (; k + 4 <= len; k += 4) {
        for (int j = 0; j < 4; ++j) {
            const double e = se[k + j];
            mx[j] = std::max(mx[j], e);
            sm[j] += e;
            ct[j] += e > 0.0 ? 1.0 : 0.0;
        }
    }
    for (int j = 0; k < len; ++k, ++j) {
        const double e = se[k];
        mx[j] = std::max(mx[j], e);
        sm[j] += e;
        ct[j] += e > 0.0 ? 1.0 : 0.0;
    }
    PassStats st;
    st.max_e = std::max(std::max(mx[0], mx[1]), std::max(mx[2], mx[3]));
    st.sum_e = (sm[0] + sm[1]) + (sm[2] + sm[3]);
    st.count = static_cast<std::uint64_t>((ct[0] + ct[1]) + (ct[2] + ct[3]));
    return st;
}

// One Jacobi row: nxt[i] = cur[i] + excess(i) for a contiguous axis-0 run.
// μ at a non-source site is exactly the discrete Laplacian of u. D is the
// compile-time dimension (0 = generic).
//
// The scheduler drains the COMPOSED one-site excess: past the odometer cutoff
// (u > κ) the whole mass μ must eventually leave, as the threshold rule fires
// first (emit μ − m) and the cutoff rule immediately follows at the same site
// (emit the remaining m). Draining μ in one event is that two-step composition
// and dominates either single step. Using only the single-step excess here
// lets rounding park μ a few ulp above m on cutoff sites: the threshold step
// then emits ~1e-15, the ε-termination test passes, and O(m) mass stays
// frozen inside {u > κ}, which no exact toppling order allows.
// The kernel runs in two passes so the stencil pass stays branch-free with
// unit-stride loads (the vectorizer handles it without gathers or loop
// versioning): pass 1 writes nxt and the per-site excess into a scratch row,
// pass 2 reduces the scratch row into PassStats.  The reductions use four
// fixed lanes combined in a fixed tree — a deterministic order independent of
// threading, though not the left-to-right scalar order (the affected figures,
// sum and max of excesses, are diagnostics; nxt is elementwise regardless).
template <int D>
PassStats sweep_row(const double* c, double* nx, double* se, std::size_t i0, long len,
                    const std::size_t* strides, int d, double inv2d, double m, double kappa) {
    const double* cr = c + i0;
    double* nr = nx + i0;
    if constexpr (D == 2) {
        const double* q1 = cr - strides[1];
        const double* p1 = cr + strides[1];
        for (long k = 0; k < len; ++k) {
            const double ui = cr[k];
            const double acc = (cr[k - 1] + cr[k + 1]) + (q1[k] + p1[k]);
            const double mu = acc * inv2d - ui;
            const double drain = std::max(mu, 0.0);
            const double spill = std::max(mu - m, 0.0);
            const double e = ui > kappa ? drain : spill;
            nr[k] = ui + e;
            se[k] = e;
        }
    } else if constexpr (D == 3) {
        const double* q1 = cr - strides[1];
        const double* p1 = cr + strides[1];
        const double* q2 = cr - strides[2];
        const double* p2 = cr + strides[2];
        for (long k = 0; k < len; ++k) {
            const double ui = cr[k];
            const double acc = ((cr[k - 1] + cr[k + 1]) + (q1[k] + p1[k])) + (q2[k] + p2[k]);
            const double mu = acc * inv2d - ui;
            const double drain = std::max(mu, 0.0);
            const double spill = std::max(mu - m, 0.0);
            const double e = ui > kappa ? drain : spill;
            nr[k] = ui + e;
            se[k] = e;
        }
    } else {
        for (long k = 0; k < len; ++k) {
            const double ui = cr[k];
            double acc = cr[k - 1] + cr[k + 1];
            for (int a = 1; a < d; ++a) acc += cr[k - strides[a]] + cr[k + strides[a]];
            const double mu = acc * inv2d - ui;
            const double drain = std::max(mu, 0.0);
            const double spill = std::max(mu - m, 0.0);
            const double e = ui > kappa ? drain : spill;
            nr[k] = ui + e;
            se[k] = e;
        }
    }
    return reduce_row(se, len);
}

// Same, for the rare rows that contain source sites: μ gains μ₀ there.
// Scalar stencil (these rows are a vanishing fraction), same stats reduction.
template <int D>
PassStats sweep_row_sources(const double* c, double* nx, double* se, std::size_t i0, long len,
                            const std::size_t* strides, int d, double inv2d, double m,
                            double kappa,
                            const std::vector<std::pair<long, double>>& row_sources) {
    for (long k = 0; k < len; ++k) {
        const std::size_t i = i0 + static_cast<std::size_t>(k);
        const double ui = c[i];
        double acc = c[i - 1] + c[i + 1];
        if constexpr (D == 2) {
            acc += c[i - strides[1]] + c[i + strides[1]];
        } else if constexpr (D == 3) {
            acc = (acc + (c[i - strides[1]] + c[i + strides[1]])) +
                  (c[i - strides[2]] + c[i + strides[2]]);
        } else {
            for (int a = 1; a < d; ++a) acc += c[i - strides[a]] + c[i + strides[a]];
        }
        double mu = acc * inv2d - ui;
        for (const auto& [off, mass] : row_sources)
            if (off == k) mu += mass;
        const double e = ui > kappa ? (mu > 0.0 ? mu : 0.0) : (mu > m ? mu - m : 0.0);
        nx[i] = ui + e;
        se[k] = e;
    }
    return reduce_row(se, len);
}

// Geometry of the window as a set of axis-0 rows.
struct RowPlan {
    long nrows = 1;
    long len = 0;                 // sites per row
    std::size_t strides[8] = {};  // grid strides (dim ≤ 8 by Grid's guard)
    long extent[8] = {};          // window extent per axis ≥ 1
    std::size_t base = 0;         // flat index offset of (lo0, axis offsets start)
    // Rows that contain sources: row id → (axis-0 offset, mass) list.
    std::vector<std::pair<long, std::vector<std::pair<long, double>>>> source_rows;
};

RowPlan plan_rows(const Grid<double>& u, const Window& win, const SourceList& src) {
    const int d = u.dim();
    const long R = u.radius();
    RowPlan p;
    p.len = win.hi[0] - win.lo[0] + 1;
    for (int a = 0; a < d; ++a) p.strides[a] = u.stride(a);
    for (int a = 1; a < d; ++a) {
        p.extent[a] = win.hi[static_cast<std::size_t>(a)] - win.lo[static_cast<std::size_t>(a)] + 1;
        p.nrows *= p.extent[a];
    }
    p.base = static_cast<std::size_t>(win.lo[0] + R);

    for (std::size_t k = 0; k < src.sites.size(); ++k) {
        const Site& x = src.sites[k];
        long row = 0, mul = 1;
        for (int a = 1; a < d; ++a) {
            row += (x[static_cast<std::size_t>(a)] - win.lo[static_cast<std::size_t>(a)]) * mul;
            mul *= p.extent[a];
        }
        const long off = x[0] - win.lo[0];
        bool found = false;
        for (auto& [r, list] : p.source_rows)
            if (r == row) {
                list.emplace_back(off, src.masses[k]);
                found = true;
            }
        if (!found) p.source_rows.push_back({row, {{off, src.masses[k]}}});
    }
    return p;
}

std::size_t row_start(const RowPlan& p, const Window& win, const Grid<double>& u, long row) {
    const int d = u.dim();
    const long R = u.radius();
    std::size_t idx = p.base;
    long rem = row;
    for (int a = 1; a < d; ++a) {
        const long c = win.lo[static_cast<std::size_t>(a)] + rem % p.extent[a];
        rem /= p.extent[a];
        idx += static_cast<std::size_t>(c + R) * p.strides[a];
    }
    return idx;
}

// One full Jacobi pass over the window. Row stats land in per-row slots and
// are reduced in row order afterwards, so the result does not depend on the
// number of worker threads.
PassStats sweep_pass(const Grid<double>& cur, Grid<double>& nxt, const Window& win,
                     const SourceList& src, double m, double kappa, int threads) {
    const int d = cur.dim();
    const double inv2d = 1.0 / (2.0 * d);
    const RowPlan plan = plan_rows(cur, win, src);
    const double* c = cur.data();
    double* nx = nxt.data();

    static thread_local std::vector<PassStats> rstat;
    rstat.assign(static_cast<std::size_t>(plan.nrows), PassStats{});

    auto run_rows = [&](long r0, long r1) {
        static const std::vector<std::pair<long, double>> no_sources;
        static thread_local std::vector<double> scratch;
        scratch.resize(static_cast<std::size_t>(plan.len));
        double* se = scratch.data();
        for (long r = r0; r < r1; ++r) {
            const std::size_t i0 = row_start(plan, win, cur, r);
            const std::vector<std::pair<long, double>>* rs = &no_sources;
            for (const auto& [row, list] : plan.source_rows)
                if (row == r) rs = &list;
            PassStats st;
            if (!rs->empty()) {
                if (d == 2)
                    st = sweep_row_sources<2>(c, nx, se, i0, plan.len, plan.strides, d, inv2d,
                                              m, kappa, *rs);
                else if (d == 3)
                    st = sweep_row_sources<3>(c, nx, se, i0, plan.len, plan.strides, d, inv2d,
                                              m, kappa, *rs);
                else
                    st = sweep_row_sources<0>(c, nx, se, i0, plan.len, plan.strides, d, inv2d,
                                              m, kappa, *rs);
            } else {
                if (d == 2)
                    st = sweep_row<2>(c, nx, se, i0, plan.len, plan.strides, d, inv2d, m, kappa);
                else if (d == 3)
                    st = sweep_row<3>(c, nx, se, i0, plan.len, plan.strides, d, inv2d, m, kappa);
                else
                    st = sweep_row<0>(c, nx, se, i0, plan.len, plan.strides, d, inv2d, m, kappa);
            }
            rstat[static_cast<std::size_t>(r)] = st;
        }
    };

    const long total_sites = plan.nrows * plan.len;
    if (threads > 1 && total_sites >= 65536 && plan.nrows >= threads) {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        const long chunk = (plan.nrows + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const long r0 = t * chunk;
            const long r1 = lmin(plan.nrows, r0 + chunk);
            if (r0 >= r1) break;
            pool.emplace_back(run_rows, r0, r1);
        }
        for (auto& th : pool) th.join();
    } else {
        run_rows(0, plan.nrows);
    }

    PassStats total;
    for (const PassStats& st : rstat) {
        total.max_e = st.max_e > total.max_e ? st.max_e : total.max_e;
        total.sum_e += st.sum_e;
        total.count += st.count;
    }
    return total;
}

// ------------------------------------------------- live excess (scan paths)

// Composed excess (see sweep_row) of site with flat index i from the current
// odometer, sources resolved by flat-index lookup. Valid while
// |site| ≤ radius − 1.
double live_excess(const Grid<double>& u, std::size_t i,
                   const std::vector<std::pair<std::size_t, double>>& src_idx, double m,
                   double kappa, double inv2d) {
    const int d = u.dim();
    const double* c = u.data();
    const double ui = c[i];
    double acc = 0.0;
    for (int a = 0; a < d; ++a) acc += c[i - u.stride(a)] + c[i + u.stride(a)];
    double mu = acc * inv2d - ui;
    for (const auto& [idx, mass] : src_idx)
        if (idx == i) mu += mass;
    return ui > kappa ? (mu > 0.0 ? mu : 0.0) : (mu > m ? mu - m : 0.0);
}

// Max excess over the window (no mutation): the stop criterion for the
// sequential schedules.
PassStats scan_excess(const Grid<double>& u, const Window& win, const SourceList& src, double m,
                      double kappa) {
    const int d = u.dim();
    const double inv2d = 1.0 / (2.0 * d);
    const RowPlan plan = plan_rows(u, win, src);
    const auto src_idx = source_indices(u, src);
    PassStats st;
    for (long r = 0; r < plan.nrows; ++r) {
        const std::size_t i0 = row_start(plan, win, u, r);
        for (long k = 0; k < plan.len; ++k) {
            const double e =
                live_excess(u, i0 + static_cast<std::size_t>(k), src_idx, m, kappa, inv2d);
            st.max_e = e > st.max_e ? e : st.max_e;
            st.sum_e += e;
            st.count += e > 0.0;
        }
    }
    return st;
}

std::vector<std::size_t> window_indices(const Grid<double>& u, const Window& win,
                                        const SourceList& src) {
    const RowPlan plan = plan_rows(u, win, src);
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(plan.nrows * plan.len));
    for (long r = 0; r < plan.nrows; ++r) {
        const std::size_t i0 = row_start(plan, win, u, r);
        for (long k = 0; k < plan.len; ++k) out.push_back(i0 + static_cast<std::size_t>(k));
    }
    return out;
}

// -------------------------------------------------------------- materialize

// Rebuild (μ, visited) of the state from the final odometer. μ is μ₀ + Δ¹u
// over the whole box; since u vanishes on the two outermost shells, the
// lattice divergence theorem makes Σμ = n up to rounding only.
void materialize(SandpileState& s, const Grid<double>& u) {
    const int d = u.dim();
    const long R = u.radius();
    if (s.mu0.radius() < R) s.mu0.grow(R);

    s.u = u;
    s.mu = LatticeField(d, R);
    s.visited = MaskField(d, R);

    const double inv2d = 1.0 / (2.0 * d);
    const double* c = u.data();
    std::vector<long> x(static_cast<std::size_t>(d), -R);
    for (std::size_t i = 0; i < u.size(); ++i) {
        double acc = 0.0;
        for (int a = 0; a < d; ++a) {
            const long ca = x[static_cast<std::size_t>(a)];
            acc += (ca > -R ? c[i - u.stride(a)] : 0.0) + (ca < R ? c[i + u.stride(a)] : 0.0);
        }
        s.mu.raw()[i] = s.mu0.raw()[i] + (acc * inv2d - c[i]);

        if (s.mu0.raw()[i] != 0.0) s.visited.raw()[i] = 1;
        if (c[i] > 0.0) {
            s.visited.raw()[i] = 1;
            for (int a = 0; a < d; ++a) {
                const long ca = x[static_cast<std::size_t>(a)];
                if (ca > -R) s.visited.raw()[i - u.stride(a)] = 1;
                if (ca < R) s.visited.raw()[i + u.stride(a)] = 1;
            }
        }

        for (int a = 0; a < d; ++a) {
            if (++x[static_cast<std::size_t>(a)] <= R) break;
            x[static_cast<std::size_t>(a)] = -R;
        }
    }
}

[[noreturn]] void throw_cap(SandpileState& s, const Grid<double>& u, double residual,
                            std::uint64_t topplings, std::uint64_t cap) {
    materialize(s, u);
    std::ostringstream msg;
    msg << "stabilize: toppling cap exceeded (" << topplings << " > " << cap
        << "), residual excess " << residual;
    throw NonConvergenceError(msg.str(), residual, topplings);
}

// ---------------------------------------------------------------- schedules

void run_sweep(SandpileState& s, Grid<double>& cur, const SourceList& src, double eps_stop,
               const StabilizeLimits& lim, StabilizeOutcome& out) {
    Window win = initial_window(cur, src);
    Grid<double> nxt(cur.dim(), cur.radius());
    double last_max = 0.0;
    for (;;) {
        expand_window(cur, win);
        if (ensure_capacity(cur, win)) nxt = Grid<double>(cur.dim(), cur.radius());
        const PassStats st = sweep_pass(cur, nxt, win, src, s.m, s.kappa, lim.threads);
        if (st.max_e <= eps_stop) {
            out.residual_excess = st.max_e;
            return;
        }
        std::swap(cur, nxt);
        ++out.sweeps;
        out.total_toppled_mass += st.sum_e;
        out.topplings += st.count;
        last_max = st.max_e;
        if (out.topplings > lim.max_topplings) throw_cap(s, cur, last_max, out.topplings,
                                                         lim.max_topplings);
    }
}

void run_random(SandpileState& s, Grid<double>& cur, const SourceList& src, double eps_stop,
                const StabilizeLimits& lim, std::uint64_t seed, StabilizeOutcome& out) {
    Window win = initial_window(cur, src);
    std::mt19937_64 rng(seed);
    const double inv2d = 1.0 / (2.0 * cur.dim());
    for (;;) {
        expand_window(cur, win);
        ensure_capacity(cur, win);
        const PassStats scan = scan_excess(cur, win, src, s.m, s.kappa);
        if (scan.max_e <= eps_stop) {
            out.residual_excess = scan.max_e;
            return;
        }
        // Sequential full topplings in a fresh uniform order; every site of
        // the window appears in every pass, so the schedule is infinitive.
        std::vector<std::size_t> order = window_indices(cur, win, src);
        std::shuffle(order.begin(), order.end(), rng);
        const auto src_idx = source_indices(cur, src);
        for (const std::size_t i : order) {
            const double e = live_excess(cur, i, src_idx, s.m, s.kappa, inv2d);
            if (e > 0.0) {
                cur.raw()[i] += e;
                out.total_toppled_mass += e;
                ++out.topplings;
                if (out.topplings > lim.max_topplings)
                    throw_cap(s, cur, e, out.topplings, lim.max_topplings);
            }
        }
        ++out.sweeps;
    }
}

void run_priority(SandpileState& s, Grid<double>& cur, const SourceList& src, double eps_stop,
                  const StabilizeLimits& lim, StabilizeOutcome& out) {
    Window win = initial_window(cur, src);
    ensure_capacity(cur, win);
    const double inv2d = 1.0 / (2.0 * cur.dim());
    const int d = cur.dim();

    // Max-heap keyed by excess-at-push-time; entries go stale when later
    // topplings change μ, so every pop re-evaluates before acting.
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry> heap;
    auto src_idx = source_indices(cur, src);

    auto reseed = [&]() {
        const std::vector<std::size_t> idx = window_indices(cur, win, src);
        for (const std::size_t i : idx) {
            const double e = live_excess(cur, i, src_idx, s.m, s.kappa, inv2d);
            if (e > eps_stop) heap.emplace(e, i);
        }
    };
    reseed();

    for (;;) {
        if (heap.empty()) {
            expand_window(cur, win);
            ensure_capacity(cur, win);
            src_idx = source_indices(cur, src);
            const PassStats scan = scan_excess(cur, win, src, s.m, s.kappa);
            if (scan.max_e <= eps_stop) {
                out.residual_excess = scan.max_e;
                return;
            }
            reseed();
            continue;
        }
        const std::size_t i = heap.top().second;
        heap.pop();
        double e = live_excess(cur, i, src_idx, s.m, s.kappa, inv2d);
        if (e <= eps_stop) continue;  // stale entry

        Site x = cur.site_of(i);
        win.include(x);
        if (ensure_capacity(cur, win)) {
            // Flat indices changed and every heap entry is stale; drop the
            // heap and reseed it from a fresh scan in the new geometry.
            heap = {};
            src_idx = source_indices(cur, src);
            reseed();
            e = live_excess(cur, cur.index(x), src_idx, s.m, s.kappa, inv2d);
            if (e <= eps_stop) continue;
        }
        const std::size_t j = cur.index(x);
        cur.raw()[j] += e;
        out.total_toppled_mass += e;
        ++out.topplings;
        if (out.topplings > lim.max_topplings)
            throw_cap(s, cur, e, out.topplings, lim.max_topplings);

        const double es = live_excess(cur, j, src_idx, s.m, s.kappa, inv2d);
        if (es > eps_stop) heap.emplace(es, j);
        for (int a = 0; a < d; ++a) {
            for (const std::size_t nb : {j - cur.stride(a), j + cur.stride(a)}) {
                const double en = live_excess(cur, nb, src_idx, s.m, s.kappa, inv2d);
                if (en > eps_stop) heap.emplace(en, nb);
            }
        }
    }
}

}  // namespace

// ----------------------------------------------------------------- public

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::sweep: return "sweep";
        case ScheduleKind::random_infinitive: return "random_infinitive";
        case ScheduleKind::priority_excess: return "priority_excess";
    }
    throw ConfigError("to_string: unknown schedule kind");
}

ScheduleKind schedule_from_string(const std::string& name) {
    if (name == "sweep") return ScheduleKind::sweep;
    if (name == "random" || name == "random_infinitive") return ScheduleKind::random_infinitive;
    if (name == "priority" || name == "priority_excess") return ScheduleKind::priority_excess;
    throw ConfigError("schedule_from_string: unknown schedule '" + name + "'");
}

double default_eps_stop(double n) { return 1e-12 * n; }

SandpileState new_state(int d, const std::vector<std::pair<Site, double>>& sources, double m) {
    if (d < 2) throw ConfigError("new_state: dimension must be at least 2");
    if (sources.empty()) throw ConfigError("new_state: at least one source is required");
    if (!(m > 0.0)) throw ConfigError("new_state: threshold m must be positive");

    double n = 0.0;
    long reach = 0;
    for (const auto& [site, mass] : sources) {
        if (static_cast<int>(site.size()) != d)
            throw ConfigError("new_state: source site has wrong dimension");
        if (!(mass > 0.0)) throw ConfigError("new_state: source masses must be positive");
        n += mass;
        for (const int c : site) reach = lmax(reach, std::abs(static_cast<long>(c)));
    }

    SandpileState s;
    s.d = d;
    s.n = n;
    s.m = m;
    s.kappa = std::pow(n, 2.0 / d) / m;

    const long r0 =
        lmax(4L, static_cast<long>(std::ceil(0.5 * std::pow(n, 1.0 / d))) + reach + 2);
    s.mu0 = LatticeField(d, r0);
    for (const auto& [site, mass] : sources) s.mu0.ref(site) += mass;
    s.mu = s.mu0;
    s.u = LatticeField(d, r0);
    s.visited = MaskField(d, r0);
    for (std::size_t i = 0; i < s.mu0.size(); ++i)
        if (s.mu0.raw()[i] != 0.0) s.visited.raw()[i] = 1;
    return s;
}

double excess(const SandpileState& s, const Site& x) {
    const double mu = s.mu.at(x);
    if (mu > s.m) return mu - s.m;
    if (mu > 0.0 && s.u.at(x) > s.kappa) return mu;
    return 0.0;
}

double topple(SandpileState& s, const Site& x) {
    if (static_cast<int>(x.size()) != s.d) throw ConfigError("topple: site has wrong dimension");
    const double e = excess(s, x);
    if (e <= 0.0) return 0.0;  // toppling a stable site is idle

    long reach = 0;
    for (const int c : x) reach = lmax(reach, std::abs(static_cast<long>(c)));
    if (reach + 1 > s.u.radius()) {
        const long r = lmax(2 * s.u.radius(), reach + 2);
        s.mu0.grow(r);
        s.mu.grow(r);
        s.u.grow(r);
        s.visited.grow(r);
    }

    const double share = e / (2.0 * s.d);
    s.mu.ref(x) -= e;
    s.u.ref(x) += e;
    s.visited.ref(x) = 1;
    for (const Site& y : neighbors(x, s.d)) {
        s.mu.ref(y) += share;
        s.visited.ref(y) = 1;
    }
    return e;
}

StabilizeOutcome stabilize(SandpileState& s, const Schedule& schedule, double eps_stop,
                           const StabilizeLimits& limits) {
    if (!(eps_stop > 0.0)) throw ConfigError("stabilize: eps_stop must be positive");
    if (limits.max_topplings == 0) throw ConfigError("stabilize: toppling cap must be positive");
    if (limits.threads < 1) throw ConfigError("stabilize: thread count must be at least 1");

    const auto t0 = Clock::now();
    StabilizeOutcome out;

    Grid<double> cur = s.u;
    const SourceList src = extract_sources(s.mu0);
    {
        Window w = initial_window(cur, src);
        ensure_capacity(cur, w);
    }

    switch (schedule.kind) {
        case ScheduleKind::sweep: run_sweep(s, cur, src, eps_stop, limits, out); break;
        case ScheduleKind::random_infinitive:
            run_random(s, cur, src, eps_stop, limits, schedule.seed, out);
            break;
        case ScheduleKind::priority_excess:
            run_priority(s, cur, src, eps_stop, limits, out);
            break;
    }

    materialize(s, cur);
    out.elapsed_seconds = seconds_since(t0);
    return out;
}

Regions regions(const SandpileState& s) {
    Regions r;
    for (std::size_t i = 0; i < s.visited.size(); ++i) {
        if (s.visited.raw()[i] == 0) continue;
        r.V.push_back(i);
        if (s.u.raw()[i] > s.kappa)
            r.V0.push_back(i);
        else
            r.V1.push_back(i);
    }
    return r;
}

std::pair<long long, double> boundary_count_bound(const SandpileState& s) {
    const int d = s.d;
    const long R = s.visited.radius();
    long long count = 0;
    std::vector<long> x(static_cast<std::size_t>(d), -R);
    for (std::size_t i = 0; i < s.visited.size(); ++i) {
        if (s.visited.raw()[i] != 0 && s.mu0.raw()[i] == 0.0) {
            bool edge = false;
            for (int a = 0; a < d && !edge; ++a) {
                const long ca = x[static_cast<std::size_t>(a)];
                const std::uint8_t lo =
                    ca > -R ? s.visited.raw()[i - s.visited.stride(a)] : std::uint8_t{0};
                const std::uint8_t hi =
                    ca < R ? s.visited.raw()[i + s.visited.stride(a)] : std::uint8_t{0};
                edge = lo == 0 || hi == 0;
            }
            count += edge;
        }
        for (int a = 0; a < d; ++a) {
            if (++x[static_cast<std::size_t>(a)] <= R) break;
            x[static_cast<std::size_t>(a)] = -R;
        }
    }
    const double bound = 4.0 * d * d * s.n / s.m;
    return {count, bound};
}

void write_checkpoint(const SandpileState& s, const StabilizeOutcome& outcome,
                      const Schedule& schedule, double eps_stop, const std::string& csv_path,
                      const std::string& json_path) {
    write_fields_csv(s.visited, s.u, s.mu, csv_path);
    nlohmann::ordered_json j;
    j["d"] = s.d;
    j["n"] = s.n;
    j["m"] = s.m;
    j["kappa"] = s.kappa;
    j["eps_stop"] = eps_stop;
    j["schedule"] = to_string(schedule.kind);
    j["sweeps"] = outcome.sweeps;
    j["residual_excess"] = outcome.residual_excess;
    std::ofstream f(json_path);
    if (!f) throw IoError("write_checkpoint: cannot open " + json_path);
    f << j.dump(2) << '\n';
    if (!f.good()) throw IoError("write_checkpoint: write failed for " + json_path);
}

SandpileState read_checkpoint(const std::string& csv_path, const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw IoError("read_checkpoint: cannot open " + json_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw IoError("read_checkpoint: bad JSON in " + json_path + ": " + e.what());
    }
    for (const char* key : {"d", "n", "m", "kappa"})
        if (!j.contains(key))
            throw IoError("read_checkpoint: sidecar missing key '" + std::string(key) + "'");

    const FieldsCsv fields = read_fields_csv(csv_path);
    const int d = j["d"].get<int>();
    if (d != fields.d)
        throw IoError("read_checkpoint: sidecar dimension disagrees with CSV columns");

    long reach = 0;
    for (const Site& x : fields.sites)
        for (const int c : x) reach = lmax(reach, std::abs(static_cast<long>(c)));

    SandpileState s;
    s.d = d;
    s.n = j["n"].get<double>();
    s.m = j["m"].get<double>();
    s.kappa = j["kappa"].get<double>();

    const long R = lmax(4L, reach + 2);
    s.u = LatticeField(d, R);
    s.mu = LatticeField(d, R);
    s.visited = MaskField(d, R);
    s.mu0 = LatticeField(d, R);
    for (std::size_t k = 0; k < fields.sites.size(); ++k) {
        const Site& x = fields.sites[k];
        s.u.ref(x) = fields.u[k];
        s.mu.ref(x) = fields.mu[k];
        s.visited.ref(x) = 1;
    }
    // μ₀ = μ − Δ¹u, thresholded against float noise.
    const double thresh = 1e-7 * std::max(1.0, s.n);
    for (std::size_t k = 0; k < fields.sites.size(); ++k) {
        const Site& x = fields.sites[k];
        const double v = s.mu.at(x) - discrete_laplacian(s.u, x);
        if (v > thresh) s.mu0.ref(x) = v;
    }
    return s;
}

}  // namespace sandpile
