// ============================================================================
// lattice.hpp — dense centered-box grids on Z^d with discrete calculus
//
// A Grid<T> stores a function on the box [-R, R]^d as one flat row-major
// array with axis 0 fastest:  index(x) = sum_i (x_i + R) * (2R+1)^i.
// Reads outside the box return T{}: every field of interest is compactly
// supported, and growth is triggered before anything is written out there.
//
// Discrete calculus (lattice spacing 1):
//   laplacian   Δf(x)   = (1/2d) Σ_{y~x} [f(y) − f(x)]     (normalized)
//   derivative  ∇_e f(x) = f(x+e) − f(x)                    (one-step)
// with the telescoping identity 2d·Δf(x) = Σ_e ∇_e f(x) over all 2d
// directions, exact up to floating-point rounding.
// ============================================================================
#pragma once

#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "sandpile/errors.hpp"

namespace sandpile {

// A lattice point; exactly d entries when used with a d-dimensional grid.
using Site = std::vector<int>;

// One of the 2d lattice directions ±e_axis.
struct Direction {
    int axis = 0;  // in [0, d)
    int sign = 1;  // ±1
};

// All 2d directions in the fixed order: axis ascending, minus before plus.
std::vector<Direction> all_directions(int d);

// Neighbors x ± e_i in the same fixed order (axis ascending, minus first).
std::vector<Site> neighbors(const Site& x, int d);

template <typename T>
class Grid {
public:
    Grid() = default;

    Grid(int dim, long radius) : dim_(dim), radius_(radius) {
        if (dim < 2) throw ConfigError("Grid: dimension must be at least 2");
        if (radius < 1) throw ConfigError("Grid: radius must be at least 1");
        side_ = 2 * radius + 1;
        strides_.assign(static_cast<std::size_t>(dim), 0);
        std::size_t s = 1;
        for (int a = 0; a < dim; ++a) {
            strides_[static_cast<std::size_t>(a)] = s;
            if (s > std::numeric_limits<std::size_t>::max() / static_cast<std::size_t>(side_))
                throw ConfigError("Grid: box too large to index");
            s *= static_cast<std::size_t>(side_);
        }
        values_.assign(s, T{});  // allocation failure -> std::bad_alloc (fatal)
    }

    int dim() const { return dim_; }
    long radius() const { return radius_; }
    long side() const { return side_; }
    std::size_t size() const { return values_.size(); }
    std::size_t stride(int axis) const { return strides_[static_cast<std::size_t>(axis)]; }

    bool inside(const Site& x) const {
        for (int a = 0; a < dim_; ++a)
            if (x[static_cast<std::size_t>(a)] < -radius_ || x[static_cast<std::size_t>(a)] > radius_)
                return false;
        return true;
    }

    // Flat index; precondition: inside(x).
    std::size_t index(const Site& x) const {
        std::size_t idx = 0;
        for (int a = 0; a < dim_; ++a)
            idx += static_cast<std::size_t>(x[static_cast<std::size_t>(a)] + radius_) *
                   strides_[static_cast<std::size_t>(a)];
        return idx;
    }

    // Coordinates of a flat index (inverse of index()).
    Site site_of(std::size_t idx) const {
        Site x(static_cast<std::size_t>(dim_));
        for (int a = 0; a < dim_; ++a) {
            x[static_cast<std::size_t>(a)] =
                static_cast<int>(static_cast<long>(idx % static_cast<std::size_t>(side_)) - radius_);
            idx /= static_cast<std::size_t>(side_);
        }
        return x;
    }

    // Value at x, or T{} outside the box.
    T at(const Site& x) const { return inside(x) ? values_[index(x)] : T{}; }

    // Mutable access; precondition: inside(x).
    T& ref(const Site& x) { return values_[index(x)]; }

    // Enlarge the box, preserving all old values; new sites read T{}.
    void grow(long new_radius) {
        if (new_radius <= radius_)
            throw ConfigError("Grid::grow: new radius must exceed the current one");
        Grid<T> big(dim_, new_radius);
        const long r_old = radius_;
        // Copy one contiguous axis-0 row at a time.
        std::vector<long> c(static_cast<std::size_t>(dim_), -r_old);  // coords of axes >= 1
        for (;;) {
            std::size_t src = 0, dst = 0;
            for (int a = 1; a < dim_; ++a) {
                src += static_cast<std::size_t>(c[static_cast<std::size_t>(a)] + r_old) *
                       strides_[static_cast<std::size_t>(a)];
                dst += static_cast<std::size_t>(c[static_cast<std::size_t>(a)] + new_radius) *
                       big.strides_[static_cast<std::size_t>(a)];
            }
            dst += static_cast<std::size_t>(new_radius - r_old);  // axis-0 offset of x0 = -r_old
            for (long i = 0; i < side_; ++i) big.values_[dst + static_cast<std::size_t>(i)] =
                values_[src + static_cast<std::size_t>(i)];
            int a = 1;
            while (a < dim_ && ++c[static_cast<std::size_t>(a)] > r_old) {
                c[static_cast<std::size_t>(a)] = -r_old;
                ++a;
            }
            if (a >= dim_) break;
        }
        *this = std::move(big);
    }

    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::vector<T>& raw() { return values_; }
    const std::vector<T>& raw() const { return values_; }

private:
    int dim_ = 0;
    long radius_ = 0;
    long side_ = 0;
    std::vector<std::size_t> strides_;
    std::vector<T> values_;
};

using LatticeField = Grid<double>;         // real-valued field (u, μ, μ0, ...)
using MaskField = Grid<std::uint8_t>;      // indicator field (visited set)

// Normalized discrete Laplacian Δf(x) = (1/2d) Σ_{y~x} [f(y) − f(x)].
// Neighbor contributions are summed pairwise per axis, (f(x−e)+f(x+e)),
// so the result is bit-identical under coordinate reflections and swaps.
double discrete_laplacian(const LatticeField& f, const Site& x);

// One-step discrete derivative ∇_e f(x) = f(x+e) − f(x).
double discrete_derivative(const LatticeField& f, const Site& x, const Direction& e);

// Pairwise (cascade) sum of all grid values; error O(log N) ulps.
double field_sum(const LatticeField& f);

// ---------------------------------------------------------------------------
// Field dump: CSV with header `x1,...,xd,u,mu`, one row per visited site in
// ascending flat-index order (axis 0 fastest), signed integer coordinates,
// reals with 17 significant digits (lossless double round-trip).
// ---------------------------------------------------------------------------
void write_fields_csv(const MaskField& visited, const LatticeField& u,
                      const LatticeField& mu, const std::string& path);

struct FieldsCsv {
    int d = 0;
    std::vector<Site> sites;
    std::vector<double> u;
    std::vector<double> mu;
};

FieldsCsv read_fields_csv(const std::string& path);

}  // namespace sandpile
