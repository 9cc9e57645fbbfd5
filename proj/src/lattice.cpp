#include "sandpile/lattice.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sandpile {

std::vector<Direction> all_directions(int d) {
    std::vector<Direction> dirs;
    dirs.reserve(static_cast<std::size_t>(2 * d));
    for (int a = 0; a < d; ++a) {
        dirs.push_back({a, -1});
        dirs.push_back({a, +1});
    }
    return dirs;
}

std::vector<Site> neighbors(const Site& x, int d) {
    if (static_cast<int>(x.size()) != d)
        throw ConfigError("neighbors: site has wrong number of coordinates");
    std::vector<Site> out;
    out.reserve(static_cast<std::size_t>(2 * d));
    for (int a = 0; a < d; ++a) {
        Site lo = x, hi = x;
        lo[static_cast<std::size_t>(a)] -= 1;
        hi[static_cast<std::size_t>(a)] += 1;
        out.push_back(std::move(lo));
        out.push_back(std::move(hi));
    }
    return out;
}

double discrete_laplacian(const LatticeField& f, const Site& x) {
    const int d = f.dim();
    double nb = 0.0;
    Site y = x;
    for (int a = 0; a < d; ++a) {
        const std::size_t ia = static_cast<std::size_t>(a);
        y[ia] = x[ia] - 1;
        const double lo = f.at(y);
        y[ia] = x[ia] + 1;
        const double hi = f.at(y);
        y[ia] = x[ia];
        nb += lo + hi;  // one balanced pair per axis
    }
    return nb / static_cast<double>(2 * d) - f.at(x);
}

double discrete_derivative(const LatticeField& f, const Site& x, const Direction& e) {
    Site y = x;
    y[static_cast<std::size_t>(e.axis)] += e.sign;
    return f.at(y) - f.at(x);
}

namespace {

double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

}  // namespace

double field_sum(const LatticeField& f) { return pairwise_sum(f.data(), f.size()); }

void write_fields_csv(const MaskField& visited, const LatticeField& u,
                      const LatticeField& mu, const std::string& path) {
    if (visited.dim() != u.dim() || u.dim() != mu.dim() ||
        visited.radius() != u.radius() || u.radius() != mu.radius())
        throw ConfigError("write_fields_csv: fields live on different boxes");

    std::string buf;
    buf.reserve(1 << 20);
    const int d = u.dim();
    buf += "x";
    for (int a = 0; a < d; ++a) {
        if (a > 0) buf += ",x";
        buf += std::to_string(a + 1);
    }
    buf += ",u,mu\n";

    const long r = u.radius();
    const std::uint8_t* vis = visited.data();
    const double* uu = u.data();
    const double* mm = mu.data();
    std::vector<long> c(static_cast<std::size_t>(d), -r);  // coords of the current index
    char row[512];
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (vis[i]) {
            int pos = 0;
            for (int a = 0; a < d; ++a)
                pos += std::snprintf(row + pos, sizeof(row) - static_cast<std::size_t>(pos),
                                     "%ld,", c[static_cast<std::size_t>(a)]);
            pos += std::snprintf(row + pos, sizeof(row) - static_cast<std::size_t>(pos),
                                 "%.17g,%.17g\n", uu[i], mm[i]);
            buf.append(row, static_cast<std::size_t>(pos));
        }
        int a = 0;  // odometer-increment the coordinates
        while (a < d && ++c[static_cast<std::size_t>(a)] > r) {
            c[static_cast<std::size_t>(a)] = -r;
            ++a;
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_fields_csv: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_fields_csv: write failed for " + path);
}

FieldsCsv read_fields_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_fields_csv: cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw IoError("read_fields_csv: empty file " + path);

    // Header is x1,...,xd,u,mu — the number of columns fixes d.
    int cols = 1;
    for (char ch : header)
        if (ch == ',') ++cols;
    const int d = cols - 2;
    if (d < 2) throw IoError("read_fields_csv: malformed header in " + path);

    FieldsCsv out;
    out.d = d;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const char* p = line.c_str();
        char* end = nullptr;
        Site x(static_cast<std::size_t>(d));
        for (int a = 0; a < d; ++a) {
            x[static_cast<std::size_t>(a)] = static_cast<int>(std::strtol(p, &end, 10));
            if (end == p || *end != ',')
                throw IoError("read_fields_csv: malformed row in " + path);
            p = end + 1;
        }
        const double uv = std::strtod(p, &end);
        if (end == p || *end != ',') throw IoError("read_fields_csv: malformed row in " + path);
        p = end + 1;
        const double mv = std::strtod(p, &end);
        if (end == p) throw IoError("read_fields_csv: malformed row in " + path);
        out.sites.push_back(std::move(x));
        out.u.push_back(uv);
        out.mu.push_back(mv);
    }
    return out;
}

}  // namespace sandpile
