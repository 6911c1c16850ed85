#pragma once

/**
 * @file mesh.hpp
 * @brief Finite-volume meshes for the polarisation field.
 *
 * Two layouts share one representation: a list of active cells with centres,
 * volumes and a symmetric face-conductance graph (face area / centre distance).
 * Radial1D meshes are spherical shells around the probe; Cartesian3D meshes are
 * uniform boxes with cells outside the ensemble geometry removed. Removed cells
 * and the removed-cell interfaces carry no flux.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "crip/constants.hpp"
#include "crip/error.hpp"
#include "crip/spin.hpp"
#include "crip/vec3.hpp"

namespace crip {

enum class RadialSpacing { Linear, Logarithmic };

struct RadialGrid {
    double r_min = diamond_bond_length;
    double r_max = 100.0;
    int n_cells = 1000;
    RadialSpacing spacing = RadialSpacing::Linear;

    void validate() const {
        require(r_min > 0.0 && r_min < r_max, "grid: need 0 < r_min < r_max");
        require(n_cells >= 8, "grid.cells must be >= 8");
    }
    bool operator==(const RadialGrid&) const = default;
};

struct CartesianGrid {
    Vec3 lower{-40.0, -40.0, 10.0};
    Vec3 upper{40.0, 40.0, 90.0};
    double cell_size = 1.25;
    /// Cells whose centre lies outside this geometry are masked out.
    Geometry mask = FullSpace{};
    /// Surface depth used to evaluate the mask.
    double surface_depth = 0.0;

    void validate() const {
        require(cell_size > 0.0, "grid.cell_size must be > 0");
        require(upper.x > lower.x && upper.y > lower.y && upper.z > lower.z,
                "grid: upper corner must exceed lower corner on every axis");
    }
    bool operator==(const CartesianGrid&) const = default;
};

using GridSpec = std::variant<RadialGrid, CartesianGrid>;

enum class BoundaryKind { ZeroFlux, FixedZero };

/// Face indices: radial {inner, outer}; Cartesian {x-, x+, y-, y+, z-, z+}.
struct Boundaries {
    BoundaryKind radial_inner = BoundaryKind::ZeroFlux;
    BoundaryKind radial_outer = BoundaryKind::ZeroFlux;
    std::array<BoundaryKind, 6> box{BoundaryKind::ZeroFlux, BoundaryKind::ZeroFlux,
                                    BoundaryKind::ZeroFlux, BoundaryKind::ZeroFlux,
                                    BoundaryKind::ZeroFlux, BoundaryKind::ZeroFlux};

    bool operator==(const Boundaries&) const = default;

    static Boundaries all(BoundaryKind k) {
        Boundaries b;
        b.radial_inner = b.radial_outer = k;
        b.box.fill(k);
        return b;
    }
};

class Mesh {
public:
    struct BoundaryFace {
        std::uint32_t cell;
        int face;  ///< index as documented on Boundaries
        double conductance;
    };

    static std::shared_ptr<const Mesh> build(const GridSpec& spec) {
        return std::visit([](const auto& g) { return build_impl(g); }, spec);
    }

    const GridSpec& spec() const { return spec_; }
    bool radial() const { return std::holds_alternative<RadialGrid>(spec_); }
    std::size_t size() const { return centers_.size(); }

    const std::vector<Vec3>& centers() const { return centers_; }
    const std::vector<double>& volumes() const { return volumes_; }
    /// Shell radii (radial meshes only), size() + 1 entries.
    const std::vector<double>& faces() const { return faces_; }
    const std::vector<BoundaryFace>& boundary_faces() const { return boundary_; }
    double min_spacing() const { return min_spacing_; }
    double total_volume() const {
        double v = 0.0;
        for (double x : volumes_) v += x;
        return v;
    }

    /// Conductance graph in CSR form; each interior face appears in both rows.
    std::span<const std::uint32_t> neighbours(std::size_t i) const {
        return {col_.data() + row_[i], row_[i + 1] - row_[i]};
    }
    std::span<const double> conductances(std::size_t i) const {
        return {weight_.data() + row_[i], row_[i + 1] - row_[i]};
    }

    /// Cartesian only: cells per axis.
    std::array<int, 3> dims() const { return dims_; }

private:
    Mesh() = default;

    static std::shared_ptr<const Mesh> build_impl(const RadialGrid& g) {
        g.validate();
        auto m = std::shared_ptr<Mesh>(new Mesh());
        m->spec_ = g;
        const int n = g.n_cells;
        m->faces_.resize(n + 1);
        for (int i = 0; i <= n; ++i) {
            const double s = static_cast<double>(i) / n;
            m->faces_[i] = g.spacing == RadialSpacing::Linear
                               ? g.r_min + s * (g.r_max - g.r_min)
                               : g.r_min * std::pow(g.r_max / g.r_min, s);
        }
        m->faces_.back() = g.r_max;
        m->min_spacing_ = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            const double a = m->faces_[i], b = m->faces_[i + 1];
            m->centers_.push_back({0.0, 0.0, 0.5 * (a + b)});
            m->volumes_.push_back(4.0 * constants::pi / 3.0 * (b * b * b - a * a * a));
            m->min_spacing_ = std::min(m->min_spacing_, b - a);
        }
        m->row_.assign(n + 1, 0);
        for (int i = 0; i < n; ++i) {
            if (i > 0) {
                m->col_.push_back(i - 1);
                m->weight_.push_back(m->radial_face_conductance(i));
            }
            if (i + 1 < n) {
                m->col_.push_back(i + 1);
                m->weight_.push_back(m->radial_face_conductance(i + 1));
            }
            m->row_[i + 1] = m->col_.size();
        }
        const double rin = g.r_min, rout = g.r_max;
        m->boundary_.push_back(
            {0, 0, 4.0 * constants::pi * rin * rin / (m->centers_.front().z - rin)});
        m->boundary_.push_back({static_cast<std::uint32_t>(n - 1), 1,
                                4.0 * constants::pi * rout * rout / (rout - m->centers_.back().z)});
        return m;
    }

    double radial_face_conductance(int face) const {
        const double r = faces_[face];
        return 4.0 * constants::pi * r * r / (centers_[face].z - centers_[face - 1].z);
    }

    static std::shared_ptr<const Mesh> build_impl(const CartesianGrid& g) {
        g.validate();
        auto m = std::shared_ptr<Mesh>(new Mesh());
        m->spec_ = g;
        const double h = g.cell_size;
        const std::array<double, 3> lo{g.lower.x, g.lower.y, g.lower.z};
        const std::array<double, 3> hi{g.upper.x, g.upper.y, g.upper.z};
        for (int a = 0; a < 3; ++a) {
            const double cells = (hi[a] - lo[a]) / h;
            const long n = std::lround(cells);
            require(n >= 2 && std::abs(cells - n) <= 1e-9 * cells,
                    "grid: box extent must be a whole number (>= 2) of cells on every axis");
            m->dims_[a] = static_cast<int>(n);
        }
        const auto [nx, ny, nz] = m->dims_;
        const std::size_t total = static_cast<std::size_t>(nx) * ny * nz;
        std::vector<std::int64_t> index(total, -1);
        auto flat = [&](int i, int j, int k) { return (static_cast<std::size_t>(i) * ny + j) * nz + k; };
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                for (int k = 0; k < nz; ++k) {
                    const Vec3 c{lo[0] + (i + 0.5) * h, lo[1] + (j + 0.5) * h, lo[2] + (k + 0.5) * h};
                    if (!geometry_contains(g.mask, c, g.surface_depth)) continue;
                    index[flat(i, j, k)] = static_cast<std::int64_t>(m->centers_.size());
                    m->centers_.push_back(c);
                    m->volumes_.push_back(h * h * h);
                }
        require(!m->centers_.empty(), "grid: every cell is masked out");
        m->min_spacing_ = h;
        m->row_.assign(m->centers_.size() + 1, 0);
        const std::array<std::array<int, 3>, 6> offsets{
            {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
        std::size_t cell = 0;
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                for (int k = 0; k < nz; ++k) {
                    if (index[flat(i, j, k)] < 0) continue;
                    for (int f = 0; f < 6; ++f) {
                        const int a = i + offsets[f][0], b = j + offsets[f][1], c = k + offsets[f][2];
                        if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) {
                            m->boundary_.push_back({static_cast<std::uint32_t>(cell), f, 2.0 * h});
                            continue;
                        }
                        const auto nb = index[flat(a, b, c)];
                        if (nb < 0) continue;
                        m->col_.push_back(static_cast<std::uint32_t>(nb));
                        m->weight_.push_back(h);
                    }
                    m->row_[++cell] = m->col_.size();
                }
        return m;
    }

    GridSpec spec_;
    std::vector<Vec3> centers_;
    std::vector<double> volumes_;
    std::vector<double> faces_;
    std::vector<std::size_t> row_;
    std::vector<std::uint32_t> col_;
    std::vector<double> weight_;
    std::vector<BoundaryFace> boundary_;
    std::array<int, 3> dims_{0, 0, 0};
    double min_spacing_ = 0.0;
};

inline BoundaryKind boundary_kind(const Boundaries& b, bool radial, int face) {
    if (radial) return face == 0 ? b.radial_inner : b.radial_outer;
    return b.box[face];
}

/// Per-cell Dirichlet conductance from FixedZero faces (geometric, without beta).
inline std::vector<double> dirichlet_conductance(const Mesh& mesh, const Boundaries& b) {
    std::vector<double> d(mesh.size(), 0.0);
    for (const auto& f : mesh.boundary_faces())
        if (boundary_kind(b, mesh.radial(), f.face) == BoundaryKind::FixedZero) d[f.cell] += f.conductance;
    return d;
}

}  // namespace crip
