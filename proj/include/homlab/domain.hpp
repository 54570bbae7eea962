#pragma once

// Perforated geometry: the lattice of cells of side 2*epsilon, one hole per
// cell, and a single conforming mesh of the whole domain that resolves the
// hole boundaries with geometrically graded rings.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "homlab/error.hpp"
#include "homlab/fe_function.hpp"
#include "homlab/mesh.hpp"

namespace homlab {

struct LatticeSpec {
    double epsilon = 0.5;
    double c0 = 1.0;
    int dim = 2;
    Rect domain{};

    void validate() const {
        if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error("geometry", "epsilon must be > 0");
        if (!(c0 > 0.0) || !std::isfinite(c0)) throw Error("geometry", "c0 must be > 0");
        if (dim < 2) throw Error("geometry", "dimension must be >= 2");
        if (!domain.valid()) throw Error("geometry", "invalid domain rectangle");
    }
};

/// Hole radius: c0 * eps^(N/(N-2)) for N >= 3, exp(-c0/eps^2) for N = 2.
inline double radius_for(double epsilon, double c0, int dim) {
    if (dim < 2) throw Error("geometry", "dimension must be >= 2");
    if (!(epsilon > 0.0) || !(c0 > 0.0)) throw Error("geometry", "epsilon and c0 must be > 0");
    if (dim == 2) return std::exp(-c0 / (epsilon * epsilon));
    return c0 * std::pow(epsilon, static_cast<double>(dim) / (dim - 2));
}

struct Hole {
    Point center;
    double radius = 0.0;
    int polygon_order = 32;
    int cell_ix = 0;
    int cell_iy = 0;
};

/// Lattice cells [2 eps i, 2 eps (i+1)] x [2 eps j, 2 eps (j+1)] meeting the domain.
struct CellGrid {
    double side = 1.0;
    Rect domain{};
    int ix_min = 0;
    int iy_min = 0;
    int ncx = 0;
    int ncy = 0;

    static CellGrid from(const LatticeSpec& spec) {
        CellGrid g;
        g.side = 2.0 * spec.epsilon;
        g.domain = spec.domain;
        const double tol = 1e-12;
        g.ix_min = static_cast<int>(std::floor(spec.domain.x0 / g.side + tol));
        g.iy_min = static_cast<int>(std::floor(spec.domain.y0 / g.side + tol));
        const int ix_max = static_cast<int>(std::ceil(spec.domain.x1 / g.side - tol)) - 1;
        const int iy_max = static_cast<int>(std::ceil(spec.domain.y1 / g.side - tol)) - 1;
        g.ncx = ix_max - g.ix_min + 1;
        g.ncy = iy_max - g.iy_min + 1;
        return g;
    }

    int count() const { return ncx * ncy; }
    int index(int ix, int iy) const { return (iy - iy_min) * ncx + (ix - ix_min); }
    int ix_of(int index) const { return ix_min + index % ncx; }
    int iy_of(int index) const { return iy_min + index / ncx; }

    int locate(Point p) const {
        int ix = static_cast<int>(std::floor(p.x / side));
        int iy = static_cast<int>(std::floor(p.y / side));
        ix = std::clamp(ix, ix_min, ix_min + ncx - 1);
        iy = std::clamp(iy, iy_min, iy_min + ncy - 1);
        return index(ix, iy);
    }

    Rect cell(int ix, int iy) const { return {side * ix, side * iy, side * (ix + 1), side * (iy + 1)}; }

    /// True when the full cell square lies in the closed domain.
    bool inside(int ix, int iy) const {
        const Rect c = cell(ix, iy);
        const double tol = 1e-12 * std::max(1.0, side);
        return c.x0 >= domain.x0 - tol && c.x1 <= domain.x1 + tol && c.y0 >= domain.y0 - tol &&
               c.y1 <= domain.y1 + tol;
    }
};

/// One hole at the centre of every lattice cell whose inscribed ball
/// B(centre, eps) lies in the closed domain. Cells cut by the boundary get no
/// hole, so each corrector problem stays inside its own cell.
inline std::vector<Hole> place_holes(const LatticeSpec& spec, int polygon_order = 32) {
    spec.validate();
    if (spec.dim != 2) throw Error("geometry", "hole placement and meshing support dim = 2 only");
    const double r = radius_for(spec.epsilon, spec.c0, spec.dim);
    if (!(r < spec.epsilon)) {
        std::ostringstream os;
        os << "hole radius " << r << " is not smaller than epsilon " << spec.epsilon;
        throw Error("geometry", os.str());
    }
    const CellGrid grid = CellGrid::from(spec);
    std::vector<Hole> holes;
    for (int iy = grid.iy_min; iy < grid.iy_min + grid.ncy; ++iy) {
        for (int ix = grid.ix_min; ix < grid.ix_min + grid.ncx; ++ix) {
            if (!grid.inside(ix, iy)) continue;
            Hole h;
            h.center = {spec.epsilon * (2 * ix + 1), spec.epsilon * (2 * iy + 1)};
            h.radius = r;
            h.polygon_order = polygon_order;
            h.cell_ix = ix;
            h.cell_iy = iy;
            holes.push_back(h);
        }
    }
    return holes;
}

struct RemovedMeasure {
    double disk = 0.0;     // n * pi * r^2
    double polygon = 0.0;  // n * (m/2) r^2 sin(2 pi / m)
    std::size_t hole_count = 0;
};

inline RemovedMeasure removed_measure(const LatticeSpec& spec, int polygon_order = 32) {
    const auto holes = place_holes(spec, polygon_order);
    RemovedMeasure out;
    out.hole_count = holes.size();
    for (const auto& h : holes) {
        out.disk += std::numbers::pi * h.radius * h.radius;
        out.polygon += 0.5 * h.polygon_order * h.radius * h.radius *
                       std::sin(2.0 * std::numbers::pi / h.polygon_order);
    }
    return out;
}

struct MeshParams {
    double target_h = 0.05;
    double grading_ratio = 1.4;
    int polygon_order = 32;
    double min_angle = 2.5;  // degrees

    void validate() const {
        if (!(target_h > 0.0)) throw Error("mesh", "target_h must be > 0");
        if (!(grading_ratio > 1.0 && grading_ratio <= 4.0)) throw Error("mesh", "grading_ratio must lie in (1, 4]");
        if (polygon_order < 16 || polygon_order % 8 != 0) {
            throw Error("mesh", "polygon_order must be >= 16 and a multiple of 8");
        }
        if (!(min_angle >= 0.0 && min_angle < 60.0)) throw Error("mesh", "min_angle must lie in [0, 60)");
    }
};

/// Number of graded rings between radius r and eps for a given ratio:
/// ceil(log_ratio(eps / r)), or one fewer when the ceiling would squeeze the
/// actual ring ratio below 0.9 * ratio and the floor stays within 1.1 * ratio.
inline int ring_count(double r, double eps, double ratio) {
    const double x = std::log(eps / r) / std::log(ratio);
    const int up = std::max(1, static_cast<int>(std::ceil(x - 1e-12)));
    const int down = up - 1;
    if (down >= 1 && std::pow(ratio, x / up) < 0.9 * ratio && std::pow(ratio, x / down) <= 1.1 * ratio) return down;
    return up;
}

/// Graded ring radii r q^i, i = 0..n, with q = (eps/r)^(1/n) and the last
/// entry exactly eps.
inline std::vector<double> ring_radii(double r, double eps, double ratio) {
    const int n = ring_count(r, eps, ratio);
    const double q = std::pow(eps / r, 1.0 / n);
    std::vector<double> out(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) out[static_cast<std::size_t>(i)] = i == n ? eps : r * std::pow(q, i);
    return out;
}

/// Node count of the eps-circle and of the cell square: polygon_order doubled
/// until the arc spacing is at most target_h.
inline int outer_loop_order(double eps, const MeshParams& params) {
    int m = params.polygon_order;
    while (2.0 * std::numbers::pi * eps / m > params.target_h) m *= 2;
    return m;
}

namespace detail {

class MeshBuilder {
public:
    int add_vertex(Point p, VertexMarker marker) {
        mesh_.vertices.push_back(p);
        mesh_.vertex_marker.push_back(marker);
        return static_cast<int>(mesh_.vertices.size()) - 1;
    }

    // Orients counter-clockwise; silently drops triangles with a repeated
    // vertex (collapsed quads at tangency points).
    void add_triangle(int a, int b, int c, bool in_hole) {
        if (a == b || b == c || a == c) return;
        const Point pa = mesh_.vertices[a], pb = mesh_.vertices[b], pc = mesh_.vertices[c];
        const double a2 = (pb.x - pa.x) * (pc.y - pa.y) - (pc.x - pa.x) * (pb.y - pa.y);
        const double scale = std::max({distance(pa, pb), distance(pb, pc), distance(pa, pc)});
        if (!(std::abs(a2) > 1e-14 * scale * scale)) throw Error("mesh", "degenerate triangle generated");
        if (a2 < 0.0) std::swap(b, c);
        mesh_.triangles.push_back({a, b, c});
        mesh_.triangle_in_hole.push_back(in_hole ? 1 : 0);
    }

    // Triangulates the band between two closed loops whose nodes carry
    // increasing angles in [0, 2 pi).
    void zip_loops(const std::vector<int>& inner, const std::vector<double>& inner_angle,
                   const std::vector<int>& outer, const std::vector<double>& outer_angle) {
        const std::size_t na = inner.size(), nb = outer.size();
        const double two_pi = 2.0 * std::numbers::pi;
        auto ang = [&](const std::vector<double>& a, std::size_t k) {
            return k < a.size() ? a[k] : a[k - a.size()] + two_pi;
        };
        std::size_t ia = 0, ib = 0;
        while (ia < na || ib < nb) {
            const double next_a = ia < na ? ang(inner_angle, ia + 1) : std::numeric_limits<double>::infinity();
            const double next_b = ib < nb ? ang(outer_angle, ib + 1) : std::numeric_limits<double>::infinity();
            if (next_a <= next_b) {
                add_triangle(inner[ia % na], inner[(ia + 1) % na], outer[ib % nb], false);
                ++ia;
            } else {
                add_triangle(inner[ia % na], outer[(ib + 1) % nb], outer[ib % nb], false);
                ++ib;
            }
        }
    }

    Mesh& mesh() { return mesh_; }

private:
    Mesh mesh_;
};

// Axis breakpoints: each hole cell contributes c + eps * t_j, gaps between
// hole cells are split uniformly at spacing <= h. `starts` receives, for each
// hole cell index, the position of its first node.
inline std::vector<double> axis_nodes(double lo, double hi, const std::vector<int>& cells, double eps,
                                      const std::vector<double>& tangents, double h,
                                      std::vector<std::pair<int, int>>& starts) {
    std::vector<double> nodes;
    const double tol = 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)});
    auto fill_gap = [&](double a, double b) {
        if (b - a <= tol) return;
        const int n = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-9)));
        for (int k = 0; k < n; ++k) nodes.push_back(a + (b - a) * k / n);
    };
    double cur = lo;
    for (int c : cells) {
        double a = 2.0 * eps * c;
        double b = 2.0 * eps * (c + 1);
        if (std::abs(a - lo) <= tol) a = lo;
        if (std::abs(b - hi) <= tol) b = hi;
        if (std::abs(a - cur) <= tol) a = cur;
        fill_gap(cur, a);
        starts.emplace_back(c, static_cast<int>(nodes.size()));
        const double centre = eps * (2 * c + 1);
        nodes.push_back(a);
        for (std::size_t j = 1; j + 1 < tangents.size(); ++j) nodes.push_back(centre + eps * tangents[j]);
        cur = b;
    }
    fill_gap(cur, hi);
    nodes.push_back(hi);
    return nodes;
}

}  // namespace detail

/// Structured triangulation of a rectangle (no holes), spacing <= target_h.
inline Mesh build_plain_mesh(const Rect& domain, double target_h) {
    if (!domain.valid()) throw Error("mesh", "invalid domain rectangle");
    if (!(target_h > 0.0)) throw Error("mesh", "target_h must be > 0");
    std::vector<std::pair<int, int>> unused;
    const auto xs = detail::axis_nodes(domain.x0, domain.x1, {}, 1.0, {}, target_h, unused);
    const auto ys = detail::axis_nodes(domain.y0, domain.y1, {}, 1.0, {}, target_h, unused);
    detail::MeshBuilder b;
    const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const bool bnd = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            b.add_vertex({xs[i], ys[j]}, bnd ? VertexMarker::outer_boundary : VertexMarker::interior);
        }
    }
    auto id = [nx](int i, int j) { return j * nx + i; };
    for (int j = 0; j + 1 < ny; ++j) {
        for (int i = 0; i + 1 < nx; ++i) {
            if ((i + j) % 2 == 0) {
                b.add_triangle(id(i, j), id(i + 1, j), id(i + 1, j + 1), false);
                b.add_triangle(id(i, j), id(i + 1, j + 1), id(i, j + 1), false);
            } else {
                b.add_triangle(id(i, j), id(i + 1, j), id(i, j + 1), false);
                b.add_triangle(id(i + 1, j), id(i + 1, j + 1), id(i, j + 1), false);
            }
        }
    }
    Mesh mesh = std::move(b.mesh());
    mesh.triangle_cell.assign(mesh.num_triangles(), -1);
    check_mesh(mesh, domain, 0.0);
    return mesh;
}

/// Conforming mesh of the closed domain. Around each hole: a fan inside the
/// hole polygon, rings at radii r q^i (i = 1..n, last ring exactly eps) with
/// q within 10% of grading_ratio, then a transition band from the circle to the cell
/// square. Remaining parts of the domain get a tensor grid whose lines
/// continue the hole-cell square nodes.
inline Mesh build_mesh(const LatticeSpec& spec, const MeshParams& params) {
    params.validate();
    const auto holes = place_holes(spec, params.polygon_order);
    if (holes.empty()) {
        Mesh plain = build_plain_mesh(spec.domain, params.target_h);
        const CellGrid grid = CellGrid::from(spec);
        for (std::size_t t = 0; t < plain.num_triangles(); ++t) plain.triangle_cell[t] = grid.locate(plain.centroid(t));
        return plain;
    }
    const double eps = spec.epsilon;
    const int m = outer_loop_order(eps, params);
    const int m0 = params.polygon_order;
    const int q8 = m / 8;
    const double two_pi = 2.0 * std::numbers::pi;
    for (const auto& h : holes) {
        const double scale = std::max({1.0, std::abs(h.center.x), std::abs(h.center.y)});
        if (h.radius < 1e-9 * scale) {
            std::ostringstream os;
            os << "hole radius " << h.radius << " at epsilon " << eps
               << " is below the coordinate resolution of double precision";
            throw Error("mesh", os.str());
        }
    }

    // tan(2 pi j / m) for j = -m/8 .. m/8, exactly antisymmetric, ends exactly +-1.
    std::vector<double> tangents(2 * q8 + 1);
    for (int j = 0; j <= q8; ++j) {
        const double t = (j == q8) ? 1.0 : std::tan(two_pi * j / m);
        tangents[q8 + j] = t;
        tangents[q8 - j] = -t;
    }

    std::set<int> col_set, row_set;
    std::set<std::pair<int, int>> hole_cells;
    for (const auto& h : holes) {
        col_set.insert(h.cell_ix);
        row_set.insert(h.cell_iy);
        hole_cells.insert({h.cell_ix, h.cell_iy});
    }
    std::vector<std::pair<int, int>> col_start, row_start;
    const auto xs = detail::axis_nodes(spec.domain.x0, spec.domain.x1, {col_set.begin(), col_set.end()}, eps,
                                       tangents, params.target_h, col_start);
    const auto ys = detail::axis_nodes(spec.domain.y0, spec.domain.y1, {row_set.begin(), row_set.end()}, eps,
                                       tangents, params.target_h, row_start);
    auto lookup = [](const std::vector<std::pair<int, int>>& starts, int c) {
        for (const auto& [cell, pos] : starts) {
            if (cell == c) return pos;
        }
        throw Error("mesh", "internal: missing cell start");
    };
    const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());

    detail::MeshBuilder b;
    std::vector<int> grid_id(static_cast<std::size_t>(nx) * ny, -1);
    auto grid_vertex = [&](int i, int j) {
        int& id = grid_id[static_cast<std::size_t>(j) * nx + i];
        if (id < 0) {
            const bool bnd = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            id = b.add_vertex({xs[i], ys[j]}, bnd ? VertexMarker::outer_boundary : VertexMarker::interior);
        }
        return id;
    };

    const double side = 2.0 * eps;
    auto in_hole_cell = [&](double xm, double ym) {
        const int ix = static_cast<int>(std::floor(xm / side));
        const int iy = static_cast<int>(std::floor(ym / side));
        return hole_cells.count({ix, iy}) > 0;
    };
    for (int j = 0; j + 1 < ny; ++j) {
        for (int i = 0; i + 1 < nx; ++i) {
            if (in_hole_cell(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]))) continue;
            const int a = grid_vertex(i, j), bb = grid_vertex(i + 1, j);
            const int c = grid_vertex(i + 1, j + 1), d = grid_vertex(i, j + 1);
            if ((i + j) % 2 == 0) {
                b.add_triangle(a, bb, c, false);
                b.add_triangle(a, c, d, false);
            } else {
                b.add_triangle(a, bb, d, false);
                b.add_triangle(bb, c, d, false);
            }
        }
    }

    const double corner_gap = (std::numbers::sqrt2 - 1.0);
    const double corner_spacing = 1.0 - std::tan(std::numbers::pi / 4.0 - two_pi / m);
    const int layers = std::max(1, static_cast<int>(std::lround(corner_gap / corner_spacing)));

    for (const auto& h : holes) {
        const int c0i = lookup(col_start, h.cell_ix);
        const int r0j = lookup(row_start, h.cell_iy);
        // Square loop, angle index k = 0..m-1 at angle 2 pi k / m.
        std::vector<int> square(m);
        for (int k = 0; k < m; ++k) {
            int gi = 0, gj = 0;
            if (k <= q8 || k >= 7 * q8) {
                const int kk = k >= 7 * q8 ? k - m : k;
                gi = c0i + 2 * q8;
                gj = r0j + kk + q8;
            } else if (k <= 3 * q8) {
                gi = c0i + (2 * q8 - k) + q8;
                gj = r0j + 2 * q8;
            } else if (k <= 5 * q8) {
                gi = c0i;
                gj = r0j + (4 * q8 - k) + q8;
            } else {
                gi = c0i + (k - 6 * q8) + q8;
                gj = r0j;
            }
            square[k] = grid_vertex(gi, gj);
        }
        auto touches = [q8](int k) { return k % (2 * q8) == 0; };

        // Graded rings, with bands wider than target_h split uniformly.
        const std::vector<double> graded = ring_radii(h.radius, eps, params.grading_ratio);
        std::vector<double> radii{graded.front()};
        for (std::size_t i = 0; i + 1 < graded.size(); ++i) {
            const double lo = graded[i], hi = graded[i + 1];
            const int parts = std::max(1, static_cast<int>(std::ceil((hi - lo) / params.target_h - 1e-9)));
            for (int p = 1; p <= parts; ++p) radii.push_back(p == parts ? hi : lo + (hi - lo) * p / parts);
        }
        const int n = static_cast<int>(radii.size()) - 1;

        std::vector<std::vector<int>> ring_ids(n + 1);
        std::vector<std::vector<double>> ring_angles(n + 1);
        for (int ring = 0; ring <= n; ++ring) {
            const double rho = radii[static_cast<std::size_t>(ring)];
            int count = m0;
            if (ring == n) {
                count = m;
            } else if (ring > 0) {
                while (count < m && two_pi * rho / count > params.target_h) count *= 2;
            }
            const double offset = ((n - ring) % 2) * (std::numbers::pi / count);
            ring_ids[ring].resize(count);
            ring_angles[ring].resize(count);
            for (int k = 0; k < count; ++k) {
                const double ang = offset + two_pi * k / count;
                ring_angles[ring][k] = ang;
                if (ring == n && touches(k)) {
                    ring_ids[ring][k] = square[k];
                    continue;
                }
                const Point p = ring == n ? Point{h.center.x + eps * std::cos(ang), h.center.y + eps * std::sin(ang)}
                                          : Point{h.center.x + rho * std::cos(ang), h.center.y + rho * std::sin(ang)};
                ring_ids[ring][k] = b.add_vertex(p, ring == 0 ? VertexMarker::hole_boundary : VertexMarker::interior);
            }
        }
        const int centre = b.add_vertex(h.center, VertexMarker::hole_interior);
        for (int k = 0; k < m0; ++k) b.add_triangle(centre, ring_ids[0][k], ring_ids[0][(k + 1) % m0], true);
        for (int ring = 0; ring < n; ++ring) {
            b.zip_loops(ring_ids[ring], ring_angles[ring], ring_ids[ring + 1], ring_angles[ring + 1]);
        }

        // Transition band from the eps-circle to the cell square. Index k gets
        // as many layers as its gap holds at the local spacing, so the band
        // collapses towards the tangency points.
        std::vector<int> steps(m);
        for (int k = 0; k < m; ++k) {
            const Point pc = b.mesh().vertices[ring_ids[n][k]];
            const Point ps = b.mesh().vertices[square[k]];
            const double spacing = distance(ps, b.mesh().vertices[square[(k + 1) % m]]);
            steps[k] = touches(k) ? 0 : std::clamp(static_cast<int>(std::lround(distance(pc, ps) / spacing)), 1, layers);
        }
        std::vector<int> prev = ring_ids[n];
        const std::vector<double>& angles = ring_angles[n];
        for (int layer = 1; layer <= layers; ++layer) {
            std::vector<int> next(m);
            for (int k = 0; k < m; ++k) {
                if (layer >= steps[k]) {
                    next[k] = touches(k) ? prev[k] : square[k];
                    continue;
                }
                const Point pc = b.mesh().vertices[ring_ids[n][k]];
                const Point ps = b.mesh().vertices[square[k]];
                const double s = static_cast<double>(layer) / steps[k];
                next[k] = b.add_vertex({pc.x + s * (ps.x - pc.x), pc.y + s * (ps.y - pc.y)}, VertexMarker::interior);
            }
            b.zip_loops(prev, angles, next, angles);
            prev = std::move(next);
        }
    }

    Mesh mesh = std::move(b.mesh());
    const CellGrid grid = CellGrid::from(spec);
    mesh.triangle_cell.resize(mesh.num_triangles());
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) mesh.triangle_cell[t] = grid.locate(mesh.centroid(t));
    check_mesh(mesh, spec.domain, params.min_angle);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        if (!mesh.triangle_in_hole[t]) continue;
        for (int v : mesh.triangles[t]) {
            if (!is_hole_marker(mesh.vertex_marker[v])) throw Error("mesh", "hole triangle with non-hole vertex");
        }
    }
    return mesh;
}

/// Extension by zero: copy of u with every hole node set to 0.
inline FeFunction mask_to_perforated(const FeFunction& u, const Mesh& mesh) {
    require_on_mesh(u, mesh);
    FeFunction out = u;
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        if (is_hole_marker(mesh.vertex_marker[i])) out.values[i] = 0.0;
    }
    return out;
}

}  // namespace homlab
