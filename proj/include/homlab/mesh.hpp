#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "homlab/error.hpp"

namespace homlab {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    bool valid() const { return x1 > x0 && y1 > y0 && std::isfinite(area()); }
};

enum class VertexMarker : std::uint8_t {
    interior = 0,
    outer_boundary = 1,
    hole_boundary = 2,
    hole_interior = 3,
};

inline bool is_hole_marker(VertexMarker m) {
    return m == VertexMarker::hole_boundary || m == VertexMarker::hole_interior;
}

using Triangle = std::array<int, 3>;

/// Conforming triangulation of the closed domain, hole interiors included.
/// Triangles are positively oriented. `triangle_cell` is the linear lattice
/// cell index of the triangle centroid, or -1 when the mesh has no lattice.
struct Mesh {
    std::vector<Point> vertices;
    std::vector<Triangle> triangles;
    std::vector<VertexMarker> vertex_marker;
    std::vector<int> triangle_cell;
    std::vector<std::uint8_t> triangle_in_hole;

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_triangles() const { return triangles.size(); }

    double signed_area2(std::size_t t) const {
        const auto& tri = triangles[t];
        const Point a = vertices[tri[0]], b = vertices[tri[1]], c = vertices[tri[2]];
        return (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    }
    double area(std::size_t t) const { return 0.5 * signed_area2(t); }

    Point centroid(std::size_t t) const {
        const auto& tri = triangles[t];
        return {(vertices[tri[0]].x + vertices[tri[1]].x + vertices[tri[2]].x) / 3.0,
                (vertices[tri[0]].y + vertices[tri[1]].y + vertices[tri[2]].y) / 3.0};
    }

    bool operator==(const Mesh&) const = default;
};

/// Smallest interior angle of triangle t, in degrees.
inline double min_angle_deg(const Mesh& mesh, std::size_t t) {
    const auto& tri = mesh.triangles[t];
    double best = 180.0;
    for (int i = 0; i < 3; ++i) {
        const Point p = mesh.vertices[tri[i]];
        const Point a = mesh.vertices[tri[(i + 1) % 3]];
        const Point b = mesh.vertices[tri[(i + 2) % 3]];
        const double ux = a.x - p.x, uy = a.y - p.y, vx = b.x - p.x, vy = b.y - p.y;
        const double ang = std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy);
        best = std::min(best, ang * 180.0 / std::numbers::pi);
    }
    return best;
}

struct MeshQuality {
    double min_angle_deg = 180.0;
    double total_area = 0.0;
    std::size_t boundary_edges = 0;
};

/// Structural check: positive orientation, every edge shared by at most two
/// triangles, single-use edges lie on the rectangle boundary, areas sum to
/// the rectangle area, and every angle is at least `min_angle`.
inline MeshQuality check_mesh(const Mesh& mesh, const Rect& domain, double min_angle) {
    const std::size_t nv = mesh.num_vertices();
    if (mesh.vertex_marker.size() != nv || mesh.triangle_cell.size() != mesh.num_triangles() ||
        mesh.triangle_in_hole.size() != mesh.num_triangles()) {
        throw Error("mesh", "inconsistent array sizes");
    }
    MeshQuality q;
    std::map<std::pair<int, int>, int> edge_use;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int v : tri) {
            if (v < 0 || static_cast<std::size_t>(v) >= nv) throw Error("mesh", "vertex index out of range");
        }
        if (!(mesh.signed_area2(t) > 0.0)) {
            throw Error("mesh", "triangle " + std::to_string(t) + " is not positively oriented");
        }
        q.total_area += mesh.area(t);
        q.min_angle_deg = std::min(q.min_angle_deg, min_angle_deg(mesh, t));
        for (int i = 0; i < 3; ++i) {
            int a = tri[i], b = tri[(i + 1) % 3];
            if (a > b) std::swap(a, b);
            ++edge_use[{a, b}];
        }
    }
    const double tol = 1e-12 * std::max({1.0, std::abs(domain.x1), std::abs(domain.y1)});
    auto on_boundary = [&](Point p) {
        return std::abs(p.x - domain.x0) <= tol || std::abs(p.x - domain.x1) <= tol ||
               std::abs(p.y - domain.y0) <= tol || std::abs(p.y - domain.y1) <= tol;
    };
    for (const auto& [edge, count] : edge_use) {
        if (count > 2) throw Error("mesh", "non-manifold edge");
        if (count == 1) {
            ++q.boundary_edges;
            const Point a = mesh.vertices[edge.first], b = mesh.vertices[edge.second];
            const Point mid{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
            if (!on_boundary(a) || !on_boundary(b) || !on_boundary(mid)) {
                throw Error("mesh", "interior crack: unmatched edge " + std::to_string(edge.first) + "-" +
                                        std::to_string(edge.second));
            }
        }
    }
    if (std::abs(q.total_area - domain.area()) > 1e-10 * domain.area()) {
        std::ostringstream os;
        os << "triangle areas sum to " << std::setprecision(15) << q.total_area << ", expected "
           << domain.area();
        throw Error("mesh", os.str());
    }
    if (q.min_angle_deg < min_angle) {
        std::ostringstream os;
        os << "minimum angle " << q.min_angle_deg << " deg below bound " << min_angle
           << " deg (graded rings touching the cell square pinch at about 180/polygon_order deg; "
              "lower min_angle or polygon_order)";
        throw Error("mesh", os.str());
    }
    return q;
}

// Plain-text format:
//   nv nt
//   x y marker            (nv lines)
//   i j k cell in_hole    (nt lines)
inline void write_mesh(std::ostream& os, const Mesh& mesh) {
    os << mesh.num_vertices() << ' ' << mesh.num_triangles() << '\n';
    os << std::setprecision(17);
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        os << mesh.vertices[i].x << ' ' << mesh.vertices[i].y << ' '
           << static_cast<int>(mesh.vertex_marker[i]) << '\n';
    }
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        os << tri[0] << ' ' << tri[1] << ' ' << tri[2] << ' ' << mesh.triangle_cell[t] << ' '
           << static_cast<int>(mesh.triangle_in_hole[t]) << '\n';
    }
}

inline Mesh read_mesh(std::istream& is) {
    Mesh mesh;
    std::size_t nv = 0, nt = 0;
    if (!(is >> nv >> nt)) throw Error("mesh", "bad header");
    mesh.vertices.resize(nv);
    mesh.vertex_marker.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        int marker = 0;
        if (!(is >> mesh.vertices[i].x >> mesh.vertices[i].y >> marker) || marker < 0 || marker > 3) {
            throw Error("mesh", "bad vertex line " + std::to_string(i));
        }
        mesh.vertex_marker[i] = static_cast<VertexMarker>(marker);
    }
    mesh.triangles.resize(nt);
    mesh.triangle_cell.resize(nt);
    mesh.triangle_in_hole.resize(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        int in_hole = 0;
        auto& tri = mesh.triangles[t];
        if (!(is >> tri[0] >> tri[1] >> tri[2] >> mesh.triangle_cell[t] >> in_hole)) {
            throw Error("mesh", "bad triangle line " + std::to_string(t));
        }
        for (int v : tri) {
            if (v < 0 || static_cast<std::size_t>(v) >= nv) throw Error("mesh", "vertex index out of range");
        }
        mesh.triangle_in_hole[t] = static_cast<std::uint8_t>(in_hole != 0);
    }
    return mesh;
}

inline void write_mesh_file(const std::string& path, const Mesh& mesh) {
    std::ofstream os(path);
    if (!os) throw Error("io", "cannot write " + path);
    write_mesh(os, mesh);
    if (!os) throw Error("io", "write failed for " + path);
}

inline Mesh read_mesh_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("io", "cannot read " + path);
    return read_mesh(is);
}

}  // namespace homlab
