#pragma once

// P1 finite elements on a Mesh: coefficient fields, assembly, Dirichlet
// elimination, linear solves and the usual norms.

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "homlab/error.hpp"
#include "homlab/fe_function.hpp"
#include "homlab/mesh.hpp"
#include "homlab/sparse.hpp"

namespace homlab {

struct Mat2 {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;

    Mat2 transposed() const { return {a11, a21, a12, a22}; }
    std::array<double, 2> apply(double x, double y) const { return {a11 * x + a12 * y, a21 * x + a22 * y}; }
    Mat2 scaled(double s) const { return {s * a11, s * a12, s * a21, s * a22}; }

    /// Smallest eigenvalue of the symmetric part.
    double coercivity() const {
        const double off = 0.5 * (a12 + a21);
        const double mean = 0.5 * (a11 + a22);
        const double rad = std::hypot(0.5 * (a11 - a22), off);
        return mean - rad;
    }
    double max_abs() const { return std::max({std::abs(a11), std::abs(a12), std::abs(a21), std::abs(a22)}); }
    bool symmetric() const { return a12 == a21; }
};

/// Piecewise-constant matrix field A(x), one value per triangle (or a single
/// constant). Coercivity A >= alpha I is checked on construction.
class CoefficientField {
public:
    CoefficientField() : CoefficientField(Mat2{}) {}

    explicit CoefficientField(Mat2 constant) : values_{constant} { finish(); }

    static CoefficientField identity() { return CoefficientField(Mat2{}); }
    static CoefficientField scaled_identity(double s) { return CoefficientField(Mat2{s, 0.0, 0.0, s}); }

    static CoefficientField per_triangle(const Mesh& mesh, const std::function<Mat2(Point)>& fn) {
        CoefficientField f;
        f.values_.resize(mesh.num_triangles());
        for (std::size_t t = 0; t < mesh.num_triangles(); ++t) f.values_[t] = fn(mesh.centroid(t));
        f.finish();
        return f;
    }

    Mat2 at(std::size_t t) const { return values_.size() == 1 ? values_[0] : values_[t]; }
    bool is_constant() const { return values_.size() == 1; }
    double alpha() const { return alpha_; }
    double sup_norm() const { return sup_; }
    bool symmetric() const { return symmetric_; }

    CoefficientField scaled(double s) const {
        CoefficientField f = *this;
        for (auto& m : f.values_) m = m.scaled(s);
        f.finish();
        return f;
    }

private:
    void finish() {
        alpha_ = std::numeric_limits<double>::infinity();
        sup_ = 0.0;
        symmetric_ = true;
        for (const auto& m : values_) {
            alpha_ = std::min(alpha_, m.coercivity());
            sup_ = std::max(sup_, m.max_abs());
            symmetric_ = symmetric_ && m.symmetric();
        }
        if (!(alpha_ > 0.0) || !std::isfinite(sup_)) throw Error("fem", "coefficient field is not coercive");
    }

    std::vector<Mat2> values_;
    double alpha_ = 1.0;
    double sup_ = 1.0;
    bool symmetric_ = true;
};

/// Gradients of the three barycentric basis functions on triangle t.
struct ElementGeometry {
    double area = 0.0;
    std::array<std::array<double, 2>, 3> grad{};
};

inline ElementGeometry element_geometry(const Mesh& mesh, std::size_t t) {
    const auto& tri = mesh.triangles[t];
    const Point p0 = mesh.vertices[tri[0]], p1 = mesh.vertices[tri[1]], p2 = mesh.vertices[tri[2]];
    const double a2 = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    const double scale = std::max({distance(p0, p1), distance(p1, p2), distance(p0, p2)});
    if (!(std::abs(a2) >= 2e-14 * scale * scale)) {
        throw Error("fem", "degenerate triangle " + std::to_string(t));
    }
    ElementGeometry g;
    g.area = 0.5 * a2;
    g.grad[0] = {(p1.y - p2.y) / a2, (p2.x - p1.x) / a2};
    g.grad[1] = {(p2.y - p0.y) / a2, (p0.x - p2.x) / a2};
    g.grad[2] = {(p0.y - p1.y) / a2, (p1.x - p0.x) / a2};
    return g;
}

/// Gradient of a P1 function on triangle t.
inline std::array<double, 2> element_gradient(const ElementGeometry& g, const Triangle& tri,
                                              std::span<const double> u) {
    std::array<double, 2> d{0.0, 0.0};
    for (int k = 0; k < 3; ++k) {
        d[0] += u[tri[k]] * g.grad[k][0];
        d[1] += u[tri[k]] * g.grad[k][1];
    }
    return d;
}

/// K_ij = int A D(phi_j) . D(phi_i) over the listed triangles (A^T with
/// `transpose`).
inline CsrMatrix assemble_stiffness_on(const Mesh& mesh, const CoefficientField& a, bool transpose,
                                       std::span<const int> triangles) {
    const std::size_t n = mesh.num_vertices();
    TripletList trip(n, n);
    trip.reserve(9 * triangles.size());
    for (int t : triangles) {
        const auto g = element_geometry(mesh, static_cast<std::size_t>(t));
        const Mat2 m = transpose ? a.at(static_cast<std::size_t>(t)).transposed() : a.at(static_cast<std::size_t>(t));
        const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
        for (int j = 0; j < 3; ++j) {
            const auto ag = m.apply(g.grad[j][0], g.grad[j][1]);
            for (int i = 0; i < 3; ++i) {
                trip.add(tri[i], tri[j], g.area * (ag[0] * g.grad[i][0] + ag[1] * g.grad[i][1]));
            }
        }
    }
    return trip.to_csr();
}

inline std::vector<int> all_triangles(const Mesh& mesh) {
    std::vector<int> t(mesh.num_triangles());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(i);
    return t;
}

inline CsrMatrix assemble_stiffness(const Mesh& mesh, const CoefficientField& a, bool transpose = false) {
    return assemble_stiffness_on(mesh, a, transpose, all_triangles(mesh));
}

/// Mass matrix with a nonnegative per-triangle weight; consistent or lumped
/// (row-sum) form.
inline CsrMatrix assemble_weighted_mass(const Mesh& mesh, std::span<const double> weight, bool lumped) {
    if (weight.size() != mesh.num_triangles()) throw Error("fem", "weight length does not match triangle count");
    const std::size_t n = mesh.num_vertices();
    TripletList trip(n, n);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        if (!(weight[t] >= 0.0)) throw Error("fem", "negative mass weight");
        if (weight[t] == 0.0) continue;
        const double area = element_geometry(mesh, t).area;
        const auto& tri = mesh.triangles[t];
        for (int i = 0; i < 3; ++i) {
            if (lumped) {
                trip.add(tri[i], tri[i], weight[t] * area / 3.0);
                continue;
            }
            for (int j = 0; j < 3; ++j) trip.add(tri[i], tri[j], weight[t] * area * (i == j ? 2.0 : 1.0) / 12.0);
        }
    }
    return trip.to_csr();
}

/// Diagonal of the lumped (vertex-quadrature) mass matrix.
inline std::vector<double> lumped_mass(const Mesh& mesh) {
    std::vector<double> m(mesh.num_vertices(), 0.0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const double a3 = mesh.area(t) / 3.0;
        for (int v : mesh.triangles[t]) m[v] += a3;
    }
    return m;
}

/// Load vector int f phi_i for P1 data given at the vertices (exact for
/// piecewise-linear f).
inline std::vector<double> assemble_load(const Mesh& mesh, std::span<const double> f_vertex) {
    if (f_vertex.size() != mesh.num_vertices()) throw Error("fem", "load data length does not match vertex count");
    std::vector<double> b(mesh.num_vertices(), 0.0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double area = mesh.area(t);
        const double sum = f_vertex[tri[0]] + f_vertex[tri[1]] + f_vertex[tri[2]];
        for (int i = 0; i < 3; ++i) b[tri[i]] += area * (sum + f_vertex[tri[i]]) / 12.0;
    }
    return b;
}

/// Load vector for piecewise-constant data (one value per triangle).
inline std::vector<double> assemble_load_per_triangle(const Mesh& mesh, std::span<const double> f_tri) {
    if (f_tri.size() != mesh.num_triangles()) throw Error("fem", "load data length does not match triangle count");
    std::vector<double> b(mesh.num_vertices(), 0.0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        for (int v : mesh.triangles[t]) b[v] += f_tri[t] * mesh.area(t) / 3.0;
    }
    return b;
}

/// Linear system restricted to the free nodes after substituting Dirichlet
/// values.
struct SparseSystem {
    CsrMatrix matrix;
    std::vector<double> rhs;
    std::vector<int> free_index;   // global -> free position or -1
    std::vector<int> free_nodes;   // free position -> global
    std::vector<double> fixed;     // constrained values (0 at free nodes)
    std::vector<double> coupling;  // K_fc g_c, subtracted from any new rhs

    std::size_t num_free() const { return free_nodes.size(); }

    std::vector<double> expand(std::span<const double> x_free) const {
        std::vector<double> out = fixed;
        for (std::size_t k = 0; k < free_nodes.size(); ++k) out[static_cast<std::size_t>(free_nodes[k])] = x_free[k];
        return out;
    }

    std::vector<double> restrict_to_free(std::span<const double> full) const {
        std::vector<double> out(free_nodes.size());
        for (std::size_t k = 0; k < free_nodes.size(); ++k) out[k] = full[static_cast<std::size_t>(free_nodes[k])];
        return out;
    }

    /// Reduced right-hand side for a new full-length load.
    std::vector<double> reduce_rhs(std::span<const double> full_rhs) const {
        std::vector<double> out = restrict_to_free(full_rhs);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] -= coupling[k];
        return out;
    }
};

/// Eliminates nodes with `is_fixed[i]` at value `values[i]`.
inline SparseSystem constrain(const CsrMatrix& k, std::span<const double> rhs, const std::vector<char>& is_fixed,
                              std::span<const double> values) {
    const std::size_t n = k.rows;
    if (rhs.size() != n || is_fixed.size() != n || values.size() != n) throw Error("fem", "constraint size mismatch");
    SparseSystem s;
    s.free_index.assign(n, -1);
    s.fixed.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (is_fixed[i]) {
            s.fixed[i] = values[i];
        } else {
            s.free_index[i] = static_cast<int>(s.free_nodes.size());
            s.free_nodes.push_back(static_cast<int>(i));
        }
    }
    const std::size_t nf = s.free_nodes.size();
    if (nf == n && n > 0) throw Error("fem", "no constrained nodes: the system is singular");
    s.matrix.rows = s.matrix.cols = nf;
    s.matrix.row_ptr.assign(nf + 1, 0);
    s.coupling.assign(nf, 0.0);
    for (std::size_t r = 0; r < nf; ++r) {
        const auto i = static_cast<std::size_t>(s.free_nodes[r]);
        for (std::size_t p = k.row_ptr[i]; p < k.row_ptr[i + 1]; ++p) {
            const int j = k.col[p];
            const int fj = s.free_index[static_cast<std::size_t>(j)];
            if (fj >= 0) {
                s.matrix.col.push_back(fj);
                s.matrix.val.push_back(k.val[p]);
            } else {
                s.coupling[r] += k.val[p] * s.fixed[static_cast<std::size_t>(j)];
            }
        }
        s.matrix.row_ptr[r + 1] = s.matrix.col.size();
    }
    s.rhs = s.reduce_rhs(rhs);
    return s;
}

inline SparseSystem constrain(const CsrMatrix& k, std::span<const double> rhs, const std::map<int, double>& constrained) {
    std::vector<char> fixed(k.rows, 0);
    std::vector<double> values(k.rows, 0.0);
    for (const auto& [node, value] : constrained) {
        if (node < 0 || static_cast<std::size_t>(node) >= k.rows) throw Error("fem", "constrained node out of range");
        fixed[static_cast<std::size_t>(node)] = 1;
        values[static_cast<std::size_t>(node)] = value;
    }
    return constrain(k, rhs, fixed, values);
}

/// Solves a symmetric positive definite system with Jacobi-PCG.
inline std::vector<double> solve_spd(const CsrMatrix& a, std::span<const double> b, double rtol = 1e-10,
                                     std::span<const double> x0 = {}) {
    return pcg(a, b, rtol, x0).x;
}

inline std::vector<double> solve_spd(const SparseSystem& s, double rtol = 1e-10, std::span<const double> x0 = {}) {
    return pcg(s.matrix, s.rhs, rtol, x0).x;
}

/// CG for symmetric matrices, BiCGSTAB otherwise.
inline std::vector<double> solve_linear(const CsrMatrix& a, std::span<const double> b, double rtol = 1e-10,
                                        std::span<const double> x0 = {}) {
    if (a.is_symmetric(1e-14)) return pcg(a, b, rtol, x0).x;
    return bicgstab(a, b, rtol, x0).x;
}

// ---------------------------------------------------------------------------
// Norms and pairings, exact for P1 inputs.

inline double norm_l2(const FeFunction& u) {
    const Mesh& mesh = *u.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double a = u[tri[0]], b = u[tri[1]], c = u[tri[2]];
        s += mesh.area(t) / 6.0 * (a * a + b * b + c * c + a * b + b * c + a * c);
    }
    return std::sqrt(std::max(s, 0.0));
}

/// int A Du . Dv.
inline double energy_pair(const FeFunction& u, const FeFunction& v, const CoefficientField& a) {
    require_same_mesh(u, v);
    const Mesh& mesh = *u.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto g = element_geometry(mesh, t);
        const auto du = element_gradient(g, mesh.triangles[t], u.values);
        const auto dv = element_gradient(g, mesh.triangles[t], v.values);
        const auto adu = a.at(t).apply(du[0], du[1]);
        s += g.area * (adu[0] * dv[0] + adu[1] * dv[1]);
    }
    return s;
}

inline double seminorm_h1(const FeFunction& u) {
    return std::sqrt(std::max(energy_pair(u, u, CoefficientField::identity()), 0.0));
}

inline double inner_l2(const FeFunction& u, const FeFunction& v) {
    require_same_mesh(u, v);
    const Mesh& mesh = *u.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        double su = 0.0, sv = 0.0, diag = 0.0;
        for (int k = 0; k < 3; ++k) {
            su += u[tri[k]];
            sv += v[tri[k]];
            diag += u[tri[k]] * v[tri[k]];
        }
        s += mesh.area(t) / 12.0 * (su * sv + diag);
    }
    return s;
}

inline FeFunction operator-(const FeFunction& a, const FeFunction& b) {
    require_same_mesh(a, b);
    FeFunction out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= b.values[i];
    return out;
}

// 7-point, degree-5 rule on the reference triangle (barycentric, weights sum to 1).
struct QuadPoint {
    double l0, l1, l2, w;
};

inline const std::array<QuadPoint, 7>& degree5_rule() {
    static const std::array<QuadPoint, 7> rule = [] {
        const double a1 = 0.059715871789770, b1 = 0.470142064105115, w1 = 0.132394152788506;
        const double a2 = 0.797426985353087, b2 = 0.101286507323456, w2 = 0.125939180544827;
        return std::array<QuadPoint, 7>{{{1.0 / 3, 1.0 / 3, 1.0 / 3, 0.225},
                                         {a1, b1, b1, w1},
                                         {b1, a1, b1, w1},
                                         {b1, b1, a1, w1},
                                         {a2, b2, b2, w2},
                                         {b2, a2, b2, w2},
                                         {b2, b2, a2, w2}}};
    }();
    return rule;
}

/// ||u_h - u||_{L2} against an exact function, degree-5 quadrature.
inline double error_l2(const FeFunction& uh, const std::function<double(Point)>& exact) {
    const Mesh& mesh = *uh.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Point p0 = mesh.vertices[tri[0]], p1 = mesh.vertices[tri[1]], p2 = mesh.vertices[tri[2]];
        const double area = mesh.area(t);
        for (const auto& q : degree5_rule()) {
            const Point x{q.l0 * p0.x + q.l1 * p1.x + q.l2 * p2.x, q.l0 * p0.y + q.l1 * p1.y + q.l2 * p2.y};
            const double e = q.l0 * uh[tri[0]] + q.l1 * uh[tri[1]] + q.l2 * uh[tri[2]] - exact(x);
            s += area * q.w * e * e;
        }
    }
    return std::sqrt(s);
}

/// ||D(u_h - u)||_{L2} against an exact gradient, degree-5 quadrature.
inline double error_h1(const FeFunction& uh, const std::function<std::array<double, 2>(Point)>& exact_grad) {
    const Mesh& mesh = *uh.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const auto g = element_geometry(mesh, t);
        const auto du = element_gradient(g, tri, uh.values);
        const Point p0 = mesh.vertices[tri[0]], p1 = mesh.vertices[tri[1]], p2 = mesh.vertices[tri[2]];
        for (const auto& q : degree5_rule()) {
            const Point x{q.l0 * p0.x + q.l1 * p1.x + q.l2 * p2.x, q.l0 * p0.y + q.l1 * p1.y + q.l2 * p2.y};
            const auto ge = exact_grad(x);
            s += g.area * q.w * ((du[0] - ge[0]) * (du[0] - ge[0]) + (du[1] - ge[1]) * (du[1] - ge[1]));
        }
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Export.

/// One `x y value` line per vertex.
inline void write_function_xyz(std::ostream& os, const FeFunction& u) {
    os << std::setprecision(17);
    for (std::size_t i = 0; i < u.size(); ++i) {
        os << u.mesh->vertices[i].x << ' ' << u.mesh->vertices[i].y << ' ' << u[i] << '\n';
    }
}

/// Triangle soup: one row per triangle with its three (x, y, value) corners.
inline void write_triangle_soup_csv(std::ostream& os, const FeFunction& u) {
    const Mesh& mesh = *u.mesh;
    os << "x0,y0,v0,x1,y1,v1,x2,y2,v2\n" << std::setprecision(17);
    for (const auto& tri : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const Point p = mesh.vertices[tri[k]];
            os << p.x << ',' << p.y << ',' << u[tri[k]] << (k == 2 ? '\n' : ',');
        }
    }
}

}  // namespace homlab
