#pragma once

// Capacitary corrector w, its variant z, and the strange-term density read
// off the corrector energy.

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <vector>

#include "homlab/domain.hpp"
#include "homlab/error.hpp"
#include "homlab/fem.hpp"
#include "homlab/parallel.hpp"

namespace homlab {

/// Radial harmonic profile (ln rho - ln r0) / (ln R - ln r0), clamped to [0, 1].
inline double analytic_w_profile(double rho, double r0, double R) {
    if (!(r0 > 0.0) || !(R > r0)) throw Error("corrector", "profile requires 0 < r0 < R");
    if (rho <= r0) return 0.0;
    if (rho >= R) return 1.0;
    return std::clamp((std::log(rho) - std::log(r0)) / (std::log(R) - std::log(r0)), 0.0, 1.0);
}

/// Energy of the radial profile on the annulus r0 < rho < R.
inline double analytic_annulus_energy(double r0, double R) {
    if (!(r0 > 0.0) || !(R > r0)) throw Error("corrector", "annulus requires 0 < r0 < R");
    return 2.0 * std::numbers::pi / std::log(R / r0);
}

/// Limit density of the strange term for the model lattice.
inline double analytic_mu(int dim, double c0) {
    if (dim < 2) throw Error("corrector", "dimension must be >= 2");
    if (!(c0 > 0.0)) throw Error("corrector", "c0 must be > 0");
    const double pi = std::numbers::pi;
    if (dim == 2) return (2.0 * pi / 4.0) / c0;
    const double d = static_cast<double>(dim);
    const double sphere = 2.0 * std::pow(pi, d / 2.0) / std::tgamma(d / 2.0);
    return sphere * (d - 2.0) / std::pow(2.0, d) * std::pow(c0, d - 2.0);
}

struct AnnulusInfo {
    Hole hole;
    double outer_radius = 0.0;
    std::vector<int> triangles;
    std::vector<int> free_nodes;
};

struct CorrectorField {
    FeFunction w;
    LatticeSpec spec;
    std::vector<AnnulusInfo> annuli;
};

namespace detail {

inline AnnulusInfo classify_annulus(const Mesh& mesh, const Hole& hole, double eps) {
    AnnulusInfo info;
    info.hole = hole;
    info.outer_radius = eps;
    const double tol = 1e-9 * eps;
    std::vector<char> seen(mesh.num_vertices(), 0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        if (mesh.triangle_in_hole[t]) continue;
        bool inside = true;
        for (int v : mesh.triangles[t]) inside = inside && distance(mesh.vertices[v], hole.center) <= eps + tol;
        if (!inside) continue;
        info.triangles.push_back(static_cast<int>(t));
        for (int v : mesh.triangles[t]) {
            if (seen[v]) continue;
            seen[v] = 1;
            if (is_hole_marker(mesh.vertex_marker[v])) continue;
            if (distance(mesh.vertices[v], hole.center) < eps - tol) info.free_nodes.push_back(v);
        }
    }
    std::sort(info.free_nodes.begin(), info.free_nodes.end());
    return info;
}

}  // namespace detail

/// Cell-local corrector: in each annulus B(c, eps) minus the hole, the
/// A^T-harmonic function equal to 0 on the hole and 1 on the outer circle;
/// w = 1 everywhere else.
inline CorrectorField compute_w(std::shared_ptr<const Mesh> mesh, const LatticeSpec& spec, const CoefficientField& a,
                                int polygon_order = 32) {
    const auto holes = place_holes(spec, polygon_order);
    CorrectorField field;
    field.spec = spec;
    std::vector<double> w(mesh->num_vertices(), 1.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (is_hole_marker(mesh->vertex_marker[i])) w[i] = 0.0;
    }
    const auto solved = parallel_map(holes.size(), [&](std::size_t h) {
        AnnulusInfo info = detail::classify_annulus(*mesh, holes[h], spec.epsilon);
        if (info.free_nodes.empty()) throw Error("corrector", "hole annulus has no free nodes");
        const CsrMatrix k = assemble_stiffness_on(*mesh, a, true, info.triangles);
        std::vector<char> fixed(mesh->num_vertices(), 1);
        for (int v : info.free_nodes) fixed[static_cast<std::size_t>(v)] = 0;
        const std::vector<double> zero_rhs(mesh->num_vertices(), 0.0);
        const SparseSystem sys = constrain(k, zero_rhs, fixed, w);
        std::vector<double> x = solve_linear(sys.matrix, sys.rhs, 1e-12);
        return std::make_pair(std::move(info), std::move(x));
    });
    for (const auto& [info, x] : solved) {
        for (std::size_t k = 0; k < info.free_nodes.size(); ++k) w[static_cast<std::size_t>(info.free_nodes[k])] = x[k];
        field.annuli.push_back(info);
    }
    field.w = FeFunction(std::move(mesh), std::move(w));
    return field;
}

struct CellDensity {
    int ix = 0;
    int iy = 0;
    double area = 0.0;
    double energy = 0.0;
    double density = 0.0;
    bool interior = false;
};

/// Piecewise-constant density per lattice cell. A uniform density (no cells)
/// stands for an analytic constant.
struct MeasureDensity {
    CellGrid grid;
    std::vector<CellDensity> cells;
    bool uniform = false;
    double uniform_value = 0.0;

    static MeasureDensity constant(double value) {
        if (!(value >= 0.0)) throw Error("corrector", "density must be >= 0");
        MeasureDensity m;
        m.uniform = true;
        m.uniform_value = value;
        return m;
    }

    double total_mass() const {
        double s = 0.0;
        for (const auto& c : cells) s += c.density * c.area;
        return s;
    }

    /// Mean density over interior cells (cells fully inside the domain with a hole).
    double interior_mean() const {
        if (uniform) return uniform_value;
        double s = 0.0;
        int n = 0;
        for (const auto& c : cells) {
            if (!c.interior) continue;
            s += c.density;
            ++n;
        }
        return n > 0 ? s / n : 0.0;
    }

    /// Density per triangle of a mesh built on the same lattice.
    std::vector<double> per_triangle(const Mesh& mesh) const {
        std::vector<double> out(mesh.num_triangles(), uniform_value);
        if (uniform) return out;
        for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
            const int c = mesh.triangle_cell[t];
            if (c < 0 || static_cast<std::size_t>(c) >= cells.size()) throw Error("corrector", "triangle outside lattice");
            out[t] = cells[static_cast<std::size_t>(c)].density;
        }
        return out;
    }
};

inline MeasureDensity mu_density(const CorrectorField& field, const Mesh& mesh, const CoefficientField& a) {
    require_on_mesh(field.w, mesh);
    MeasureDensity out;
    out.grid = CellGrid::from(field.spec);
    const CellGrid& g = out.grid;
    out.cells.resize(static_cast<std::size_t>(g.count()));
    std::vector<char> has_hole(out.cells.size(), 0);
    for (const auto& an : field.annuli) has_hole[static_cast<std::size_t>(g.index(an.hole.cell_ix, an.hole.cell_iy))] = 1;
    for (int idx = 0; idx < g.count(); ++idx) {
        auto& c = out.cells[static_cast<std::size_t>(idx)];
        c.ix = g.ix_of(idx);
        c.iy = g.iy_of(idx);
        const Rect r = g.cell(c.ix, c.iy);
        const double wx = std::min(r.x1, g.domain.x1) - std::max(r.x0, g.domain.x0);
        const double wy = std::min(r.y1, g.domain.y1) - std::max(r.y0, g.domain.y0);
        c.area = std::max(0.0, wx) * std::max(0.0, wy);
        c.interior = g.inside(c.ix, c.iy) && has_hole[static_cast<std::size_t>(idx)];
    }
    const auto& w = field.w.values;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto geo = element_geometry(mesh, t);
        const auto dw = element_gradient(geo, mesh.triangles[t], w);
        const auto adw = a.at(t).transposed().apply(dw[0], dw[1]);
        const int cell = mesh.triangle_cell[t];
        if (cell < 0) throw Error("corrector", "mesh has no lattice cell information");
        out.cells[static_cast<std::size_t>(cell)].energy += geo.area * (adw[0] * dw[0] + adw[1] * dw[1]);
    }
    for (auto& c : out.cells) c.density = c.area > 0.0 ? std::max(0.0, c.energy) / c.area : 0.0;
    return out;
}

/// CSV: cell_ix,cell_iy,area,density,interior_flag.
inline void write_density_csv(std::ostream& os, const MeasureDensity& mu) {
    os << "cell_ix,cell_iy,area,density,interior_flag\n" << std::setprecision(17);
    for (const auto& c : mu.cells) {
        os << c.ix << ',' << c.iy << ',' << c.area << ',' << c.density << ',' << (c.interior ? 1 : 0) << '\n';
    }
}

namespace detail {

/// b_i = int A^T Dw . D(w phi_i), exact on each triangle for P1 w.
inline std::vector<double> w_mu_load(const Mesh& mesh, std::span<const double> w, const CoefficientField& a) {
    std::vector<double> b(mesh.num_vertices(), 0.0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const auto geo = element_geometry(mesh, t);
        const auto dw = element_gradient(geo, tri, w);
        const auto adw = a.at(t).transposed().apply(dw[0], dw[1]);
        const double energy = adw[0] * dw[0] + adw[1] * dw[1];
        const double mean_w = (w[tri[0]] + w[tri[1]] + w[tri[2]]) / 3.0;
        for (int i = 0; i < 3; ++i) {
            b[tri[i]] += geo.area * (energy / 3.0 + mean_w * (adw[0] * geo.grad[i][0] + adw[1] * geo.grad[i][1]));
        }
    }
    return b;
}

/// int A^T Dw . D(phi_i).
inline std::vector<double> mu_load(const Mesh& mesh, std::span<const double> w, const CoefficientField& a) {
    std::vector<double> b(mesh.num_vertices(), 0.0);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const auto geo = element_geometry(mesh, t);
        const auto dw = element_gradient(geo, tri, w);
        const auto adw = a.at(t).transposed().apply(dw[0], dw[1]);
        for (int i = 0; i < 3; ++i) b[tri[i]] += geo.area * (adw[0] * geo.grad[i][0] + adw[1] * geo.grad[i][1]);
    }
    return b;
}

}  // namespace detail

/// z solves -div A^T Dz = w mu in the perforated domain with z = w on the
/// holes and on the outer boundary. The load is <w mu, v> = int A^T Dw . D(w v).
inline FeFunction compute_z(const Mesh& mesh, const CorrectorField& field, const CoefficientField& a) {
    require_on_mesh(field.w, mesh);
    const auto& w = field.w.values;
    const CsrMatrix k = assemble_stiffness(mesh, a, true);
    const std::vector<double> b = detail::w_mu_load(mesh, w, a);
    std::vector<char> fixed(mesh.num_vertices(), 0);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        const auto m = mesh.vertex_marker[i];
        fixed[i] = is_hole_marker(m) || m == VertexMarker::outer_boundary;
    }
    const SparseSystem sys = constrain(k, b, fixed, w);
    const std::vector<double> x = solve_linear(sys.matrix, sys.rhs, 1e-12, sys.restrict_to_free(w));
    return FeFunction(field.w.mesh, sys.expand(x));
}

/// Ratio of discrete H^{-1} norms ||w mu|| / ||mu||, each computed through a
/// Riesz solve with the Dirichlet Laplacian on the whole domain. Both
/// functionals are restricted to nodes off the holes and off the boundary.
inline double pairing_bound_check(const CorrectorField& field, const Mesh& mesh, const CoefficientField& a) {
    require_on_mesh(field.w, mesh);
    const auto& w = field.w.values;
    std::vector<double> g = detail::mu_load(mesh, w, a);
    std::vector<double> gw = detail::w_mu_load(mesh, w, a);
    std::vector<char> fixed(mesh.num_vertices(), 0);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        fixed[i] = mesh.vertex_marker[i] == VertexMarker::outer_boundary;
        if (fixed[i] || is_hole_marker(mesh.vertex_marker[i])) g[i] = gw[i] = 0.0;
    }
    const CsrMatrix lap = assemble_stiffness(mesh, CoefficientField::identity());
    const std::vector<double> zeros(mesh.num_vertices(), 0.0);
    const SparseSystem s_mu = constrain(lap, g, fixed, zeros);
    const SparseSystem s_wmu = constrain(lap, gw, fixed, zeros);
    const double n_mu = dot(s_mu.rhs, solve_spd(s_mu, 1e-12));
    const double n_wmu = dot(s_wmu.rhs, solve_spd(s_wmu, 1e-12));
    if (!(n_mu > 0.0)) return 1.0;
    return std::sqrt(std::max(0.0, n_wmu) / n_mu);
}

}  // namespace homlab
