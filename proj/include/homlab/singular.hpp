#pragma once

// Singular semilinear solver: source library with envelope F <= h / Gamma,
// regularization F_delta(x, s) = F(x, max(s, delta)), continuation in delta
// with damped Picard inner iterations, and diagnostics on discrete solutions.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "homlab/corrector.hpp"
#include "homlab/error.hpp"
#include "homlab/fem.hpp"
#include "homlab/truncate.hpp"

namespace homlab {

enum class SourceKind { constant, power, oscillating_exp, composite };

inline std::string to_string(SourceKind k) {
    switch (k) {
        case SourceKind::constant: return "constant";
        case SourceKind::power: return "power";
        case SourceKind::oscillating_exp: return "oscillating_exp";
        case SourceKind::composite: return "composite";
    }
    return "?";
}

inline SourceKind source_kind_from(const std::string& s) {
    if (s == "constant") return SourceKind::constant;
    if (s == "power") return SourceKind::power;
    if (s == "oscillating_exp") return SourceKind::oscillating_exp;
    if (s == "composite") return SourceKind::composite;
    throw Error("config", "unknown source kind '" + s + "'");
}

/// Parameters of a source. Field data (f, g, l, h) hold either a single
/// constant or one value per mesh vertex.
///
///   constant:        F = f
///   power:           F = h / s^gamma
///   oscillating_exp: F = f (a + sin(1/s)) e^{1/s} + g (b + sin(1/s)) / s^gamma + l
///   composite:       F = f (a + sin S(s)) e^{S(s)} + g (b + sin(1/s)) / s^gamma + l,
///                    S(s) = s_coeff / s^s_power
struct SourceParams {
    SourceKind kind = SourceKind::constant;
    std::vector<double> f{1.0};
    std::vector<double> g{0.0};
    std::vector<double> l{0.0};
    std::vector<double> h{1.0};
    double a = 2.0;
    double b = 2.0;
    double gamma = 1.0;
    double s_coeff = 1.0;
    double s_power = 1.0;
};

class SingularSource {
public:
    SourceKind kind() const { return p_.kind; }
    const SourceParams& params() const { return p_; }
    bool nonincreasing() const { return p_.kind == SourceKind::constant || p_.kind == SourceKind::power; }

    /// Number of vertex values carried by the field data (1 when constant).
    std::size_t field_size() const { return size_; }

    /// F(x_i, s) for s > 0.
    double operator()(std::size_t i, double s) const {
        const double inv = 1.0 / s;
        switch (p_.kind) {
            case SourceKind::constant: return at(p_.f, i);
            case SourceKind::power: return at(p_.h, i) / std::pow(s, p_.gamma);
            case SourceKind::oscillating_exp:
                return tail(i, s) + at(p_.f, i) * (p_.a + std::sin(inv)) * std::exp(inv);
            case SourceKind::composite: {
                const double big_s = s_curve(s);
                return tail(i, s) + at(p_.f, i) * (p_.a + std::sin(big_s)) * std::exp(big_s);
            }
        }
        return 0.0;
    }

    /// Envelope denominator Gamma(s).
    double gamma_curve(double s) const {
        if (s <= 0.0) return 0.0;
        switch (p_.kind) {
            case SourceKind::constant: return s / (1.0 + s);
            case SourceKind::power: return std::pow(s, p_.gamma);
            case SourceKind::oscillating_exp: return std::exp(-1.0 / s) / (p_.a + 1.0);
            case SourceKind::composite:
                return 1.0 / (std::exp(s_curve(s)) + std::pow(s, -p_.gamma) + 1.0);
        }
        return 0.0;
    }

    /// Envelope numerator h(x_i).
    double h(std::size_t i) const {
        switch (p_.kind) {
            case SourceKind::constant: return at(p_.f, i);
            case SourceKind::power: return at(p_.h, i);
            case SourceKind::oscillating_exp: {
                const double peak = std::pow(p_.gamma, p_.gamma) * std::exp(-p_.gamma);
                return at(p_.f, i) + (p_.a + 1.0) * (at(p_.g, i) * (p_.b + 1.0) * peak + at(p_.l, i));
            }
            case SourceKind::composite:
                return std::max({at(p_.f, i) * (p_.a + 1.0), at(p_.g, i) * (p_.b + 1.0), at(p_.l, i)});
        }
        return 0.0;
    }

    /// F(x_i, s) Gamma(s) <= h(x_i) (1 + 1e-12).
    bool envelope_holds(std::size_t i, double s) const {
        const double lhs = (*this)(i, s) * gamma_curve(s);
        if (!std::isfinite(lhs)) return true;
        return lhs <= h(i) * (1.0 + 1e-12);
    }

    /// Throws unless the field data fit a mesh with n vertices.
    void require_fits(std::size_t n) const {
        if (size_ != 1 && size_ != n) throw Error("source", "field data length does not match vertex count");
    }

private:
    friend SingularSource make_source(const SourceParams& p);

    static double at(const std::vector<double>& v, std::size_t i) { return v.size() == 1 ? v[0] : v[i]; }

    double s_curve(double s) const { return p_.s_coeff / std::pow(s, p_.s_power); }

    double tail(std::size_t i, double s) const {
        double out = at(p_.l, i);
        const double g = at(p_.g, i);
        if (g != 0.0) out += g * (p_.b + std::sin(1.0 / s)) / std::pow(s, p_.gamma);
        return out;
    }

    SourceParams p_;
    std::size_t size_ = 1;
};

/// Validates parameters and samples the envelope on a log grid of s.
inline SingularSource make_source(const SourceParams& p) {
    auto check_field = [](const std::vector<double>& v, const char* name) {
        if (v.empty()) throw Error("source", std::string(name) + " is empty");
        for (double x : v) {
            if (!(x >= 0.0) || !std::isfinite(x)) throw Error("source", std::string(name) + " must be finite and >= 0");
        }
    };
    check_field(p.f, "f");
    check_field(p.g, "g");
    check_field(p.l, "l");
    check_field(p.h, "h");
    if (!(p.gamma > 0.0)) throw Error("source", "gamma must be > 0");
    if (p.kind == SourceKind::oscillating_exp || p.kind == SourceKind::composite) {
        if (!(p.a > 1.0) || !(p.b > 1.0)) throw Error("source", "a > 1 and b > 1 are required");
    }
    if (p.kind == SourceKind::composite && (!(p.s_coeff > 0.0) || !(p.s_power > 0.0))) {
        throw Error("source", "S(s) = c / s^p needs c > 0 and p > 0");
    }
    SingularSource src;
    src.p_ = p;
    std::size_t n = 1;
    for (const auto* v : {&p.f, &p.g, &p.l, &p.h}) {
        if (v->size() == 1) continue;
        if (n != 1 && v->size() != n) throw Error("source", "field data lengths disagree");
        n = v->size();
    }
    src.size_ = n;
    // exp(1/s) overflows below s ~ 1/709; sample above that.
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j <= 240; ++j) {
            const double s = std::pow(10.0, -2.8 + 5.8 * j / 240.0);
            if (!src.envelope_holds(i, s)) {
                std::ostringstream os;
                os << "envelope F <= h / Gamma violated at vertex " << i << ", s = " << s;
                throw Error("source", os.str());
            }
        }
    }
    return src;
}

/// F_delta(x, s) = F(x, max(s, delta)).
struct RegularizedSource {
    const SingularSource* source = nullptr;
    double delta = 1.0;

    double operator()(std::size_t i, double s) const { return (*source)(i, std::max(s, delta)); }
};

inline RegularizedSource regularize(const SingularSource& source, double delta) {
    if (!(delta > 0.0)) throw Error("source", "regularization delta must be > 0");
    return {&source, delta};
}

struct SolverParams {
    double delta0 = 1e-1;
    double delta_factor = 0.5;
    double delta_min = 1e-6;
    double damping = 0.5;
    double inner_rtol = 1e-9;
    int inner_maxit = 200;
    double continuation_rtol = 1e-6;

    void validate() const {
        if (!(delta0 > 0.0) || !(delta_min > 0.0) || !(delta_min <= delta0)) {
            throw Error("config", "need 0 < delta_min <= delta0");
        }
        if (!(delta_factor > 0.0 && delta_factor < 1.0)) throw Error("config", "delta_factor must lie in (0, 1)");
        if (!(damping > 0.0 && damping <= 1.0)) throw Error("config", "damping must lie in (0, 1]");
        if (!(inner_rtol > 0.0) || !(continuation_rtol > 0.0)) throw Error("config", "tolerances must be > 0");
        if (inner_maxit < 1) throw Error("config", "inner_maxit must be >= 1");
    }

    std::vector<double> deltas() const {
        std::vector<double> out;
        for (double d = delta0; d > delta_min * (1.0 + 1e-12); d *= delta_factor) out.push_back(d);
        out.push_back(delta_min);
        return out;
    }
};

struct TraceRow {
    double delta = 0.0;
    int inner_iters = 0;
    double final_residual = 0.0;  // last relative inner increment
    double increment = 0.0;       // relative L2 distance to the previous accepted step
    double min_u = 0.0;
    double max_u = 0.0;
    int clipped = 0;              // inner steps where clipping changed the iterate
};

struct SolveTrace {
    std::vector<TraceRow> rows;
    bool converged = false;
    double final_delta = 0.0;

    /// Continuation increments after the largest one never grow.
    bool increments_eventually_decreasing() const {
        if (rows.size() < 2) return true;
        std::size_t peak = 0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (rows[j].increment >= rows[peak].increment) peak = j;
        }
        for (std::size_t j = peak + 1; j < rows.size(); ++j) {
            if (rows[j].increment > rows[j - 1].increment) return false;
        }
        return true;
    }
};

inline void write_trace_csv(std::ostream& os, const SolveTrace& trace) {
    os << "delta,inner_iters,final_residual,increment,min_u,max_u\n" << std::setprecision(17);
    for (const auto& r : trace.rows) {
        os << r.delta << ',' << r.inner_iters << ',' << r.final_residual << ',' << r.increment << ',' << r.min_u << ','
           << r.max_u << '\n';
    }
}

namespace detail {

inline double lumped_norm(std::span<const double> m, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += m[i] * x[i] * x[i];
    return std::sqrt(s);
}

inline double relative_change(std::span<const double> m, std::span<const double> a, std::span<const double> b) {
    double d = 0.0, n = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += m[i] * (a[i] - b[i]) * (a[i] - b[i]);
        n += m[i] * a[i] * a[i];
    }
    if (d == 0.0) return 0.0;
    return std::sqrt(d) / std::max(std::sqrt(n), std::numeric_limits<double>::min());
}

}  // namespace detail

struct SemilinearResult {
    FeFunction u;
    SolveTrace trace;
};

/// Test hook: scales the vertex quadrature weights of the nonlinear load.
struct LoadQuadratureHook {
    double weight_scale = 1.0;
};

/// Solves -div A Du + mu u = F(x, u), u = 0 on the nodes flagged in `fixed`.
/// `mu` may be null (plain problem on the perforated domain).
inline SemilinearResult solve_semilinear(std::shared_ptr<const Mesh> mesh, const CoefficientField& a,
                                         const MeasureDensity* mu, const SingularSource& source,
                                         const SolverParams& params, const std::vector<char>& fixed,
                                         std::span<const double> initial = {}, LoadQuadratureHook hook = {}) {
    params.validate();
    const std::size_t n = mesh->num_vertices();
    source.require_fits(n);
    if (fixed.size() != n) throw Error("solver", "constraint mask length does not match vertex count");
    if (std::none_of(fixed.begin(), fixed.end(), [](char c) { return c != 0; })) {
        throw Error("solver", "at least one node must be constrained");
    }
    CsrMatrix k = assemble_stiffness(*mesh, a);
    if (mu != nullptr) {
        const CsrMatrix m = assemble_weighted_mass(*mesh, mu->per_triangle(*mesh), true);
        TripletList sum(n, n);
        for (const CsrMatrix* part : std::array<const CsrMatrix*, 2>{&k, &m}) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = part->row_ptr[i]; p < part->row_ptr[i + 1]; ++p) {
                    sum.add(static_cast<int>(i), part->col[p], part->val[p]);
                }
            }
        }
        k = sum.to_csr();
    }
    const std::vector<double> zeros(n, 0.0);
    const SparseSystem sys = constrain(k, zeros, fixed, zeros);
    const bool symmetric = sys.matrix.is_symmetric(1e-14);
    std::vector<double> mass = lumped_mass(*mesh);
    std::vector<double> weight = mass;
    for (double& wgt : weight) wgt *= hook.weight_scale;

    std::vector<double> u(n, 0.0);
    if (!initial.empty()) {
        if (initial.size() != n) throw Error("solver", "initial iterate length does not match vertex count");
        for (std::size_t i = 0; i < n; ++i) u[i] = fixed[i] ? 0.0 : std::max(0.0, initial[i]);
    }

    SemilinearResult out;
    SolveTrace& trace = out.trace;
    std::vector<double> prev_accepted = u;
    std::vector<double> load(n), x_free = sys.restrict_to_free(u);
    std::vector<double> history;
    for (double delta : params.deltas()) {
        const RegularizedSource f_delta = regularize(source, delta);
        TraceRow row;
        row.delta = delta;
        double inc = std::numeric_limits<double>::infinity();
        int growth = 0;
        double last_inc = std::numeric_limits<double>::infinity();
        for (int it = 1; it <= params.inner_maxit; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                if (fixed[i]) {
                    load[i] = 0.0;
                    continue;
                }
                const double s = std::max(u[i], delta);
                const double fv = f_delta(i, u[i]);
                if (!std::isfinite(fv) || !source.envelope_holds(i, s)) {
                    std::ostringstream os;
                    os << "source evaluation failed at vertex " << i << ", s = " << s << " (F = " << fv << ")";
                    throw SolverError(os.str(), history);
                }
                load[i] = weight[i] * fv;
            }
            const std::vector<double> rhs = sys.reduce_rhs(load);
            x_free = symmetric ? pcg(sys.matrix, rhs, 1e-12, x_free).x : bicgstab(sys.matrix, rhs, 1e-12, x_free).x;
            std::vector<double> star = sys.expand(x_free);
            bool clipped = false;
            for (double& v : star) {
                if (v < 0.0) {
                    v = 0.0;
                    clipped = true;
                }
            }
            row.clipped += clipped ? 1 : 0;
            std::vector<double> next(n);
            for (std::size_t i = 0; i < n; ++i) next[i] = (1.0 - params.damping) * u[i] + params.damping * star[i];
            inc = detail::relative_change(mass, next, u);
            history.push_back(inc);
            u = std::move(next);
            row.inner_iters = it;
            if (inc <= params.inner_rtol) break;
            growth = inc > last_inc ? growth + 1 : 0;
            last_inc = inc;
            if (growth >= 10) {
                trace.rows.push_back(row);
                std::ostringstream os;
                os << "inner iteration diverging at delta = " << delta << " (increment grew 10 times in a row)";
                throw SolverError(os.str(), history);
            }
        }
        row.final_residual = inc;
        if (inc > params.inner_rtol) {
            trace.rows.push_back(row);
            std::ostringstream os;
            os << "inner iteration did not reach " << params.inner_rtol << " in " << params.inner_maxit
               << " steps at delta = " << delta << " (last increment " << inc << ")";
            throw SolverError(os.str(), history);
        }
        row.increment = detail::relative_change(mass, u, prev_accepted);
        row.min_u = *std::min_element(u.begin(), u.end());
        row.max_u = *std::max_element(u.begin(), u.end());
        trace.rows.push_back(row);
        trace.final_delta = delta;
        const bool settled = trace.rows.size() > 1 && row.increment <= params.continuation_rtol;
        prev_accepted = u;
        if (settled) break;
    }
    trace.converged = true;
    out.u = FeFunction(std::move(mesh), std::move(u));
    return out;
}

/// Dirichlet mask for the problem on the perforated domain: outer boundary
/// and every hole node.
inline std::vector<char> perforated_constraints(const Mesh& mesh) {
    std::vector<char> fixed(mesh.num_vertices(), 0);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        const auto m = mesh.vertex_marker[i];
        fixed[i] = m == VertexMarker::outer_boundary || is_hole_marker(m);
    }
    return fixed;
}

/// Dirichlet mask for the problem on the whole domain (outer boundary only).
inline std::vector<char> outer_constraints(const Mesh& mesh) {
    std::vector<char> fixed(mesh.num_vertices(), 0);
    for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] = mesh.vertex_marker[i] == VertexMarker::outer_boundary;
    return fixed;
}

namespace detail {

/// |T cap {u > level}| / |T| for linear u with vertex values v.
inline double superlevel_fraction(std::array<double, 3> v, double level) {
    std::sort(v.begin(), v.end());
    if (level >= v[2]) return 0.0;
    if (level <= v[0]) return 1.0;
    if (level >= v[1]) return (v[2] - level) * (v[2] - level) / ((v[2] - v[0]) * (v[2] - v[1]));
    return 1.0 - (level - v[0]) * (level - v[0]) / ((v[1] - v[0]) * (v[2] - v[0]));
}

/// int_{u > level} A Du . Du, exact for P1 u.
inline double superlevel_energy(const FeFunction& u, const CoefficientField& a, double level) {
    const Mesh& mesh = *u.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double frac = superlevel_fraction({u[tri[0]], u[tri[1]], u[tri[2]]}, level);
        if (frac == 0.0) continue;
        const auto geo = element_geometry(mesh, t);
        const auto du = element_gradient(geo, tri, u.values);
        const auto adu = a.at(t).apply(du[0], du[1]);
        s += frac * geo.area * (adu[0] * du[0] + adu[1] * du[1]);
    }
    return s;
}

}  // namespace detail

/// Relative gap in int A DG_n(u) . DG_n(u) = int F(x, u) G_n(u). The left side
/// is exact for P1 u; the right side uses the vertex quadrature of the solver.
inline double energy_equality_residual(const FeFunction& u, const SingularSource& source, const CoefficientField& a,
                                       double level) {
    const CutLevel n(level);
    const double lhs = detail::superlevel_energy(u, a, level);
    const std::vector<double> m = lumped_mass(*u.mesh);
    double rhs = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double gn = g_cut(u[i], n);
        if (gn > 0.0) rhs += m[i] * source(i, u[i]) * gn;
    }
    const double denom = std::max({lhs, rhs, std::numeric_limits<double>::min()});
    if (lhs == 0.0 && rhs == 0.0) return 0.0;
    return std::abs(lhs - rhs) / denom;
}

struct AprioriEntry {
    double k = 0.0;
    double norm = 0.0;    // ||D G_k(u)||
    double gamma = 0.0;   // Gamma(k)
    double product = 0.0;
};

struct AprioriProfile {
    std::vector<AprioriEntry> entries;

    /// max / min of the products (infinite if some product vanishes).
    double span() const {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (const auto& e : entries) {
            lo = std::min(lo, e.product);
            hi = std::max(hi, e.product);
        }
        if (entries.empty()) return 1.0;
        return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    }

    /// Every product below safety * min product.
    bool shape_holds(double safety = 10.0) const { return span() <= safety; }

    bool nonincreasing() const {
        for (std::size_t j = 1; j < entries.size(); ++j) {
            if (entries[j].k > entries[j - 1].k && entries[j].norm > entries[j - 1].norm) return false;
        }
        return true;
    }
};

inline AprioriProfile apriori_profile(const FeFunction& u, const SingularSource& source,
                                      const std::vector<double>& ks) {
    AprioriProfile out;
    const CoefficientField id = CoefficientField::identity();
    for (double k : ks) {
        const CutLevel level(k);
        AprioriEntry e;
        e.k = level.value();
        e.norm = std::sqrt(detail::superlevel_energy(u, id, k));
        e.gamma = source.gamma_curve(k);
        e.product = e.norm * e.gamma;
        out.entries.push_back(e);
    }
    return out;
}

/// int F(x, u) Z_delta(u) v, with F evaluated through the regularization
/// at `reg_delta` and a degree-5 rule on each triangle.
inline double zdelta_mass(const FeFunction& u, const SingularSource& source, const FeFunction& v, double delta,
                          double reg_delta) {
    require_same_mesh(u, v);
    if (!(delta > 0.0)) throw Error("diagnostic", "delta must be > 0");
    for (double x : v.values) {
        if (x < 0.0) throw Error("diagnostic", "test function must be >= 0");
    }
    const Mesh& mesh = *u.mesh;
    const RegularizedSource f = regularize(source, reg_delta);
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double vmax = std::max({v[tri[0]], v[tri[1]], v[tri[2]]});
        const double umin = std::min({u[tri[0]], u[tri[1]], u[tri[2]]});
        if (vmax == 0.0 || umin >= 2.0 * delta) continue;
        const double area = mesh.area(t);
        for (const auto& q : degree5_rule()) {
            const double uq = std::max(0.0, q.l0 * u[tri[0]] + q.l1 * u[tri[1]] + q.l2 * u[tri[2]]);
            const double vq = q.l0 * v[tri[0]] + q.l1 * v[tri[1]] + q.l2 * v[tri[2]];
            const double zq = z_delta(uq, delta);
            if (zq == 0.0 || vq == 0.0) continue;
            // Field data are vertex based; use the vertex nearest in barycentric weight.
            const int near = q.l0 >= q.l1 && q.l0 >= q.l2 ? tri[0] : (q.l1 >= q.l2 ? tri[1] : tri[2]);
            s += area * q.w * f(static_cast<std::size_t>(near), uq) * zq * vq;
        }
    }
    return s;
}

/// Solves from every seed and returns the largest pairwise relative L2 distance.
inline double uniqueness_probe(std::shared_ptr<const Mesh> mesh, const CoefficientField& a, const MeasureDensity* mu,
                               const SingularSource& source, const SolverParams& params,
                               const std::vector<char>& fixed, const std::vector<std::vector<double>>& seeds) {
    if (!source.nonincreasing()) throw Error("solver", "uniqueness probe needs a nonincreasing source");
    std::vector<FeFunction> sols;
    for (const auto& seed : seeds) sols.push_back(solve_semilinear(mesh, a, mu, source, params, fixed, seed).u);
    double worst = 0.0;
    for (std::size_t i = 0; i < sols.size(); ++i) {
        for (std::size_t j = i + 1; j < sols.size(); ++j) {
            const double nrm = std::max(norm_l2(sols[i]), std::numeric_limits<double>::min());
            worst = std::max(worst, norm_l2(sols[i] - sols[j]) / nrm);
        }
    }
    return worst;
}

}  // namespace homlab
