#pragma once

// End-to-end sweeps over epsilon: mesh, u^eps, correctors, strange term,
// homogenized limits, errors and trend verdicts; report emitters; selftest.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homlab/corrector.hpp"
#include "homlab/domain.hpp"
#include "homlab/error.hpp"
#include "homlab/fem.hpp"
#include "homlab/parallel.hpp"
#include "homlab/singular.hpp"
#include "homlab/truncate.hpp"

namespace homlab {

using json = nlohmann::json;

struct CoefficientSpec {
    Mat2 matrix{};

    CoefficientField field() const { return CoefficientField(matrix); }
};

struct SweepConfig {
    std::vector<double> epsilons{0.5, 1.0 / 3.0, 0.25};
    double c0 = 1.0;
    Rect domain{};
    MeshParams mesh{};
    CoefficientSpec coefficient{};
    SourceParams source{};
    SolverParams solver{};
    std::vector<double> k_levels{0.5, 1.0, 2.0, 4.0};
    std::vector<double> delta_levels{0.0625, 0.015625};
    std::vector<std::array<int, 2>> test_modes{{{1, 1}}, {{2, 1}}, {{1, 2}}};
    bool uniqueness = false;
    std::string output_dir;
    unsigned seed = 1;

    void validate() const {
        if (epsilons.empty()) throw Error("config", "epsilon list is empty");
        for (std::size_t i = 0; i < epsilons.size(); ++i) {
            if (!(epsilons[i] > 0.0)) throw Error("config", "epsilons must be > 0");
            if (i > 0 && !(epsilons[i] < epsilons[i - 1])) throw Error("config", "epsilon list must be strictly decreasing");
        }
        if (!(c0 > 0.0)) throw Error("config", "c0 must be > 0");
        if (!domain.valid()) throw Error("config", "invalid domain");
        mesh.validate();
        solver.validate();
        try {
            (void)coefficient.field();
            (void)make_source(source);
        } catch (const Error& e) {
            throw Error("config", e.what());
        }
        for (double k : k_levels) (void)CutLevel(k);
        for (double d : delta_levels) {
            if (!(d > 0.0)) throw Error("config", "delta levels must be > 0");
        }
        for (const auto& m : test_modes) {
            if (m[0] < 1 || m[1] < 1) throw Error("config", "test modes must be >= 1");
        }
    }

    LatticeSpec lattice(double eps) const {
        LatticeSpec s;
        s.epsilon = eps;
        s.c0 = c0;
        s.domain = domain;
        return s;
    }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error("config", where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw Error("config", "unknown key '" + key + "' in " + where);
    }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad value for '") + key + "': " + e.what());
    }
}

inline void read_field(const json& j, const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (v.is_number()) {
        out = {v.get<double>()};
    } else if (v.is_array()) {
        out = v.get<std::vector<double>>();
    } else {
        throw Error("config", std::string("'") + key + "' must be a number or an array");
    }
}

inline json field_json(const std::vector<double>& v) { return v.size() == 1 ? json(v[0]) : json(v); }

}  // namespace detail

inline SweepConfig config_from_json(const json& j) {
    using detail::read_opt;
    detail::reject_unknown(j,
                           {"epsilons", "c0", "domain", "mesh", "coefficient", "source", "solver", "k_levels",
                            "delta_levels", "test_modes", "uniqueness", "output_dir", "seed"},
                           "config");
    SweepConfig c;
    read_opt(j, "epsilons", c.epsilons);
    read_opt(j, "c0", c.c0);
    if (j.contains("domain")) {
        std::vector<double> d;
        read_opt(j, "domain", d);
        if (d.size() != 4) throw Error("config", "domain must be [x0, y0, x1, y1]");
        c.domain = {d[0], d[1], d[2], d[3]};
    }
    if (j.contains("mesh")) {
        const json& m = j.at("mesh");
        detail::reject_unknown(m, {"target_h", "grading_ratio", "polygon_order", "min_angle"}, "mesh");
        read_opt(m, "target_h", c.mesh.target_h);
        read_opt(m, "grading_ratio", c.mesh.grading_ratio);
        read_opt(m, "polygon_order", c.mesh.polygon_order);
        read_opt(m, "min_angle", c.mesh.min_angle);
    }
    if (j.contains("coefficient")) {
        const json& a = j.at("coefficient");
        detail::reject_unknown(a, {"matrix"}, "coefficient");
        std::vector<double> m{1.0, 0.0, 0.0, 1.0};
        read_opt(a, "matrix", m);
        if (m.size() != 4) throw Error("config", "coefficient matrix must be [a11, a12, a21, a22]");
        c.coefficient.matrix = {m[0], m[1], m[2], m[3]};
    }
    if (j.contains("source")) {
        const json& s = j.at("source");
        detail::reject_unknown(s, {"kind", "f", "g", "l", "h", "a", "b", "gamma", "s_coeff", "s_power"}, "source");
        std::string kind = "constant";
        read_opt(s, "kind", kind);
        c.source.kind = source_kind_from(kind);
        detail::read_field(s, "f", c.source.f);
        detail::read_field(s, "g", c.source.g);
        detail::read_field(s, "l", c.source.l);
        detail::read_field(s, "h", c.source.h);
        read_opt(s, "a", c.source.a);
        read_opt(s, "b", c.source.b);
        read_opt(s, "gamma", c.source.gamma);
        read_opt(s, "s_coeff", c.source.s_coeff);
        read_opt(s, "s_power", c.source.s_power);
    }
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        detail::reject_unknown(s,
                               {"delta0", "delta_factor", "delta_min", "damping", "inner_rtol", "inner_maxit",
                                "continuation_rtol"},
                               "solver");
        read_opt(s, "delta0", c.solver.delta0);
        read_opt(s, "delta_factor", c.solver.delta_factor);
        read_opt(s, "delta_min", c.solver.delta_min);
        read_opt(s, "damping", c.solver.damping);
        read_opt(s, "inner_rtol", c.solver.inner_rtol);
        read_opt(s, "inner_maxit", c.solver.inner_maxit);
        read_opt(s, "continuation_rtol", c.solver.continuation_rtol);
    }
    read_opt(j, "k_levels", c.k_levels);
    read_opt(j, "delta_levels", c.delta_levels);
    if (j.contains("test_modes")) {
        std::vector<std::vector<int>> modes;
        read_opt(j, "test_modes", modes);
        c.test_modes.clear();
        for (const auto& m : modes) {
            if (m.size() != 2) throw Error("config", "test modes are [i, j] pairs");
            c.test_modes.push_back({m[0], m[1]});
        }
    }
    read_opt(j, "uniqueness", c.uniqueness);
    read_opt(j, "output_dir", c.output_dir);
    read_opt(j, "seed", c.seed);
    c.validate();
    return c;
}

inline json config_to_json(const SweepConfig& c) {
    json j;
    j["epsilons"] = c.epsilons;
    j["c0"] = c.c0;
    j["domain"] = {c.domain.x0, c.domain.y0, c.domain.x1, c.domain.y1};
    j["mesh"] = {{"target_h", c.mesh.target_h},
                 {"grading_ratio", c.mesh.grading_ratio},
                 {"polygon_order", c.mesh.polygon_order},
                 {"min_angle", c.mesh.min_angle}};
    const Mat2& m = c.coefficient.matrix;
    j["coefficient"] = {{"matrix", {m.a11, m.a12, m.a21, m.a22}}};
    j["source"] = {{"kind", to_string(c.source.kind)},
                   {"f", detail::field_json(c.source.f)},
                   {"g", detail::field_json(c.source.g)},
                   {"l", detail::field_json(c.source.l)},
                   {"h", detail::field_json(c.source.h)},
                   {"a", c.source.a},
                   {"b", c.source.b},
                   {"gamma", c.source.gamma},
                   {"s_coeff", c.source.s_coeff},
                   {"s_power", c.source.s_power}};
    j["solver"] = {{"delta0", c.solver.delta0},
                   {"delta_factor", c.solver.delta_factor},
                   {"delta_min", c.solver.delta_min},
                   {"damping", c.solver.damping},
                   {"inner_rtol", c.solver.inner_rtol},
                   {"inner_maxit", c.solver.inner_maxit},
                   {"continuation_rtol", c.solver.continuation_rtol}};
    j["k_levels"] = c.k_levels;
    j["delta_levels"] = c.delta_levels;
    json modes = json::array();
    for (const auto& md : c.test_modes) modes.push_back({md[0], md[1]});
    j["test_modes"] = modes;
    j["uniqueness"] = c.uniqueness;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    return j;
}

inline SweepConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("config", "cannot read " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw Error("config", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------

struct CaseResult {
    double epsilon = 0.0;
    std::string error;  // empty on success; "stage: message" otherwise

    std::shared_ptr<const Mesh> mesh;
    std::size_t hole_count = 0;
    double min_angle = 0.0;
    RemovedMeasure removed;

    FeFunction u;
    SolveTrace trace;
    double u_min = 0.0;
    double u_max = 0.0;
    bool splitting_consistent = true;

    CorrectorField w;
    MeasureDensity mu;
    double w_ring_deviation = 0.0;    // max |w - radial profile| on annulus nodes
    double cell_energy = 0.0;         // mean interior-cell energy
    double cell_energy_oracle = 0.0;  // 2 pi / ln(eps / r)
    double mu_interior = 0.0;
    double mu_deviation = 0.0;        // |mu_interior / analytic - 1|

    FeFunction z;
    double z_min = 0.0;
    double z_minus_w_max = 0.0;
    std::size_t sandwich_violations = 0;
    double z_minus_w = 0.0;           // ||D(z - w)||
    double pairing_ratio = 1.0;

    double energy_level = 0.0;        // median(u)
    double energy_residual = 0.0;
    AprioriProfile apriori;
    std::vector<double> zdelta_masses;
    double uniqueness_distance = -1.0;  // < 0 when not run

    bool ok() const { return error.empty(); }
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

inline std::string stage_of(const std::exception& e) {
    if (const auto* he = dynamic_cast<const Error*>(&e)) return he->what();
    return std::string("internal: ") + e.what();
}

inline void write_text(const std::filesystem::path& p, const std::function<void(std::ostream&)>& fn) {
    std::ofstream os(p);
    if (!os) throw Error("io", "cannot write " + p.string());
    fn(os);
    if (!os) throw Error("io", "write failed for " + p.string());
}

}  // namespace detail

/// Runs the full pipeline at one epsilon. Throws Error tagged with the failing
/// stage; artifacts produced before the failure stay in `out_dir` when given.
inline CaseResult run_case(double eps, const SweepConfig& cfg, const std::string& out_dir = {}) {
    CaseResult res;
    res.epsilon = eps;
    const LatticeSpec spec = cfg.lattice(eps);
    const CoefficientField a = cfg.coefficient.field();
    const SingularSource source = make_source(cfg.source);
    std::filesystem::path dir;
    if (!out_dir.empty()) {
        dir = out_dir;
        std::filesystem::create_directories(dir);
    }

    const auto holes = place_holes(spec, cfg.mesh.polygon_order);
    res.hole_count = holes.size();
    res.removed = removed_measure(spec, cfg.mesh.polygon_order);
    auto mesh = std::make_shared<const Mesh>(build_mesh(spec, cfg.mesh));
    res.mesh = mesh;
    res.min_angle = check_mesh(*mesh, spec.domain, 0.0).min_angle_deg;
    if (!dir.empty()) write_mesh_file((dir / "mesh.txt").string(), *mesh);

    // u^eps on the perforated domain.
    const std::vector<char> fixed = perforated_constraints(*mesh);
    auto sol = solve_semilinear(mesh, a, nullptr, source, cfg.solver, fixed);
    res.u = std::move(sol.u);
    res.trace = std::move(sol.trace);
    res.u_min = *std::min_element(res.u.values.begin(), res.u.values.end());
    res.u_max = *std::max_element(res.u.values.begin(), res.u.values.end());
    for (double k : cfg.k_levels) {
        const CutLevel level(k);
        for (double v : res.u.values) {
            res.splitting_consistent &=
                std::abs(t_cut(v, level) + g_cut(v, level) - v) <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(v));
        }
    }
    if (!dir.empty()) {
        detail::write_text(dir / "u.xyz", [&](std::ostream& os) { write_function_xyz(os, res.u); });
        detail::write_text(dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, res.trace); });
    }

    // Correctors and strange term.
    try {
        res.w = compute_w(mesh, spec, a, cfg.mesh.polygon_order);
        res.mu = mu_density(res.w, *mesh, a);
    } catch (const Error& e) {
        throw Error("corrector", e.what());
    }
    const double r = radius_for(eps, cfg.c0, 2);
    for (const auto& an : res.w.annuli) {
        for (int v : an.free_nodes) {
            const double rho = distance(mesh->vertices[v], an.hole.center);
            res.w_ring_deviation =
                std::max(res.w_ring_deviation, std::abs(res.w.w[v] - analytic_w_profile(rho, an.hole.radius, eps)));
        }
    }
    res.cell_energy_oracle = analytic_annulus_energy(r, eps);
    {
        double s = 0.0;
        int n = 0;
        for (const auto& c : res.mu.cells) {
            if (!c.interior) continue;
            s += c.energy;
            ++n;
        }
        res.cell_energy = n > 0 ? s / n : 0.0;
    }
    res.mu_interior = res.mu.interior_mean();
    res.mu_deviation = std::abs(res.mu_interior / analytic_mu(2, cfg.c0) - 1.0);
    try {
        res.z = compute_z(*mesh, res.w, a);
        res.pairing_ratio = pairing_bound_check(res.w, *mesh, a);
    } catch (const Error& e) {
        throw Error("corrector", e.what());
    }
    res.z_min = *std::min_element(res.z.values.begin(), res.z.values.end());
    res.z_minus_w_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < res.z.size(); ++i) {
        const double d = res.z[i] - res.w.w[i];
        res.z_minus_w_max = std::max(res.z_minus_w_max, d);
        if (res.z[i] < -1e-8 || d > 1e-8) ++res.sandwich_violations;
    }
    res.z_minus_w = seminorm_h1(res.z - res.w.w);
    if (!dir.empty()) {
        detail::write_text(dir / "w.xyz", [&](std::ostream& os) { write_function_xyz(os, res.w.w); });
        detail::write_text(dir / "z.xyz", [&](std::ostream& os) { write_function_xyz(os, res.z); });
        detail::write_text(dir / "mu.csv", [&](std::ostream& os) { write_density_csv(os, res.mu); });
    }

    // Diagnostics on u^eps.
    try {
        res.energy_level = detail::median(res.u.values);
        if (res.energy_level > 0.0) res.energy_residual = energy_equality_residual(res.u, source, a, res.energy_level);
        res.apriori = apriori_profile(res.u, source, cfg.k_levels);
        FeFunction v = FeFunction::interpolate(mesh, [&](Point p) {
            const double sx = std::sin(std::numbers::pi * (p.x - spec.domain.x0) / spec.domain.width());
            const double sy = std::sin(std::numbers::pi * (p.y - spec.domain.y0) / spec.domain.height());
            return std::max(0.0, sx * sy);
        });
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= res.w.w[i];
        for (double d : cfg.delta_levels) res.zdelta_masses.push_back(zdelta_mass(res.u, source, v, d, res.trace.final_delta));
        if (cfg.uniqueness && source.nonincreasing()) {
            std::vector<std::vector<double>> seeds;
            seeds.emplace_back(mesh->num_vertices(), 0.0);
            seeds.emplace_back(mesh->num_vertices(), 1.0);
            std::vector<double> parabola(mesh->num_vertices());
            for (std::size_t i = 0; i < parabola.size(); ++i) {
                const double x = mesh->vertices[i].x;
                parabola[i] = x * (1.0 - x);
            }
            seeds.push_back(std::move(parabola));
            res.uniqueness_distance = uniqueness_probe(mesh, a, nullptr, source, cfg.solver, fixed, seeds);
        }
    } catch (const Error& e) {
        throw Error("diagnostic", e.what());
    }
    return res;
}

struct SweepRow {
    double epsilon = 0.0;
    double e_l2_meas = 0.0;
    double e_l2_ana = 0.0;
    double rel_l2_meas = 0.0;
    double rel_l2_ana = 0.0;
    std::vector<double> p_meas;
    std::vector<double> p_ana;
    bool cauchy_schwarz = true;
};

struct SweepReport {
    SweepConfig config;
    std::vector<CaseResult> cases;
    std::vector<SweepRow> rows;
    double mu_meas = 0.0;
    double mu_ana = 0.0;
    std::map<std::string, bool> verdicts;

    bool complete() const {
        for (const auto& c : cases) {
            if (!c.ok()) return false;
        }
        return rows.size() == cases.size();
    }
};

namespace detail {

/// values[j+1] <= (1 + slack) values[j] for all j.
inline bool nonincreasing_with_slack(const std::vector<double>& v, double slack) {
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (v[j] > (1.0 + slack) * v[j - 1]) return false;
    }
    return true;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (!(v[j] < v[j - 1])) return false;
    }
    return true;
}

}  // namespace detail

/// Runs all cases (concurrently unless deterministic mode is on), then solves
/// the homogenized problem on every case mesh with the analytic constant and
/// with the measured interior density of the smallest epsilon.
inline SweepReport run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    SweepReport rep;
    rep.config = cfg;
    rep.cases = parallel_map(cfg.epsilons.size(), [&](std::size_t i) {
        const double eps = cfg.epsilons[i];
        std::string dir;
        if (!cfg.output_dir.empty()) {
            std::ostringstream os;
            os << cfg.output_dir << "/case_" << i;
            dir = os.str();
        }
        try {
            return run_case(eps, cfg, dir);
        } catch (const std::exception& e) {
            CaseResult failed;
            failed.epsilon = eps;
            failed.error = detail::stage_of(e);
            return failed;
        }
    });

    rep.mu_ana = analytic_mu(2, cfg.c0);
    const CaseResult& finest = rep.cases.back();
    rep.mu_meas = finest.ok() ? finest.mu_interior : rep.mu_ana;
    const CoefficientField a = cfg.coefficient.field();
    const SingularSource source = make_source(cfg.source);
    const MeasureDensity mu_meas = MeasureDensity::constant(rep.mu_meas);
    const MeasureDensity mu_ana = MeasureDensity::constant(rep.mu_ana);

    auto rows = parallel_map(rep.cases.size(), [&](std::size_t i) -> std::optional<SweepRow> {
        const CaseResult& c = rep.cases[i];
        if (!c.ok()) return std::nullopt;
        SweepRow row;
        row.epsilon = c.epsilon;
        const std::vector<char> fixed = outer_constraints(*c.mesh);
        const FeFunction ext = mask_to_perforated(c.u, *c.mesh);
        std::vector<FeFunction> phis;
        for (const auto& md : cfg.test_modes) {
            phis.push_back(FeFunction::interpolate(c.mesh, [&](Point p) {
                const double x = (p.x - cfg.domain.x0) / cfg.domain.width();
                const double y = (p.y - cfg.domain.y0) / cfg.domain.height();
                return std::sin(md[0] * std::numbers::pi * x) * std::sin(md[1] * std::numbers::pi * y);
            }));
        }
        for (int which = 0; which < 2; ++which) {
            const MeasureDensity& mu = which == 0 ? mu_meas : mu_ana;
            const FeFunction u0 = solve_semilinear(c.mesh, a, &mu, source, cfg.solver, fixed).u;
            const FeFunction diff = ext - u0;
            const double e = norm_l2(diff);
            const double rel = e / std::max(norm_l2(u0), std::numeric_limits<double>::min());
            auto& p = which == 0 ? row.p_meas : row.p_ana;
            for (const auto& phi : phis) {
                const double pm = inner_l2(diff, phi);
                p.push_back(pm);
                row.cauchy_schwarz &= std::abs(pm) <= e * norm_l2(phi) * (1.0 + 1e-12) + 1e-300;
            }
            (which == 0 ? row.e_l2_meas : row.e_l2_ana) = e;
            (which == 0 ? row.rel_l2_meas : row.rel_l2_ana) = rel;
        }
        return row;
    });
    for (auto& r : rows) {
        if (r) rep.rows.push_back(std::move(*r));
    }

    auto& v = rep.verdicts;
    v["all_cases_ok"] = rep.complete();
    if (!rep.complete() || rep.rows.empty()) return rep;
    std::vector<double> e_meas, e_ana, mu_dev, zw, removed;
    for (const auto& r : rep.rows) {
        e_meas.push_back(r.e_l2_meas);
        e_ana.push_back(r.e_l2_ana);
    }
    bool sandwich = true, nonneg = true, increments = true, cs = true;
    for (const auto& c : rep.cases) {
        mu_dev.push_back(c.mu_deviation);
        zw.push_back(c.z_minus_w);
        removed.push_back(c.removed.disk);
        sandwich &= c.sandwich_violations == 0;
        nonneg &= c.u_min >= -1e-12;
        increments &= c.trace.increments_eventually_decreasing();
    }
    for (const auto& r : rep.rows) cs &= r.cauchy_schwarz;
    v["e_l2_meas_nonincreasing_10pct"] = detail::nonincreasing_with_slack(e_meas, 0.1);
    v["e_l2_ana_nonincreasing_10pct"] = detail::nonincreasing_with_slack(e_ana, 0.1);
    v["e_l2_meas_end_to_end_decrease"] = e_meas.back() < e_meas.front();
    bool pairings = true;
    for (std::size_t m = 0; m < rep.rows.front().p_meas.size(); ++m) {
        pairings &= std::abs(rep.rows.back().p_meas[m]) < std::abs(rep.rows.front().p_meas[m]);
    }
    v["pairings_end_to_end_decrease"] = pairings;
    v["mu_deviation_strictly_decreasing"] = detail::strictly_decreasing(mu_dev);
    v["z_minus_w_strictly_decreasing"] = detail::strictly_decreasing(zw);
    v["removed_measure_strictly_decreasing"] = detail::strictly_decreasing(removed);
    v["sandwich_ok"] = sandwich;
    v["u_nonnegative"] = nonneg;
    v["increments_eventually_decreasing"] = increments;
    v["cauchy_schwarz"] = cs;
    return rep;
}

// ---------------------------------------------------------------------------
// Emitters.

inline json case_to_json(const CaseResult& c) {
    json j;
    j["epsilon"] = c.epsilon;
    if (!c.ok()) {
        j["error"] = c.error;
        return j;
    }
    j["hole_count"] = c.hole_count;
    j["num_vertices"] = c.mesh->num_vertices();
    j["num_triangles"] = c.mesh->num_triangles();
    j["min_angle_deg"] = c.min_angle;
    j["removed_measure"] = {{"disk", c.removed.disk}, {"polygon", c.removed.polygon}};
    j["u"] = {{"min", c.u_min}, {"max", c.u_max}, {"splitting_consistent", c.splitting_consistent}};
    json trace = json::array();
    for (const auto& r : c.trace.rows) {
        trace.push_back({{"delta", r.delta},
                         {"inner_iters", r.inner_iters},
                         {"final_residual", r.final_residual},
                         {"increment", r.increment},
                         {"min_u", r.min_u},
                         {"max_u", r.max_u},
                         {"clipped", r.clipped}});
    }
    j["trace"] = trace;
    j["corrector"] = {{"w_ring_deviation", c.w_ring_deviation},
                      {"cell_energy", c.cell_energy},
                      {"cell_energy_oracle", c.cell_energy_oracle},
                      {"mu_interior", c.mu_interior},
                      {"mu_deviation", c.mu_deviation},
                      {"mu_total_mass", c.mu.total_mass()},
                      {"z_min", c.z_min},
                      {"z_minus_w_max", c.z_minus_w_max},
                      {"sandwich_violations", c.sandwich_violations},
                      {"z_minus_w", c.z_minus_w},
                      {"pairing_ratio", c.pairing_ratio}};
    json prof = json::array();
    for (const auto& e : c.apriori.entries) {
        prof.push_back({{"k", e.k}, {"norm", e.norm}, {"gamma", e.gamma}, {"product", e.product}});
    }
    j["diagnostics"] = {{"energy_level", c.energy_level},
                        {"energy_residual", c.energy_residual},
                        {"apriori", prof},
                        {"apriori_span", c.apriori.span()},
                        {"zdelta_masses", c.zdelta_masses},
                        {"uniqueness_distance", c.uniqueness_distance}};
    return j;
}

inline json report_to_json(const SweepReport& rep) {
    json j;
    j["config"] = config_to_json(rep.config);
    j["mu_meas"] = rep.mu_meas;
    j["mu_ana"] = rep.mu_ana;
    j["cases"] = json::array();
    for (const auto& c : rep.cases) j["cases"].push_back(case_to_json(c));
    j["rows"] = json::array();
    for (const auto& r : rep.rows) {
        j["rows"].push_back({{"epsilon", r.epsilon},
                             {"e_l2_meas", r.e_l2_meas},
                             {"e_l2_ana", r.e_l2_ana},
                             {"rel_l2_meas", r.rel_l2_meas},
                             {"rel_l2_ana", r.rel_l2_ana},
                             {"p_meas", r.p_meas},
                             {"p_ana", r.p_ana},
                             {"cauchy_schwarz", r.cauchy_schwarz}});
    }
    j["verdicts"] = rep.verdicts;
    return j;
}

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols{
        "epsilon",       "hole_count",     "num_vertices",    "min_angle_deg",   "removed_measure",
        "u_min",         "u_max",          "delta_final",     "energy_residual", "apriori_span",
        "mu_interior",   "mu_deviation",   "cell_energy",     "cell_energy_oracle", "w_ring_deviation",
        "z_min",         "z_minus_w_max",  "sandwich_violations", "z_minus_w",   "pairing_ratio",
        "e_l2_meas",     "rel_l2_meas",    "e_l2_ana",        "rel_l2_ana",      "p1_meas",
        "p2_meas",       "p3_meas",        "p1_ana",          "p2_ana",          "p3_ana",
        "error"};
    return cols;
}

inline void write_report_csv(std::ostream& os, const SweepReport& rep) {
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << cols[i] << (i + 1 < cols.size() ? ',' : '\n');
    os << std::setprecision(17);
    for (const auto& c : rep.cases) {
        const SweepRow* row = nullptr;
        for (const auto& r : rep.rows) {
            if (r.epsilon == c.epsilon) row = &r;
        }
        auto pm = [&](const std::vector<double>& p, std::size_t m) { return m < p.size() ? p[m] : 0.0; };
        os << c.epsilon << ',';
        if (!c.ok() || row == nullptr) {
            for (std::size_t i = 1; i + 1 < cols.size(); ++i) os << ',';
            std::string msg = c.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            os << msg << '\n';
            continue;
        }
        os << c.hole_count << ',' << c.mesh->num_vertices() << ',' << c.min_angle << ',' << c.removed.disk << ','
           << c.u_min << ',' << c.u_max << ',' << c.trace.final_delta << ',' << c.energy_residual << ','
           << c.apriori.span() << ',' << c.mu_interior << ',' << c.mu_deviation << ',' << c.cell_energy << ','
           << c.cell_energy_oracle << ',' << c.w_ring_deviation << ',' << c.z_min << ',' << c.z_minus_w_max << ','
           << c.sandwich_violations << ',' << c.z_minus_w << ',' << c.pairing_ratio << ',' << row->e_l2_meas << ','
           << row->rel_l2_meas << ',' << row->e_l2_ana << ',' << row->rel_l2_ana << ',' << pm(row->p_meas, 0) << ','
           << pm(row->p_meas, 1) << ',' << pm(row->p_meas, 2) << ',' << pm(row->p_ana, 0) << ','
           << pm(row->p_ana, 1) << ',' << pm(row->p_ana, 2) << ",\n";
    }
}

/// Whitespace-separated columns: epsilon e_l2 p1 p2 p3 mu_deviation z_minus_w.
inline void write_report_gnuplot(std::ostream& os, const SweepReport& rep) {
    os << "# epsilon e_l2 p1 p2 p3 mu_deviation z_minus_w\n" << std::setprecision(17);
    for (const auto& r : rep.rows) {
        const CaseResult* c = nullptr;
        for (const auto& cc : rep.cases) {
            if (cc.epsilon == r.epsilon) c = &cc;
        }
        auto pm = [&](std::size_t m) { return m < r.p_meas.size() ? r.p_meas[m] : 0.0; };
        os << r.epsilon << ' ' << r.e_l2_meas << ' ' << pm(0) << ' ' << pm(1) << ' ' << pm(2) << ' '
           << c->mu_deviation << ' ' << c->z_minus_w << '\n';
    }
}

/// Writes sweep.csv / sweep.json / sweep.dat for the requested formats.
inline std::vector<std::string> emit(const SweepReport& rep, const std::vector<std::string>& formats,
                                     const std::string& out_dir) {
    std::filesystem::path dir(out_dir.empty() ? "." : out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::vector<std::string> written;
    for (const auto& f : formats) {
        std::filesystem::path p;
        if (f == "csv") {
            p = dir / "sweep.csv";
            detail::write_text(p, [&](std::ostream& os) { write_report_csv(os, rep); });
        } else if (f == "json") {
            p = dir / "sweep.json";
            detail::write_text(p, [&](std::ostream& os) { os << report_to_json(rep).dump(2) << '\n'; });
        } else if (f == "gnuplot") {
            p = dir / "sweep.dat";
            detail::write_text(p, [&](std::ostream& os) { write_report_gnuplot(os, rep); });
        } else {
            throw Error("config", "unknown output format '" + f + "'");
        }
        written.push_back(p.string());
    }
    return written;
}

// ---------------------------------------------------------------------------
// Selftest.

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ConvergenceStudy {
    std::vector<double> h;
    std::vector<double> err_l2;
    std::vector<double> err_h1;

    double factor_l2(std::size_t i) const { return err_l2[i] / err_l2[i + 1]; }
    double factor_h1(std::size_t i) const { return err_h1[i] / err_h1[i + 1]; }
};

/// -Laplace u = 2 pi^2 sin(pi x) sin(pi y) on the unit square with
/// u = sin(pi x) sin(pi y). `corrupt_quadrature` replaces the load rule by
/// one that samples f only at the first vertex of each triangle.
inline ConvergenceStudy manufactured_study(const std::vector<double>& hs, bool corrupt_quadrature = false) {
    const double pi = std::numbers::pi;
    auto exact = [pi](Point p) { return std::sin(pi * p.x) * std::sin(pi * p.y); };
    auto grad = [pi](Point p) {
        return std::array<double, 2>{pi * std::cos(pi * p.x) * std::sin(pi * p.y),
                                     pi * std::sin(pi * p.x) * std::cos(pi * p.y)};
    };
    ConvergenceStudy out;
    for (double h : hs) {
        auto mesh = std::make_shared<const Mesh>(build_plain_mesh(Rect{}, h));
        std::vector<double> f(mesh->num_vertices());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = 2.0 * pi * pi * exact(mesh->vertices[i]);
        std::vector<double> b;
        if (corrupt_quadrature) {
            b.assign(mesh->num_vertices(), 0.0);
            for (std::size_t t = 0; t < mesh->num_triangles(); ++t) {
                const auto& tri = mesh->triangles[t];
                for (int v : tri) b[v] += mesh->area(t) * f[tri[0]] / 3.0;
            }
        } else {
            b = assemble_load(*mesh, f);
        }
        const CsrMatrix k = assemble_stiffness(*mesh, CoefficientField::identity());
        const std::vector<double> zeros(mesh->num_vertices(), 0.0);
        const SparseSystem sys = constrain(k, b, outer_constraints(*mesh), zeros);
        const FeFunction uh(mesh, sys.expand(solve_spd(sys, 1e-12)));
        out.h.push_back(h);
        out.err_l2.push_back(error_l2(uh, exact));
        out.err_h1.push_back(error_h1(uh, grad));
    }
    return out;
}

/// Largest gap between two adjacent doubles around |x|.
inline double ulp_of(double x) {
    const double ax = std::abs(x);
    return std::nextafter(ax, std::numeric_limits<double>::infinity()) - ax;
}

struct TruncationAudit {
    std::size_t samples = 0;
    std::size_t split_failures = 0;   // T_k + G_k != s
    std::size_t chain_failures = 0;   // |G_k - (S_{k,n} + G_n)| > 1 ulp
    std::size_t window_failures = 0;  // |S_{k,n} - T_{n-k}(G_k)| > 1 ulp
    double max_split_ulps = 0.0;

    bool passed() const { return split_failures == 0 && chain_failures == 0 && window_failures == 0; }
};

/// Random (s, k, n) with s in [0, 16), k in (0, 8), n in (k, k + 8).
/// `grid_bits` > 0 draws every value on the dyadic grid 2^-grid_bits, where
/// differences of samples are representable and the split identity is exact;
/// grid_bits = 0 draws full-precision doubles, where round-half-even ties in
/// s - k leave T_k + G_k one ulp away from s for a small fraction of draws.
inline TruncationAudit truncation_audit(std::size_t samples, unsigned seed, int grid_bits = 30) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double q = grid_bits > 0 ? std::ldexp(1.0, -grid_bits) : 0.0;
    auto draw = [&](double lo, double hi) {
        double v = lo + (hi - lo) * unit(rng);
        if (q > 0.0) v = std::floor(v / q) * q;
        return v;
    };
    TruncationAudit a;
    a.samples = samples;
    for (std::size_t i = 0; i < samples; ++i) {
        const double s = draw(0.0, 16.0);
        double k = draw(0.0, 8.0);
        if (k <= 0.0) k = q > 0.0 ? q : std::numeric_limits<double>::min();
        double n = k + draw(0.0, 8.0);
        if (n <= k) n = k + (q > 0.0 ? q : ulp_of(k));
        const CutLevel ck(k), cn(n);
        const double t = t_cut(s, ck), g = g_cut(s, ck);
        if (t + g != s) {
            ++a.split_failures;
            a.max_split_ulps = std::max(a.max_split_ulps, std::abs(t + g - s) / ulp_of(s));
        }
        const double win = s_window(s, {k, n});
        const double chain = win + g_cut(s, cn);
        if (std::abs(g - chain) > ulp_of(std::max(std::abs(g), std::abs(chain)))) ++a.chain_failures;
        const double comp = t_cut(g, CutLevel(n - k));
        if (std::abs(win - comp) > ulp_of(std::max(std::abs(win), std::abs(comp)))) ++a.window_failures;
    }
    return a;
}

struct SelftestOptions {
    bool corrupt_quadrature = false;
};

inline std::vector<CheckResult> selftest(const SelftestOptions& opt = {}) {
    std::vector<CheckResult> out;
    auto run = [&](const std::string& name, const std::function<std::string(bool&)>& fn) {
        CheckResult c;
        c.name = name;
        try {
            bool ok = true;
            c.detail = fn(ok);
            c.passed = ok;
        } catch (const std::exception& e) {
            c.passed = false;
            c.detail = e.what();
        }
        out.push_back(c);
    };
    auto fmt = [](double v) {
        std::ostringstream os;
        os << std::setprecision(6) << v;
        return os.str();
    };

    run("truncate_identities", [&](bool& ok) {
        const auto a = truncation_audit(10000, 7);
        ok = a.passed();
        return std::to_string(a.split_failures + a.chain_failures + a.window_failures) + " violations in " +
               std::to_string(a.samples) + " samples";
    });

    run("fem_manufactured", [&](bool& ok) {
        const auto st = manufactured_study({1.0 / 8, 1.0 / 16, 1.0 / 32}, opt.corrupt_quadrature);
        std::string d;
        for (std::size_t i = 0; i + 1 < st.h.size(); ++i) {
            const double fl = st.factor_l2(i), fh = st.factor_h1(i);
            ok &= fl >= 3.4 && fl <= 4.6 && fh >= 1.7 && fh <= 2.3;
            d += "L2 x" + fmt(fl) + " H1 x" + fmt(fh) + "; ";
        }
        return d;
    });

    run("analytic_mu", [&](bool& ok) {
        const double pi = std::numbers::pi;
        ok = std::abs(analytic_mu(2, 1.0) - pi / 2) < 1e-14 && std::abs(analytic_mu(3, 1.0) - pi / 2) < 1e-14 &&
             std::abs(analytic_mu(2, 2.0) - pi / 4) < 1e-14;
        return "mu(2,1) = " + fmt(analytic_mu(2, 1.0));
    });

    run("removed_measure", [&](bool& ok) {
        LatticeSpec s;
        double prev = std::numeric_limits<double>::infinity();
        std::string d;
        for (double eps : {0.5, 1.0 / 3, 0.25}) {
            s.epsilon = eps;
            const double m = removed_measure(s).disk;
            ok &= m < prev;
            if (eps <= 1.0 / 3 + 1e-15) ok &= m < 1e-6;
            prev = m;
            d += fmt(m) + " ";
        }
        return d;
    });

    SweepConfig cfg;
    cfg.mesh.target_h = 0.05;
    run("corrector_profile", [&](bool& ok) {
        const LatticeSpec spec = cfg.lattice(0.5);
        auto mesh = std::make_shared<const Mesh>(build_mesh(spec, cfg.mesh));
        const auto a = CoefficientField::identity();
        const auto field = compute_w(mesh, spec, a);
        double dev = 0.0;
        for (const auto& an : field.annuli) {
            for (int v : an.free_nodes) {
                const double rho = distance(mesh->vertices[v], an.hole.center);
                dev = std::max(dev, std::abs(field.w[v] - analytic_w_profile(rho, an.hole.radius, 0.5)));
            }
        }
        const auto mu = mu_density(field, *mesh, a);
        const double oracle = analytic_annulus_energy(radius_for(0.5, 1.0, 2), 0.5);
        double energy = 0.0;
        for (const auto& c : mu.cells) {
            if (c.interior) energy = c.energy;
        }
        ok = dev <= 0.02 && std::abs(energy / oracle - 1.0) <= 0.03;
        return "ring deviation " + fmt(dev) + ", energy " + fmt(energy) + " vs " + fmt(oracle);
    });

    run("strange_term_trend", [&](bool& ok) {
        std::vector<double> devs;
        for (double eps : {0.5, 1.0 / 3, 0.25}) {
            const LatticeSpec spec = cfg.lattice(eps);
            auto mesh = std::make_shared<const Mesh>(build_mesh(spec, cfg.mesh));
            const auto a = CoefficientField::identity();
            const auto mu = mu_density(compute_w(mesh, spec, a), *mesh, a);
            devs.push_back(std::abs(mu.interior_mean() / analytic_mu(2, 1.0) - 1.0));
        }
        ok = detail::strictly_decreasing(devs) && devs.back() <= 0.12;
        return "deviations " + fmt(devs[0]) + " " + fmt(devs[1]) + " " + fmt(devs[2]);
    });

    run("poisson_reference", [&](bool& ok) {
        auto mesh = std::make_shared<const Mesh>(build_plain_mesh(Rect{}, 0.05));
        const auto src = make_source(SourceParams{});
        const auto r = solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, SolverParams{},
                                        outer_constraints(*mesh));
        const double mx = *std::max_element(r.u.values.begin(), r.u.values.end());
        ok = std::abs(mx / 0.0737 - 1.0) <= 0.05;
        return "max u " + fmt(mx);
    });

    run("singular_uniqueness", [&](bool& ok) {
        const LatticeSpec spec = cfg.lattice(0.5);
        auto mesh = std::make_shared<const Mesh>(build_mesh(spec, cfg.mesh));
        SourceParams sp;
        sp.kind = SourceKind::power;
        sp.gamma = 2.0;
        const auto src = make_source(sp);
        const auto fixed = perforated_constraints(*mesh);
        std::vector<std::vector<double>> seeds{std::vector<double>(mesh->num_vertices(), 0.0),
                                               std::vector<double>(mesh->num_vertices(), 1.0)};
        const double d = uniqueness_probe(mesh, CoefficientField::identity(), nullptr, src, SolverParams{}, fixed, seeds);
        ok = d <= 1e-6;
        return "max distance " + fmt(d);
    });
    return out;
}

}  // namespace homlab
