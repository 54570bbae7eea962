#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "homlab/domain.hpp"
#include "homlab/fem.hpp"
#include "homlab/harness.hpp"
#include "homlab/singular.hpp"

using namespace homlab;

namespace {

std::shared_ptr<const Mesh> plain(Rect r, double h) { return std::make_shared<const Mesh>(build_plain_mesh(r, h)); }

SingularSource power(double h, double gamma) {
    SourceParams p;
    p.kind = SourceKind::power;
    p.h = {h};
    p.gamma = gamma;
    return make_source(p);
}

SingularSource constant(double f) {
    SourceParams p;
    p.f = {f};
    return make_source(p);
}

// -u'' = F(max(u, delta)) on (0, 1), u(0) = u(1) = 0, with the same continuation
// and damped Picard iteration, each linear step by the Thomas algorithm.
std::vector<double> fd_oracle(const SingularSource& src, const SolverParams& p, int n) {
    const double h = 1.0 / n;
    const int m = n - 1;
    std::vector<double> u(m, 0.0), prev(m, 0.0), c(m), d(m), star(m);
    auto rel = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double num = 0.0, den = 0.0;
        for (int i = 0; i < m; ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += a[i] * a[i];
        }
        return den > 0.0 ? std::sqrt(num / den) : 0.0;
    };
    int accepted = 0;
    for (double delta : p.deltas()) {
        for (int it = 0; it < p.inner_maxit; ++it) {
            // Tridiagonal (-1, 2, -1) / h^2.
            for (int i = 0; i < m; ++i) {
                const double rhs = src(0, std::max(u[i], delta)) * h * h;
                const double denom = 2.0 + (i > 0 ? c[i - 1] : 0.0);
                c[i] = -1.0 / denom;
                d[i] = (rhs + (i > 0 ? d[i - 1] : 0.0)) / denom;
            }
            star[m - 1] = d[m - 1];
            for (int i = m - 2; i >= 0; --i) star[i] = d[i] - c[i] * star[i + 1];
            std::vector<double> next(m);
            for (int i = 0; i < m; ++i) next[i] = (1 - p.damping) * u[i] + p.damping * std::max(0.0, star[i]);
            const double inc = rel(next, u);
            u = std::move(next);
            if (inc <= p.inner_rtol) break;
        }
        const double step = rel(u, prev);
        prev = u;
        if (++accepted > 1 && step <= p.continuation_rtol) break;
    }
    return u;
}

}  // namespace

TEST(Source, SpotValues) {
    EXPECT_DOUBLE_EQ(power(1.0, 2.0)(0, 2.0), 0.25);
    EXPECT_DOUBLE_EQ(constant(3.0)(0, 0.1), 3.0);

    SourceParams p;
    p.kind = SourceKind::composite;
    p.f = {0.0};
    p.g = {1.0};
    p.l = {0.0};
    p.b = 2.0;
    p.gamma = 1.0;
    const auto c = make_source(p);
    EXPECT_NEAR(c(0, 0.5), (2.0 + std::sin(2.0)) / 0.5, 1e-12);
    EXPECT_NEAR(c(0, 0.5), 5.8186, 1e-4);
}

TEST(Source, EnvelopeHoldsOnEveryKind) {
    for (auto kind : {SourceKind::constant, SourceKind::power, SourceKind::oscillating_exp, SourceKind::composite}) {
        SourceParams p;
        p.kind = kind;
        p.g = {0.5};
        p.l = {0.25};
        const auto s = make_source(p);
        for (double x = 2e-3; x < 100.0; x *= 1.37) EXPECT_TRUE(s.envelope_holds(0, x)) << to_string(kind) << " " << x;
    }
}

TEST(Source, Validation) {
    SourceParams p;
    p.kind = SourceKind::composite;
    p.a = 1.0;
    EXPECT_THROW(make_source(p), Error);
    p.a = 2.0;
    p.b = 0.5;
    EXPECT_THROW(make_source(p), Error);
    SourceParams q;
    q.f = {-1.0};
    EXPECT_THROW(make_source(q), Error);
    SourceParams r;
    r.kind = SourceKind::power;
    r.gamma = 0.0;
    EXPECT_THROW(make_source(r), Error);
    SourceParams lengths;
    lengths.f = {1.0, 2.0};
    lengths.l = {1.0, 2.0, 3.0};
    EXPECT_THROW(make_source(lengths), Error);
    EXPECT_THROW(source_kind_from("cubic"), Error);
    EXPECT_TRUE(power(1, 1).nonincreasing());
    EXPECT_FALSE(make_source(SourceParams{SourceKind::oscillating_exp}).nonincreasing());
}

TEST(Source, Regularize) {
    const auto s = power(1.0, 2.0);
    const auto r = regularize(s, 0.1);
    EXPECT_NEAR(r(0, 0.01), 100.0, 1e-9);
    EXPECT_NEAR(r(0, 0.0), 100.0, 1e-9);
    EXPECT_DOUBLE_EQ(r(0, 0.5), 4.0);
    EXPECT_THROW(regularize(s, 0.0), Error);
}

TEST(Solver, ParamsValidate) {
    SolverParams p;
    EXPECT_NO_THROW(p.validate());
    const auto d = p.deltas();
    EXPECT_DOUBLE_EQ(d.front(), p.delta0);
    EXPECT_DOUBLE_EQ(d.back(), p.delta_min);
    p.delta_factor = 1.0;
    EXPECT_THROW(p.validate(), Error);
    p = {};
    p.damping = 0.0;
    EXPECT_THROW(p.validate(), Error);
    p = {};
    p.delta_min = 1.0;
    EXPECT_THROW(p.validate(), Error);
}

TEST(Solver, PoissonPeak) {
    auto mesh = plain(Rect{}, 1.0 / 32);
    const auto res = solve_semilinear(mesh, CoefficientField::identity(), nullptr, constant(1.0), SolverParams{},
                                      outer_constraints(*mesh));
    const double peak = *std::max_element(res.u.values.begin(), res.u.values.end());
    EXPECT_NEAR(peak, 0.0737, 0.05 * 0.0737);
    EXPECT_TRUE(res.trace.converged);
}

TEST(Solver, ConstantSourceMatchesLinearSolve) {
    auto mesh = plain(Rect{}, 1.0 / 16);
    const auto fixed = outer_constraints(*mesh);
    SolverParams p;
    p.inner_rtol = 1e-12;
    const auto res = solve_semilinear(mesh, CoefficientField::identity(), nullptr, constant(2.0), p, fixed);
    const std::vector<double> zeros(mesh->num_vertices(), 0.0);
    std::vector<double> load = lumped_mass(*mesh);
    for (double& x : load) x *= 2.0;
    const auto sys = constrain(assemble_stiffness(*mesh, CoefficientField::identity()), load, fixed, zeros);
    const auto ref = sys.expand(solve_spd(sys, 1e-13));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(res.u[i], ref[i], 1e-9);
}

TEST(Solver, ZeroSourceGivesZero) {
    auto mesh = plain(Rect{}, 0.125);
    const auto res = solve_semilinear(mesh, CoefficientField::identity(), nullptr, constant(0.0), SolverParams{},
                                      outer_constraints(*mesh));
    for (double v : res.u.values) EXPECT_EQ(v, 0.0);
    ASSERT_FALSE(res.trace.rows.empty());
    EXPECT_EQ(res.trace.rows.front().inner_iters, 1);
}

TEST(Solver, StripAgreesWithOneDimensionalOracle) {
    const Rect strip{0.0, 0.0, 1.0, 0.125};
    auto mesh = plain(strip, 1.0 / 64);
    std::vector<char> fixed(mesh->num_vertices(), 0);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        const double x = mesh->vertices[i].x;
        fixed[i] = x == 0.0 || x == 1.0;
    }
    const auto src = power(1.0, 0.5);
    SolverParams p;
    p.delta_min = 1e-4;
    const auto res = solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, p, fixed);
    const int n = 100000;
    const auto fd = fd_oracle(src, p, n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < mesh->num_vertices(); ++i) {
        const Point q = mesh->vertices[i];
        if (std::abs(q.y - 0.0625) > 1e-12 || fixed[i]) continue;
        const int j = static_cast<int>(std::lround(q.x * n)) - 1;
        num += (res.u[i] - fd[j]) * (res.u[i] - fd[j]);
        den += fd[j] * fd[j];
    }
    ASSERT_GT(den, 0.0);
    EXPECT_LE(std::sqrt(num / den), 0.02);
}

TEST(Solver, NonnegativeAndSplitConsistent) {
    auto mesh = plain(Rect{}, 1.0 / 24);
    const auto res = solve_semilinear(mesh, CoefficientField::identity(), nullptr, power(1.0, 1.0), SolverParams{},
                                      outer_constraints(*mesh));
    const CutLevel k(0.05);
    for (double v : res.u.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_NEAR(t_cut(v, k) + g_cut(v, k), v, 4 * ulp_of(v) + 1e-300);
    }
    for (const auto& r : res.trace.rows) EXPECT_GE(r.min_u, 0.0);
}

TEST(Solver, MildSourceInsensitiveToDeltaMin) {
    auto mesh = plain(Rect{}, 1.0 / 16);
    const auto fixed = outer_constraints(*mesh);
    const auto src = power(1.0, 0.5);
    SolverParams p;
    const auto a = solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, p, fixed).u;
    p.delta_min *= 0.5;
    const auto b = solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, p, fixed).u;
    EXPECT_LE(norm_l2(a - b) / norm_l2(a), 10 * p.continuation_rtol);
}

TEST(Solver, NonconvergenceThrowsWithHistory) {
    auto mesh = plain(Rect{}, 0.125);
    SolverParams p;
    p.inner_maxit = 1;
    p.inner_rtol = 1e-14;
    try {
        solve_semilinear(mesh, CoefficientField::identity(), nullptr, power(1.0, 1.0), p, outer_constraints(*mesh));
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_EQ(e.stage(), "solver");
        EXPECT_EQ(e.history().size(), 1u);
    }
}

TEST(Solver, RejectsBadInputs) {
    auto mesh = plain(Rect{}, 0.25);
    std::vector<char> none(mesh->num_vertices(), 0);
    EXPECT_THROW(solve_semilinear(mesh, CoefficientField::identity(), nullptr, constant(1), SolverParams{}, none),
                 Error);
    EXPECT_THROW(solve_semilinear(mesh, CoefficientField::identity(), nullptr, constant(1), SolverParams{},
                                  std::vector<char>(3, 1)),
                 Error);
    SourceParams p;
    p.f = {1.0, 2.0};
    EXPECT_THROW(solve_semilinear(mesh, CoefficientField::identity(), nullptr, make_source(p), SolverParams{},
                                  outer_constraints(*mesh)),
                 Error);
}

TEST(Diagnostics, EnergyResidual) {
    auto mesh = plain(Rect{}, 1.0 / 24);
    const auto src = power(1.0, 1.0);
    const auto a = CoefficientField::identity();
    const auto u = solve_semilinear(mesh, a, nullptr, src, SolverParams{}, outer_constraints(*mesh)).u;
    const double top = *std::max_element(u.values.begin(), u.values.end());
    EXPECT_EQ(energy_equality_residual(u, src, a, top), 0.0);
    EXPECT_EQ(energy_equality_residual(u, src, a, 2 * top), 0.0);
    const double level = 0.5 * top;
    const double converged = energy_equality_residual(u, src, a, level);
    FeFunction off = u;
    for (double& v : off.values) v *= 1.2;
    EXPECT_LT(converged, 0.05);
    EXPECT_LT(converged, energy_equality_residual(off, src, a, level));
}

TEST(Diagnostics, AprioriProfile) {
    auto mesh = plain(Rect{}, 1.0 / 16);
    const auto src = power(1.0, 1.0);
    const auto u =
        solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, SolverParams{}, outer_constraints(*mesh)).u;
    const double top = *std::max_element(u.values.begin(), u.values.end());
    const auto prof = apriori_profile(u, src, {0.25 * top, 0.5 * top, top, 2 * top});
    ASSERT_EQ(prof.entries.size(), 4u);
    EXPECT_EQ(prof.entries[2].norm, 0.0);
    EXPECT_EQ(prof.entries[3].norm, 0.0);
    EXPECT_TRUE(prof.nonincreasing());
    EXPECT_GT(prof.entries[0].norm, prof.entries[1].norm);
    EXPECT_DOUBLE_EQ(prof.entries[1].gamma, 0.5 * top);
    EXPECT_EQ(prof.span(), std::numeric_limits<double>::infinity());
}

TEST(Diagnostics, ZdeltaMass) {
    auto mesh = plain(Rect{}, 1.0 / 32);
    const auto src = constant(1.0);
    const auto u =
        solve_semilinear(mesh, CoefficientField::identity(), nullptr, src, SolverParams{}, outer_constraints(*mesh)).u;
    EXPECT_EQ(zdelta_mass(u, src, FeFunction::zeros(mesh), 0.1, 1e-3), 0.0);
    std::vector<double> sv(mesh->num_vertices());
    for (std::size_t i = 0; i < sv.size(); ++i) {
        const Point q = mesh->vertices[i];
        sv[i] = std::sin(std::numbers::pi * q.x) * std::sin(std::numbers::pi * q.y);
    }
    const FeFunction v(mesh, sv);
    // u reaches ~0.07; above 2 delta = 0.2 everything is cut off.
    EXPECT_GT(zdelta_mass(u, src, v, 0.1, 1e-3), 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double d : {0.1, 0.02, 0.004, 0.0008}) {
        const double m = zdelta_mass(u, src, v, d, 1e-3);
        EXPECT_LT(m, prev) << d;
        prev = m;
    }
    FeFunction neg = v;
    neg.values[mesh->num_vertices() / 2] = -1.0;
    EXPECT_THROW(zdelta_mass(u, src, neg, 0.1, 1e-3), Error);
    EXPECT_THROW(zdelta_mass(u, src, v, 0.0, 1e-3), Error);
}

TEST(Diagnostics, UniquenessProbe) {
    auto mesh = plain(Rect{}, 1.0 / 16);
    const auto fixed = outer_constraints(*mesh);
    const auto a = CoefficientField::identity();
    const std::size_t n = mesh->num_vertices();
    EXPECT_EQ(uniqueness_probe(mesh, a, nullptr, power(1, 1), SolverParams{}, fixed, {std::vector<double>(n, 0.0)}),
              0.0);
    const double d = uniqueness_probe(mesh, a, nullptr, power(1, 1), SolverParams{}, fixed,
                                      {std::vector<double>(n, 0.0), std::vector<double>(n, 3.0)});
    EXPECT_LE(d, 1e-6);
    EXPECT_THROW(uniqueness_probe(mesh, a, nullptr, make_source(SourceParams{SourceKind::oscillating_exp}),
                                  SolverParams{}, fixed, {std::vector<double>(n, 0.0)}),
                 Error);
}

TEST(Diagnostics, TraceCsv) {
    SolveTrace t;
    t.rows.push_back({0.1, 3, 1e-10, 0.5, 0.0, 1.0, 0});
    std::ostringstream os;
    write_trace_csv(os, t);
    const std::string s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "delta,inner_iters,final_residual,increment,min_u,max_u");
    EXPECT_NE(s.find("\n0.10000000000000001,3,"), std::string::npos);
}

TEST(Diagnostics, IncrementsEventuallyDecreasing) {
    SolveTrace t;
    for (double inc : {0.1, 0.5, 0.2, 0.05}) t.rows.push_back({0, 1, 0, inc, 0, 0, 0});
    EXPECT_TRUE(t.increments_eventually_decreasing());
    t.rows.push_back({0, 1, 0, 0.06, 0, 0, 0});
    EXPECT_FALSE(t.increments_eventually_decreasing());
}
