#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "homlab/corrector.hpp"
#include "homlab/domain.hpp"

using namespace homlab;

namespace {

MeshParams fine() {
    MeshParams m;
    m.target_h = 0.01;
    m.grading_ratio = 1.2;
    m.min_angle = 0.3;
    return m;
}

LatticeSpec lattice(double eps, Rect domain = {}) {
    LatticeSpec s;
    s.epsilon = eps;
    s.domain = domain;
    return s;
}

struct Setup {
    std::shared_ptr<const Mesh> mesh;
    CorrectorField field;
};

Setup setup(const LatticeSpec& spec, const MeshParams& mp = fine(),
            const CoefficientField& a = CoefficientField::identity()) {
    auto mesh = std::make_shared<const Mesh>(build_mesh(spec, mp));
    auto field = compute_w(mesh, spec, a, mp.polygon_order);
    return {mesh, std::move(field)};
}

const Setup& half() {
    static const Setup s = setup(lattice(0.5));
    return s;
}

}  // namespace

TEST(Profile, Values) {
    const double r0 = 1e-3, R = 0.5;
    EXPECT_DOUBLE_EQ(analytic_w_profile(r0, r0, R), 0.0);
    EXPECT_DOUBLE_EQ(analytic_w_profile(R, r0, R), 1.0);
    EXPECT_DOUBLE_EQ(analytic_w_profile(1e-5, r0, R), 0.0);
    EXPECT_DOUBLE_EQ(analytic_w_profile(2.0, r0, R), 1.0);
    EXPECT_NEAR(analytic_w_profile(std::sqrt(r0 * R), r0, R), 0.5, 1e-14);
    EXPECT_THROW(analytic_w_profile(0.1, 0.5, 0.5), Error);
}

TEST(Profile, AnnulusEnergy) {
    EXPECT_NEAR(analytic_annulus_energy(std::exp(-4.0), 1.0), 2 * std::numbers::pi / 4, 1e-14);
    EXPECT_NEAR(analytic_annulus_energy(std::exp(-4.0), 0.5), 2 * std::numbers::pi / (4 - std::log(2.0)), 1e-14);
    EXPECT_THROW(analytic_annulus_energy(0.0, 1.0), Error);
}

TEST(Profile, LimitDensity) {
    EXPECT_NEAR(analytic_mu(2, 1.0), std::numbers::pi / 2, 1e-15);
    EXPECT_NEAR(analytic_mu(2, 2.0), std::numbers::pi / 4, 1e-15);
    EXPECT_NEAR(analytic_mu(3, 1.0), std::numbers::pi / 2, 1e-14);
    EXPECT_THROW(analytic_mu(1, 1.0), Error);
    EXPECT_THROW(analytic_mu(2, 0.0), Error);
}

TEST(Corrector, MatchesRadialProfile) {
    const auto& s = half();
    ASSERT_EQ(s.field.annuli.size(), 1u);
    double dev = 0.0;
    for (const auto& an : s.field.annuli) {
        EXPECT_GT(an.free_nodes.size(), 100u);
        for (int v : an.free_nodes) {
            const double rho = distance(s.mesh->vertices[v], an.hole.center);
            dev = std::max(dev, std::abs(s.field.w[v] - analytic_w_profile(rho, an.hole.radius, 0.5)));
        }
    }
    EXPECT_LE(dev, 0.02);
}

TEST(Corrector, BoundsAndFixedValues) {
    const auto& s = half();
    const Mesh& m = *s.mesh;
    for (std::size_t i = 0; i < m.num_vertices(); ++i) {
        const double w = s.field.w[i];
        EXPECT_GE(w, -1e-12);
        EXPECT_LE(w, 1.0 + 1e-12);
        if (is_hole_marker(m.vertex_marker[i])) {
            EXPECT_EQ(w, 0.0);
        }
        // The corners lie outside every annulus.
        const Point p = m.vertices[i];
        if ((p.x == 0.0 || p.x == 1.0) && (p.y == 0.0 || p.y == 1.0)) {
            EXPECT_EQ(w, 1.0);
        }
    }
}

TEST(Corrector, RadiallyMonotone) {
    const auto& s = half();
    const auto& an = s.field.annuli.front();
    // Mean of w over log-radius bins must increase outward.
    const int bins = 8;
    std::vector<double> sum(bins, 0.0);
    std::vector<int> cnt(bins, 0);
    const double lr0 = std::log(an.hole.radius), lr1 = std::log(0.5);
    for (int v : an.free_nodes) {
        const double t = (std::log(distance(s.mesh->vertices[v], an.hole.center)) - lr0) / (lr1 - lr0);
        const int b = std::clamp(static_cast<int>(t * bins), 0, bins - 1);
        sum[b] += s.field.w[v];
        ++cnt[b];
    }
    double prev = -1.0;
    for (int b = 0; b < bins; ++b) {
        ASSERT_GT(cnt[b], 0);
        EXPECT_GT(sum[b] / cnt[b], prev);
        prev = sum[b] / cnt[b];
    }
}

TEST(Density, CellEnergyMatchesAnnulus) {
    const auto& s = half();
    const auto mu = mu_density(s.field, *s.mesh, CoefficientField::identity());
    const double oracle = analytic_annulus_energy(radius_for(0.5, 1.0, 2), 0.5);
    EXPECT_NEAR(oracle, 1.900, 1e-3);
    int interior = 0;
    for (const auto& c : mu.cells) {
        if (!c.interior) continue;
        ++interior;
        EXPECT_NEAR(c.energy, oracle, 0.03 * oracle);
        EXPECT_DOUBLE_EQ(c.area, 1.0);
    }
    EXPECT_EQ(interior, 1);
    EXPECT_NEAR(mu.total_mass(), mu.interior_mean(), 1e-12);
}

TEST(Density, ScalesWithCoefficient) {
    const auto spec = lattice(0.5);
    MeshParams mp;
    mp.min_angle = 0.3;
    const auto a = setup(spec, mp);
    const auto b = setup(spec, mp, CoefficientField::scaled_identity(2.0));
    const auto mu_a = mu_density(a.field, *a.mesh, CoefficientField::identity());
    const auto mu_b = mu_density(b.field, *b.mesh, CoefficientField::scaled_identity(2.0));
    ASSERT_EQ(mu_a.cells.size(), mu_b.cells.size());
    for (std::size_t i = 0; i < mu_a.cells.size(); ++i) {
        EXPECT_NEAR(mu_b.cells[i].density, 2.0 * mu_a.cells[i].density, 1e-9 * (1 + mu_a.cells[i].density));
    }
}

TEST(Density, NoHolesGivesZero) {
    const auto s = setup(lattice(0.5, Rect{0, 0, 0.6, 0.6}), MeshParams{});
    EXPECT_TRUE(s.field.annuli.empty());
    for (double w : s.field.w.values) EXPECT_EQ(w, 1.0);
    const auto mu = mu_density(s.field, *s.mesh, CoefficientField::identity());
    EXPECT_EQ(mu.interior_mean(), 0.0);
    EXPECT_EQ(mu.total_mass(), 0.0);
}

TEST(Density, UniformConstant) {
    const auto mu = MeasureDensity::constant(1.5);
    EXPECT_EQ(mu.interior_mean(), 1.5);
    EXPECT_THROW(MeasureDensity::constant(-1.0), Error);
}

TEST(Density, CsvFormat) {
    const auto& s = half();
    const auto mu = mu_density(s.field, *s.mesh, CoefficientField::identity());
    std::ostringstream os;
    write_density_csv(os, mu);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "cell_ix,cell_iy,area,density,interior_flag");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
        ++rows;
    }
    EXPECT_EQ(rows, mu.cells.size());
}

TEST(Variant, NoHolesIsConstantOne) {
    const auto s = setup(lattice(0.5, Rect{0, 0, 0.6, 0.6}), MeshParams{});
    const auto z = compute_z(*s.mesh, s.field, CoefficientField::identity());
    for (double v : z.values) EXPECT_NEAR(v, 1.0, 1e-10);
    EXPECT_EQ(pairing_bound_check(s.field, *s.mesh, CoefficientField::identity()), 1.0);
}

// 0 <= z <= w at every node.
TEST(Variant, SandwichedBelowCorrector) {
    const auto& s = half();
    const auto z = compute_z(*s.mesh, s.field, CoefficientField::identity());
    std::size_t violations = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        worst = std::max(worst, z[i] - s.field.w[i]);
        if (z[i] < -1e-8 || z[i] - s.field.w[i] > 1e-8) ++violations;
    }
    EXPECT_EQ(violations, 0u) << "max z - w = " << worst;
}

TEST(Variant, DistanceToCorrectorShrinks) {
    std::vector<double> d;
    for (double eps : {0.5, 1.0 / 3.0, 0.25}) {
        const auto s = setup(lattice(eps));
        const auto z = compute_z(*s.mesh, s.field, CoefficientField::identity());
        d.push_back(seminorm_h1(z - s.field.w));
    }
    EXPECT_LT(d[1], d[0]);
    EXPECT_LT(d[2], d[1]);
}

TEST(Pairing, BoundedByOne) {
    const auto& s = half();
    EXPECT_LE(pairing_bound_check(s.field, *s.mesh, CoefficientField::identity()), 1.0);
}

TEST(Pairing, InvariantUnderScaling) {
    const auto spec = lattice(0.5);
    MeshParams mp;
    mp.min_angle = 0.3;
    const auto a = setup(spec, mp);
    const auto b = setup(spec, mp, CoefficientField::scaled_identity(3.0));
    const double ra = pairing_bound_check(a.field, *a.mesh, CoefficientField::identity());
    const double rb = pairing_bound_check(b.field, *b.mesh, CoefficientField::scaled_identity(3.0));
    EXPECT_NEAR(ra, rb, 1e-8);
}
