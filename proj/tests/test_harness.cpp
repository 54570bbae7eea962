#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "homlab/harness.hpp"

using namespace homlab;
namespace fs = std::filesystem;

namespace {

SweepConfig coarse() {
    SweepConfig c;
    c.epsilons = {0.5, 0.25};
    c.mesh.target_h = 0.05;
    c.mesh.grading_ratio = 1.4;
    c.mesh.min_angle = 0.3;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("homlab_test_" + name);
    fs::remove_all(p);
    return p;
}

// Sets an environment variable for the lifetime of the object.
struct EnvGuard {
    std::string key;
    EnvGuard(const char* k, const char* v) : key(k) { setenv(k, v, 1); }
    ~EnvGuard() { unsetenv(key.c_str()); }
};

}  // namespace

TEST(Config, DefaultsValidate) {
    const SweepConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.epsilons.size(), 3u);
    const auto round = config_from_json(config_to_json(c));
    EXPECT_EQ(round.epsilons, c.epsilons);
    EXPECT_EQ(round.delta_levels, c.delta_levels);
    EXPECT_EQ(round.solver.delta_min, c.solver.delta_min);
}

TEST(Config, RejectsUnknownKeys) {
    try {
        config_from_json(json::parse(R"({"epsilons": [0.5], "frobnicate": 1})"));
        FAIL() << "accepted an unknown key";
    } catch (const Error& e) {
        EXPECT_EQ(e.stage(), "config");
        EXPECT_NE(std::string(e.what()).find("frobnicate"), std::string::npos);
    }
    for (const char* text : {R"({"mesh": {"target": 0.1}})", R"({"solver": {"tol": 1}})",
                             R"({"source": {"kind": "power", "beta": 1}})", R"({"coefficient": {"diag": 1}})"}) {
        EXPECT_THROW(config_from_json(json::parse(text)), Error) << text;
    }
}

TEST(Config, RejectsBadValues) {
    for (const char* text :
         {R"({"epsilons": []})", R"({"epsilons": [0.25, 0.5]})", R"({"epsilons": "half"})", R"({"domain": [0, 0, 1]})",
          R"({"source": {"kind": "cubic"}})", R"({"source": {"f": "x"}})", R"({"solver": {"damping": 0}})",
          R"({"test_modes": [[1]]})", R"({"coefficient": {"matrix": [1, 0, 0, -1]}})", R"([1, 2])"}) {
        try {
            config_from_json(json::parse(text));
            ADD_FAILURE() << "accepted " << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.stage(), "config") << text << ": " << e.what();
        }
    }
}

TEST(Config, ReadsFieldsAndFiles) {
    const auto c = config_from_json(json::parse(
        R"({"epsilons": [0.5], "source": {"kind": "power", "h": 2.5, "gamma": 2}, "mesh": {"target_h": 0.02}})"));
    EXPECT_EQ(c.source.kind, SourceKind::power);
    EXPECT_EQ(c.source.h, std::vector<double>{2.5});
    EXPECT_EQ(c.mesh.target_h, 0.02);
    const auto dir = scratch("config");
    fs::create_directories(dir);
    {
        std::ofstream(dir / "ok.json") << R"({"c0": 2.0})";
        std::ofstream(dir / "bad.json") << R"({"c0": 2.0,})";
    }
    EXPECT_EQ(load_config((dir / "ok.json").string()).c0, 2.0);
    EXPECT_THROW(load_config((dir / "bad.json").string()), Error);
    EXPECT_THROW(load_config((dir / "missing.json").string()), Error);
}

TEST(Case, HalfLatticeHasOneHole) {
    const auto dir = scratch("case");
    const auto c = run_case(0.5, coarse(), dir.string());
    ASSERT_TRUE(c.ok()) << c.error;
    EXPECT_EQ(c.hole_count, 1u);
    EXPECT_GE(c.u_min, 0.0);
    EXPECT_TRUE(c.splitting_consistent);
    EXPECT_TRUE(c.trace.converged);
    for (const char* f : {"mesh.txt", "u.xyz", "trace.csv", "w.xyz", "z.xyz", "mu.csv"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    const std::string trace = slurp(dir / "trace.csv");
    EXPECT_EQ(trace.substr(0, trace.find('\n')), "delta,inner_iters,final_residual,increment,min_u,max_u");
}

TEST(Case, SandwichHolds) {
    const auto c = run_case(0.5, coarse());
    ASSERT_TRUE(c.ok()) << c.error;
    EXPECT_EQ(c.sandwich_violations, 0u) << "max z - w = " << c.z_minus_w_max;
}

TEST(Case, OversizedHoleFailsInGeometry) {
    SweepConfig c = coarse();
    c.c0 = 0.01;
    try {
        run_case(0.95, c);
        FAIL() << "expected a geometry error";
    } catch (const Error& e) {
        EXPECT_EQ(e.stage(), "geometry");
    }
}

TEST(Case, NoHolesMatchesPlainSolve) {
    SweepConfig c = coarse();
    c.domain = {0.0, 0.0, 0.6, 0.6};
    const auto res = run_case(0.5, c);
    ASSERT_TRUE(res.ok()) << res.error;
    EXPECT_EQ(res.hole_count, 0u);
    auto mesh = std::make_shared<const Mesh>(build_mesh(c.lattice(0.5), c.mesh));
    const auto plain = solve_semilinear(mesh, CoefficientField::identity(), nullptr, make_source(c.source), c.solver,
                                        outer_constraints(*mesh))
                           .u;
    ASSERT_EQ(plain.size(), res.u.size());
    for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(plain[i], res.u[i], 1e-12);
}

TEST(Sweep, FailedCaseIsIsolated) {
    SweepConfig c = coarse();
    c.c0 = 0.15;  // r = exp(-0.6) > 0.5 at eps = 1/2, r = exp(-2.4) at eps = 1/4
    const auto rep = run_sweep(c);
    ASSERT_EQ(rep.cases.size(), 2u);
    EXPECT_FALSE(rep.cases[0].ok());
    EXPECT_EQ(rep.cases[0].error.rfind("geometry", 0), 0u) << rep.cases[0].error;
    EXPECT_TRUE(rep.cases[1].ok()) << rep.cases[1].error;
    EXPECT_FALSE(rep.complete());
    EXPECT_FALSE(rep.verdicts.at("all_cases_ok"));
    std::ostringstream os;
    write_report_csv(os, rep);
    EXPECT_NE(os.str().find("geometry"), std::string::npos);
}

TEST(Sweep, DeterministicModeIsReproducible) {
    EnvGuard env("HOMLAB_DETERMINISTIC", "1");
    EXPECT_TRUE(deterministic_mode());
    EXPECT_EQ(worker_count(), 1u);
    SweepConfig c = coarse();
    const auto a = scratch("det_a"), b = scratch("det_b");
    emit(run_sweep(c), {"csv"}, a.string());
    emit(run_sweep(c), {"csv"}, b.string());
    const std::string sa = slurp(a / "sweep.csv");
    EXPECT_FALSE(sa.empty());
    EXPECT_EQ(sa, slurp(b / "sweep.csv"));
}

TEST(Sweep, EmittedFormats) {
    SweepConfig c = coarse();
    const auto dir = scratch("emit");
    c.output_dir = (dir / "cases").string();
    const auto rep = run_sweep(c);
    ASSERT_TRUE(rep.complete());
    const auto files = emit(rep, {"csv", "json", "gnuplot"}, dir.string());
    EXPECT_EQ(files.size(), 3u);
    EXPECT_TRUE(fs::exists(dir / "cases" / "case_0" / "mesh.txt"));

    std::istringstream csv(slurp(dir / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, static_cast<long>(csv_columns().size()));
    int rows = 0;
    while (std::getline(csv, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, static_cast<long>(csv_columns().size()));
        ++rows;
    }
    EXPECT_EQ(rows, 2);

    const json j = json::parse(slurp(dir / "sweep.json"));
    EXPECT_EQ(j.at("cases").size(), 2u);
    EXPECT_EQ(j.at("rows").size(), 2u);
    const auto back = config_from_json(j.at("config"));
    EXPECT_EQ(back.epsilons, c.epsilons);
    EXPECT_EQ(back.mesh.min_angle, c.mesh.min_angle);

    std::istringstream dat(slurp(dir / "sweep.dat"));
    std::getline(dat, line);
    EXPECT_EQ(line[0], '#');
    int data = 0;
    while (std::getline(dat, line)) {
        std::istringstream fields(line);
        double x;
        int n = 0;
        while (fields >> x) ++n;
        EXPECT_EQ(n, 7);
        ++data;
    }
    EXPECT_EQ(data, 2);
    EXPECT_THROW(emit(rep, {"xml"}, dir.string()), Error);
}

TEST(Sweep, VerdictsOnCoarseRun) {
    const auto rep = run_sweep(coarse());
    ASSERT_TRUE(rep.complete());
    EXPECT_TRUE(rep.verdicts.at("u_nonnegative"));
    EXPECT_TRUE(rep.verdicts.at("cauchy_schwarz"));
    EXPECT_TRUE(rep.verdicts.at("removed_measure_strictly_decreasing"));
    EXPECT_TRUE(rep.verdicts.at("increments_eventually_decreasing"));
    EXPECT_NEAR(rep.mu_ana, analytic_mu(2, 1.0), 1e-15);
}

TEST(Parallel, PreservesOrder) {
    const auto out = parallel_map(37, [](std::size_t i) { return static_cast<int>(i * i); });
    ASSERT_EQ(out.size(), 37u);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    EXPECT_TRUE(parallel_map(0, [](std::size_t) { return 0; }).empty());
}

TEST(Selftest, PassesAndDetectsCorruptQuadrature) {
    const auto good = selftest();
    for (const auto& c : good) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
    const auto bad = selftest({true});
    bool fem_failed = false;
    for (const auto& c : bad) {
        if (c.name == "fem_manufactured") fem_failed = !c.passed;
    }
    EXPECT_TRUE(fem_failed);
}

TEST(Audit, ConvergenceStudyOrder) {
    const auto st = manufactured_study({1.0 / 8, 1.0 / 16});
    EXPECT_NEAR(st.factor_l2(0), 4.0, 0.6);
    EXPECT_NEAR(st.factor_h1(0), 2.0, 0.3);
    const auto bad = manufactured_study({1.0 / 8, 1.0 / 16}, true);
    EXPECT_LT(bad.factor_l2(0), 3.4);
}
