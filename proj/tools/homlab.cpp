// homlab: perforated-domain homogenization experiments.
//
//   homlab mesh      --config C.json --eps 0.25 --out mesh.txt
//   homlab corrector --config C.json --eps 0.25 --out-dir D/
//   homlab solve     --config C.json --eps 0.25 [--out-dir D/]
//   homlab sweep     --config C.json --format csv,json,gnuplot --out-dir D/
//   homlab selftest
//
// Exit codes: 0 success, 1 check failure, 2 usage error.

#include <CLI11.hpp>

#include <iostream>

#include "homlab/homlab.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

homlab::SweepConfig config_or_default(const std::string& path) {
    if (path.empty()) {
        homlab::SweepConfig c;
        c.validate();
        return c;
    }
    return homlab::load_config(path);
}

void write_file(const std::filesystem::path& p, const std::function<void(std::ostream&)>& fn) {
    std::ofstream os(p);
    if (!os) throw homlab::Error("io", "cannot write " + p.string());
    fn(os);
}

int cmd_mesh(const homlab::SweepConfig& cfg, double eps, const std::string& out) {
    const auto spec = cfg.lattice(eps);
    const homlab::Mesh mesh = homlab::build_mesh(spec, cfg.mesh);
    homlab::write_mesh_file(out, mesh);
    const auto q = homlab::check_mesh(mesh, spec.domain, 0.0);
    std::cout << "vertices " << mesh.num_vertices() << " triangles " << mesh.num_triangles() << " holes "
              << homlab::place_holes(spec, cfg.mesh.polygon_order).size() << " min_angle " << q.min_angle_deg
              << "\n";
    return kOk;
}

int cmd_corrector(const homlab::SweepConfig& cfg, double eps, const std::string& out_dir) {
    const auto spec = cfg.lattice(eps);
    auto mesh = std::make_shared<const homlab::Mesh>(homlab::build_mesh(spec, cfg.mesh));
    const auto a = cfg.coefficient.field();
    const auto field = homlab::compute_w(mesh, spec, a, cfg.mesh.polygon_order);
    const auto mu = homlab::mu_density(field, *mesh, a);
    const auto z = homlab::compute_z(*mesh, field, a);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    homlab::write_mesh_file((dir / "mesh.txt").string(), *mesh);
    write_file(dir / "w.xyz", [&](std::ostream& os) { homlab::write_function_xyz(os, field.w); });
    write_file(dir / "w_triangles.csv", [&](std::ostream& os) { homlab::write_triangle_soup_csv(os, field.w); });
    write_file(dir / "z.xyz", [&](std::ostream& os) { homlab::write_function_xyz(os, z); });
    write_file(dir / "mu.csv", [&](std::ostream& os) { homlab::write_density_csv(os, mu); });
    const double mu_ana = homlab::analytic_mu(2, cfg.c0);
    std::cout << "holes " << field.annuli.size() << " mu_interior " << mu.interior_mean() << " mu_analytic " << mu_ana
              << " total_mass " << mu.total_mass() << "\n";
    return kOk;
}

int cmd_solve(const homlab::SweepConfig& cfg, double eps, const std::string& out_dir) {
    const homlab::CaseResult c = homlab::run_case(eps, cfg, out_dir);
    std::cout << homlab::case_to_json(c).dump(2) << "\n";
    return c.u_min >= -1e-12 ? kOk : kCheckFailed;
}

int cmd_sweep(const homlab::SweepConfig& cfg, const std::string& formats, const std::string& out_dir) {
    std::vector<std::string> fmts;
    std::stringstream ss(formats);
    for (std::string f; std::getline(ss, f, ',');) {
        if (!f.empty()) fmts.push_back(f);
    }
    for (const auto& f : fmts) {
        if (f != "csv" && f != "json" && f != "gnuplot") throw homlab::Error("config", "unknown format '" + f + "'");
    }
    homlab::SweepConfig run = cfg;
    if (!out_dir.empty()) run.output_dir = out_dir;
    const auto rep = homlab::run_sweep(run);
    for (const auto& p : homlab::emit(rep, fmts, run.output_dir)) std::cout << "wrote " << p << "\n";
    bool all = true;
    for (const auto& [name, ok] : rep.verdicts) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        all &= ok;
    }
    for (const auto& c : rep.cases) {
        if (!c.ok()) std::cout << "case eps=" << c.epsilon << " failed: " << c.error << "\n";
    }
    return all ? kOk : kCheckFailed;
}

int cmd_selftest(bool corrupt) {
    homlab::SelftestOptions opt;
    opt.corrupt_quadrature = corrupt;
    const auto t0 = std::chrono::steady_clock::now();
    bool all = true;
    for (const auto& c : homlab::selftest(opt)) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "\n";
        all &= c.passed;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (all ? "selftest passed" : "selftest FAILED") << " in " << secs << " s\n";
    return all ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Homogenization experiments on perforated domains"};
    app.require_subcommand(1);

    std::string config;
    double eps = 0.25;
    std::string out, out_dir, formats = "csv,json,gnuplot";
    bool corrupt = false;

    auto* mesh = app.add_subcommand("mesh", "Build the perforated mesh for one epsilon");
    mesh->add_option("--config", config, "JSON config")->check(CLI::ExistingFile);
    mesh->add_option("--eps", eps, "Cell scale epsilon")->required();
    mesh->add_option("--out", out, "Mesh text file")->required();

    auto* corr = app.add_subcommand("corrector", "Compute w, z and the strange-term density");
    corr->add_option("--config", config, "JSON config")->check(CLI::ExistingFile);
    corr->add_option("--eps", eps, "Cell scale epsilon")->required();
    corr->add_option("--out-dir", out_dir, "Output directory")->required();

    auto* solve = app.add_subcommand("solve", "Solve the singular problem for one epsilon");
    solve->add_option("--config", config, "JSON config")->check(CLI::ExistingFile);
    solve->add_option("--eps", eps, "Cell scale epsilon")->required();
    solve->add_option("--out-dir", out_dir, "Write u, trace and corrector fields here");

    auto* sweep = app.add_subcommand("sweep", "Run the epsilon sweep and write reports");
    sweep->add_option("--config", config, "JSON config")->check(CLI::ExistingFile);
    sweep->add_option("--format", formats, "Comma-separated: csv, json, gnuplot");
    sweep->add_option("--out-dir", out_dir, "Output directory");

    auto* self = app.add_subcommand("selftest", "Run the reduced acceptance checks");
    self->add_flag("--corrupt-quadrature", corrupt, "Inject a faulty load quadrature (must fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*self) return cmd_selftest(corrupt);
        const homlab::SweepConfig cfg = config_or_default(config);
        if (*mesh) return cmd_mesh(cfg, eps, out);
        if (*corr) return cmd_corrector(cfg, eps, out_dir);
        if (*solve) return cmd_solve(cfg, eps, out_dir);
        if (*sweep) return cmd_sweep(cfg, formats, out_dir);
    } catch (const homlab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.stage() == "config" ? kUsage : kCheckFailed;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCheckFailed;
    }
    return kUsage;
}
