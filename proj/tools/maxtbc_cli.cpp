// Command-line front end: time-domain runs, verification suites, and
// convergence studies. Exit codes: 0 success, 1 usage/config error,
// 2 numerical failure, 3 resource limit.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <random>

#include "maxtbc/bem.hpp"
#include "maxtbc/config.hpp"
#include "maxtbc/cq.hpp"
#include "maxtbc/dg.hpp"
#include "maxtbc/harness.hpp"
#include "maxtbc/mesh.hpp"
#include "maxtbc/stepper.hpp"
#include "maxtbc/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace maxtbc;

namespace {

constexpr const char* kVersion = "maxtbc 0.1.0";

struct Outputs {
    fs::path dir;
    std::vector<std::string> files;

    explicit Outputs(const std::string& d) : dir(d.empty() ? "." : d) {
        fs::create_directories(dir);
    }
    fs::path path(const std::string& name) {
        files.push_back(name);
        return dir / name;
    }
};

void write_manifest(Outputs& out, const std::string& command, const std::string& config_hash,
                    const std::string& mesh_hash, unsigned seed, const PhaseTimer& timer) {
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["config_hash"] = config_hash;
    m["mesh_hash"] = mesh_hash;
    m["seed"] = seed;
    json phases = json::object();
    for (const auto& [name, secs] : timer.phases()) phases[name] = secs;
    m["wall_clock_seconds"] = phases;
    m["outputs"] = out.files;
    std::ofstream os(out.dir / "manifest.json");
    os << m.dump(2) << "\n";
}

TetMesh mesh_from_config(const Config& cfg) {
    if (cfg.has("mesh.path")) {
        TetMesh mesh = read_mesh(cfg.get_string("mesh.path", ""));
        validate_mesh(mesh);
        return mesh;
    }
    std::string builtin = cfg.get_string("mesh.builtin", "box");
    if (builtin == "box") {
        int n = cfg.get_int("mesh.divisions", 2);
        Vec3 extents = cfg.get_vec3("mesh.extents", {1.0, 1.0, 1.0});
        return build_box_mesh(extents, {n, n, n});
    }
    if (builtin == "lshape")
        return build_l_shape_mesh(cfg.get_double("mesh.arm_length", 1.0),
                                  cfg.get_double("mesh.thickness", 0.5),
                                  cfg.get_int("mesh.divisions_per_unit", 2));
    throw std::invalid_argument("config: mesh.builtin must be 'box' or 'lshape', got '" +
                                builtin + "'");
}

QuadratureConfig quadrature_from_config(const Config& cfg) {
    QuadratureConfig quad;
    quad.regular_order = cfg.get_int("quadrature.regular_order", quad.regular_order);
    quad.sauter_schwab_order =
        cfg.get_int("quadrature.sauter_schwab_order", quad.sauter_schwab_order);
    quad.near_threshold = cfg.get_double("quadrature.near_threshold", quad.near_threshold);
    quad.validate();
    return quad;
}

int cmd_run(const std::string& config_path) {
    PhaseTimer timer;
    Config cfg;
    TetMesh mesh;
    MaterialParams material;
    try {
        cfg = Config::parse_file(config_path);
        material.epsilon = cfg.get_double("material.epsilon", 1.0);
        material.mu = cfg.get_double("material.mu", 1.0);
        material.validate();
        mesh = mesh_from_config(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    Outputs out(cfg.get_string("outputs.dir", "."));
    const int threads = cfg.get_int("runtime.threads", 0);
    const unsigned seed = static_cast<unsigned>(cfg.get_int("runtime.seed", 0));

    try {
        timer.start("assembly");
        DgSpace space(mesh);
        SurfaceMesh surf = extract_boundary(mesh);
        BoundarySpace bspace(surf);
        OperatorSet ops = assemble_operators(space, bspace, material, threads);
        QuadratureConfig quad = quadrature_from_config(cfg);
        CflEstimate cfl = cfl_limit(ops, material);
        timer.stop();

        double cfl_safety = cfg.get_double("time.cfl_safety", 0.9);
        double dt = cfg.get_double("time.dt", 0.0);
        if (dt <= 0.0) dt = cfl_safety * cfl.dt_max;
        bool unsafe = cfg.get_bool("time.unsafe", false);
        if (!unsafe && dt > cfl.dt_max) {
            std::cerr << "error: time.dt = " << dt << " violates the CFL limit dt_max = "
                      << cfl.dt_max << " (set time.unsafe = true to override)\n";
            return 1;
        }
        int steps = cfg.get_int("time.steps", 100);
        double alpha = cfg.get_double("stabilization.alpha", 1.0);
        bool coupled = cfg.get_string("boundary.mode", "coupled") != "reflective";

        SourceFn source = nullptr;
        std::string source_kind = cfg.get_string("source.kind", "none");
        if (source_kind == "dipole_pulse") {
            Eigen::VectorXd profile = bump_interpolant(
                space, cfg.get_vec3("source.center", {0.5, 0.5, 0.5}),
                cfg.get_double("source.radius", 0.25),
                cfg.get_vec3("source.polarization", {0.0, 0.0, 1.0}),
                cfg.get_double("source.amplitude", 1.0));
            double freq = cfg.get_double("source.frequency", 1.0);
            double t0 = cfg.get_double("source.t0", 0.0);
            double tau = cfg.get_double("source.tau", 1.0);
            source = [profile, freq, t0, tau](double t) {
                double mod = std::sin(2.0 * M_PI * freq * t) *
                             std::exp(-((t - t0) / tau) * ((t - t0) / tau));
                return Eigen::VectorXd(mod * profile);
            };
        } else if (source_kind != "none") {
            std::cerr << "error: source.kind must be 'none' or 'dipole_pulse'\n";
            return 1;
        }

        Eigen::VectorXd E0, H0;
        if (cfg.get_string("initial.kind", "zero") == "bump") {
            E0 = bump_interpolant(space, cfg.get_vec3("initial.center", {0.5, 0.5, 0.5}),
                                  cfg.get_double("initial.radius", 0.3),
                                  cfg.get_vec3("initial.polarization", {1.0, 0.0, 0.0}),
                                  cfg.get_double("initial.amplitude", 1.0));
        }

        CQWeights weights;
        StepOperator stepop = passive_step_operator(dt);
        if (coupled) {
            timer.start("weights");
            MatrixSymbol symbol = [&](Complex s) {
                return assemble_B(ComplexFrequency{s}, bspace, quad, material, threads).B;
            };
            CQOptions cq_opts;
            cq_opts.contour_points = cfg.get_int("cq.contour_points", 0);
            cq_opts.lambda = cfg.get_double("cq.lambda", 0.0);
            cq_opts.memory_cap_gb = cfg.get_double("cq.memory_cap_gb", 4.0);
            cq_opts.cache_dir = cfg.get_string("cq.cache_dir", "");
            cq_opts.cache_key = mesh_hash(mesh) + "|" + std::to_string(quad.regular_order) + "," +
                                std::to_string(quad.sauter_schwab_order) + "," +
                                format_double_17g(quad.near_threshold) + "|" +
                                format_double_17g(material.epsilon) + "," +
                                format_double_17g(material.mu);
            cq_opts.threads = threads;
            weights = compute_weights(symbol, 2 * bspace.dim(), dt, steps, cq_opts);
            stepop = make_step_operator(weights.weights[0], assemble_G(ops, material, alpha), dt,
                                        alpha);
            timer.stop();
        }

        timer.start("stepping");
        RunConfig rc;
        rc.dt = dt;
        rc.n_steps = steps;
        rc.alpha = alpha;
        rc.coupled = coupled;
        rc.threads = threads;
        RunResult result =
            run(ops, weights, stepop, rc, make_initial_state(space, bspace, E0, H0), source);
        timer.stop();

        result.record.write_csv(out.path("energy.csv").string());
        write_manifest(out, "run", cfg.hash(), mesh_hash(mesh), seed, timer);
        if (result.aborted) {
            std::cerr << "error: non-finite state detected at step " << result.abort_step << "\n";
            return 2;
        }
        return 0;
    } catch (const std::length_error& e) {
        std::cerr << "resource error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
}

// Shared fixture for the verification suites: the unit cube at a desk-scale
// resolution.
struct VerifySetup {
    TetMesh mesh;
    SurfaceMesh surf;
    std::unique_ptr<DgSpace> space;
    std::unique_ptr<BoundarySpace> bspace;
    OperatorSet ops;
    explicit VerifySetup(int divisions, const MaterialParams& mat) {
        mesh = build_box_mesh({1, 1, 1}, {divisions, divisions, divisions});
        surf = extract_boundary(mesh);
        space = std::make_unique<DgSpace>(mesh);
        bspace = std::make_unique<BoundarySpace>(surf);
        ops = assemble_operators(*space, *bspace, mat);
    }
};

int cmd_verify(const std::string& suite, const std::string& outdir, unsigned seed) {
    const std::vector<std::string> suites = {"green", "coercivity", "cq", "calderon", "energy"};
    if (std::find(suites.begin(), suites.end(), suite) == suites.end()) {
        std::cerr << "error: unknown suite '" << suite << "'; valid suites:";
        for (const auto& s : suites) std::cerr << " " << s;
        std::cerr << "\n";
        return 1;
    }
    PhaseTimer timer;
    timer.start(suite);
    MaterialParams material;
    json report;
    report["suite"] = suite;
    report["version"] = kVersion;
    report["seed"] = seed;
    bool pass = false;
    Outputs out(outdir);

    if (suite == "green") {
        VerifySetup v(2, material);
        report["mesh_hash"] = mesh_hash(v.mesh);
        std::mt19937_64 rng(seed + 1);
        std::normal_distribution<double> dist(0.0, 1.0);
        double worst = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            Eigen::VectorXd u(v.space->n_dofs()), w(v.space->n_dofs());
            for (int i = 0; i < u.size(); ++i) u[i] = dist(rng);
            for (int i = 0; i < w.size(); ++i) w[i] = dist(rng);
            worst = std::max(worst, check_discrete_green(v.ops, u, w) / (u.norm() * w.norm()));
        }
        report["max_relative_residual"] = worst;
        pass = worst <= 1e-10;
    } else if (suite == "coercivity") {
        VerifySetup v(2, material);
        report["mesh_hash"] = mesh_hash(v.mesh);
        CoercivityConfig cc;
        cc.trials = 100;
        cc.sequences = 10;
        cc.seed = seed + 2;
        CoercivityReport rep = coercivity_report(*v.bspace, cc);
        json samples = json::array();
        for (const auto& e : rep.laplace)
            samples.push_back({{"s_re", e.s.real()},
                               {"s_im", e.s.imag()},
                               {"min_rayleigh", e.min_rayleigh},
                               {"m_s", e.m_s},
                               {"beta_estimate", e.beta_estimate}});
        report["laplace"] = samples;
        report["min_rayleigh"] = rep.min_rayleigh;
        report["min_herglotz_normalized"] = rep.min_lhs_normalized;
        pass = rep.min_rayleigh >= -1e-8 && rep.min_lhs_normalized >= -1e-8;
    } else if (suite == "cq") {
        report["mesh_hash"] = "";
        auto order_of = [](const ScalarSymbol& symbol, const std::function<double(double)>& w,
                           double exact) {
            std::vector<double> logdt, logerr;
            for (double dt : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
                int N = static_cast<int>(std::lround(1.0 / dt));
                auto wt = compute_weights_scalar(symbol, dt, N);
                std::vector<double> samples(N + 1);
                for (int j = 0; j <= N; ++j) samples[j] = w(j * dt);
                logdt.push_back(std::log(dt));
                logerr.push_back(std::log(std::abs(discrete_convolution(wt, samples, N) - exact)));
            }
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t i = 0; i < logdt.size(); ++i) {
                sx += logdt[i];
                sy += logerr[i];
                sxx += logdt[i] * logdt[i];
                sxy += logdt[i] * logerr[i];
            }
            double n = static_cast<double>(logdt.size());
            return (n * sxy - sx * sy) / (n * sxx - sx * sx);
        };
        double order_d = order_of([](Complex s) { return s; },
                                  [](double t) { return t * t * t; }, 3.0);
        double order_i = order_of([](Complex s) { return 1.0 / s; },
                                  [](double t) { return t * t; }, 1.0 / 3.0);
        report["order_differentiation"] = order_d;
        report["order_integration"] = order_i;
        pass = order_d >= 1.8 && order_d <= 2.2 && order_i >= 1.8 && order_i <= 2.2;
    } else if (suite == "calderon") {
        DipoleField dipole;
        dipole.source = Vec3(3.0, 0.0, 0.0);
        dipole.polarization = Vec3(0.0, 0.0, 1.0);
        dipole.s = ComplexFrequency{Complex(2.0, 0.0)};
        QuadratureConfig quad;
        json levels = json::array();
        std::vector<double> residuals;
        for (int div : {1, 2}) {
            TetMesh mesh = build_box_mesh({1, 1, 1}, {div, div, div});
            SurfaceMesh surf = extract_boundary(mesh);
            BoundarySpace bspace(surf);
            double r = calderon_projector_residual(dipole.s, bspace, quad, dipole, mesh);
            residuals.push_back(r);
            levels.push_back({{"divisions", div}, {"residual", r}});
        }
        report["levels"] = levels;
        report["mesh_hash"] = "";
        pass = residuals[1] * 1.5 <= residuals[0];
    } else {  // energy
        VerifySetup v(2, material);
        report["mesh_hash"] = mesh_hash(v.mesh);
        double dt = 0.9 * cfl_limit(v.ops, material).dt_max;
        const int steps = 100;
        MatrixSymbol symbol = [&](Complex s) {
            return assemble_B(ComplexFrequency{s}, *v.bspace, QuadratureConfig{}, material).B;
        };
        CQWeights weights = compute_weights(symbol, 2 * v.bspace->dim(), dt, steps, {});
        StepOperator stepop =
            make_step_operator(weights.weights[0], assemble_G(v.ops, material, 1.0), dt, 1.0);
        RunConfig rc;
        rc.dt = dt;
        rc.n_steps = steps;
        RunResult res = run(v.ops, weights, stepop, rc,
                            make_initial_state(*v.space, *v.bspace,
                                               bump_interpolant(*v.space, {0.5, 0.5, 0.5}, 0.3,
                                                                {1.0, 0.0, 0.0}, 1.0),
                                               {}));
        double e0 = res.record.calE_n.front();
        double emax = *std::max_element(res.record.calE_n.begin(), res.record.calE_n.end());
        report["calE0"] = e0;
        report["max_calE_n"] = emax;
        report["ratio"] = emax / e0;
        pass = !res.aborted && emax <= 1.05 * e0;
    }
    timer.stop();

    report["pass"] = pass;
    {
        std::ofstream os(out.path("report-" + suite + ".json"));
        os << report.dump(2) << "\n";
    }
    write_manifest(out, "verify " + suite, "", report.value("mesh_hash", ""), seed, timer);
    std::cout << "suite " << suite << ": " << (pass ? "pass" : "FAIL") << "\n";
    return pass ? 0 : 2;
}

int cmd_convergence(const std::string& kind, int levels, const std::string& outdir) {
    if (levels < 3) {
        std::cerr << "error: need >= 3 levels\n";
        return 1;
    }
    if ((kind == "space" || kind == "joint") && levels > 4) {
        std::cerr << "resource error: " << levels
                  << " spatial levels exceed the desk-scale cap (4)\n";
        return 3;
    }
    if (kind == "time" && levels > 5) {
        std::cerr << "resource error: " << levels << " time levels exceed the cap (5)\n";
        return 3;
    }
    PhaseTimer timer;
    timer.start("convergence");
    try {
        ConvergenceConfig cc;
        cc.kind = kind;
        if (kind == "time") {
            cc.time_levels = levels;
        } else {
            cc.space_divisions.clear();
            for (int d = 1; d <= levels; ++d) cc.space_divisions.push_back(d);
            cc.reference_divisions = levels + 1;
        }
        ConvergenceReport report = convergence_study(cc);
        timer.stop();

        Outputs out(outdir);
        {
            std::ofstream os(out.path("convergence-" + kind + ".csv"));
            os << "parameter,error\n";
            for (const auto& l : report.levels)
                os << format_double_17g(l.parameter) << "," << format_double_17g(l.error) << "\n";
        }
        json j;
        j["kind"] = report.kind;
        j["observed_order"] = report.observed_order;
        j["conclusive"] = report.conclusive;
        j["note"] = report.note;
        json lv = json::array();
        for (const auto& l : report.levels)
            lv.push_back({{"parameter", l.parameter}, {"error", l.error}});
        j["levels"] = lv;
        {
            std::ofstream os(out.path("report-convergence-" + kind + ".json"));
            os << j.dump(2) << "\n";
        }
        write_manifest(out, "convergence " + kind, "", "", 0, timer);
        std::cout << "convergence " << kind << ": order " << report.observed_order
                  << (report.conclusive ? "" : " (" + report.note + ")") << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) +
                 " - transparent-boundary Maxwell solver (dG interior + CQ boundary)"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run_cmd = app.add_subcommand("run", "execute a time-domain simulation");
    run_cmd->add_option("config", config_path, "flat key-value config file")->required();

    std::string suite, verify_out = ".";
    unsigned seed = 0;
    auto* verify_cmd = app.add_subcommand("verify", "run a verification suite");
    verify_cmd->add_option("suite", suite, "green|coercivity|cq|calderon|energy")->required();
    verify_cmd->add_option("--out", verify_out, "output directory");
    verify_cmd->add_option("--seed", seed, "random seed");

    std::string kind, conv_out = ".";
    int levels = 3;
    auto* conv_cmd = app.add_subcommand("convergence", "run a convergence study");
    conv_cmd->add_option("kind", kind, "space|time|joint")->required();
    conv_cmd->add_option("--levels", levels, "number of refinement levels (>= 3)");
    conv_cmd->add_option("--out", conv_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (run_cmd->parsed()) return cmd_run(config_path);
    if (verify_cmd->parsed()) return cmd_verify(suite, verify_out, seed);
    if (conv_cmd->parsed()) return cmd_convergence(kind, levels, conv_out);
    return 1;
}
