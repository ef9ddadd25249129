// mlbest: command-line front end for simulation, estimation, bounds and the
// Monte-Carlo studies. Exit codes: 0 ok, 2 config, 3 data, 4 solver failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mlbest/crb.hpp"
#include "mlbest/error.hpp"
#include "mlbest/harness.hpp"

using namespace mlbest;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitSolver = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigError:
            return kExitConfig;
        case ErrorKind::NotApproxPSD:
        case ErrorKind::NoConvergence:
        case ErrorKind::SingularW:
        case ErrorKind::NonPositiveDiagonal:
        case ErrorKind::SingularCovariance:
            return kExitSolver;
        default:
            return kExitData;
    }
}

// Options shared by every subcommand: a config file plus key=value overrides.
struct ConfigSource {
    std::string file;
    std::vector<std::string> overrides;
    std::string case_path;

    ExperimentConfig load() const {
        ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config(file);
        for (const std::string& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "--set expects key=value, got '" + kv + "'");
            apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!case_path.empty()) {
            cfg.scenario = "case";
            cfg.case_path = case_path;
        }
        return cfg;
    }
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
    cmd->add_option("-c,--config", src.file, "Config file (key = value lines)");
    cmd->add_option("-s,--set", src.overrides, "Override a config key, e.g. --set trials=10")->allow_extra_args(false);
    cmd->add_option("--case", src.case_path, "Case file; implies scenario = case");
}

ScenarioGraph single_scenario(const ExperimentConfig& cfg) {
    std::vector<ScenarioGraph> graphs = build_scenarios(cfg);
    if (graphs.size() != 1) {
        throw Error(ErrorKind::ConfigError, "this command needs exactly one graph; set ws_buses to a single value");
    }
    return std::move(graphs.front());
}

// Noise level from --sigma2 / --snr, falling back to the first config entry.
double noise_level(const ExperimentConfig& cfg, const LaplacianPair& lp, const StatePrior& prior,
                   std::optional<double> sigma2, std::optional<double> snr) {
    if (sigma2 && snr) throw Error(ErrorKind::ConfigError, "give either --sigma2 or --snr");
    if (sigma2) return *sigma2;
    if (snr) return snr_to_noise_var(lp, prior, *snr);
    if (!cfg.sigma2.empty()) return cfg.sigma2.front();
    if (!cfg.snr_db.empty()) return snr_to_noise_var(lp, prior, cfg.snr_db.front());
    throw Error(ErrorKind::ConfigError, "no noise level: use --sigma2, --snr or the config");
}

json diagnostics_json(const Diagnostics& d) {
    json j;
    j["iterations"] = d.iterations;
    j["final_residual"] = d.final_residual;
    j["projection_residual"] = d.projection_residual;
    j["threshold_used"] = d.threshold_used;
    j["symmetry_residual"] = d.symmetry_residual;
    j["converged"] = d.converged;
    j["backtracks"] = d.backtracks;
    j["sigma2_shrinks"] = d.sigma2_shrinks;
    j["warnings"] = d.warnings;
    return j;
}

fs::path ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ML-BEST: blind estimation of power-grid states and topology"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    // simulate
    ConfigSource sim_src;
    std::string sim_out, sim_states;
    std::optional<double> sim_sigma2, sim_snr;
    std::optional<int> sim_samples;
    std::optional<std::uint64_t> sim_seed;
    auto* sim_cmd = app.add_subcommand("simulate", "Write simulated measurements for a graph");
    add_config_options(sim_cmd, sim_src);
    sim_cmd->add_option("-o,--out", sim_out, "Measurements CSV")->required();
    sim_cmd->add_option("--states", sim_states, "Also write the true states (M x N CSV)");
    sim_cmd->add_option("--sigma2", sim_sigma2, "Noise variance");
    sim_cmd->add_option("--snr", sim_snr, "SNR in dB");
    sim_cmd->add_option("-n,--samples", sim_samples, "Number of samples");
    sim_cmd->add_option("--seed", sim_seed, "Seed");

    // estimate
    ConfigSource est_src;
    std::string est_in, est_out_dir, est_method = "two_phase";
    std::optional<double> est_alpha;
    auto* est_cmd = app.add_subcommand("estimate", "Run ML-BEST on a measurements CSV");
    add_config_options(est_cmd, est_src);
    est_cmd->add_option("-i,--input", est_in, "Measurements CSV (bus_1..bus_M)")->required()->check(CLI::ExistingFile);
    est_cmd->add_option("-m,--method", est_method, "two_phase or augmented_lagrangian");
    est_cmd->add_option("--alpha", est_alpha, "Threshold factor (default 4/M)");
    est_cmd->add_option("-o,--out-dir", est_out_dir, "Write L_hat.csv and states.csv here");
    bool est_truth = false;
    est_cmd->add_flag("--compare", est_truth, "Score against the configured graph");

    // crb
    ConfigSource crb_src;
    std::optional<double> crb_sigma2, crb_snr;
    std::optional<int> crb_samples;
    std::string crb_fim_out;
    auto* crb_cmd = app.add_subcommand("crb", "Cramer-Rao bound for a graph, prior and noise level");
    add_config_options(crb_cmd, crb_src);
    crb_cmd->add_option("--sigma2", crb_sigma2, "Noise variance");
    crb_cmd->add_option("--snr", crb_snr, "SNR in dB");
    crb_cmd->add_option("-n,--samples", crb_samples, "Number of samples");
    crb_cmd->add_option("--fim-out", crb_fim_out, "Write the Fisher information matrix as CSV");

    // experiment
    ConfigSource exp_src;
    std::string exp_out_dir;
    std::optional<int> exp_workers;
    auto* exp_cmd = app.add_subcommand("experiment", "Monte-Carlo study from a config file");
    add_config_options(exp_cmd, exp_src);
    exp_cmd->add_option("-o,--out-dir", exp_out_dir, "Output directory (overrides output_dir)");
    exp_cmd->add_option("-j,--workers", exp_workers, "Worker threads (0 = all cores)");

    // bench
    ConfigSource bench_src;
    std::string bench_out;
    auto* bench_cmd = app.add_subcommand("bench", "Topology-recovery runtime versus M");
    add_config_options(bench_cmd, bench_src);
    bench_cmd->add_option("-o,--out", bench_out, "Write the table to this CSV as well");

    // validate
    ConfigSource val_src;
    double val_tol = 1e-9;
    auto* val_cmd = app.add_subcommand("validate", "Laplacian property report for a graph");
    add_config_options(val_cmd, val_src);
    val_cmd->add_option("--tol", val_tol, "Numerical tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*sim_cmd) {
            ExperimentConfig cfg = sim_src.load();
            const ScenarioGraph g = single_scenario(cfg);
            const StatePrior prior = StatePrior::isotropic(g.laplacian.bus_count(), cfg.prior_c);
            const double s2 = noise_level(cfg, g.laplacian, prior, sim_sigma2, sim_snr);
            const int n = sim_samples.value_or(cfg.samples.front());
            if (n < 1) throw Error(ErrorKind::ConfigError, "--samples must be positive");
            const std::uint64_t seed = sim_seed.value_or(cfg.seed);
            const Simulation sim = simulate(g.laplacian, prior, s2, n, seed);
            write_measurements(sim.measurements, sim_out);
            if (!sim_states.empty()) write_matrix_csv(sim.states, sim_states);
            json j;
            j["scenario"] = g.id;
            j["M"] = g.laplacian.bus_count();
            j["N"] = n;
            j["sigma2"] = s2;
            j["snr_db"] = noise_var_to_snr(g.laplacian, prior, s2);
            j["seed"] = seed;
            j["output"] = sim_out;
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (*est_cmd) {
            ExperimentConfig cfg = est_src.load();
            const MeasurementSet ms = read_measurements(est_in);
            const Eigen::Index m = ms.bus_count();
            const Method method = parse_method(est_method);
            const StatePrior prior = StatePrior::isotropic(m, cfg.prior_c);
            const double alpha = est_alpha.value_or(cfg.alpha_for(m));
            cfg.solver.validate();
            const EstimationResult r = ml_best(ms, prior, method, cfg.solver, alpha);
            json j;
            j["method"] = std::string(to_string(r.method));
            j["M"] = m;
            j["N"] = ms.sample_count();
            j["alpha"] = alpha;
            j["sigma2_hat"] = r.sigma2_hat;
            const LaplacianReport rep = validate_laplacian(r.L_hat, 1e-6);
            j["laplacian_valid"] = rep.core_properties();
            j["diagnostics"] = diagnostics_json(r.diagnostics);
            if (est_truth) {
                const ScenarioGraph g = single_scenario(cfg);
                if (g.laplacian.bus_count() != m) {
                    throw Error(ErrorKind::ShapeMismatch, "measurements have " + std::to_string(m) +
                                                              " buses, graph has " +
                                                              std::to_string(g.laplacian.bus_count()));
                }
                j["fscore"] = fscore(r.L_hat, g.laplacian.L, cfg.edge_tol);
                j["topology_mse"] = (vech(r.L_reduced_hat) - vech(g.laplacian.L_reduced)).squaredNorm();
            }
            if (!est_out_dir.empty()) {
                const fs::path dir = ensure_dir(est_out_dir);
                write_matrix_csv(r.L_hat, dir / "L_hat.csv");
                write_matrix_csv(r.states_hat, dir / "states.csv");
                j["output_dir"] = dir.string();
            }
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (*crb_cmd) {
            ExperimentConfig cfg = crb_src.load();
            const ScenarioGraph g = single_scenario(cfg);
            const StatePrior prior = StatePrior::isotropic(g.laplacian.bus_count(), cfg.prior_c);
            const double s2 = noise_level(cfg, g.laplacian, prior, crb_sigma2, crb_snr);
            const int n = crb_samples.value_or(cfg.samples.front());
            const CrbReport rep = crb(g.laplacian.L_reduced, prior.sigma_theta_reduced, s2, n);
            json j;
            j["scenario"] = g.id;
            j["M"] = g.laplacian.bus_count();
            j["N"] = n;
            j["sigma2"] = s2;
            j["topology_bound_trace"] = rep.topology_bound_trace;
            j["noise_var_bound"] = rep.noise_var_bound;
            json entries = json::array();
            const Vector b = rep.topology_bounds();
            for (std::size_t k = 0; k < rep.order.size(); ++k) {
                // reported with 1-based reduced indices, i.e. buses 2..M
                entries.push_back({{"row", rep.order[k].first + 2},
                                   {"col", rep.order[k].second + 2},
                                   {"bound", b(static_cast<Eigen::Index>(k))}});
            }
            j["entry_bounds"] = entries;
            if (!crb_fim_out.empty()) write_matrix_csv(rep.J, crb_fim_out);
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (*exp_cmd) {
            if (exp_src.file.empty()) throw Error(ErrorKind::ConfigError, "experiment needs --config");
            ExperimentConfig cfg = exp_src.load();
            if (!exp_out_dir.empty()) cfg.output_dir = exp_out_dir;
            if (exp_workers) cfg.workers = *exp_workers;
            cfg.validate();
            const ExperimentResult res = run_experiment(cfg);
            const fs::path dir = ensure_dir(cfg.output_dir);
            write_results(res.rows, dir / "results.csv");
            write_manifest(cfg, res, dir / "manifest.json");
            std::cerr << "wrote " << (dir / "results.csv").string() << " (" << res.rows.size() << " rows)\n";
            for (std::size_t r = 0; r < res.rows.size(); ++r) {
                if (res.flagged(r)) {
                    const MetricsRow& row = res.rows[r];
                    std::cerr << "flagged: " << row.scenario << " " << row.method << " N=" << row.N
                              << " sigma2=" << row.sigma2 << " failures=" << row.failures << "/"
                              << res.trial_counts[r] << "\n";
                }
            }
            return res.any_flagged() ? kExitSolver : 0;
        }

        if (*bench_cmd) {
            ExperimentConfig cfg = bench_src.load();
            const std::vector<BenchRow> rows = runtime_benchmark(cfg);
            const std::string table = format_bench(rows);
            std::cout << table;
            if (!bench_out.empty()) {
                const fs::path out(bench_out);
                if (out.has_parent_path()) ensure_dir(out.parent_path());
                std::ofstream(out) << table;
            }
            return 0;
        }

        if (*val_cmd) {
            ExperimentConfig cfg = val_src.load();
            int bad = 0;
            for (const ScenarioGraph& g : build_scenarios(cfg)) {
                const LaplacianReport r = validate_laplacian(g.laplacian.L, val_tol);
                json j;
                j["scenario"] = g.id;
                j["M"] = g.laplacian.bus_count();
                j["branches"] = g.graph.branches().size();
                j["symmetric"] = r.symmetric;
                j["null_space"] = r.null_space;
                j["p1_full_rank"] = r.p1_full_rank;
                j["p2_psd"] = r.p2_psd;
                j["p3_nonpositive_offdiag"] = r.p3_nonpositive_offdiag;
                j["p4_diag_dominant"] = r.p4_diag_dominant;
                j["p5_sparse"] = r.p5_sparse;
                j["reduced_offdiag_nonzeros"] = r.reduced_offdiag_nonzeros;
                j["reduced_offdiag_capacity"] = r.reduced_offdiag_capacity;
                j["violations"] = r.violations;
                std::cout << j.dump(2) << "\n";
                bad += r.core_properties() ? 0 : 1;
            }
            return bad ? kExitData : 0;
        }
    } catch (const Error& e) {
        std::cerr << "mlbest: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "mlbest: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
