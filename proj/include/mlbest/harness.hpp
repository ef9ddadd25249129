#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlbest/dcmodel.hpp"
#include "mlbest/estimators.hpp"
#include "mlbest/graph.hpp"

namespace mlbest {

inline constexpr const char* kVersion = "1.0.0";

struct WattsStrogatzSpec {
    std::vector<int> bus_counts{10, 20, 30, 40, 50};
    int mean_degree = 4;
    double rewire_prob = 0.1;
    double frobenius_norm = 5.0;
};

/// Monte-Carlo experiment description. Parsed from `key = value` text, one
/// key per line, `#` starts a comment, lists are comma separated:
///
///     scenario = ieee14            # or watts_strogatz
///     case = cases/ieee14.case
///     ws_buses = 10,20,30
///     snr_db = 5,10,15             # exclusive with sigma2
///     samples = 200,1500
///     trials = 50
///     methods = two_phase,augmented_lagrangian
///     alpha = auto                 # auto means 4/M
///
/// The full key list is in README.md.
struct ExperimentConfig {
    std::string scenario = "ieee14";
    std::filesystem::path case_path = "cases/ieee14.case";
    WattsStrogatzSpec ws;
    std::vector<double> snr_db;
    std::vector<double> sigma2;
    std::vector<int> samples{200};
    int mc_trials = 50;
    std::vector<Method> methods{Method::two_phase, Method::augmented_lagrangian};
    std::optional<double> alpha;  // nullopt: 4/M
    double prior_c = 1.0;
    SolverSettings solver;
    std::uint64_t seed = 1;
    int workers = 0;  // 0: hardware concurrency
    std::filesystem::path output_dir = "results";
    bool record_runtime = false;  // wall-clock in the CSV breaks byte-identical reruns
    double edge_tol = kDefaultEdgeTol;

    void validate() const;  // throws ConfigError
    double alpha_for(Eigen::Index bus_count) const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key = value` assignment; used for files and CLI overrides.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Canonical `key = value` rendering; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& cfg);

/// One ground-truth topology of an experiment.
struct ScenarioGraph {
    std::string id;
    WeightedGraph graph;
    LaplacianPair laplacian;
};

std::vector<ScenarioGraph> build_scenarios(const ExperimentConfig& cfg);

struct TrialRecord {
    std::size_t row = 0;  // index into ExperimentResult::rows
    int trial = 0;
    bool ok = false;
    std::string error;
    double topology_mse = 0.0;
    double fscore = 0.0;
    double state_mse = 0.0;
    double oracle_state_mse = 0.0;
    double sigma2_hat = 0.0;
    double runtime_s = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct MetricsRow {
    std::string scenario;
    std::string method;
    int M = 0;
    int N = 0;
    double snr_db = 0.0;
    double sigma2 = 0.0;
    double topology_mse = 0.0;
    double crb_trace = 0.0;
    double fscore = 0.0;
    double state_mse = 0.0;
    double oracle_state_mse = 0.0;
    double sigma2_hat = 0.0;
    double runtime_s = 0.0;
    int failures = 0;

    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct ExperimentResult {
    std::vector<MetricsRow> rows;
    std::vector<TrialRecord> trials;  // grouped by row, trial-ordered
    std::vector<int> trial_counts;    // per row

    /// More than 5% of the trials of the row failed.
    bool flagged(std::size_t row) const;
    bool any_flagged() const;
    /// Successful trial records of one row.
    std::vector<const TrialRecord*> row_trials(std::size_t row) const;
};

/// Runs every (scenario, noise level, N) point for mc_trials trials and every
/// method. Both methods see the same simulated data within a trial. Trials
/// run on cfg.workers threads; results do not depend on the worker count.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct BenchRow {
    std::string scenario;
    std::string method;
    int M = 0;
    int N = 0;
    double median_runtime_s = 0.0;
    double mean_runtime_s = 0.0;
    int trials = 0;
    int failures = 0;
    double median_iterations = 0.0;
};

/// Times topology recovery alone (covariance and sigma2 are prepared outside
/// the timed region) for each scenario, N and method; single-threaded.
std::vector<BenchRow> runtime_benchmark(const ExperimentConfig& cfg);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);
double median(std::vector<double> v);

inline constexpr const char* kResultsHeader =
    "scenario,method,M,N,snr_db,sigma2,topology_mse,crb_trace,fscore,state_mse,oracle_state_mse,sigma2_hat,"
    "runtime_s,failures";

std::string format_results(const std::vector<MetricsRow>& rows);
void write_results(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> parse_results(const std::string& text);
std::vector<MetricsRow> read_results(const std::filesystem::path& path);

/// JSON manifest: config echo, seed, version, per-row trial and failure counts.
std::string format_manifest(const ExperimentConfig& cfg, const ExperimentResult& result);
void write_manifest(const ExperimentConfig& cfg, const ExperimentResult& result, const std::filesystem::path& path);

std::string format_bench(const std::vector<BenchRow>& rows);

/// Measurements CSV: header bus_1..bus_M, one row per sample.
void write_measurements(const MeasurementSet& ms, const std::filesystem::path& path);
MeasurementSet read_measurements(const std::filesystem::path& path);
void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);

}  // namespace mlbest
