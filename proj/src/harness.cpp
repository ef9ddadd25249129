#include "mlbest/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mlbest/crb.hpp"
#include "mlbest/error.hpp"
#include "mlbest/rng.hpp"

namespace mlbest {

namespace {

constexpr std::uint64_t kGraphStream = 0x6772617068ULL;  // "graph"
constexpr std::uint64_t kTrialStream = 0x747269616cULL;  // "trial"
constexpr std::uint64_t kBenchStream = 0x62656e6368ULL;  // "bench"
constexpr double kFlagFraction = 0.05;

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

[[noreturn]] void config_fail(const std::string& key, const std::string& what) {
    throw Error(ErrorKind::ConfigError, key + ": " + what);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        config_fail(key, "expected a number, got '" + v + "'");
    }
    if (used != v.size()) config_fail(key, "expected a number, got '" + v + "'");
    return out;
}

long long to_integer(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        config_fail(key, "expected an integer, got '" + v + "'");
    }
    if (used != v.size()) config_fail(key, "expected an integer, got '" + v + "'");
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    const long long x = to_integer(key, v);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) config_fail(key, "out of range");
    return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    config_fail(key, "expected true/false, got '" + v + "'");
}

template <class T, class F>
std::vector<T> to_list(const std::string& key, const std::string& v, F convert) {
    std::vector<T> out;
    for (const std::string& item : split(v, ',')) {
        if (item.empty()) config_fail(key, "empty list entry");
        out.push_back(convert(key, item));
    }
    if (out.empty()) config_fail(key, "empty list");
    return out;
}

std::string fmt(double x) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << x;
    return os.str();
}

template <class T, class F>
std::string join(const std::vector<T>& v, F render) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += render(v[i]);
    }
    return out;
}

struct Point {
    std::size_t scenario = 0;
    double sigma2 = 0.0;
    double snr_db = 0.0;
    int samples = 0;
};

std::vector<Point> enumerate_points(const ExperimentConfig& cfg, const std::vector<ScenarioGraph>& graphs,
                                    const std::vector<StatePrior>& priors) {
    std::vector<Point> points;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const LaplacianPair& lp = graphs[g].laplacian;
        std::vector<std::pair<double, double>> levels;  // (sigma2, snr_db)
        if (!cfg.snr_db.empty()) {
            for (double snr : cfg.snr_db) levels.emplace_back(snr_to_noise_var(lp, priors[g], snr), snr);
        } else {
            for (double s2 : cfg.sigma2) levels.emplace_back(s2, noise_var_to_snr(lp, priors[g], s2));
        }
        for (const auto& [s2, snr] : levels) {
            for (int n : cfg.samples) points.push_back({g, s2, snr, n});
        }
    }
    return points;
}

template <class Task>
void run_parallel(std::size_t count, int workers, Task task) {
    unsigned threads = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                task(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(count);
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

double mean_of(const std::vector<const TrialRecord*>& ok, double TrialRecord::*field) {
    if (ok.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const TrialRecord* r : ok) s += r->*field;
    return s / static_cast<double>(ok.size());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigError, what); };
    if (scenario != "ieee14" && scenario != "case" && scenario != "watts_strogatz") {
        fail("scenario must be ieee14, case or watts_strogatz");
    }
    if (scenario == "watts_strogatz") {
        if (ws.bus_counts.empty()) fail("ws_buses is empty");
        for (int m : ws.bus_counts) {
            if (m < 3) fail("ws_buses entries must be at least 3");
        }
        if (ws.mean_degree < 2 || ws.mean_degree % 2) fail("ws_degree must be even and >= 2");
        if (!(ws.rewire_prob >= 0.0 && ws.rewire_prob <= 1.0)) fail("ws_rewire must lie in [0, 1]");
        if (!(ws.frobenius_norm > 0.0)) fail("ws_frobenius must be positive");
    }
    if (snr_db.empty() == sigma2.empty()) fail("exactly one of snr_db and sigma2 must be given");
    for (double s : sigma2) {
        if (!(s > 0.0) || !std::isfinite(s)) fail("sigma2 entries must be positive");
    }
    for (double s : snr_db) {
        if (!std::isfinite(s)) fail("snr_db entries must be finite");
    }
    if (samples.empty()) fail("samples is empty");
    for (int n : samples) {
        if (n < 1) fail("samples entries must be positive");
    }
    if (mc_trials < 1) fail("trials must be >= 1");
    if (methods.empty()) fail("methods is empty");
    if (alpha && !(*alpha >= 0.0 && *alpha < 1.0)) fail("alpha must lie in [0, 1)");
    if (!(prior_c > 0.0)) fail("prior_c must be positive");
    if (workers < 0) fail("workers must be >= 0");
    if (!(edge_tol > 0.0)) fail("edge_tol must be positive");
    solver.validate();
}

double ExperimentConfig::alpha_for(Eigen::Index bus_count) const {
    return alpha ? *alpha : 4.0 / static_cast<double>(bus_count);
}

void apply_setting(ExperimentConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string v = trim(raw_value);
    if (v.empty()) config_fail(key, "missing value");
    if (key == "scenario") cfg.scenario = v;
    else if (key == "case") cfg.case_path = v;
    else if (key == "ws_buses") cfg.ws.bus_counts = to_list<int>(key, v, to_int);
    else if (key == "ws_degree") cfg.ws.mean_degree = to_int(key, v);
    else if (key == "ws_rewire") cfg.ws.rewire_prob = to_double(key, v);
    else if (key == "ws_frobenius") cfg.ws.frobenius_norm = to_double(key, v);
    else if (key == "snr_db") { cfg.snr_db = to_list<double>(key, v, to_double); cfg.sigma2.clear(); }
    else if (key == "sigma2") { cfg.sigma2 = to_list<double>(key, v, to_double); cfg.snr_db.clear(); }
    else if (key == "samples") cfg.samples = to_list<int>(key, v, to_int);
    else if (key == "trials") cfg.mc_trials = to_int(key, v);
    else if (key == "methods") {
        cfg.methods.clear();
        for (const std::string& m : split(v, ',')) cfg.methods.push_back(parse_method(m));
    }
    else if (key == "alpha") {
        if (v == "auto") cfg.alpha.reset();
        else cfg.alpha = to_double(key, v);
    }
    else if (key == "prior_c") cfg.prior_c = to_double(key, v);
    else if (key == "seed") {
        if (v.find('-') != std::string::npos) config_fail(key, "must be nonnegative");
        std::size_t used = 0;
        try {
            cfg.seed = std::stoull(v, &used);
        } catch (const std::exception&) {
            config_fail(key, "expected an unsigned integer");
        }
        if (used != v.size()) config_fail(key, "expected an unsigned integer");
    }
    else if (key == "workers") cfg.workers = to_int(key, v);
    else if (key == "output_dir") cfg.output_dir = v;
    else if (key == "record_runtime") cfg.record_runtime = to_bool(key, v);
    else if (key == "edge_tol") cfg.edge_tol = to_double(key, v);
    else if (key == "center") cfg.solver.center = to_bool(key, v);
    else if (key == "eta") cfg.solver.eta = to_double(key, v);
    else if (key == "gamma") cfg.solver.gamma = to_double(key, v);
    else if (key == "max_iters") cfg.solver.max_iters = to_int(key, v);
    else if (key == "epsilon") cfg.solver.epsilon = to_double(key, v);
    else if (key == "max_backtracks") cfg.solver.max_backtracks = to_int(key, v);
    else if (key == "dykstra_max_iters") cfg.solver.dykstra_max_iters = to_int(key, v);
    else if (key == "dykstra_tol") cfg.solver.dykstra_tol = to_double(key, v);
    else if (key == "clip_tol") cfg.solver.clip_tol = to_double(key, v);
    else config_fail(key, "unknown key");
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
        }
        try {
            apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(ErrorKind::ConfigError, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    return parse_config(text);
}

std::string render_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    auto ints = [](int x) { return std::to_string(x); };
    os << "scenario = " << cfg.scenario << "\n";
    os << "case = " << cfg.case_path.generic_string() << "\n";
    os << "ws_buses = " << join(cfg.ws.bus_counts, ints) << "\n";
    os << "ws_degree = " << cfg.ws.mean_degree << "\n";
    os << "ws_rewire = " << fmt(cfg.ws.rewire_prob) << "\n";
    os << "ws_frobenius = " << fmt(cfg.ws.frobenius_norm) << "\n";
    if (!cfg.snr_db.empty()) os << "snr_db = " << join(cfg.snr_db, fmt) << "\n";
    if (!cfg.sigma2.empty()) os << "sigma2 = " << join(cfg.sigma2, fmt) << "\n";
    os << "samples = " << join(cfg.samples, ints) << "\n";
    os << "trials = " << cfg.mc_trials << "\n";
    os << "methods = " << join(cfg.methods, [](Method m) { return std::string(to_string(m)); }) << "\n";
    os << "alpha = " << (cfg.alpha ? fmt(*cfg.alpha) : std::string("auto")) << "\n";
    os << "prior_c = " << fmt(cfg.prior_c) << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "workers = " << cfg.workers << "\n";
    os << "output_dir = " << cfg.output_dir.generic_string() << "\n";
    os << "record_runtime = " << (cfg.record_runtime ? "true" : "false") << "\n";
    os << "edge_tol = " << fmt(cfg.edge_tol) << "\n";
    os << "center = " << (cfg.solver.center ? "true" : "false") << "\n";
    os << "eta = " << fmt(cfg.solver.eta) << "\n";
    os << "gamma = " << fmt(cfg.solver.gamma) << "\n";
    os << "max_iters = " << cfg.solver.max_iters << "\n";
    os << "epsilon = " << fmt(cfg.solver.epsilon) << "\n";
    os << "max_backtracks = " << cfg.solver.max_backtracks << "\n";
    os << "dykstra_max_iters = " << cfg.solver.dykstra_max_iters << "\n";
    os << "dykstra_tol = " << fmt(cfg.solver.dykstra_tol) << "\n";
    os << "clip_tol = " << fmt(cfg.solver.clip_tol) << "\n";
    return os.str();
}

// ---------------------------------------------------------------- experiment

std::vector<ScenarioGraph> build_scenarios(const ExperimentConfig& cfg) {
    std::vector<ScenarioGraph> out;
    if (cfg.scenario == "watts_strogatz") {
        for (int m : cfg.ws.bus_counts) {
            const std::uint64_t seed = derive_seed(cfg.seed, {kGraphStream, static_cast<std::uint64_t>(m)});
            WeightedGraph g = watts_strogatz(m, cfg.ws.mean_degree, cfg.ws.rewire_prob, WeightRange{},
                                             cfg.ws.frobenius_norm, seed);
            LaplacianPair lp = laplacian_from_graph(g);
            out.push_back({"ws_M" + std::to_string(m), std::move(g), std::move(lp)});
        }
    } else {
        WeightedGraph g = load_case(cfg.case_path);
        LaplacianPair lp = laplacian_from_graph(g);
        std::string id = cfg.case_path.stem().string();
        if (id.empty()) id = "case";
        out.push_back({id, std::move(g), std::move(lp)});
    }
    return out;
}

bool ExperimentResult::flagged(std::size_t row) const {
    const int trials = trial_counts.at(row);
    return static_cast<double>(rows.at(row).failures) > kFlagFraction * static_cast<double>(trials);
}

bool ExperimentResult::any_flagged() const {
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (flagged(r)) return true;
    }
    return false;
}

std::vector<const TrialRecord*> ExperimentResult::row_trials(std::size_t row) const {
    std::vector<const TrialRecord*> out;
    for (const TrialRecord& t : trials) {
        if (t.row == row && t.ok) out.push_back(&t);
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<ScenarioGraph> graphs = build_scenarios(cfg);
    std::vector<StatePrior> priors;
    for (const ScenarioGraph& g : graphs) priors.push_back(StatePrior::isotropic(g.laplacian.bus_count(), cfg.prior_c));
    for (const ScenarioGraph& g : graphs) {
        for (int n : cfg.samples) {
            if (n < g.laplacian.bus_count() - 1) {
                throw Error(ErrorKind::ConfigError, "samples=" + std::to_string(n) + " is below M-1 for " + g.id);
            }
        }
    }
    const std::vector<Point> points = enumerate_points(cfg, graphs, priors);
    const std::size_t n_methods = cfg.methods.size();
    const auto trials = static_cast<std::size_t>(cfg.mc_trials);

    ExperimentResult result;
    result.rows.resize(points.size() * n_methods);
    result.trial_counts.assign(result.rows.size(), cfg.mc_trials);
    result.trials.resize(result.rows.size() * trials);

    std::vector<double> crb_traces(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        const Point& pt = points[p];
        const LaplacianPair& lp = graphs[pt.scenario].laplacian;
        crb_traces[p] = crb(lp.L_reduced, priors[pt.scenario].sigma_theta_reduced, pt.sigma2, pt.samples)
                            .topology_bound_trace;
    }

    run_parallel(points.size() * trials, cfg.workers, [&](std::size_t task) {
        const std::size_t p = task / trials;
        const std::size_t t = task % trials;
        const Point& pt = points[p];
        const LaplacianPair& lp = graphs[pt.scenario].laplacian;
        const StatePrior& prior = priors[pt.scenario];
        const Eigen::Index m = lp.bus_count();
        const double scale = 1.0 / (static_cast<double>(m) * pt.samples);

        auto record = [&](std::size_t method) -> TrialRecord& {
            TrialRecord& r = result.trials[(p * n_methods + method) * trials + t];
            r.row = p * n_methods + method;
            r.trial = static_cast<int>(t);
            return r;
        };

        Simulation sim;
        double oracle_mse = 0.0;
        try {
            sim = simulate(lp, prior, pt.sigma2, pt.samples, derive_seed(cfg.seed, {kTrialStream, p, t}));
            const Matrix oracle = mmse_states(sim.measurements.P, lp.L, prior.sigma_theta, pt.sigma2);
            oracle_mse = (oracle - sim.states).squaredNorm() * scale;
        } catch (const Error& e) {
            for (std::size_t k = 0; k < n_methods; ++k) record(k).error = e.what();
            return;
        }
        const Vector truth = vech(lp.L_reduced);
        for (std::size_t k = 0; k < n_methods; ++k) {
            TrialRecord& r = record(k);
            try {
                const auto start = std::chrono::steady_clock::now();
                const EstimationResult est =
                    ml_best(sim.measurements, prior, cfg.methods[k], cfg.solver, cfg.alpha_for(m));
                const auto stop = std::chrono::steady_clock::now();
                r.runtime_s = std::chrono::duration<double>(stop - start).count();
                r.topology_mse = (vech(est.L_reduced_hat) - truth).squaredNorm();
                r.fscore = fscore(est.L_hat, lp.L, cfg.edge_tol);
                r.state_mse = (est.states_hat - sim.states).squaredNorm() * scale;
                r.oracle_state_mse = oracle_mse;
                r.sigma2_hat = est.sigma2_hat;
                r.iterations = est.diagnostics.iterations;
                r.converged = est.diagnostics.converged;
                r.ok = std::isfinite(r.topology_mse) && std::isfinite(r.state_mse);
                if (!r.ok) r.error = "non-finite metrics";
            } catch (const Error& e) {
                r.ok = false;
                r.error = e.what();
            }
        }
    });

    for (std::size_t p = 0; p < points.size(); ++p) {
        const Point& pt = points[p];
        const ScenarioGraph& g = graphs[pt.scenario];
        for (std::size_t k = 0; k < n_methods; ++k) {
            const std::size_t row = p * n_methods + k;
            const std::vector<const TrialRecord*> ok = result.row_trials(row);
            MetricsRow& r = result.rows[row];
            r.scenario = g.id;
            r.method = std::string(to_string(cfg.methods[k]));
            r.M = static_cast<int>(g.laplacian.bus_count());
            r.N = pt.samples;
            r.snr_db = pt.snr_db;
            r.sigma2 = pt.sigma2;
            r.crb_trace = crb_traces[p];
            r.topology_mse = mean_of(ok, &TrialRecord::topology_mse);
            r.fscore = mean_of(ok, &TrialRecord::fscore);
            r.state_mse = mean_of(ok, &TrialRecord::state_mse);
            r.oracle_state_mse = mean_of(ok, &TrialRecord::oracle_state_mse);
            r.sigma2_hat = mean_of(ok, &TrialRecord::sigma2_hat);
            r.runtime_s = cfg.record_runtime ? mean_of(ok, &TrialRecord::runtime_s) : 0.0;
            r.failures = cfg.mc_trials - static_cast<int>(ok.size());
        }
    }
    return result;
}

// ---------------------------------------------------------------- benchmark

std::vector<BenchRow> runtime_benchmark(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<ScenarioGraph> graphs = build_scenarios(cfg);
    std::vector<StatePrior> priors;
    for (const ScenarioGraph& g : graphs) priors.push_back(StatePrior::isotropic(g.laplacian.bus_count(), cfg.prior_c));
    const std::vector<Point> points = enumerate_points(cfg, graphs, priors);

    std::vector<BenchRow> out;
    for (std::size_t p = 0; p < points.size(); ++p) {
        const Point& pt = points[p];
        const ScenarioGraph& g = graphs[pt.scenario];
        const StatePrior& prior = priors[pt.scenario];
        std::vector<std::vector<double>> times(cfg.methods.size());
        std::vector<std::vector<double>> iters(cfg.methods.size());
        std::vector<int> failures(cfg.methods.size(), 0);
        for (int t = 0; t < cfg.mc_trials; ++t) {
            const Simulation sim = simulate(g.laplacian, prior, pt.sigma2, pt.samples,
                                            derive_seed(cfg.seed, {kBenchStream, p, static_cast<std::uint64_t>(t)}));
            const MeasurementSet data = cfg.solver.center ? center(sim.measurements) : sim.measurements;
            const CovariancePair cov = sample_covariance(data);
            const double s2 = estimate_noise_variance(cov.full);
            for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
                try {
                    const auto start = std::chrono::steady_clock::now();
                    const RecoveryResult rec =
                        cfg.methods[k] == Method::two_phase
                            ? two_phase_recovery(cov.reduced, prior.sigma_theta_reduced, s2, cfg.solver)
                            : augmented_lagrangian_recovery(cov.reduced, prior.sigma_theta_reduced, s2, cfg.solver);
                    const auto stop = std::chrono::steady_clock::now();
                    times[k].push_back(std::chrono::duration<double>(stop - start).count());
                    iters[k].push_back(rec.iterations);
                } catch (const Error&) {
                    ++failures[k];
                }
            }
        }
        for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
            BenchRow r;
            r.scenario = g.id;
            r.method = std::string(to_string(cfg.methods[k]));
            r.M = static_cast<int>(g.laplacian.bus_count());
            r.N = pt.samples;
            r.trials = cfg.mc_trials;
            r.failures = failures[k];
            if (!times[k].empty()) {
                r.median_runtime_s = median(times[k]);
                r.mean_runtime_s = std::accumulate(times[k].begin(), times[k].end(), 0.0) / times[k].size();
                r.median_iterations = median(iters[k]);
            } else {
                r.median_runtime_s = r.mean_runtime_s = r.median_iterations = std::numeric_limits<double>::quiet_NaN();
            }
            out.push_back(r);
        }
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::ShapeMismatch, "slope needs >= 2 paired points");
    double mx = 0.0, my = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

// ---------------------------------------------------------------- serialization

std::string format_results(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << kResultsHeader << "\n";
    for (const MetricsRow& r : rows) {
        os << r.scenario << ',' << r.method << ',' << r.M << ',' << r.N << ',' << fmt(r.snr_db) << ',' << fmt(r.sigma2)
           << ',' << fmt(r.topology_mse) << ',' << fmt(r.crb_trace) << ',' << fmt(r.fscore) << ','
           << fmt(r.state_mse) << ',' << fmt(r.oracle_state_mse) << ',' << fmt(r.sigma2_hat) << ','
           << fmt(r.runtime_s) << ',' << r.failures << "\n";
    }
    return os.str();
}

void write_results(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
    write_file(path, format_results(rows));
}

std::vector<MetricsRow> parse_results(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::vector<MetricsRow> rows;
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::ParseError, "results line " + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(in, line) || trim(line) != kResultsHeader) {
        line_no = 1;
        fail("unexpected header");
    }
    line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> f = split(trim(line), ',');
        if (f.size() != 14) fail("expected 14 fields");
        try {
            MetricsRow r;
            r.scenario = f[0];
            r.method = f[1];
            r.M = to_int("M", f[2]);
            r.N = to_int("N", f[3]);
            r.snr_db = to_double("snr_db", f[4]);
            r.sigma2 = to_double("sigma2", f[5]);
            r.topology_mse = to_double("topology_mse", f[6]);
            r.crb_trace = to_double("crb_trace", f[7]);
            r.fscore = to_double("fscore", f[8]);
            r.state_mse = to_double("state_mse", f[9]);
            r.oracle_state_mse = to_double("oracle_state_mse", f[10]);
            r.sigma2_hat = to_double("sigma2_hat", f[11]);
            r.runtime_s = to_double("runtime_s", f[12]);
            r.failures = to_int("failures", f[13]);
            rows.push_back(r);
        } catch (const Error& e) {
            fail(e.what());
        }
    }
    return rows;
}

std::vector<MetricsRow> read_results(const std::filesystem::path& path) { return parse_results(read_file(path)); }

std::string format_manifest(const ExperimentConfig& cfg, const ExperimentResult& result) {
    nlohmann::ordered_json j;
    j["tool"] = "mlbest";
    j["version"] = kVersion;
    j["seed"] = cfg.seed;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::istringstream in(render_config(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        if (key == "workers" || key == "output_dir") continue;  // results do not depend on these
        config[key] = trim(line.substr(eq + 1));
    }
    j["config"] = config;
    j["columns"] = kResultsHeader;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < result.rows.size(); ++r) {
        const MetricsRow& m = result.rows[r];
        nlohmann::ordered_json row;
        row["scenario"] = m.scenario;
        row["method"] = m.method;
        row["M"] = m.M;
        row["N"] = m.N;
        row["sigma2"] = m.sigma2;
        row["trials"] = result.trial_counts[r];
        row["failures"] = m.failures;
        row["flagged"] = result.flagged(r);
        rows.push_back(row);
    }
    j["rows"] = rows;
    j["any_flagged"] = result.any_flagged();
    return j.dump(2) + "\n";
}

void write_manifest(const ExperimentConfig& cfg, const ExperimentResult& result, const std::filesystem::path& path) {
    write_file(path, format_manifest(cfg, result));
}

std::string format_bench(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "scenario,method,M,N,median_runtime_s,mean_runtime_s,median_iterations,trials,failures\n";
    for (const BenchRow& r : rows) {
        os << r.scenario << ',' << r.method << ',' << r.M << ',' << r.N << ',' << fmt(r.median_runtime_s) << ','
           << fmt(r.mean_runtime_s) << ',' << fmt(r.median_iterations) << ',' << r.trials << ',' << r.failures
           << "\n";
    }
    return os.str();
}

void write_measurements(const MeasurementSet& ms, const std::filesystem::path& path) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < ms.bus_count(); ++i) os << (i ? "," : "") << "bus_" << i + 1;
    os << "\n";
    for (Eigen::Index n = 0; n < ms.sample_count(); ++n) {
        for (Eigen::Index i = 0; i < ms.bus_count(); ++i) os << (i ? "," : "") << fmt(ms.P(i, n));
        os << "\n";
    }
    write_file(path, os.str());
}

MeasurementSet read_measurements(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    int line_no = 1;
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::ParseError, path.string() + " line " + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(in, line)) fail("empty file");
    const std::vector<std::string> header = split(trim(line), ',');
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] != "bus_" + std::to_string(i + 1)) fail("header must be bus_1..bus_M");
    }
    const auto m = static_cast<Eigen::Index>(header.size());
    std::vector<double> values;
    Eigen::Index samples = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> f = split(trim(line), ',');
        if (static_cast<Eigen::Index>(f.size()) != m) fail("expected " + std::to_string(m) + " fields");
        for (const std::string& s : f) {
            try {
                values.push_back(to_double("value", s));
            } catch (const Error&) {
                fail("bad number '" + s + "'");
            }
        }
        ++samples;
    }
    MeasurementSet ms;
    ms.P = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(),
                                                                                                     samples, m)
               .transpose();
    return ms;
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << fmt(m(i, j));
        os << "\n";
    }
    write_file(path, os.str());
}

}  // namespace mlbest
