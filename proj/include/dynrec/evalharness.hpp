#pragma once

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dynrec/estimators.hpp"
#include "dynrec/synthgen.hpp"

namespace dynrec {

// --- metrics ---

/// (m1 m2)^{-1} ||estimate - truth||_F^2.
double mse_t(const Mat& estimate, const Mat& truth);

/// Per-t mean squared prediction error on held-out observations; empty
/// batches report as missing.
std::vector<std::optional<double>> test_mse(const std::vector<Mat>& estimates,
                                            const Panel& heldout);

/// Smoothing bias ||M_t^0 - sum_j w_j M_j^0||_F at the t the weights target.
double bias_diagnostic(const std::vector<Mat>& truth_grid, const Vec& weights, int t);

/// Spectral norm of sum_j w_j Delta_j with
/// Delta_j = (1/n_j) sum_i (y X - E[y X]); E[y X] comes from the truth:
/// M_j^0 / (m1 m2) for completion, sigma_x^2 M_j^0 for sensing.
double noise_diagnostic(const Panel& panel, const std::vector<Mat>& truth_grid,
                        const Vec& weights, const DesignFamily& family);

/// OLS of log y on log x. Throws DegenerateFit when all xs coincide.
std::pair<double, double> fit_log_slope(const std::vector<double>& xs,
                                        const std::vector<double>& ys);

/// Theorem-1 shape check: with lambda on the estimator normalization, per-t
/// bound (delta + sqrt(delta^2 + 2 lambda ||M_t^0||_1 / mu))^2 / (m1 m2).
struct LambdaContract {
    bool premise_holds = false;          // lambda >= 2 max_t noise diagnostic
    std::vector<double> bound_by_t;
    std::vector<double> mse_by_t;
    bool bound_holds = false;
};
LambdaContract lambda_contract_check(const Panel& panel,
                                     const std::vector<Mat>& truth_grid,
                                     const std::vector<Mat>& estimates, double h,
                                     const KernelSpec& kernel, double lambda_eq);

// --- rating-triplet ingestion ---

struct IngestResult {
    Panel train;
    Panel test;
    std::vector<long> row_ids;  // dense index -> original id
    std::vector<long> col_ids;
};

/// Reads "timestamp,row,col,value", bins rows into T equal-count batches in
/// timestamp order (remainder spread over the earliest bins), splits each bin
/// uniformly at `train_fraction` by seed, remaps ids densely.
IngestResult ingest_triplets(const std::string& path, int T, double train_fraction,
                             std::uint64_t seed);

void write_id_map(const std::string& path, const std::vector<long>& ids);

// --- experiment harness ---

enum class Scenario {
    RhoTauSweep,
    NoiseDependence,
    DesignDependence,
    BaselineComparison,
    RealData
};

Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

struct ExperimentConfig {
    Scenario scenario = Scenario::BaselineComparison;
    Eigen::Index m1 = 120;
    Eigen::Index m2 = 80;
    int rank = 5;
    int T = 50;
    double rho = 0.2;
    KernelKind kernel = KernelKind::Epanechnikov;
    double bandwidth = -1.0;  ///< < 0: plug-in rule
    double c_h = 1.0;
    std::string lambda_mode = "cv_anchor";  ///< fixed | cv | cv_anchor
    double lambda = 0.0;                    ///< used by mode "fixed"
    int cv_folds = 5;
    double sigma_xi = 1.0;
    int replicates = 3;
    std::uint64_t base_seed = 1;
    std::string out_dir = "out";
    double solver_tol = 1e-3;
    int solver_max_iters = 500;

    // scenario-specific knobs
    std::vector<double> ratio_groups = {5.0, 10.0, 20.0};
    std::vector<int> sweep_horizons = {50, 100};
    std::vector<double> betas = {0.0, 0.3, 0.6, 0.9};
    std::vector<double> alphas = {0.0, 0.3, 0.6, 0.9};
    std::vector<double> sigmas = {1.0, 2.0};
    double rho_baseline_static = 0.8;
    std::vector<std::string> estimators = {"dlr", "static", "twostep"};
    std::string data_csv;
    double train_fraction = 0.8;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

/// FNV-1a over the canonical JSON dump; stable across runs and platforms.
std::string config_hash(const ExperimentConfig& cfg);

struct ResultRecord {
    std::string scenario;
    std::string cell;  ///< grid point, e.g. "rho=0.2;T=50"
    std::string estimator;
    std::uint64_t seed = 0;
    std::vector<double> mse_by_t;
    double avg_mse = 0.0;
    long total_iters = 0;
    double wall_ms = 0.0;
    double lambda_used = 0.0;
    double bandwidth_used = 0.0;
};

struct ExperimentOutput {
    std::vector<ResultRecord> records;
    std::optional<double> slope;  // sweep scenarios only
};

/// Orchestrates generation, recovery and scoring per scenario; writes
/// mse_by_t.csv, summary.csv, plot-ready CSVs and a JSON sidecar under
/// cfg.out_dir. Fails fast with the offending stage named; accumulated rows
/// are flushed with a .partial suffix.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

// --- small CSV tables (exact string round-trip) ---

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

/// Thread cap: DYNREC_THREADS env var, else hardware concurrency.
int max_threads();

/// Index-parallel loop; results must be written to per-index slots. The first
/// exception is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

} // namespace dynrec
