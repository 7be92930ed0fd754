#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynrec/solver.hpp"

namespace dynrec {

/// Static is the degenerate-kernel special case of DLR; TwoStep smooths the
/// static outputs with the kernel weights.
enum class EstimatorKind { DLR, Static, TwoStep };

EstimatorKind estimator_from_string(const std::string& name);
std::string to_string(EstimatorKind k);

struct CvPlan {
    int folds = 5;
    std::vector<double> lambda_grid;  // sorted ascending
    std::uint64_t split_seed = 0;
};

/// Recovers the matrix path for the requested estimator. h and k are ignored
/// for Static.
std::vector<Mat> recover(const Panel& panel, EstimatorKind kind, double h,
                         const KernelSpec& k, const SolverConfig& cfg);

/// Same, also returning the per-t solve traces (the static stage's traces for
/// TwoStep).
std::pair<std::vector<Mat>, std::vector<SolveTrace>> recover_with_traces(
    const Panel& panel, EstimatorKind kind, double h, const KernelSpec& k,
    const SolverConfig& cfg);

struct CvResult {
    double lambda_star = 0.0;
    std::vector<double> scores;  // aligned with the grid
};

/// 5-fold style cross-validation for lambda: per-time-batch uniform fold
/// split by seed, mean squared prediction error on held-out folds averaged
/// over folds and times. Ties break toward the larger lambda. Batches with
/// fewer observations than folds go entirely to training in every fold.
CvResult cross_validate_lambda(const Panel& panel, EstimatorKind kind, double h,
                               const KernelSpec& k, const CvPlan& plan,
                               const SolverConfig& cfg);

/// Coarse-then-fine selection: runs CV on plan.lambda_grid to bracket the
/// range, then once more on an 8-point grid centered at the coarse winner
/// (shifted outward when the winner sits on a grid edge). Returns the fine
/// stage's plan and result.
std::pair<CvPlan, CvResult> cross_validate_lambda_refined(const Panel& panel,
                                                          EstimatorKind kind, double h,
                                                          const KernelSpec& k,
                                                          const CvPlan& plan,
                                                          const SolverConfig& cfg);

/// lambda = 2 c1 sigma_star sqrt(log(m1+m2) / (n ceil(T h))), the CV-grid
/// anchor; ceil(T h) is floored at 1 so h = 0 reduces to the static scale.
double theory_lambda(const DesignFamily& family, std::int64_t n, int T, double h,
                     double sigma_star, double c1 = 1.0);

/// Eight log-spaced multiples 10^{-2} .. 10^{1.5} of the anchor.
std::vector<double> default_lambda_grid(double anchor);

void write_cv_report(const std::string& path, const CvPlan& plan, const CvResult& res);

} // namespace dynrec
