#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "dynrec/designs.hpp"
#include "dynrec/kernels.hpp"
#include "dynrec/matcore.hpp"

namespace dynrec {

enum class GradientMode { ExactSecondMoment, Empirical };

struct SolverConfig {
    double lambda = 0.0;   ///< nuclear penalty (step threshold is 2 lambda / L_f)
    int max_iters = 500;
    double tol = 1e-3;     ///< stop on successive objective change
    GradientMode gradient_mode = GradientMode::ExactSecondMoment;
    std::optional<double> lipschitz_override;
};

struct SolveTrace {
    int iters_used = 0;
    std::vector<double> objective_path;  // length iters_used + 1
    double final_objective = 0.0;
    bool converged = false;
};

/// One target time with its kernel window: the indices with nonzero weight,
/// their weights (summing to 1), and the data term
/// sum_j (w_j / n_j) sum_i y_ji X_ji assembled once per (t, h). For
/// entry-indicator designs the weighted observation counts are also cached:
/// the empirical quadratic is entrywise there, so gradient and objective
/// evaluations reduce to Hadamard products.
struct WindowProblem {
    const Panel* panel = nullptr;
    int t = 0;
    std::vector<int> window_js;
    Vec window_weights;  // aligned with window_js
    Mat data_term;
    Mat entry_weights;  // completion only: sum_j (w_j/n_j) sum_i X_ji

    const std::vector<Observation>& batch(int j) const {
        return panel->batches[static_cast<std::size_t>(j)];
    }
};

/// Builds the window from a full weight vector (length T); zero weights and
/// empty batches are pruned from the window.
WindowProblem make_window(const Panel& panel, int t, const Vec& weights_full);

/// Step-size constant. Exact mode: 2 * largest eigenvalue of Sigma. Empirical
/// mode: 2 ||sum_j (w_j/n_j) sum_i ||X_ji||_F X_ji||_spectral.
double lipschitz_constant(const WindowProblem& w, GradientMode mode);

/// Half-gradient, matching the pseudocode convention (no leading factor 2):
/// empirical: sum_j (w_j/n_j) sum_i X_ji (<X_ji, n> - y_ji);
/// exact:     Sigma n - data_term.
Mat gradient(const Mat& n, const WindowProblem& w, GradientMode mode);

/// The objective recorded in traces and used by the stopping rule: the smooth
/// part whose gradient is `gradient` plus 2 lambda ||M||_nuclear. Additive
/// constants (sum y^2 terms) are dropped.
double objective(const Mat& m, const WindowProblem& w, const SolverConfig& cfg);

/// One accelerated step: momentum extrapolation with (s_prev, s_curr),
/// gradient step 1/l_f, singular value shrinkage by 2 lambda / l_f.
/// Returns the next iterate and s_next = (1 + sqrt(1 + 4 s_curr^2)) / 2.
std::pair<Mat, double> dfista_step(const Mat& m_prev, const Mat& m_curr, double s_prev,
                                   double s_curr, const WindowProblem& w,
                                   const SolverConfig& cfg, double l_f);

/// Full accelerated solve from `init`; stops when the objective change falls
/// below cfg.tol or after cfg.max_iters steps (converged=false, not an error).
std::pair<Mat, SolveTrace> solve_at(const WindowProblem& w, const Mat& init,
                                    const SolverConfig& cfg);

/// Initial iterate for time t: observed entries filled with the mean of their
/// responses for completion designs, the zero matrix otherwise.
Mat seed_init(const Panel& panel, int t);

/// Sweeps t = 0..T-1; warm_start seeds each solve with the previous output,
/// cold start reseeds per t. Kernel weights come from weights(t, T, h, k).
std::pair<std::vector<Mat>, std::vector<SolveTrace>> solve_path(
    const Panel& panel, double h, const KernelSpec& k, const SolverConfig& cfg,
    bool warm_start = true);

/// Traces serialize to CSV "t,iter,objective".
void write_traces_csv(const std::string& path, const std::vector<SolveTrace>& traces);

} // namespace dynrec
