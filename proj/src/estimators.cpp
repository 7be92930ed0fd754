#include "dynrec/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace dynrec {

EstimatorKind estimator_from_string(const std::string& name) {
    if (name == "dlr") return EstimatorKind::DLR;
    if (name == "static") return EstimatorKind::Static;
    if (name == "twostep") return EstimatorKind::TwoStep;
    throw Error("unknown estimator: " + name);
}

std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::DLR: return "dlr";
        case EstimatorKind::Static: return "static";
        case EstimatorKind::TwoStep: return "twostep";
    }
    return "?";
}

std::pair<std::vector<Mat>, std::vector<SolveTrace>> recover_with_traces(
    const Panel& panel, EstimatorKind kind, double h, const KernelSpec& k,
    const SolverConfig& cfg) {
    switch (kind) {
        case EstimatorKind::DLR:
            return solve_path(panel, h, k, cfg, true);
        case EstimatorKind::Static:
            return solve_path(panel, 0.0, KernelSpec::degenerate(), cfg, true);
        case EstimatorKind::TwoStep: {
            auto [statics, traces] =
                solve_path(panel, 0.0, KernelSpec::degenerate(), cfg, true);
            std::vector<Mat> out;
            out.reserve(statics.size());
            for (int t = 0; t < panel.T; ++t) {
                Vec w = weights(t, panel.T, h, k);
                Mat m = Mat::Zero(panel.m1, panel.m2);
                for (int j = 0; j < panel.T; ++j)
                    if (w(j) != 0.0) m += w(j) * statics[static_cast<std::size_t>(j)];
                out.push_back(std::move(m));
            }
            return {std::move(out), std::move(traces)};
        }
    }
    throw Error("unreachable");
}

std::vector<Mat> recover(const Panel& panel, EstimatorKind kind, double h,
                         const KernelSpec& k, const SolverConfig& cfg) {
    return recover_with_traces(panel, kind, h, k, cfg).first;
}

namespace {

// Fold labels per observation of one batch; -1 marks "always train" for
// batches smaller than the fold count.
std::vector<int> fold_labels(std::size_t n, int folds, std::mt19937_64& rng) {
    std::vector<int> labels(n, -1);
    if (n < static_cast<std::size_t>(folds)) return labels;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t pos = 0; pos < n; ++pos)
        labels[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));
    return labels;
}

} // namespace

CvResult cross_validate_lambda(const Panel& panel, EstimatorKind kind, double h,
                               const KernelSpec& k, const CvPlan& plan,
                               const SolverConfig& cfg) {
    if (plan.lambda_grid.empty()) throw EmptyGrid("cross_validate_lambda: empty grid");
    if (plan.folds < 2) throw Error("cross_validate_lambda: folds must be >= 2");

    std::mt19937_64 rng(plan.split_seed);
    std::vector<std::vector<int>> labels(static_cast<std::size_t>(panel.T));
    for (int t = 0; t < panel.T; ++t)
        labels[static_cast<std::size_t>(t)] =
            fold_labels(panel.batches[static_cast<std::size_t>(t)].size(), plan.folds, rng);

    CvResult res;
    res.scores.assign(plan.lambda_grid.size(), 0.0);
    for (std::size_t li = 0; li < plan.lambda_grid.size(); ++li) {
        SolverConfig fit_cfg = cfg;
        fit_cfg.lambda = plan.lambda_grid[li];
        double fold_sum = 0.0;
        for (int f = 0; f < plan.folds; ++f) {
            Panel train = panel;
            std::vector<std::vector<const Observation*>> heldout(
                static_cast<std::size_t>(panel.T));
            for (int t = 0; t < panel.T; ++t) {
                auto& tb = train.batches[static_cast<std::size_t>(t)];
                tb.clear();
                const auto& full = panel.batches[static_cast<std::size_t>(t)];
                for (std::size_t i = 0; i < full.size(); ++i) {
                    if (labels[static_cast<std::size_t>(t)][i] == f)
                        heldout[static_cast<std::size_t>(t)].push_back(&full[i]);
                    else
                        tb.push_back(full[i]);
                }
            }
            std::vector<Mat> fit = recover(train, kind, h, k, fit_cfg);
            double t_sum = 0.0;
            int t_count = 0;
            for (int t = 0; t < panel.T; ++t) {
                const auto& held = heldout[static_cast<std::size_t>(t)];
                if (held.empty()) continue;
                double rss = 0.0;
                for (const auto* obs : held) {
                    const double r =
                        inner(obs->design, fit[static_cast<std::size_t>(t)]) - obs->y;
                    rss += r * r;
                }
                t_sum += rss / static_cast<double>(held.size());
                ++t_count;
            }
            if (t_count > 0) fold_sum += t_sum / static_cast<double>(t_count);
        }
        res.scores[li] = fold_sum / static_cast<double>(plan.folds);
    }
    std::size_t best = 0;
    for (std::size_t li = 1; li < res.scores.size(); ++li)
        if (res.scores[li] <= res.scores[best]) best = li;  // ties go to larger lambda
    res.lambda_star = plan.lambda_grid[best];
    return res;
}

std::pair<CvPlan, CvResult> cross_validate_lambda_refined(const Panel& panel,
                                                          EstimatorKind kind, double h,
                                                          const KernelSpec& k,
                                                          const CvPlan& plan,
                                                          const SolverConfig& cfg) {
    CvResult coarse = cross_validate_lambda(panel, kind, h, k, plan, cfg);
    const double star = coarse.lambda_star;
    // one grid step on the coarse grid, in log10
    double step = 0.5;
    if (plan.lambda_grid.size() >= 2)
        step = std::log10(plan.lambda_grid[1] / plan.lambda_grid[0]);
    double lo = -step, hi = step;
    if (star == plan.lambda_grid.front()) {
        lo = -4.0 * step;  // winner on the low edge: search further down
        hi = step;
    } else if (star == plan.lambda_grid.back()) {
        lo = -step;
        hi = 4.0 * step;
    }
    CvPlan fine = plan;
    fine.lambda_grid.clear();
    for (int i = 0; i < 8; ++i)
        fine.lambda_grid.push_back(
            star * std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / 7.0));
    CvResult res = cross_validate_lambda(panel, kind, h, k, fine, cfg);
    return {fine, res};
}

double theory_lambda(const DesignFamily& family, std::int64_t n, int T, double h,
                     double sigma_star, double c1) {
    if (family.m1 <= 0 || family.m2 <= 0 || n <= 0 || T <= 0)
        throw InvalidDims("theory_lambda: nonpositive dimension");
    const double th = std::max(1.0, std::ceil(static_cast<double>(T) * h));
    const double logm = std::log(static_cast<double>(family.m1 + family.m2));
    return 2.0 * c1 * sigma_star * std::sqrt(logm / (static_cast<double>(n) * th));
}

std::vector<double> default_lambda_grid(double anchor) {
    std::vector<double> grid;
    grid.reserve(8);
    for (int i = 0; i < 8; ++i)
        grid.push_back(anchor * std::pow(10.0, -2.0 + 0.5 * static_cast<double>(i)));
    return grid;
}

void write_cv_report(const std::string& path, const CvPlan& plan, const CvResult& res) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "lambda,score\n";
    for (std::size_t i = 0; i < plan.lambda_grid.size(); ++i)
        os << format_double(plan.lambda_grid[i]) << ',' << format_double(res.scores[i])
           << '\n';
    if (!os) throw IoError("write failed: " + path);
}

} // namespace dynrec
