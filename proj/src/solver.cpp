#include "dynrec/solver.hpp"

#include <cmath>
#include <fstream>
#include <map>

namespace dynrec {

WindowProblem make_window(const Panel& panel, int t, const Vec& weights_full) {
    if (weights_full.size() != panel.T)
        throw DimMismatch("make_window: weight vector length differs from T");
    WindowProblem w;
    w.panel = &panel;
    w.t = t;
    for (int j = 0; j < panel.T; ++j) {
        if (weights_full(j) == 0.0) continue;
        if (panel.batches[static_cast<std::size_t>(j)].empty())
            throw EmptyWindow("make_window: empty batch at j=" + std::to_string(j));
        w.window_js.push_back(j);
    }
    if (w.window_js.empty()) throw EmptyWindow("make_window: no observations in window");
    w.window_weights.resize(static_cast<Eigen::Index>(w.window_js.size()));
    for (std::size_t i = 0; i < w.window_js.size(); ++i)
        w.window_weights(static_cast<Eigen::Index>(i)) = weights_full(w.window_js[i]);
    w.data_term = Mat::Zero(panel.m1, panel.m2);
    const bool entrywise = panel.family.kind == DesignKind::Completion;
    if (entrywise) w.entry_weights = Mat::Zero(panel.m1, panel.m2);
    for (std::size_t i = 0; i < w.window_js.size(); ++i) {
        const auto& batch = w.batch(w.window_js[i]);
        const double wn = w.window_weights(static_cast<Eigen::Index>(i)) /
                          static_cast<double>(batch.size());
        for (const auto& obs : batch) {
            accumulate_adjoint(w.data_term, obs.design, wn * obs.y);
            if (entrywise) accumulate_adjoint(w.entry_weights, obs.design, wn);
        }
    }
    return w;
}

double lipschitz_constant(const WindowProblem& w, GradientMode mode) {
    if (w.window_js.empty()) throw EmptyWindow("lipschitz_constant: empty window");
    const DesignFamily& fam = w.panel->family;
    if (mode == GradientMode::ExactSecondMoment) {
        switch (fam.kind) {
            case DesignKind::Completion:
                return 2.0 / (static_cast<double>(fam.m1) * static_cast<double>(fam.m2));
            case DesignKind::Sensing:
                return 2.0 * fam.sigma_x * fam.sigma_x;
            case DesignKind::ConvKernel:
                throw UnsupportedFamily("conv-kernel family has no exact second moment");
        }
    }
    if (w.entry_weights.size() > 0) return 2.0 * spectral_norm(w.entry_weights);
    Mat acc = Mat::Zero(fam.m1, fam.m2);
    for (std::size_t i = 0; i < w.window_js.size(); ++i) {
        const auto& batch = w.batch(w.window_js[i]);
        const double wn = w.window_weights(static_cast<Eigen::Index>(i)) /
                          static_cast<double>(batch.size());
        for (const auto& obs : batch)
            accumulate_adjoint(acc, obs.design,
                               wn * design_frob_norm(obs.design, fam.m1, fam.m2));
    }
    return 2.0 * spectral_norm(acc);
}

Mat gradient(const Mat& n, const WindowProblem& w, GradientMode mode) {
    if (n.rows() != w.panel->m1 || n.cols() != w.panel->m2)
        throw DimMismatch("gradient: iterate dims differ from panel");
    if (mode == GradientMode::ExactSecondMoment)
        return second_moment_gradient(n, w.panel->family) - w.data_term;
    if (w.entry_weights.size() > 0)
        return (w.entry_weights.array() * n.array()).matrix() - w.data_term;
    Mat g = Mat::Zero(n.rows(), n.cols());
    for (std::size_t i = 0; i < w.window_js.size(); ++i) {
        const auto& batch = w.batch(w.window_js[i]);
        const double wn = w.window_weights(static_cast<Eigen::Index>(i)) /
                          static_cast<double>(batch.size());
        for (const auto& obs : batch)
            accumulate_adjoint(g, obs.design, wn * (inner(obs.design, n) - obs.y));
    }
    return g;
}

double objective(const Mat& m, const WindowProblem& w, const SolverConfig& cfg) {
    double smooth = 0.0;
    if (cfg.gradient_mode == GradientMode::ExactSecondMoment) {
        const DesignFamily& fam = w.panel->family;
        const double sq = m.squaredNorm();
        const double quad = (fam.kind == DesignKind::Completion)
                                ? sq / (static_cast<double>(fam.m1) * static_cast<double>(fam.m2))
                                : fam.sigma_x * fam.sigma_x * sq;
        smooth = 0.5 * quad - (w.data_term.array() * m.array()).sum();
    } else if (w.entry_weights.size() > 0) {
        // entrywise quadratic, constants sum w y^2 / 2 dropped
        smooth = 0.5 * (w.entry_weights.array() * m.array() * m.array()).sum() -
                 (w.data_term.array() * m.array()).sum();
    } else {
        for (std::size_t i = 0; i < w.window_js.size(); ++i) {
            const auto& batch = w.batch(w.window_js[i]);
            const double wn = w.window_weights(static_cast<Eigen::Index>(i)) /
                              static_cast<double>(batch.size());
            double rss = 0.0;
            for (const auto& obs : batch) {
                const double r = inner(obs.design, m) - obs.y;
                rss += r * r;
            }
            smooth += 0.5 * wn * rss;
        }
    }
    return smooth + 2.0 * cfg.lambda * nuclear_norm(m);
}

std::pair<Mat, double> dfista_step(const Mat& m_prev, const Mat& m_curr, double s_prev,
                                   double s_curr, const WindowProblem& w,
                                   const SolverConfig& cfg, double l_f) {
    if (l_f <= 0.0) throw Error("dfista_step: nonpositive Lipschitz constant");
    const double momentum = (s_prev - 1.0) / s_curr;
    Mat n = m_curr + momentum * (m_curr - m_prev);
    Mat g = n - gradient(n, w, cfg.gradient_mode) / l_f;
    Mat m_next = svt(g, 2.0 * cfg.lambda / l_f);
    if (!m_next.allFinite())
        throw ConvergenceFailure("dfista_step: iterate has non-finite entries");
    const double s_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s_curr * s_curr));
    return {std::move(m_next), s_next};
}

std::pair<Mat, SolveTrace> solve_at(const WindowProblem& w, const Mat& init,
                                    const SolverConfig& cfg_in) {
    if (init.rows() != w.panel->m1 || init.cols() != w.panel->m2)
        throw DimMismatch("solve_at: init dims differ from panel");
    SolverConfig cfg = cfg_in;
    // conv-kernel designs have no closed-form second moment
    if (w.panel->family.kind == DesignKind::ConvKernel)
        cfg.gradient_mode = GradientMode::Empirical;
    const double l_f = cfg.lipschitz_override ? *cfg.lipschitz_override
                                              : lipschitz_constant(w, cfg.gradient_mode);
    Mat m_prev = init;
    Mat m_curr = init;
    double s_prev = 1.0, s_curr = 1.0;
    SolveTrace trace;
    trace.objective_path.push_back(objective(m_curr, w, cfg));
    for (int k = 0; k < cfg.max_iters; ++k) {
        auto [m_next, s_next] = dfista_step(m_prev, m_curr, s_prev, s_curr, w, cfg, l_f);
        const double f_next = objective(m_next, w, cfg);
        const double f_curr = trace.objective_path.back();
        trace.objective_path.push_back(f_next);
        ++trace.iters_used;
        m_prev = std::move(m_curr);
        m_curr = std::move(m_next);
        s_prev = s_curr;
        s_curr = s_next;
        if (std::abs(f_next - f_curr) <= cfg.tol) {
            trace.converged = true;
            break;
        }
    }
    trace.final_objective = trace.objective_path.back();
    return {std::move(m_curr), std::move(trace)};
}

Mat seed_init(const Panel& panel, int t) {
    Mat m = Mat::Zero(panel.m1, panel.m2);
    if (panel.family.kind != DesignKind::Completion) return m;
    Mat counts = Mat::Zero(panel.m1, panel.m2);
    for (const auto& obs : panel.batches[static_cast<std::size_t>(t)]) {
        const auto* e = std::get_if<EntryIndex>(&obs.design);
        if (!e) continue;
        m(e->row, e->col) += obs.y;
        counts(e->row, e->col) += 1.0;
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (counts(i, j) > 0.0) m(i, j) /= counts(i, j);
    return m;
}

std::pair<std::vector<Mat>, std::vector<SolveTrace>> solve_path(
    const Panel& panel, double h, const KernelSpec& k, const SolverConfig& cfg,
    bool warm_start) {
    std::vector<Mat> out;
    std::vector<SolveTrace> traces;
    out.reserve(static_cast<std::size_t>(panel.T));
    traces.reserve(static_cast<std::size_t>(panel.T));
    for (int t = 0; t < panel.T; ++t) {
        try {
            WindowProblem w = make_window(panel, t, weights(t, panel.T, h, k));
            Mat init = (warm_start && t > 0) ? out.back() : seed_init(panel, t);
            auto [m, trace] = solve_at(w, init, cfg);
            out.push_back(std::move(m));
            traces.push_back(std::move(trace));
        } catch (const Error& e) {
            throw Error("solve_path at t=" + std::to_string(t) + ": " + e.what());
        }
    }
    return {std::move(out), std::move(traces)};
}

void write_traces_csv(const std::string& path, const std::vector<SolveTrace>& traces) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "t,iter,objective\n";
    for (std::size_t t = 0; t < traces.size(); ++t)
        for (std::size_t k = 0; k < traces[t].objective_path.size(); ++k)
            os << t << ',' << k << ',' << format_double(traces[t].objective_path[k]) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

} // namespace dynrec
