// Test-only reference computations, kept independent of the library's own
// solve paths: a factored-form prox solve with a duality-gap certificate, a
// plain (momentum-free) proximal-gradient reference, central finite
// differences, and composite-Simpson quadrature.
#pragma once

#include <cmath>
#include <random>

#include "dynrec/solver.hpp"

namespace oracles {

using dynrec::Mat;
using dynrec::Vec;

inline double prox_primal(const Mat& m, const Mat& g, double tau) {
    return 0.5 * (m - g).squaredNorm() + tau * dynrec::nuclear_norm(m);
}

/// Dual value at the spectral-ball projection of (g - m) / tau; the gap
/// upper-bounds the primal suboptimality of m.
inline double prox_duality_gap(const Mat& m, const Mat& g, double tau) {
    Mat z = (g - m) / tau;
    dynrec::SvdFactors f = dynrec::svd(z);
    Vec clipped = f.s.cwiseMin(1.0);
    z = f.u * clipped.asDiagonal() * f.v.transpose();
    const double dual = tau * (z.array() * g.array()).sum() - 0.5 * tau * tau * z.squaredNorm();
    return prox_primal(m, g, tau) - dual;
}

/// Solves min 0.5||A B^T - g||^2 + tau/2 (||A||^2 + ||B||^2) by plain gradient
/// descent at full factor rank; its optimum equals the nuclear-norm prox.
inline Mat prox_reference_factored(const Mat& g, double tau, int iters = 300000,
                                   double step = 0.02, std::uint64_t seed = 7) {
    const Eigen::Index k = std::min(g.rows(), g.cols());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.5);
    Mat a(g.rows(), k), b(g.cols(), k);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = gauss(rng);
    for (Eigen::Index i = 0; i < b.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = gauss(rng);
    for (int it = 0; it < iters; ++it) {
        Mat r = a * b.transpose() - g;
        Mat ga = r * b + tau * a;
        Mat gb = r.transpose() * a + tau * b;
        a -= step * ga;
        b -= step * gb;
    }
    return a * b.transpose();
}

/// Plain proximal gradient (no momentum) on the solver's objective.
inline Mat ista_solve(const dynrec::WindowProblem& w, const Mat& init,
                      const dynrec::SolverConfig& cfg, int iters) {
    const double l_f = cfg.lipschitz_override
                           ? *cfg.lipschitz_override
                           : dynrec::lipschitz_constant(w, cfg.gradient_mode);
    Mat m = init;
    for (int k = 0; k < iters; ++k)
        m = dynrec::svt(m - dynrec::gradient(m, w, cfg.gradient_mode) / l_f,
                        2.0 * cfg.lambda / l_f);
    return m;
}

/// Central finite differences of the solver's smooth objective part
/// (objective() with lambda = 0).
inline Mat finite_diff_gradient(const dynrec::WindowProblem& w, const Mat& at,
                                dynrec::GradientMode mode, double eps = 1e-6) {
    dynrec::SolverConfig cfg;
    cfg.lambda = 0.0;
    cfg.gradient_mode = mode;
    Mat g(at.rows(), at.cols());
    Mat probe = at;
    for (Eigen::Index i = 0; i < at.rows(); ++i)
        for (Eigen::Index j = 0; j < at.cols(); ++j) {
            probe(i, j) = at(i, j) + eps;
            const double up = dynrec::objective(probe, w, cfg);
            probe(i, j) = at(i, j) - eps;
            const double dn = dynrec::objective(probe, w, cfg);
            probe(i, j) = at(i, j);
            g(i, j) = (up - dn) / (2.0 * eps);
        }
    return g;
}

/// Composite Simpson on [-1, 1].
template <class F>
double simpson(F f, int panels = 4000) {
    const double a = -1.0, b = 1.0;
    const double h = (b - a) / (2.0 * panels);
    double acc = f(a) + f(b);
    for (int i = 1; i < 2 * panels; ++i) acc += f(a + h * i) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                         double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
    return m;
}

} // namespace oracles
