#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynrec/matcore.hpp"

namespace dynrec {

enum class KernelKind { Epanechnikov, Uniform, Triangular, Degenerate };

KernelKind kernel_kind_from_string(const std::string& name);
std::string to_string(KernelKind k);

/// Symmetric probability density on [-1, 1]. Degenerate stands for the h -> 0
/// limit: all weight on j == t.
struct KernelSpec {
    KernelKind kind = KernelKind::Epanechnikov;

    /// K(x); zero outside [-1, 1]. Throws Unsupported for Degenerate.
    double operator()(double x) const;

    static KernelSpec epanechnikov() { return {KernelKind::Epanechnikov}; }
    static KernelSpec uniform() { return {KernelKind::Uniform}; }
    static KernelSpec triangular() { return {KernelKind::Triangular}; }
    static KernelSpec degenerate() { return {KernelKind::Degenerate}; }
};

/// (alpha_k, r_k) = (int x^2 K dx, int K^2 dx), closed form.
std::pair<double, double> kernel_constants(const KernelSpec& k);

/// Normalized local-smoothing weights w_j = K((j-t)/(T h)) / sum_k K((k-t)/(T h))
/// for j = 0..T-1 (time indices are 0-based). h <= 0 or a Degenerate kernel
/// yields a point mass at t.
Vec weights(int t, int T, double h, const KernelSpec& k);

/// Inputs and knobs for the plug-in bandwidth rule.
struct BandwidthPlan {
    double c_h = 1.0;          ///< user constant multiplying the plug-in rate
    double plug_in_scale = 0;  ///< estimate of C_M v sigma_xi (<= 0: derive from summary)
    double plug_in_d2 = 0;     ///< successive-difference plug-in, reported only
    int rank_guess = 1;
};

/// Per-time response means plus the pooled top-decile magnitude, the raw
/// material for the plug-in estimates.
struct PanelSummary {
    std::vector<double> mean_y;     // one per time index
    double top_decile_abs_y = 0.0;  // mean of the top 10% largest |y|
};

enum class DesignKind { Completion, Sensing, ConvKernel };

/// Plug-in bandwidth: h = c_h * [scale^2 r (m1 v m2) log(m1+m2) / (nT)]^{1/5}
/// for completion-type designs, and the sensing variant with (m1 ^ m2) in the
/// denominator. Fills plan.plug_in_scale / plug_in_d2 from the summary when
/// unset. Returns 0 (degenerate) when the unclamped value falls below 1/T,
/// else clamps to [1/T, 1].
double plug_in_bandwidth(const PanelSummary& summary, DesignKind kind,
                         Eigen::Index m1, Eigen::Index m2, std::int64_t n, int T,
                         BandwidthPlan& plan);

/// The unclamped closed form, exposed for scaling tests.
double plug_in_bandwidth_raw(double scale, int rank, DesignKind kind,
                             Eigen::Index m1, Eigen::Index m2, std::int64_t n, int T,
                             double c_h);

} // namespace dynrec
