#include "dynrec/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dynrec {

KernelKind kernel_kind_from_string(const std::string& name) {
    if (name == "epanechnikov") return KernelKind::Epanechnikov;
    if (name == "uniform") return KernelKind::Uniform;
    if (name == "triangular") return KernelKind::Triangular;
    if (name == "degenerate") return KernelKind::Degenerate;
    throw Error("unknown kernel: " + name);
}

std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Epanechnikov: return "epanechnikov";
        case KernelKind::Uniform: return "uniform";
        case KernelKind::Triangular: return "triangular";
        case KernelKind::Degenerate: return "degenerate";
    }
    return "?";
}

double KernelSpec::operator()(double x) const {
    if (kind == KernelKind::Degenerate)
        throw UnsupportedFamily("degenerate kernel has no density");
    if (std::abs(x) > 1.0) return 0.0;
    switch (kind) {
        case KernelKind::Epanechnikov: return 0.75 * (1.0 - x * x);
        case KernelKind::Uniform: return 0.5;
        case KernelKind::Triangular: return 1.0 - std::abs(x);
        default: return 0.0;
    }
}

std::pair<double, double> kernel_constants(const KernelSpec& k) {
    switch (k.kind) {
        case KernelKind::Epanechnikov: return {1.0 / 5.0, 3.0 / 5.0};
        case KernelKind::Uniform: return {1.0 / 3.0, 1.0 / 2.0};
        case KernelKind::Triangular: return {1.0 / 6.0, 2.0 / 3.0};
        case KernelKind::Degenerate:
            throw UnsupportedFamily("degenerate kernel has no moments");
    }
    throw Error("unreachable");
}

Vec weights(int t, int T, double h, const KernelSpec& k) {
    if (T <= 0 || t < 0 || t >= T) throw IndexOutOfRange("weights: t outside [0, T)");
    Vec w = Vec::Zero(T);
    if (k.kind == KernelKind::Degenerate || h <= 0.0) {
        w(t) = 1.0;
        return w;
    }
    const double th = static_cast<double>(T) * h;
    double total = 0.0;
    for (int j = 0; j < T; ++j) {
        const double v = k(static_cast<double>(j - t) / th);
        w(j) = v;
        total += v;
    }
    if (total <= 0.0) throw EmptyWindow("weights: all kernel values are zero");
    w /= total;
    return w;
}

double plug_in_bandwidth_raw(double scale, int rank, DesignKind kind,
                             Eigen::Index m1, Eigen::Index m2, std::int64_t n, int T,
                             double c_h) {
    if (m1 <= 0 || m2 <= 0 || n <= 0 || T <= 0)
        throw InvalidDims("plug_in_bandwidth: nonpositive dimension");
    const double logm = std::log(static_cast<double>(m1 + m2));
    const double m_sel = (kind == DesignKind::Sensing)
                             ? 1.0 / static_cast<double>(std::min(m1, m2))
                             : static_cast<double>(std::max(m1, m2));
    const double inner = scale * scale * static_cast<double>(rank) * m_sel * logm /
                         (static_cast<double>(n) * static_cast<double>(T));
    return c_h * std::pow(inner, 0.2);
}

namespace {

// C_M v sigma_xi proxy: mean of the top 10% largest |y| in the summary.
double scale_from_summary(const PanelSummary& s) {
    return s.top_decile_abs_y;
}

// D_2 proxy: sum of absolute successive differences of per-time means.
double d2_from_summary(const PanelSummary& s) {
    double d2 = 0.0;
    for (std::size_t j = 1; j < s.mean_y.size(); ++j)
        d2 += std::abs(s.mean_y[j] - s.mean_y[j - 1]);
    return d2;
}

} // namespace

double plug_in_bandwidth(const PanelSummary& summary, DesignKind kind,
                         Eigen::Index m1, Eigen::Index m2, std::int64_t n, int T,
                         BandwidthPlan& plan) {
    if (plan.plug_in_scale <= 0.0) plan.plug_in_scale = scale_from_summary(summary);
    if (plan.plug_in_d2 <= 0.0) plan.plug_in_d2 = d2_from_summary(summary);
    if (plan.plug_in_scale <= 0.0)
        throw Error("plug_in_bandwidth: nonpositive plug-in scale");
    const double raw = plug_in_bandwidth_raw(plan.plug_in_scale, plan.rank_guess, kind,
                                             m1, m2, n, T, plan.c_h);
    const double h_min = 1.0 / static_cast<double>(T);
    if (raw < h_min) return 0.0;  // smoothing window below one step: degenerate
    return std::min(raw, 1.0);
}

} // namespace dynrec
