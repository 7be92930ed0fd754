#include "dynrec/synthgen.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dynrec {

namespace {

// Disjoint orthonormal blocks: QR of a seeded Gaussian m x 2r matrix.
std::pair<Mat, Mat> orthonormal_pair(Eigen::Index m, int r, std::mt19937_64& rng) {
    if (m < 2 * static_cast<Eigen::Index>(r))
        throw InvalidDims("ground truth needs m >= 2 r for orthogonal basis blocks");
    std::normal_distribution<double> g(0.0, 1.0);
    Mat a(m, 2 * r);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = g(rng);
    Eigen::HouseholderQR<Mat> qr(a);
    Mat q = qr.householderQ() * Mat::Identity(m, 2 * r);
    return {q.leftCols(r), q.rightCols(r)};
}

} // namespace

GroundTruthPath::GroundTruthPath(Eigen::Index m1_, Eigen::Index m2_, int rank_, int T_,
                                 std::uint64_t seed)
    : m1(m1_), m2(m2_), rank(rank_), T(T_) {
    if (m1 <= 0 || m2 <= 0 || rank < 1 || T < 1)
        throw InvalidDims("GroundTruthPath: nonpositive dimension");
    std::mt19937_64 rng(seed);
    std::tie(u0, u1) = orthonormal_pair(m1, rank, rng);
    std::tie(v0, v1) = orthonormal_pair(m2, rank, rng);
}

Mat GroundTruthPath::eval_fraction(double u) const {
    const double c = std::cos(u * M_PI / 2.0);
    const double s = std::sin(u * M_PI / 2.0);
    Vec d(rank);
    for (int k = 0; k < rank; ++k) {
        const double kk = static_cast<double>(rank - k);  // r, r-1, ..., 1
        d(k) = 10.0 * (kk * kk + u * kk);
    }
    Mat uu = c * u0 + s * u1;
    Mat vv = c * v0 + s * v1;
    return uu * d.asDiagonal() * vv.transpose();
}

Mat GroundTruthPath::eval_truth(int t_index) const {
    if (t_index < 0 || t_index >= T)
        throw IndexOutOfRange("eval_truth: index outside [0, T)");
    return eval_fraction(static_cast<double>(t_index + 1) / static_cast<double>(T));
}

std::vector<Mat> GroundTruthPath::truth_grid() const {
    std::vector<Mat> grid;
    grid.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) grid.push_back(eval_truth(t));
    return grid;
}

std::vector<std::vector<double>> gen_noise(const NoiseSpec& spec,
                                           const std::vector<std::vector<Design>>& designs,
                                           Eigen::Index m1, Eigen::Index m2) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> out(designs.size());
    if (spec.kind == NoiseKind::IID) {
        for (std::size_t t = 0; t < designs.size(); ++t) {
            out[t].resize(designs[t].size());
            for (auto& v : out[t]) v = spec.sigma_xi * g(rng);
        }
        return out;
    }
    // AR(1) latent field, kept one step at a time
    const double beta = spec.beta;
    const double fresh = std::sqrt(1.0 - beta * beta);
    Mat field(m1, m2);
    for (Eigen::Index i = 0; i < m1; ++i)
        for (Eigen::Index j = 0; j < m2; ++j) field(i, j) = spec.sigma_xi * g(rng);
    for (std::size_t t = 0; t < designs.size(); ++t) {
        Mat innov(m1, m2);
        for (Eigen::Index i = 0; i < m1; ++i)
            for (Eigen::Index j = 0; j < m2; ++j) innov(i, j) = spec.sigma_xi * g(rng);
        field = beta * field + fresh * innov;
        out[t].resize(designs[t].size());
        for (std::size_t i = 0; i < designs[t].size(); ++i)
            out[t][i] = inner(designs[t][i], field);
    }
    return out;
}

std::vector<std::vector<Design>> gen_dependent_designs(const DependentDesignSpec& spec,
                                                       const DesignFamily& family,
                                                       std::size_t n, int T) {
    if (family.kind != DesignKind::Completion)
        throw UnsupportedFamily("dependent designs are defined for completion only");
    if (spec.alpha < 0.0 || spec.alpha >= 1.0)
        throw Error("dependent designs need alpha in [0, 1)");
    std::mt19937_64 rng(spec.seed);
    std::vector<std::vector<Design>> out;
    out.reserve(static_cast<std::size_t>(T));
    out.push_back(sample_designs(family, n, rng));
    const std::size_t carry = static_cast<std::size_t>(
        std::floor(spec.alpha * static_cast<double>(n)));
    std::vector<std::size_t> slots(n);
    for (int t = 1; t < T; ++t) {
        std::iota(slots.begin(), slots.end(), std::size_t{0});
        std::shuffle(slots.begin(), slots.end(), rng);
        std::vector<Design> fresh = sample_designs(family, n, rng);
        std::vector<Design> batch = fresh;
        for (std::size_t s = 0; s < carry; ++s) batch[slots[s]] = out.back()[slots[s]];
        out.push_back(std::move(batch));
    }
    return out;
}

std::size_t samples_per_time(double rho, Eigen::Index m1, Eigen::Index m2) {
    const double n = rho * static_cast<double>(m1) * static_cast<double>(m2);
    return static_cast<std::size_t>(std::llround(n));
}

std::pair<Panel, std::vector<Mat>> build_panel(const GroundTruthPath& path,
                                               const DesignFamily& family, std::size_t n,
                                               const NoiseSpec& noise,
                                               const std::optional<DependentDesignSpec>& dep,
                                               std::uint64_t seed) {
    if (family.m1 != path.m1 || family.m2 != path.m2)
        throw DimMismatch("build_panel: family dims differ from path");
    const int T = path.T;
    std::vector<std::vector<Design>> designs;
    if (dep && dep->alpha > 0.0) {
        designs = gen_dependent_designs(*dep, family, n, T);
    } else {
        std::mt19937_64 rng(seed);
        designs.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) designs.push_back(sample_designs(family, n, rng));
    }
    auto noises = gen_noise(noise, designs, path.m1, path.m2);

    Panel panel;
    panel.m1 = path.m1;
    panel.m2 = path.m2;
    panel.T = T;
    panel.family = family;
    panel.batches.resize(static_cast<std::size_t>(T));
    std::vector<Mat> truths = path.truth_grid();
    for (int t = 0; t < T; ++t) {
        auto& batch = panel.batches[static_cast<std::size_t>(t)];
        batch.reserve(n);
        const Mat& m = truths[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < n; ++i) {
            const Design& d = designs[static_cast<std::size_t>(t)][i];
            batch.push_back({d, inner(d, m) + noises[static_cast<std::size_t>(t)][i]});
        }
    }
    return {std::move(panel), std::move(truths)};
}

} // namespace dynrec
