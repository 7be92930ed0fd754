#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dynrec/designs.hpp"

namespace dynrec {

/// Smooth rank-r matrix path M(u) = U(u) D(u) V(u)^T on u in [0, 1], with
/// U(u) = cos(u pi/2) U0 + sin(u pi/2) U1 (likewise V) and singular values
/// D(u) = 10 (diag{r^2..1} + u diag{r..1}). U0, U1 are disjoint column blocks
/// of one random orthogonal frame, so U(u) stays exactly column-orthonormal.
struct GroundTruthPath {
    Eigen::Index m1 = 0;
    Eigen::Index m2 = 0;
    int rank = 1;
    int T = 1;

    GroundTruthPath(Eigen::Index m1, Eigen::Index m2, int rank, int T, std::uint64_t seed);

    /// M(u) for a fraction u in [0, 1].
    Mat eval_fraction(double u) const;

    /// Grid point for 0-based index t in [0, T): fraction (t + 1) / T.
    Mat eval_truth(int t_index) const;

    /// All T grid matrices.
    std::vector<Mat> truth_grid() const;

    Mat u0, u1, v0, v1;
};

enum class NoiseKind { IID, PhiMixingAR };

/// IID: N(0, sigma_xi^2) per observation. PhiMixingAR: a latent matrix field
/// E_t = beta E_{t-1} + sqrt(1-beta^2) U_t with white-noise U_t; the response
/// noise is <E_t, X_ti>. beta = 0 reduces to fresh fields each step.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::IID;
    double sigma_xi = 1.0;
    double beta = 0.0;
    std::uint64_t seed = 0;
};

/// Per-time noises aligned with the given design batches.
std::vector<std::vector<double>> gen_noise(const NoiseSpec& spec,
                                           const std::vector<std::vector<Design>>& designs,
                                           Eigen::Index m1, Eigen::Index m2);

/// Temporally dependent completion designs: each batch keeps a random
/// floor(alpha n) subset of the previous batch slotwise and redraws the rest.
struct DependentDesignSpec {
    double alpha = 0.0;
    std::uint64_t seed = 0;
};

std::vector<std::vector<Design>> gen_dependent_designs(const DependentDesignSpec& spec,
                                                       const DesignFamily& family,
                                                       std::size_t n, int T);

/// End-to-end synthetic panel: sampled designs, y = <X, M(t)> + xi, plus the
/// truth grid for scoring. Designs draw from `seed`; noise draws from
/// noise.seed; dependent designs from dep->seed.
std::pair<Panel, std::vector<Mat>> build_panel(const GroundTruthPath& path,
                                               const DesignFamily& family, std::size_t n,
                                               const NoiseSpec& noise,
                                               const std::optional<DependentDesignSpec>& dep,
                                               std::uint64_t seed);

/// Observation count per time for an observation rate rho = n / (m1 m2).
std::size_t samples_per_time(double rho, Eigen::Index m1, Eigen::Index m2);

} // namespace dynrec
