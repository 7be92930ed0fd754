#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "dynrec/kernels.hpp"
#include "dynrec/matcore.hpp"

namespace dynrec {

/// Single-entry indicator e_row e_col^T (matrix completion).
struct EntryIndex {
    Eigen::Index row = 0;
    Eigen::Index col = 0;
};

/// Fully dense measurement matrix (compressed sensing).
struct DenseMat {
    Mat x;
};

/// 3x3 convolution stencil: 4 at the center, 2 at edge neighbors, 1 at
/// corners; weights falling outside the matrix are dropped.
struct ConvKernel {
    Eigen::Index center_row = 0;
    Eigen::Index center_col = 0;
};

using Design = std::variant<EntryIndex, DenseMat, ConvKernel>;

/// Design distribution plus its second-moment data. mu is the smallest
/// eigenvalue of Sigma: 1/(m1 m2) for completion, sigma_x^2 for sensing.
/// Conv-kernel designs have no closed-form Sigma and run in empirical mode.
struct DesignFamily {
    DesignKind kind = DesignKind::Completion;
    Eigen::Index m1 = 0;
    Eigen::Index m2 = 0;
    double sigma_x = 1.0;  // sensing only

    double mu() const;

    static DesignFamily completion(Eigen::Index m1, Eigen::Index m2) {
        return {DesignKind::Completion, m1, m2, 1.0};
    }
    static DesignFamily sensing(Eigen::Index m1, Eigen::Index m2, double sigma_x) {
        return {DesignKind::Sensing, m1, m2, sigma_x};
    }
    static DesignFamily conv_kernel(Eigen::Index m1, Eigen::Index m2) {
        return {DesignKind::ConvKernel, m1, m2, 1.0};
    }
};

struct Observation {
    Design design;
    double y = 0.0;
};

/// T batches of observations over a common m1 x m2 target.
struct Panel {
    Eigen::Index m1 = 0;
    Eigen::Index m2 = 0;
    int T = 0;
    std::vector<std::vector<Observation>> batches;  // size T
    DesignFamily family;
};

/// <M, X> = Tr(X^T M). O(1) for indicators and stencils, O(m1 m2) dense.
double inner(const Design& d, const Mat& m);

/// acc += scalar * dense(d); sparse variants touch only their support.
void accumulate_adjoint(Mat& acc, const Design& d, double scalar);

/// Densified form of a design (test/diagnostic path).
Mat dense(const Design& d, Eigen::Index m1, Eigen::Index m2);

/// Frobenius norm of the design matrix without densifying; dims are needed
/// for clipped stencils at the border.
double design_frob_norm(const Design& d, Eigen::Index m1, Eigen::Index m2);

/// Sigma applied to M: gradient of vec(M)^T Sigma vec(M) / 2 under the exact
/// second moment. Throws UnsupportedFamily for conv-kernel designs.
Mat second_moment_gradient(const Mat& m, const DesignFamily& family);

/// i.i.d. draws from the family; deterministic given the engine state.
std::vector<Design> sample_designs(const DesignFamily& family, std::size_t n,
                                   std::mt19937_64& rng);
std::vector<Design> sample_designs(const DesignFamily& family, std::size_t n,
                                   std::uint64_t seed);

// --- panel triplet format (completion designs) ---
//
// CSV with header "t,row,col,value"; t/row/col are 0-based integers.

void write_triplets(const std::string& path, const Panel& panel);
Panel read_triplets(const std::string& path, Eigen::Index m1 = 0, Eigen::Index m2 = 0,
                    int T = 0);

// Dense-design panels: one DMR1 file per design plus a JSON manifest listing
// files and responses per time index.
void write_dense_panel(const std::string& dir, const Panel& panel);
Panel read_dense_panel(const std::string& manifest_path);

} // namespace dynrec
