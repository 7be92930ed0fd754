#pragma once

#include <Eigen/Core>
#include <string>
#include <string_view>

#include "dynrec/errors.hpp"

namespace dynrec {

/// Dense real matrix, the universal value type for targets, gradients and iterates.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Thin SVD of an m1 x m2 matrix: u (m1 x k), s (k, nonincreasing), v (m2 x k)
/// with k = min(m1, m2). Reconstruction is u * s.asDiagonal() * v^T.
struct SvdFactors {
    Mat u;
    Vec s;
    Mat v;

    Mat reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

/// Singular values below this fraction of s_max count as zero for rank reporting.
inline constexpr double kRankEps = 1e-12;

/// Thin SVD. Throws ConvergenceFailure if the factorization does not converge.
SvdFactors svd(const Mat& m);

/// Singular value soft-thresholding: U (D - tau)_+ V^T, the proximal operator
/// of tau * ||.||_nuclear at m.
Mat svt(const Mat& g, double tau);

double frob_norm(const Mat& m);
double nuclear_norm(const Mat& m);
double spectral_norm(const Mat& m);

/// Count of singular values above kRankEps * s_max.
Eigen::Index numerical_rank(const Mat& m);

// --- file formats ---
//
// Binary: magic "DMR1", uint64 rows, uint64 cols (little-endian), then
// rows*cols IEEE-754 binary64 values in row-major order.
// CSV: one row per line, comma-separated decimals (shortest round-trip form).

void write_dmr1(const std::string& path, const Mat& m);
Mat read_dmr1(const std::string& path);

void write_matrix_csv(const std::string& path, const Mat& m);
Mat read_matrix_csv(const std::string& path);

/// Shortest round-trip decimal form (std::to_chars); used by all CSV writers.
std::string format_double(double v);
/// Strict parse of a full numeric field; throws ParseError with the given line.
double parse_double(std::string_view sv, long line);

} // namespace dynrec
