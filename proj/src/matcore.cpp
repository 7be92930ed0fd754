#include "dynrec/matcore.hpp"

#include <Eigen/SVD>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>
#include <vector>

namespace dynrec {

SvdFactors svd(const Mat& m) {
    if (!m.allFinite()) throw ConvergenceFailure("svd: input has non-finite entries");
    Eigen::BDCSVD<Mat> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success)
        throw ConvergenceFailure("svd: factorization did not converge");
    return SvdFactors{dec.matrixU(), dec.singularValues(), dec.matrixV()};
}

Mat svt(const Mat& g, double tau) {
    if (tau < 0.0) throw Error("svt: tau must be nonnegative");
    if (tau == 0.0) return g;
    SvdFactors f = svd(g);
    Vec shrunk = (f.s.array() - tau).max(0.0);
    // only the surviving directions contribute
    Eigen::Index k = 0;
    while (k < shrunk.size() && shrunk[k] > 0.0) ++k;
    if (k == 0) return Mat::Zero(g.rows(), g.cols());
    return f.u.leftCols(k) * shrunk.head(k).asDiagonal() * f.v.leftCols(k).transpose();
}

double frob_norm(const Mat& m) { return m.norm(); }

double nuclear_norm(const Mat& m) {
    Eigen::BDCSVD<Mat> dec(m);
    return dec.singularValues().sum();
}

double spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::BDCSVD<Mat> dec(m);
    return dec.singularValues()(0);
}

Eigen::Index numerical_rank(const Mat& m) {
    Eigen::BDCSVD<Mat> dec(m);
    const Vec& s = dec.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    const double cutoff = kRankEps * s(0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) ++r;
    return r;
}

namespace {

void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void write_dmr1(const std::string& path, const Mat& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("DMR1", 4);
    put_u64_le(os, static_cast<std::uint64_t>(m.rows()));
    put_u64_le(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            os.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
    if (!os) throw IoError("write failed: " + path);
}

Mat read_dmr1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DMR1", 4) != 0)
        throw IoError("bad magic in " + path);
    const auto rows = static_cast<Eigen::Index>(get_u64_le(is));
    const auto cols = static_cast<Eigen::Index>(get_u64_le(is));
    if (rows <= 0 || cols <= 0) throw IoError("bad dims in " + path);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            double v;
            is.read(reinterpret_cast<char*>(&v), sizeof(double));
            m(i, j) = v;
        }
    if (!is) throw IoError("truncated file: " + path);
    return m;
}

std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view sv, long line) {
    double v = 0.0;
    auto res = std::from_chars(sv.data(), sv.data() + sv.size(), v);
    if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size())
        throw ParseError("bad numeric field '" + std::string(sv) + "'", line);
    return v;
}

void write_matrix_csv(const std::string& path, const Mat& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

Mat read_matrix_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for read: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    long ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::size_t end = (comma == std::string::npos) ? line.size() : comma;
            row.push_back(parse_double(std::string_view(line).substr(pos, end - pos), ln));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError("ragged row", ln);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("empty csv: " + path);
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

} // namespace dynrec
