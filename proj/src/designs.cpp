#include "dynrec/designs.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dynrec {

namespace {

struct StencilCell {
    int dr, dc;
    double w;
};

constexpr StencilCell kStencil[] = {
    {0, 0, 4.0},  {-1, 0, 2.0}, {1, 0, 2.0},  {0, -1, 2.0}, {0, 1, 2.0},
    {-1, -1, 1.0}, {-1, 1, 1.0}, {1, -1, 1.0}, {1, 1, 1.0},
};

void check_entry(const EntryIndex& e, Eigen::Index m1, Eigen::Index m2) {
    if (e.row < 0 || e.row >= m1 || e.col < 0 || e.col >= m2)
        throw DimMismatch("entry index out of range");
}

} // namespace

double DesignFamily::mu() const {
    switch (kind) {
        case DesignKind::Completion:
            return 1.0 / (static_cast<double>(m1) * static_cast<double>(m2));
        case DesignKind::Sensing:
            return sigma_x * sigma_x;
        case DesignKind::ConvKernel:
            throw UnsupportedFamily("conv-kernel family has no closed-form mu");
    }
    throw Error("unreachable");
}

double inner(const Design& d, const Mat& m) {
    return std::visit(
        [&](const auto& v) -> double {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, EntryIndex>) {
                check_entry(v, m.rows(), m.cols());
                return m(v.row, v.col);
            } else if constexpr (std::is_same_v<V, DenseMat>) {
                if (v.x.rows() != m.rows() || v.x.cols() != m.cols())
                    throw DimMismatch("dense design dims differ from target");
                return (v.x.array() * m.array()).sum();
            } else {
                double acc = 0.0;
                for (const auto& c : kStencil) {
                    const Eigen::Index r = v.center_row + c.dr;
                    const Eigen::Index q = v.center_col + c.dc;
                    if (r < 0 || r >= m.rows() || q < 0 || q >= m.cols()) continue;
                    acc += c.w * m(r, q);
                }
                return acc;
            }
        },
        d);
}

void accumulate_adjoint(Mat& acc, const Design& d, double scalar) {
    std::visit(
        [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, EntryIndex>) {
                check_entry(v, acc.rows(), acc.cols());
                acc(v.row, v.col) += scalar;
            } else if constexpr (std::is_same_v<V, DenseMat>) {
                if (v.x.rows() != acc.rows() || v.x.cols() != acc.cols())
                    throw DimMismatch("dense design dims differ from accumulator");
                acc.noalias() += scalar * v.x;
            } else {
                for (const auto& c : kStencil) {
                    const Eigen::Index r = v.center_row + c.dr;
                    const Eigen::Index q = v.center_col + c.dc;
                    if (r < 0 || r >= acc.rows() || q < 0 || q >= acc.cols()) continue;
                    acc(r, q) += scalar * c.w;
                }
            }
        },
        d);
}

Mat dense(const Design& d, Eigen::Index m1, Eigen::Index m2) {
    Mat out = Mat::Zero(m1, m2);
    accumulate_adjoint(out, d, 1.0);
    return out;
}

double design_frob_norm(const Design& d, Eigen::Index m1, Eigen::Index m2) {
    return std::visit(
        [&](const auto& v) -> double {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, EntryIndex>) {
                return 1.0;
            } else if constexpr (std::is_same_v<V, DenseMat>) {
                return v.x.norm();
            } else {
                double s2 = 0.0;
                for (const auto& c : kStencil) {
                    const Eigen::Index r = v.center_row + c.dr;
                    const Eigen::Index q = v.center_col + c.dc;
                    if (r < 0 || r >= m1 || q < 0 || q >= m2) continue;
                    s2 += c.w * c.w;
                }
                return std::sqrt(s2);
            }
        },
        d);
}

Mat second_moment_gradient(const Mat& m, const DesignFamily& family) {
    if (m.rows() != family.m1 || m.cols() != family.m2)
        throw DimMismatch("second_moment_gradient: dims differ from family");
    switch (family.kind) {
        case DesignKind::Completion:
            return m / (static_cast<double>(family.m1) * static_cast<double>(family.m2));
        case DesignKind::Sensing:
            return family.sigma_x * family.sigma_x * m;
        case DesignKind::ConvKernel:
            throw UnsupportedFamily("conv-kernel family runs in empirical mode only");
    }
    throw Error("unreachable");
}

std::vector<Design> sample_designs(const DesignFamily& family, std::size_t n,
                                   std::mt19937_64& rng) {
    std::vector<Design> out;
    out.reserve(n);
    switch (family.kind) {
        case DesignKind::Completion: {
            std::uniform_int_distribution<Eigen::Index> dr(0, family.m1 - 1);
            std::uniform_int_distribution<Eigen::Index> dc(0, family.m2 - 1);
            for (std::size_t i = 0; i < n; ++i) out.push_back(EntryIndex{dr(rng), dc(rng)});
            break;
        }
        case DesignKind::Sensing: {
            std::normal_distribution<double> g(0.0, family.sigma_x);
            for (std::size_t i = 0; i < n; ++i) {
                Mat x(family.m1, family.m2);
                for (Eigen::Index r = 0; r < family.m1; ++r)
                    for (Eigen::Index c = 0; c < family.m2; ++c) x(r, c) = g(rng);
                out.push_back(DenseMat{std::move(x)});
            }
            break;
        }
        case DesignKind::ConvKernel: {
            std::uniform_int_distribution<Eigen::Index> dr(0, family.m1 - 1);
            std::uniform_int_distribution<Eigen::Index> dc(0, family.m2 - 1);
            for (std::size_t i = 0; i < n; ++i) out.push_back(ConvKernel{dr(rng), dc(rng)});
            break;
        }
    }
    return out;
}

std::vector<Design> sample_designs(const DesignFamily& family, std::size_t n,
                                   std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_designs(family, n, rng);
}

void write_triplets(const std::string& path, const Panel& panel) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "t,row,col,value\n";
    for (int t = 0; t < panel.T; ++t) {
        for (const auto& obs : panel.batches[static_cast<std::size_t>(t)]) {
            const auto* e = std::get_if<EntryIndex>(&obs.design);
            if (!e) throw UnsupportedFamily("triplet format holds completion designs only");
            os << t << ',' << e->row << ',' << e->col << ',' << format_double(obs.y) << '\n';
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t comma = line.find(',', pos);
        std::size_t end = (comma == std::string_view::npos) ? line.size() : comma;
        out.push_back(line.substr(pos, end - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

long parse_long(std::string_view sv, long line) {
    const double v = parse_double(sv, line);
    const long l = static_cast<long>(v);
    if (static_cast<double>(l) != v) throw ParseError("expected integer field", line);
    return l;
}

} // namespace

Panel read_triplets(const std::string& path, Eigen::Index m1, Eigen::Index m2, int T) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for read: " + path);
    std::string line;
    long ln = 0;
    if (!std::getline(is, line)) throw IoError("empty file: " + path);
    ++ln;
    struct Row {
        int t;
        Eigen::Index r, c;
        double v;
    };
    std::vector<Row> rows;
    Eigen::Index max_r = -1, max_c = -1;
    int max_t = -1;
    while (std::getline(is, line)) {
        ++ln;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 4) throw ParseError("expected 4 fields", ln);
        Row row{static_cast<int>(parse_long(f[0], ln)), parse_long(f[1], ln),
                parse_long(f[2], ln), parse_double(f[3], ln)};
        if (row.t < 0 || row.r < 0 || row.c < 0)
            throw ParseError("negative index", ln);
        max_t = std::max(max_t, row.t);
        max_r = std::max(max_r, row.r);
        max_c = std::max(max_c, row.c);
        rows.push_back(row);
    }
    if (m1 <= 0) m1 = max_r + 1;
    if (m2 <= 0) m2 = max_c + 1;
    if (T <= 0) T = max_t + 1;
    Panel panel;
    panel.m1 = m1;
    panel.m2 = m2;
    panel.T = T;
    panel.family = DesignFamily::completion(m1, m2);
    panel.batches.resize(static_cast<std::size_t>(T));
    for (const auto& row : rows) {
        if (row.t >= T || row.r >= m1 || row.c >= m2)
            throw ParseError("index exceeds declared dims", 0);
        panel.batches[static_cast<std::size_t>(row.t)].push_back(
            {EntryIndex{row.r, row.c}, row.v});
    }
    return panel;
}

void write_dense_panel(const std::string& dir, const Panel& panel) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["m1"] = panel.m1;
    manifest["m2"] = panel.m2;
    manifest["T"] = panel.T;
    manifest["sigma_x"] = panel.family.sigma_x;
    manifest["times"] = nlohmann::json::array();
    for (int t = 0; t < panel.T; ++t) {
        nlohmann::json entry;
        entry["t"] = t;
        auto files = nlohmann::json::array();
        auto ys = nlohmann::json::array();
        const auto& batch = panel.batches[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto* dm = std::get_if<DenseMat>(&batch[i].design);
            if (!dm) throw UnsupportedFamily("manifest format holds dense designs only");
            char name[64];
            std::snprintf(name, sizeof(name), "x_t%04d_i%06zu.dmr", t, i);
            write_dmr1((fs::path(dir) / name).string(), dm->x);
            files.push_back(name);
            ys.push_back(batch[i].y);
        }
        entry["designs"] = files;
        entry["y"] = ys;
        manifest["times"].push_back(entry);
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << '\n';
}

Panel read_dense_panel(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(is);
    Panel panel;
    panel.m1 = manifest.at("m1").get<Eigen::Index>();
    panel.m2 = manifest.at("m2").get<Eigen::Index>();
    panel.T = manifest.at("T").get<int>();
    panel.family = DesignFamily::sensing(panel.m1, panel.m2,
                                         manifest.at("sigma_x").get<double>());
    panel.batches.resize(static_cast<std::size_t>(panel.T));
    const fs::path dir = fs::path(manifest_path).parent_path();
    for (const auto& entry : manifest.at("times")) {
        const int t = entry.at("t").get<int>();
        const auto& files = entry.at("designs");
        const auto& ys = entry.at("y");
        for (std::size_t i = 0; i < files.size(); ++i) {
            Mat x = read_dmr1((dir / files[i].get<std::string>()).string());
            panel.batches[static_cast<std::size_t>(t)].push_back(
                {DenseMat{std::move(x)}, ys[i].get<double>()});
        }
    }
    return panel;
}

} // namespace dynrec
