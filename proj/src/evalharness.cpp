#include "dynrec/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace dynrec {

double mse_t(const Mat& estimate, const Mat& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw DimMismatch("mse_t: dims differ");
    return (estimate - truth).squaredNorm() /
           (static_cast<double>(truth.rows()) * static_cast<double>(truth.cols()));
}

std::vector<std::optional<double>> test_mse(const std::vector<Mat>& estimates,
                                            const Panel& heldout) {
    if (static_cast<int>(estimates.size()) != heldout.T)
        throw DimMismatch("test_mse: estimate count differs from T");
    std::vector<std::optional<double>> out(static_cast<std::size_t>(heldout.T));
    for (int t = 0; t < heldout.T; ++t) {
        const auto& batch = heldout.batches[static_cast<std::size_t>(t)];
        if (batch.empty()) continue;  // reported missing, not zero
        double rss = 0.0;
        for (const auto& obs : batch) {
            const double r = inner(obs.design, estimates[static_cast<std::size_t>(t)]) - obs.y;
            rss += r * r;
        }
        out[static_cast<std::size_t>(t)] = rss / static_cast<double>(batch.size());
    }
    return out;
}

double bias_diagnostic(const std::vector<Mat>& truth_grid, const Vec& weights, int t) {
    if (static_cast<Eigen::Index>(truth_grid.size()) != weights.size())
        throw DimMismatch("bias_diagnostic: weights length differs from grid");
    Mat smoothed = Mat::Zero(truth_grid.front().rows(), truth_grid.front().cols());
    for (std::size_t j = 0; j < truth_grid.size(); ++j)
        if (weights(static_cast<Eigen::Index>(j)) != 0.0)
            smoothed += weights(static_cast<Eigen::Index>(j)) * truth_grid[j];
    return (truth_grid[static_cast<std::size_t>(t)] - smoothed).norm();
}

double noise_diagnostic(const Panel& panel, const std::vector<Mat>& truth_grid,
                        const Vec& weights, const DesignFamily& family) {
    if (family.kind == DesignKind::ConvKernel)
        throw UnsupportedFamily("noise diagnostic needs a closed-form E[yX]");
    Mat acc = Mat::Zero(panel.m1, panel.m2);
    for (int j = 0; j < panel.T; ++j) {
        const double wj = weights(j);
        if (wj == 0.0) continue;
        const auto& batch = panel.batches[static_cast<std::size_t>(j)];
        if (batch.empty()) continue;
        Mat delta = Mat::Zero(panel.m1, panel.m2);
        for (const auto& obs : batch) accumulate_adjoint(delta, obs.design, obs.y);
        delta /= static_cast<double>(batch.size());
        const Mat& m0 = truth_grid[static_cast<std::size_t>(j)];
        if (family.kind == DesignKind::Completion)
            delta -= m0 / (static_cast<double>(panel.m1) * static_cast<double>(panel.m2));
        else
            delta -= family.sigma_x * family.sigma_x * m0;
        acc += wj * delta;
    }
    return spectral_norm(acc);
}

std::pair<double, double> fit_log_slope(const std::vector<double>& xs,
                                        const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw Error("fit_log_slope: need matching xs/ys with >= 2 points");
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] <= 0.0 || ys[i] <= 0.0)
            throw Error("fit_log_slope: inputs must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) throw DegenerateFit("fit_log_slope: all xs equal");
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

LambdaContract lambda_contract_check(const Panel& panel,
                                     const std::vector<Mat>& truth_grid,
                                     const std::vector<Mat>& estimates, double h,
                                     const KernelSpec& kernel, double lambda_eq) {
    LambdaContract out;
    const double mu = panel.family.mu();
    double max_noise = 0.0;
    out.bound_holds = true;
    for (int t = 0; t < panel.T; ++t) {
        Vec w = weights(t, panel.T, h, kernel);
        max_noise = std::max(max_noise, noise_diagnostic(panel, truth_grid, w, panel.family));
        const double delta = bias_diagnostic(truth_grid, w, t);
        const double nuc = nuclear_norm(truth_grid[static_cast<std::size_t>(t)]);
        const double rad = delta + std::sqrt(delta * delta + 2.0 * lambda_eq * nuc / mu);
        const double bound = rad * rad /
                             (static_cast<double>(panel.m1) * static_cast<double>(panel.m2));
        out.bound_by_t.push_back(bound);
        const double err = mse_t(estimates[static_cast<std::size_t>(t)],
                                 truth_grid[static_cast<std::size_t>(t)]);
        out.mse_by_t.push_back(err);
        if (err > bound) out.bound_holds = false;
    }
    out.premise_holds = lambda_eq >= 2.0 * max_noise;
    return out;
}

// --- ingestion ---

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t comma = line.find(',', pos);
        std::size_t end = (comma == std::string::npos) ? line.size() : comma;
        out.push_back(line.substr(pos, end - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

} // namespace

IngestResult ingest_triplets(const std::string& path, int T, double train_fraction,
                             std::uint64_t seed) {
    if (T < 1) throw InvalidDims("ingest: T must be positive");
    if (train_fraction < 0.0 || train_fraction > 1.0)
        throw Error("ingest: train fraction must lie in [0, 1]");
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for read: " + path);
    std::string line;
    long ln = 0;
    if (!std::getline(is, line)) throw IoError("empty file: " + path);
    ++ln;
    struct Row {
        double ts;
        long row, col;
        double value;
        std::size_t order;  // stable tie-break
    };
    std::vector<Row> rows;
    while (std::getline(is, line)) {
        ++ln;
        if (line.empty()) continue;
        auto f = split_line(line);
        if (f.size() != 4) throw ParseError("expected 4 fields", ln);
        Row r;
        r.ts = parse_double(f[0], ln);
        r.row = static_cast<long>(parse_double(f[1], ln));
        r.col = static_cast<long>(parse_double(f[2], ln));
        r.value = parse_double(f[3], ln);
        r.order = rows.size();
        rows.push_back(r);
    }
    if (rows.size() < static_cast<std::size_t>(T))
        throw EmptyBin("ingest: fewer rows than bins");
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.ts < b.ts;
    });

    // dense id remap in order of first appearance
    std::map<long, Eigen::Index> row_map, col_map;
    IngestResult out;
    for (const auto& r : rows) {
        if (row_map.emplace(r.row, static_cast<Eigen::Index>(row_map.size())).second)
            out.row_ids.push_back(r.row);
        if (col_map.emplace(r.col, static_cast<Eigen::Index>(col_map.size())).second)
            out.col_ids.push_back(r.col);
    }
    const auto m1 = static_cast<Eigen::Index>(row_map.size());
    const auto m2 = static_cast<Eigen::Index>(col_map.size());

    for (Panel* p : {&out.train, &out.test}) {
        p->m1 = m1;
        p->m2 = m2;
        p->T = T;
        p->family = DesignFamily::completion(m1, m2);
        p->batches.resize(static_cast<std::size_t>(T));
    }

    // equal-count chronological bins; remainder spread over the earliest bins
    const std::size_t base = rows.size() / static_cast<std::size_t>(T);
    const std::size_t rem = rows.size() % static_cast<std::size_t>(T);
    std::mt19937_64 rng(seed);
    std::size_t cursor = 0;
    for (int t = 0; t < T; ++t) {
        const std::size_t count = base + (static_cast<std::size_t>(t) < rem ? 1 : 0);
        if (count == 0) throw EmptyBin("ingest: bin " + std::to_string(t) + " is empty");
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), cursor);
        cursor += count;
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n_train =
            static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(count)));
        for (std::size_t pos = 0; pos < count; ++pos) {
            const Row& r = rows[idx[pos]];
            Observation obs{EntryIndex{row_map[r.row], col_map[r.col]}, r.value};
            if (pos < n_train)
                out.train.batches[static_cast<std::size_t>(t)].push_back(obs);
            else
                out.test.batches[static_cast<std::size_t>(t)].push_back(obs);
        }
    }
    return out;
}

void write_id_map(const std::string& path, const std::vector<long>& ids) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "dense,original\n";
    for (std::size_t i = 0; i < ids.size(); ++i) os << i << ',' << ids[i] << '\n';
}

// --- csv tables ---

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (i) os << ',';
        os << table.header[i];
    }
    os << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            os << row[i];
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for read: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty csv: " + path);
    table.header = split_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        table.rows.push_back(split_line(line));
    }
    return table;
}

int max_threads() {
    if (const char* env = std::getenv("DYNREC_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const int nt = std::min<int>(max_threads(), static_cast<int>(count));
    if (nt <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nt));
    for (int k = 0; k < nt; ++k) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// --- experiment harness ---

Scenario scenario_from_string(const std::string& name) {
    if (name == "rho_tau_sweep") return Scenario::RhoTauSweep;
    if (name == "noise_dependence") return Scenario::NoiseDependence;
    if (name == "design_dependence") return Scenario::DesignDependence;
    if (name == "baseline_comparison") return Scenario::BaselineComparison;
    if (name == "real_data") return Scenario::RealData;
    throw Error("unknown scenario: " + name);
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::RhoTauSweep: return "rho_tau_sweep";
        case Scenario::NoiseDependence: return "noise_dependence";
        case Scenario::DesignDependence: return "design_dependence";
        case Scenario::BaselineComparison: return "baseline_comparison";
        case Scenario::RealData: return "real_data";
    }
    return "?";
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["scenario"] = to_string(scenario);
    j["m1"] = m1;
    j["m2"] = m2;
    j["rank"] = rank;
    j["T"] = T;
    j["rho"] = rho;
    j["kernel"] = to_string(kernel);
    j["bandwidth"] = bandwidth;
    j["c_h"] = c_h;
    j["lambda_mode"] = lambda_mode;
    j["lambda"] = lambda;
    j["cv_folds"] = cv_folds;
    j["sigma_xi"] = sigma_xi;
    j["replicates"] = replicates;
    j["base_seed"] = base_seed;
    j["out_dir"] = out_dir;
    j["solver_tol"] = solver_tol;
    j["solver_max_iters"] = solver_max_iters;
    j["ratio_groups"] = ratio_groups;
    j["sweep_horizons"] = sweep_horizons;
    j["betas"] = betas;
    j["alphas"] = alphas;
    j["sigmas"] = sigmas;
    j["rho_baseline_static"] = rho_baseline_static;
    j["estimators"] = estimators;
    j["data_csv"] = data_csv;
    j["train_fraction"] = train_fraction;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("scenario")) cfg.scenario = scenario_from_string(j["scenario"]);
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("m1", cfg.m1);
    get("m2", cfg.m2);
    get("rank", cfg.rank);
    get("T", cfg.T);
    get("rho", cfg.rho);
    if (j.contains("kernel")) cfg.kernel = kernel_kind_from_string(j["kernel"]);
    get("bandwidth", cfg.bandwidth);
    get("c_h", cfg.c_h);
    get("lambda_mode", cfg.lambda_mode);
    get("lambda", cfg.lambda);
    get("cv_folds", cfg.cv_folds);
    get("sigma_xi", cfg.sigma_xi);
    get("replicates", cfg.replicates);
    get("base_seed", cfg.base_seed);
    get("out_dir", cfg.out_dir);
    get("solver_tol", cfg.solver_tol);
    get("solver_max_iters", cfg.solver_max_iters);
    get("ratio_groups", cfg.ratio_groups);
    get("sweep_horizons", cfg.sweep_horizons);
    get("betas", cfg.betas);
    get("alphas", cfg.alphas);
    get("sigmas", cfg.sigmas);
    get("rho_baseline_static", cfg.rho_baseline_static);
    get("estimators", cfg.estimators);
    get("data_csv", cfg.data_csv);
    get("train_fraction", cfg.train_fraction);
    return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = cfg.to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

struct CellSpec {
    std::string name;
    double rho = 0.2;
    int T = 50;
    double sigma = 1.0;
    double beta = 0.0;
    double alpha = 0.0;
    EstimatorKind estimator = EstimatorKind::DLR;
};

struct FitPieces {
    double h = 0.0;
    double lambda = 0.0;
    double sigma_star = 0.0;
    std::int64_t n = 0;
};

PanelSummary summarize_panel(const Panel& panel) {
    PanelSummary s;
    std::vector<double> abs_y;
    for (int t = 0; t < panel.T; ++t) {
        const auto& batch = panel.batches[static_cast<std::size_t>(t)];
        double sum = 0.0;
        for (const auto& obs : batch) {
            sum += obs.y;
            abs_y.push_back(std::abs(obs.y));
        }
        s.mean_y.push_back(batch.empty() ? 0.0 : sum / static_cast<double>(batch.size()));
    }
    if (!abs_y.empty()) {
        std::sort(abs_y.begin(), abs_y.end(), std::greater<>());
        const std::size_t k = std::max<std::size_t>(1, abs_y.size() / 10);
        s.top_decile_abs_y =
            std::accumulate(abs_y.begin(), abs_y.begin() + static_cast<long>(k), 0.0) /
            static_cast<double>(k);
    }
    return s;
}

} // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string hash = config_hash(cfg);

    // stage bookkeeping for fail-fast reporting and .partial flushes
    std::string stage = "setup";
    CsvTable mse_table{{"t", "estimator", "mse", "cell", "replicate"}, {}};
    CsvTable summary{{"config_hash", "scenario", "cell", "estimator", "avg_mse", "slope"}, {}};
    CsvTable figure;
    std::string figure_name;
    auto flush_partial = [&]() {
        try {
            write_csv((fs::path(cfg.out_dir) / "mse_by_t.csv.partial").string(), mse_table);
            write_csv((fs::path(cfg.out_dir) / "summary.csv.partial").string(), summary);
        } catch (...) {
        }
    };

    try {
        ExperimentOutput output;
        const KernelSpec kern{cfg.kernel};
        SolverConfig base_solver;
        base_solver.tol = cfg.solver_tol;
        base_solver.max_iters = cfg.solver_max_iters;
        base_solver.gradient_mode = GradientMode::ExactSecondMoment;

        // --- real data path ---
        if (cfg.scenario == Scenario::RealData) {
            stage = "ingest";
            IngestResult data =
                ingest_triplets(cfg.data_csv, cfg.T, cfg.train_fraction, cfg.base_seed);
            write_id_map((fs::path(cfg.out_dir) / "row_ids.csv").string(), data.row_ids);
            write_id_map((fs::path(cfg.out_dir) / "col_ids.csv").string(), data.col_ids);
            PanelSummary summary_in = summarize_panel(data.train);
            std::int64_t n_avg = 0;
            for (const auto& b : data.train.batches) n_avg += static_cast<std::int64_t>(b.size());
            n_avg = std::max<std::int64_t>(1, n_avg / data.train.T);
            BandwidthPlan plan;
            plan.c_h = cfg.c_h;
            plan.rank_guess = cfg.rank;
            const double h = cfg.bandwidth >= 0.0
                                 ? cfg.bandwidth
                                 : plug_in_bandwidth(summary_in, DesignKind::Completion,
                                                     data.train.m1, data.train.m2, n_avg,
                                                     data.train.T, plan);
            for (const auto& est_name : cfg.estimators) {
                stage = "fit " + est_name;
                const EstimatorKind kind = estimator_from_string(est_name);
                SolverConfig solver = base_solver;
                if (cfg.lambda_mode == "fixed") {
                    solver.lambda = cfg.lambda;
                } else {
                    const double use_h = (kind == EstimatorKind::DLR) ? h : 0.0;
                    const double anchor = theory_lambda(data.train.family, n_avg,
                                                        data.train.T, use_h,
                                                        summary_in.top_decile_abs_y);
                    CvPlan cv{cfg.cv_folds, default_lambda_grid(anchor), cfg.base_seed};
                    auto [fine, res] =
                        cross_validate_lambda_refined(data.train, kind, h, kern, cv, solver);
                    write_cv_report(
                        (fs::path(cfg.out_dir) / ("cv_" + est_name + ".csv")).string(),
                        fine, res);
                    solver.lambda = res.lambda_star;
                }
                const auto t0 = std::chrono::steady_clock::now();
                auto [fit, traces] = recover_with_traces(data.train, kind, h, kern, solver);
                const auto t1 = std::chrono::steady_clock::now();
                auto scores = test_mse(fit, data.test);
                ResultRecord rec;
                rec.scenario = to_string(cfg.scenario);
                rec.cell = "real";
                rec.estimator = est_name;
                rec.seed = cfg.base_seed;
                rec.lambda_used = solver.lambda;
                rec.bandwidth_used = h;
                double sum = 0.0;
                int count = 0;
                for (int t = 0; t < data.test.T; ++t) {
                    const auto& s = scores[static_cast<std::size_t>(t)];
                    if (!s) continue;
                    rec.mse_by_t.push_back(*s);
                    mse_table.rows.push_back({std::to_string(t), est_name,
                                              format_double(*s), rec.cell, "0"});
                    sum += *s;
                    ++count;
                }
                rec.avg_mse = count ? sum / count : 0.0;
                for (const auto& tr : traces) rec.total_iters += tr.iters_used;
                rec.wall_ms =
                    std::chrono::duration<double, std::milli>(t1 - t0).count();
                summary.rows.push_back({hash, rec.scenario, rec.cell, est_name,
                                        format_double(rec.avg_mse), ""});
                output.records.push_back(std::move(rec));
            }
            stage = "write outputs";
            write_csv((fs::path(cfg.out_dir) / "mse_by_t.csv").string(), mse_table);
            write_csv((fs::path(cfg.out_dir) / "summary.csv").string(), summary);
            std::ofstream os(fs::path(cfg.out_dir) / "sidecar.json");
            nlohmann::json side = cfg.to_json();
            side["config_hash"] = hash;
            os << side.dump(2) << '\n';
            return output;
        }

        // --- synthetic scenarios ---
        stage = "build cells";
        std::vector<CellSpec> cells;
        switch (cfg.scenario) {
            case Scenario::RhoTauSweep:
                for (double g : cfg.ratio_groups)
                    for (int T : cfg.sweep_horizons) {
                        CellSpec c;
                        c.T = T;
                        c.rho = g / static_cast<double>(T);
                        c.sigma = cfg.sigma_xi;
                        c.name = "ratio=" + format_double(g) + ";T=" + std::to_string(T);
                        cells.push_back(c);
                    }
                break;
            case Scenario::NoiseDependence:
                for (double sig : cfg.sigmas)
                    for (double b : cfg.betas) {
                        CellSpec c;
                        c.T = cfg.T;
                        c.rho = cfg.rho;
                        c.sigma = sig;
                        c.beta = b;
                        c.name = "sigma=" + format_double(sig) + ";beta=" + format_double(b);
                        cells.push_back(c);
                    }
                break;
            case Scenario::DesignDependence:
                for (double sig : cfg.sigmas)
                    for (double a : cfg.alphas) {
                        CellSpec c;
                        c.T = cfg.T;
                        c.rho = cfg.rho;
                        c.sigma = sig;
                        c.alpha = a;
                        c.name = "sigma=" + format_double(sig) + ";alpha=" + format_double(a);
                        cells.push_back(c);
                    }
                break;
            case Scenario::BaselineComparison:
                for (const auto& est_name : cfg.estimators) {
                    CellSpec c;
                    c.T = cfg.T;
                    c.estimator = estimator_from_string(est_name);
                    c.rho = (c.estimator == EstimatorKind::DLR) ? cfg.rho
                                                                : cfg.rho_baseline_static;
                    c.sigma = cfg.sigma_xi;
                    c.name = est_name;
                    cells.push_back(c);
                }
                break;
            case Scenario::RealData:
                break;
        }

        const bool ar_noise = cfg.scenario == Scenario::NoiseDependence;
        auto build_cell_panel = [&](const CellSpec& c, int rep,
                                    std::vector<Mat>& truths) -> Panel {
            GroundTruthPath path(cfg.m1, cfg.m2, cfg.rank, c.T, cfg.base_seed);
            const std::size_t n = samples_per_time(c.rho, cfg.m1, cfg.m2);
            const std::uint64_t seed =
                cfg.base_seed + 1000003ull * static_cast<std::uint64_t>(rep + 1);
            NoiseSpec noise;
            noise.kind = ar_noise ? NoiseKind::PhiMixingAR : NoiseKind::IID;
            noise.sigma_xi = c.sigma;
            noise.beta = c.beta;
            noise.seed = seed + 500009;
            std::optional<DependentDesignSpec> dep;
            if (c.alpha > 0.0) dep = DependentDesignSpec{c.alpha, seed + 750019};
            auto [panel, tg] =
                build_panel(path, DesignFamily::completion(cfg.m1, cfg.m2), n, noise, dep,
                            seed);
            truths = std::move(tg);
            return std::move(panel);
        };

        // fit pieces per cell: plug-in bandwidth and the lambda rule
        stage = "anchor lambda";
        double c1_hat = 1.0;
        bool have_anchor = false;
        std::map<std::string, double> cell_lambda;  // mode "cv_cell"
        auto pieces_for = [&](const Panel& panel, EstimatorKind kind) -> FitPieces {
            FitPieces p;
            p.n = static_cast<std::int64_t>(panel.batches.front().size());
            PanelSummary ps = summarize_panel(panel);
            p.sigma_star = ps.top_decile_abs_y;
            if (kind == EstimatorKind::Static) {
                p.h = 0.0;
            } else if (cfg.bandwidth >= 0.0) {
                p.h = cfg.bandwidth;
            } else {
                BandwidthPlan plan;
                plan.c_h = cfg.c_h;
                plan.rank_guess = cfg.rank;
                p.h = plug_in_bandwidth(ps, panel.family.kind, panel.m1, panel.m2, p.n,
                                        panel.T, plan);
            }
            return p;
        };
        auto lambda_for = [&](const FitPieces& p, const Panel& panel,
                              EstimatorKind kind, const std::string& cell) -> double {
            const double use_h = (kind == EstimatorKind::Static) ? 0.0 : p.h;
            const double anchor =
                theory_lambda(panel.family, p.n, panel.T, use_h, p.sigma_star);
            if (cfg.lambda_mode == "fixed") return cfg.lambda;
            if (cfg.lambda_mode == "cv_cell") return cell_lambda.at(cell);
            if (cfg.lambda_mode == "cv_anchor" && have_anchor) return c1_hat * anchor;
            return -1.0;  // caller runs CV
        };

        if (cfg.lambda_mode == "cv_anchor" && !cells.empty()) {
            // one CV on the first cell; later cells rescale by the theory law
            std::vector<Mat> truths;
            Panel panel = build_cell_panel(cells.front(), 0, truths);
            const EstimatorKind kind = cells.front().estimator;
            FitPieces p = pieces_for(panel, kind);
            const double anchor =
                theory_lambda(panel.family, p.n, panel.T,
                              kind == EstimatorKind::Static ? 0.0 : p.h, p.sigma_star);
            CvPlan plan{cfg.cv_folds, default_lambda_grid(anchor), cfg.base_seed};
            SolverConfig solver = base_solver;
            auto [fine, res] =
                cross_validate_lambda_refined(panel, kind, p.h, kern, plan, solver);
            write_cv_report((fs::path(cfg.out_dir) / "cv_anchor.csv").string(), fine, res);
            c1_hat = res.lambda_star / anchor;
            have_anchor = true;
        } else if (cfg.lambda_mode == "cv_cell") {
            // one CV per cell on its first replicate, reused across replicates.
            // The two-step estimator takes the lambda its static stage selects
            // (the smoothing happens after the per-time fits are fixed).
            std::map<std::string, double> shared;  // cv setup -> lambda
            for (const CellSpec& c : cells) {
                const EstimatorKind cv_kind = (c.estimator == EstimatorKind::TwoStep)
                                                  ? EstimatorKind::Static
                                                  : c.estimator;
                char key[96];
                std::snprintf(key, sizeof(key), "%s;%.6f;%d;%.3f;%.3f;%.3f",
                              to_string(cv_kind).c_str(), c.rho, c.T, c.sigma, c.beta,
                              c.alpha);
                auto found = shared.find(key);
                if (found != shared.end()) {
                    cell_lambda[c.name] = found->second;
                    continue;
                }
                std::vector<Mat> truths;
                Panel panel = build_cell_panel(c, 0, truths);
                FitPieces p = pieces_for(panel, cv_kind);
                const double anchor = theory_lambda(
                    panel.family, p.n, panel.T,
                    cv_kind == EstimatorKind::Static ? 0.0 : p.h, p.sigma_star);
                CvPlan plan{cfg.cv_folds, default_lambda_grid(anchor), cfg.base_seed};
                SolverConfig solver = base_solver;
                auto [fine, res] =
                    cross_validate_lambda_refined(panel, cv_kind, p.h, kern, plan, solver);
                write_cv_report(
                    (fs::path(cfg.out_dir) / ("cv_" + c.name + ".csv")).string(), fine,
                    res);
                shared[key] = res.lambda_star;
                cell_lambda[c.name] = res.lambda_star;
            }
        }

        stage = "run cells";
        struct Task {
            std::size_t cell;
            int rep;
        };
        std::vector<Task> tasks;
        for (std::size_t ci = 0; ci < cells.size(); ++ci)
            for (int rep = 0; rep < cfg.replicates; ++rep) tasks.push_back({ci, rep});
        std::vector<ResultRecord> records(tasks.size());
        std::vector<std::string> task_errors(tasks.size());
        parallel_for(tasks.size(), [&](std::size_t ti) {
            const CellSpec& c = cells[tasks[ti].cell];
            const int rep = tasks[ti].rep;
            std::vector<Mat> truths;
            Panel panel = build_cell_panel(c, rep, truths);
            const EstimatorKind kind = c.estimator;
            FitPieces p = pieces_for(panel, kind);
            SolverConfig solver = base_solver;
            double lam = lambda_for(p, panel, kind, c.name);
            if (lam < 0.0) {
                const double anchor = theory_lambda(
                    panel.family, p.n, panel.T,
                    kind == EstimatorKind::Static ? 0.0 : p.h, p.sigma_star);
                CvPlan plan{cfg.cv_folds, default_lambda_grid(anchor),
                            cfg.base_seed + static_cast<std::uint64_t>(rep)};
                lam = cross_validate_lambda_refined(panel, kind, p.h, kern, plan, solver)
                          .second.lambda_star;
            }
            solver.lambda = lam;
            const auto t0 = std::chrono::steady_clock::now();
            auto [fit, traces] = recover_with_traces(panel, kind, p.h, kern, solver);
            const auto t1 = std::chrono::steady_clock::now();
            ResultRecord rec;
            rec.scenario = to_string(cfg.scenario);
            rec.cell = c.name;
            rec.estimator = to_string(kind);
            rec.seed = cfg.base_seed + 1000003ull * static_cast<std::uint64_t>(rep + 1);
            rec.lambda_used = lam;
            rec.bandwidth_used = p.h;
            double sum = 0.0;
            for (int t = 0; t < panel.T; ++t) {
                const double v = mse_t(fit[static_cast<std::size_t>(t)],
                                       truths[static_cast<std::size_t>(t)]);
                rec.mse_by_t.push_back(v);
                sum += v;
            }
            rec.avg_mse = sum / static_cast<double>(panel.T);
            for (const auto& tr : traces) rec.total_iters += tr.iters_used;
            rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            records[ti] = std::move(rec);
        });

        stage = "aggregate";
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            const ResultRecord& rec = records[ti];
            for (std::size_t t = 0; t < rec.mse_by_t.size(); ++t)
                mse_table.rows.push_back({std::to_string(t), rec.estimator,
                                          format_double(rec.mse_by_t[t]), rec.cell,
                                          std::to_string(tasks[ti].rep)});
        }

        // cell averages over replicates
        std::map<std::string, std::pair<double, int>> cell_avg;
        std::map<std::string, std::string> cell_estimator;
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            auto& acc = cell_avg[records[ti].cell];
            acc.first += records[ti].avg_mse;
            acc.second += 1;
            cell_estimator[records[ti].cell] = records[ti].estimator;
        }

        std::optional<double> slope;
        if (cfg.scenario == Scenario::RhoTauSweep) {
            std::vector<double> ratios, avgs;
            for (const auto& c : cells) {
                const auto& acc = cell_avg[c.name];
                ratios.push_back(c.rho * static_cast<double>(c.T));
                avgs.push_back(acc.first / acc.second);
            }
            slope = fit_log_slope(ratios, avgs).first;
            figure_name = "fig_loglog.csv";
            figure.header = {"ratio", "avg_mse", "log_ratio", "log_avg_mse", "cell"};
            for (std::size_t i = 0; i < ratios.size(); ++i)
                figure.rows.push_back({format_double(ratios[i]), format_double(avgs[i]),
                                       format_double(std::log(ratios[i])),
                                       format_double(std::log(avgs[i])), cells[i].name});
        } else if (cfg.scenario == Scenario::NoiseDependence ||
                   cfg.scenario == Scenario::DesignDependence) {
            figure_name = "fig_dependence.csv";
            const bool noise_axis = cfg.scenario == Scenario::NoiseDependence;
            figure.header = {noise_axis ? "beta" : "alpha", "sigma", "avg_mse"};
            for (const auto& c : cells) {
                const auto& acc = cell_avg[c.name];
                figure.rows.push_back({format_double(noise_axis ? c.beta : c.alpha),
                                       format_double(c.sigma),
                                       format_double(acc.first / acc.second)});
            }
        }

        for (const auto& [cell, acc] : cell_avg)
            summary.rows.push_back({hash, to_string(cfg.scenario), cell,
                                    cell_estimator[cell],
                                    format_double(acc.first / acc.second),
                                    slope ? format_double(*slope) : ""});

        stage = "write outputs";
        write_csv((fs::path(cfg.out_dir) / "mse_by_t.csv").string(), mse_table);
        write_csv((fs::path(cfg.out_dir) / "summary.csv").string(), summary);
        if (!figure_name.empty())
            write_csv((fs::path(cfg.out_dir) / figure_name).string(), figure);
        nlohmann::json side = cfg.to_json();
        side["config_hash"] = hash;
        if (slope) side["slope"] = *slope;
        std::ofstream os(fs::path(cfg.out_dir) / "sidecar.json");
        os << side.dump(2) << '\n';

        ExperimentOutput out;
        out.records = std::move(records);
        out.slope = slope;
        return out;
    } catch (const std::exception& e) {
        flush_partial();
        throw Error("experiment failed at stage '" + stage + "': " + e.what());
    }
}

} // namespace dynrec
