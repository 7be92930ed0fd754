// Command-line front end: simulate, recover, cv, ingest, experiment, slope.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dynrec/evalharness.hpp"

namespace fs = std::filesystem;
using namespace dynrec;

namespace {

struct CommonOpts {
    std::string kernel = "epanechnikov";
    double ch = 1.0;
    std::string bandwidth = "auto";
    std::string lambda = "cv";
    double tol = 1e-3;
    int max_iters = 500;
    int folds = 5;
    std::uint64_t seed = 1;
};

void add_common(CLI::App* app, CommonOpts& o) {
    app->add_option("--kernel", o.kernel, "epanechnikov|uniform|triangular|degenerate");
    app->add_option("--ch", o.ch, "bandwidth constant C_h");
    app->add_option("--bandwidth", o.bandwidth, "bandwidth in (0,1], 0, or 'auto'");
    app->add_option("--lambda", o.lambda, "penalty value or 'cv'");
    app->add_option("--tol", o.tol, "solver stopping tolerance");
    app->add_option("--max-iters", o.max_iters, "solver iteration cap");
    app->add_option("--folds", o.folds, "cross-validation folds");
    app->add_option("--seed", o.seed, "random seed");
}

double resolve_bandwidth(const std::string& spec, const Panel& panel, double ch,
                         int rank_guess) {
    if (spec != "auto") return std::stod(spec);
    PanelSummary ps;
    {
        // reuse the harness plug-ins through a tiny local summary
        std::vector<double> abs_y;
        for (const auto& batch : panel.batches) {
            double sum = 0.0;
            for (const auto& obs : batch) {
                sum += obs.y;
                abs_y.push_back(std::abs(obs.y));
            }
            ps.mean_y.push_back(batch.empty() ? 0.0
                                              : sum / static_cast<double>(batch.size()));
        }
        std::sort(abs_y.begin(), abs_y.end(), std::greater<>());
        const std::size_t k = std::max<std::size_t>(1, abs_y.size() / 10);
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += abs_y[i];
        ps.top_decile_abs_y = s / static_cast<double>(k);
    }
    std::int64_t n = 0;
    for (const auto& b : panel.batches) n += static_cast<std::int64_t>(b.size());
    n = std::max<std::int64_t>(1, n / panel.T);
    BandwidthPlan plan;
    plan.c_h = ch;
    plan.rank_guess = rank_guess;
    return plug_in_bandwidth(ps, panel.family.kind, panel.m1, panel.m2, n, panel.T, plan);
}

double resolve_lambda(const std::string& spec, const Panel& panel, EstimatorKind kind,
                      double h, const KernelSpec& kern, const CommonOpts& o,
                      const SolverConfig& solver, const std::string& report_path) {
    if (spec != "cv") return std::stod(spec);
    std::vector<double> abs_y;
    for (const auto& batch : panel.batches)
        for (const auto& obs : batch) abs_y.push_back(std::abs(obs.y));
    std::sort(abs_y.begin(), abs_y.end(), std::greater<>());
    const std::size_t k = std::max<std::size_t>(1, abs_y.size() / 10);
    double sigma_star = 0.0;
    for (std::size_t i = 0; i < k; ++i) sigma_star += abs_y[i];
    sigma_star /= static_cast<double>(k);
    std::int64_t n = 0;
    for (const auto& b : panel.batches) n += static_cast<std::int64_t>(b.size());
    n = std::max<std::int64_t>(1, n / panel.T);
    const double use_h = (kind == EstimatorKind::Static) ? 0.0 : h;
    const double anchor = theory_lambda(panel.family, n, panel.T, use_h, sigma_star);
    CvPlan plan{o.folds, default_lambda_grid(anchor), o.seed};
    auto [fine, res] = cross_validate_lambda_refined(panel, kind, h, kern, plan, solver);
    if (!report_path.empty()) write_cv_report(report_path, fine, res);
    return res.lambda_star;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic low-rank matrix recovery"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic panel");
    Eigen::Index m1 = 120, m2 = 80;
    int rank = 5, T = 50;
    double rho = 0.2, sigma = 1.0, beta = 0.0, alpha = 0.0;
    std::string family = "completion";
    double sigma_x = 1.0;
    std::string out_dir = "sim_out";
    std::uint64_t sim_seed = 1;
    sim->add_option("--m1", m1);
    sim->add_option("--m2", m2);
    sim->add_option("--rank", rank);
    sim->add_option("--T", T);
    sim->add_option("--rho", rho);
    sim->add_option("--sigma", sigma, "noise standard deviation");
    sim->add_option("--beta", beta, "AR noise dependence in [0,1)");
    sim->add_option("--alpha", alpha, "design carry-over fraction in [0,1)");
    sim->add_option("--family", family, "completion|sensing");
    sim->add_option("--sigma-x", sigma_x, "sensing design entry sd");
    sim->add_option("--out", out_dir);
    sim->add_option("--seed", sim_seed);

    // recover
    auto* rec = app.add_subcommand("recover", "fit an estimator on a triplet panel");
    std::string rec_input, rec_out = "recover_out", rec_estimator = "dlr";
    int rec_rank_guess = 5;
    CommonOpts rec_opts;
    rec->add_option("--input", rec_input, "triplet csv (t,row,col,value)")->required();
    rec->add_option("--estimator", rec_estimator, "dlr|static|twostep");
    rec->add_option("--rank-guess", rec_rank_guess, "rank guess for the plug-in bandwidth");
    rec->add_option("--out", rec_out);
    add_common(rec, rec_opts);

    // cv
    auto* cv = app.add_subcommand("cv", "cross-validate lambda on a triplet panel");
    std::string cv_input, cv_out = "cv_report.csv", cv_estimator = "dlr";
    int cv_rank_guess = 5;
    CommonOpts cv_opts;
    cv->add_option("--input", cv_input)->required();
    cv->add_option("--estimator", cv_estimator);
    cv->add_option("--rank-guess", cv_rank_guess);
    cv->add_option("--out", cv_out);
    add_common(cv, cv_opts);

    // ingest
    auto* ing = app.add_subcommand("ingest", "bin a timestamped rating file");
    std::string ing_input, ing_out = "ingest_out";
    int ing_T = 100;
    double split = 0.8;
    std::uint64_t ing_seed = 1;
    ing->add_option("--input", ing_input, "csv with header timestamp,row,col,value")
        ->required();
    ing->add_option("--T", ing_T, "number of time bins");
    ing->add_option("--split", split, "train fraction per bin");
    ing->add_option("--out", ing_out);
    ing->add_option("--seed", ing_seed);

    // experiment
    auto* exp = app.add_subcommand("experiment", "run a configured scenario");
    std::string exp_config, exp_scenario, exp_out;
    int exp_replicates = -1;
    std::uint64_t exp_seed = 0;
    bool exp_have_seed = false;
    exp->add_option("--config", exp_config, "JSON config file");
    exp->add_option("--scenario", exp_scenario,
                    "rho_tau_sweep|noise_dependence|design_dependence|"
                    "baseline_comparison|real_data");
    exp->add_option("--out", exp_out);
    exp->add_option("--replicates", exp_replicates);
    exp->add_option("--seed", exp_seed)->each([&](const std::string&) {
        exp_have_seed = true;
    });

    // slope
    auto* slp = app.add_subcommand("slope", "log-log OLS over a csv with two columns");
    std::string slp_input;
    std::string slp_x = "ratio", slp_y = "avg_mse";
    slp->add_option("--input", slp_input)->required();
    slp->add_option("--x", slp_x, "x column name");
    slp->add_option("--y", slp_y, "y column name");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            fs::create_directories(out_dir);
            GroundTruthPath path(m1, m2, rank, T, sim_seed);
            NoiseSpec noise{beta > 0.0 ? NoiseKind::PhiMixingAR : NoiseKind::IID, sigma,
                            beta, sim_seed + 500009};
            std::optional<DependentDesignSpec> dep;
            if (alpha > 0.0) dep = DependentDesignSpec{alpha, sim_seed + 750019};
            DesignFamily fam = family == "sensing"
                                   ? DesignFamily::sensing(m1, m2, sigma_x)
                                   : DesignFamily::completion(m1, m2);
            auto [panel, truths] =
                build_panel(path, fam, samples_per_time(rho, m1, m2), noise, dep, sim_seed);
            if (fam.kind == DesignKind::Completion)
                write_triplets((fs::path(out_dir) / "panel.csv").string(), panel);
            else
                write_dense_panel((fs::path(out_dir) / "panel").string(), panel);
            for (int t = 0; t < T; ++t) {
                char name[32];
                std::snprintf(name, sizeof(name), "truth_%04d.dmr", t);
                write_dmr1((fs::path(out_dir) / name).string(),
                           truths[static_cast<std::size_t>(t)]);
            }
            nlohmann::json side;
            side["m1"] = m1;
            side["m2"] = m2;
            side["rank"] = rank;
            side["T"] = T;
            side["rho"] = rho;
            side["sigma"] = sigma;
            side["beta"] = beta;
            side["alpha"] = alpha;
            side["family"] = family;
            side["sigma_x"] = sigma_x;
            side["seed"] = sim_seed;
            std::ofstream os(fs::path(out_dir) / "sidecar.json");
            os << side.dump(2) << '\n';
            std::cout << "panel written to " << out_dir << "\n";
        } else if (*rec) {
            fs::create_directories(rec_out);
            Panel panel = read_triplets(rec_input);
            KernelSpec kern{kernel_kind_from_string(rec_opts.kernel)};
            SolverConfig solver;
            solver.tol = rec_opts.tol;
            solver.max_iters = rec_opts.max_iters;
            const EstimatorKind kind = estimator_from_string(rec_estimator);
            const double h = resolve_bandwidth(rec_opts.bandwidth, panel, rec_opts.ch,
                                               rec_rank_guess);
            solver.lambda = resolve_lambda(
                rec_opts.lambda, panel, kind, h, kern, rec_opts, solver,
                (fs::path(rec_out) / "cv_report.csv").string());
            auto [fit, traces] = recover_with_traces(panel, kind, h, kern, solver);
            for (int t = 0; t < panel.T; ++t) {
                char name[32];
                std::snprintf(name, sizeof(name), "m_%04d.dmr", t);
                write_dmr1((fs::path(rec_out) / name).string(),
                           fit[static_cast<std::size_t>(t)]);
            }
            write_traces_csv((fs::path(rec_out) / "traces.csv").string(), traces);
            std::cout << "bandwidth " << h << ", lambda " << solver.lambda
                      << ", estimates in " << rec_out << "\n";
        } else if (*cv) {
            Panel panel = read_triplets(cv_input);
            KernelSpec kern{kernel_kind_from_string(cv_opts.kernel)};
            SolverConfig solver;
            solver.tol = cv_opts.tol;
            solver.max_iters = cv_opts.max_iters;
            const EstimatorKind kind = estimator_from_string(cv_estimator);
            const double h =
                resolve_bandwidth(cv_opts.bandwidth, panel, cv_opts.ch, cv_rank_guess);
            CommonOpts o = cv_opts;
            o.lambda = "cv";
            const double lam =
                resolve_lambda("cv", panel, kind, h, kern, o, solver, cv_out);
            std::cout << "lambda* = " << lam << " (report: " << cv_out << ")\n";
        } else if (*ing) {
            fs::create_directories(ing_out);
            IngestResult res = ingest_triplets(ing_input, ing_T, split, ing_seed);
            write_triplets((fs::path(ing_out) / "train.csv").string(), res.train);
            write_triplets((fs::path(ing_out) / "test.csv").string(), res.test);
            write_id_map((fs::path(ing_out) / "row_ids.csv").string(), res.row_ids);
            write_id_map((fs::path(ing_out) / "col_ids.csv").string(), res.col_ids);
            std::cout << "ingested " << res.train.m1 << "x" << res.train.m2 << " over "
                      << ing_T << " bins into " << ing_out << "\n";
        } else if (*exp) {
            ExperimentConfig cfg;
            if (!exp_config.empty()) {
                std::ifstream is(exp_config);
                if (!is) throw IoError("cannot open config: " + exp_config);
                cfg = ExperimentConfig::from_json(nlohmann::json::parse(is));
            }
            if (!exp_scenario.empty()) cfg.scenario = scenario_from_string(exp_scenario);
            if (!exp_out.empty()) cfg.out_dir = exp_out;
            if (exp_replicates > 0) cfg.replicates = exp_replicates;
            if (exp_have_seed) cfg.base_seed = exp_seed;
            ExperimentOutput out = run_experiment(cfg);
            std::cout << "wrote " << out.records.size() << " records to " << cfg.out_dir;
            if (out.slope) std::cout << ", slope " << *out.slope;
            std::cout << "\n";
        } else if (*slp) {
            CsvTable table = read_csv(slp_input);
            auto col = [&](const std::string& name) {
                for (std::size_t i = 0; i < table.header.size(); ++i)
                    if (table.header[i] == name) return i;
                throw Error("column not found: " + name);
            };
            const std::size_t xi = col(slp_x), yi = col(slp_y);
            std::vector<double> xs, ys;
            for (const auto& row : table.rows) {
                xs.push_back(std::stod(row[xi]));
                ys.push_back(std::stod(row[yi]));
            }
            auto [slope, intercept] = fit_log_slope(xs, ys);
            std::cout << "slope " << slope << ", intercept " << intercept << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
