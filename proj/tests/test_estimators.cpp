#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dynrec/estimators.hpp"
#include "dynrec/evalharness.hpp"
#include "dynrec/synthgen.hpp"
#include "oracles.hpp"

using namespace dynrec;

namespace {

std::pair<Panel, std::vector<Mat>> toy_panel(int T, std::size_t n, double sigma,
                                             std::uint64_t seed) {
    GroundTruthPath path(14, 10, 2, T, seed);
    NoiseSpec noise{NoiseKind::IID, sigma, 0.0, seed + 5};
    return build_panel(path, DesignFamily::completion(14, 10), n, noise, std::nullopt,
                       seed + 9);
}

} // namespace

TEST_CASE("degenerate reductions collapse all estimators to static") {
    auto [panel, truths] = toy_panel(4, 50, 0.2, 11);
    SolverConfig cfg;
    cfg.lambda = 0.003;
    cfg.tol = 1e-10;
    auto stat = recover(panel, EstimatorKind::Static, 0.3, KernelSpec::epanechnikov(), cfg);
    auto dlr = recover(panel, EstimatorKind::DLR, 0.0, KernelSpec::degenerate(), cfg);
    auto ts = recover(panel, EstimatorKind::TwoStep, 0.0, KernelSpec::degenerate(), cfg);
    for (int t = 0; t < panel.T; ++t) {
        CHECK((stat[t] - dlr[t]).norm() == 0.0);  // shared code path
        CHECK((stat[t] - ts[t]).norm() < 1e-12);
    }
}

TEST_CASE("two-step output is the kernel average of static outputs") {
    auto [panel, truths] = toy_panel(5, 60, 0.2, 21);
    SolverConfig cfg;
    cfg.lambda = 0.003;
    cfg.tol = 1e-8;
    auto stat = recover(panel, EstimatorKind::Static, 0.0, KernelSpec::degenerate(), cfg);
    auto ts = recover(panel, EstimatorKind::TwoStep, 0.5, KernelSpec::uniform(), cfg);
    for (int t = 0; t < panel.T; ++t) {
        Vec w = weights(t, panel.T, 0.5, KernelSpec::uniform());
        Mat expect = Mat::Zero(panel.m1, panel.m2);
        for (int j = 0; j < panel.T; ++j) expect += w(j) * stat[j];
        CHECK((ts[t] - expect).norm() < 1e-12);
    }
}

TEST_CASE("theory lambda scaling laws") {
    const DesignFamily fam = DesignFamily::completion(100, 100);
    const double l1 = theory_lambda(fam, 1000, 10, 0.35, 1.0);
    const double l2 = theory_lambda(fam, 2000, 10, 0.35, 1.0);
    // ceil(Th) = 4 in both: doubling n alone shrinks lambda by sqrt(2)
    CHECK(l2 == doctest::Approx(l1 / std::sqrt(2.0)).epsilon(1e-12));

    // degenerate bandwidth reduces to the static scale n * 1
    const double ls = theory_lambda(fam, 1000, 10, 0.0, 1.0);
    CHECK(ls == doctest::Approx(2.0 * std::sqrt(std::log(200.0) / 1000.0)).epsilon(1e-12));

    const double lv = theory_lambda(fam, 1000, 1, 1.0, 1.0);
    CHECK(lv == doctest::Approx(2.0 * std::sqrt(std::log(200.0) / 1000.0)).epsilon(1e-12));

    CHECK_THROWS_AS(theory_lambda(fam, 0, 10, 0.1, 1.0), InvalidDims);
}

TEST_CASE("default grid is eight log-spaced multiples") {
    auto grid = default_lambda_grid(2.0);
    REQUIRE(grid.size() == 8);
    CHECK(grid.front() == doctest::Approx(2.0 * 1e-2));
    CHECK(grid.back() == doctest::Approx(2.0 * std::pow(10.0, 1.5)));
    for (std::size_t i = 1; i < grid.size(); ++i)
        CHECK(grid[i] / grid[i - 1] == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
}

TEST_CASE("single-lambda grid returns a plain held-out score") {
    auto [panel, truths] = toy_panel(3, 45, 0.3, 31);
    SolverConfig cfg;
    cfg.tol = 1e-8;
    CvPlan plan{3, {0.004}, 77};
    CvResult res = cross_validate_lambda(panel, EstimatorKind::Static, 0.0,
                                         KernelSpec::degenerate(), plan, cfg);
    CHECK(res.lambda_star == 0.004);
    REQUIRE(res.scores.size() == 1);
    CHECK(res.scores[0] > 0.0);
    CHECK(std::isfinite(res.scores[0]));
}

TEST_CASE("cv separates a sane lambda from an absurd one") {
    // noiseless and almost fully observed: tiny lambda must win by a mile
    GroundTruthPath path(8, 6, 1, 2, 41);
    NoiseSpec noise{NoiseKind::IID, 0.0, 0.0, 42};
    auto [panel, truths] =
        build_panel(path, DesignFamily::completion(8, 6), 200, noise, std::nullopt, 43);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    cfg.max_iters = 2000;
    CvPlan plan{5, {1e-6, 1e3}, 7};
    CvResult res = cross_validate_lambda(panel, EstimatorKind::DLR, 0.5,
                                         KernelSpec::epanechnikov(), plan, cfg);
    CHECK(res.lambda_star == 1e-6);
    CHECK(res.scores[0] < res.scores[1]);
}

TEST_CASE("duplicate grid entries score identically and ties prefer larger lambda") {
    auto [panel, truths] = toy_panel(3, 45, 0.3, 51);
    SolverConfig cfg;
    cfg.tol = 1e-8;
    CvPlan plan{3, {0.01, 0.01}, 99};
    CvResult res = cross_validate_lambda(panel, EstimatorKind::Static, 0.0,
                                         KernelSpec::degenerate(), plan, cfg);
    CHECK(res.scores[0] == res.scores[1]);
    CHECK(res.lambda_star == 0.01);
}

TEST_CASE("cv is reproducible bit-for-bit under the same split seed") {
    auto [panel, truths] = toy_panel(3, 60, 0.4, 61);
    SolverConfig cfg;
    cfg.tol = 1e-8;
    CvPlan plan{4, default_lambda_grid(0.01), 1234};
    auto r1 = cross_validate_lambda(panel, EstimatorKind::DLR, 0.4,
                                    KernelSpec::epanechnikov(), plan, cfg);
    auto r2 = cross_validate_lambda(panel, EstimatorKind::DLR, 0.4,
                                    KernelSpec::epanechnikov(), plan, cfg);
    CHECK(r1.lambda_star == r2.lambda_star);
    for (std::size_t i = 0; i < r1.scores.size(); ++i) CHECK(r1.scores[i] == r2.scores[i]);
}

TEST_CASE("tiny batches are exempted from the fold split") {
    auto [panel, truths] = toy_panel(3, 60, 0.4, 71);
    panel.batches[1].resize(2);  // below the fold count: train-only
    SolverConfig cfg;
    cfg.tol = 1e-8;
    CvPlan plan{5, {0.01}, 5};
    CHECK_NOTHROW(cross_validate_lambda(panel, EstimatorKind::Static, 0.0,
                                        KernelSpec::degenerate(), plan, cfg));
}

TEST_CASE("recovered rank is nonincreasing along the lambda grid") {
    auto [panel, truths] = toy_panel(3, 120, 0.3, 81);
    SolverConfig cfg;
    cfg.tol = 1e-9;
    cfg.max_iters = 1000;
    Eigen::Index prev_rank_sum = std::numeric_limits<Eigen::Index>::max();
    for (double lam : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) {
        SolverConfig c = cfg;
        c.lambda = lam;
        auto fits = recover(panel, EstimatorKind::DLR, 0.6, KernelSpec::epanechnikov(), c);
        Eigen::Index rank_sum = 0;
        for (const auto& m : fits) rank_sum += numerical_rank(m);
        CHECK(rank_sum <= prev_rank_sum);
        prev_rank_sum = rank_sum;
    }
}

TEST_CASE("refined cv recenters below a pinned low edge") {
    // noiseless data wants the smallest lambda available; the coarse winner
    // sits on the grid edge and the fine stage must push further down
    GroundTruthPath path(8, 6, 1, 2, 45);
    NoiseSpec noise{NoiseKind::IID, 0.0, 0.0, 46};
    auto [panel, truths] =
        build_panel(path, DesignFamily::completion(8, 6), 150, noise, std::nullopt, 47);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    cfg.max_iters = 2000;
    cfg.gradient_mode = GradientMode::Empirical;  // noiseless fit is exact at tiny lambda
    // overshot anchor: the best coarse lambda is its lowest point, so the
    // fine stage must extend the search below the edge
    CvPlan coarse{4, default_lambda_grid(1.0), 3};
    auto [fine, res] = cross_validate_lambda_refined(panel, EstimatorKind::DLR, 0.5,
                                                     KernelSpec::epanechnikov(), coarse,
                                                     cfg);
    CHECK(fine.lambda_grid.front() < coarse.lambda_grid.front());
    CHECK(res.lambda_star < coarse.lambda_grid.front());
    CHECK(res.scores.front() <= res.scores.back());
}

TEST_CASE("empty grid raises") {
    auto [panel, truths] = toy_panel(2, 30, 0.3, 91);
    SolverConfig cfg;
    CvPlan plan{3, {}, 1};
    CHECK_THROWS_AS(cross_validate_lambda(panel, EstimatorKind::Static, 0.0,
                                          KernelSpec::degenerate(), plan, cfg),
                    EmptyGrid);
}
