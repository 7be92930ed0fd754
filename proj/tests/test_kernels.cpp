#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dynrec/kernels.hpp"
#include "oracles.hpp"

using namespace dynrec;

TEST_CASE("degenerate kernel puts all weight at t") {
    Vec w = weights(2, 5, 0.3, KernelSpec::degenerate());
    for (int j = 0; j < 5; ++j) CHECK(w(j) == (j == 2 ? 1.0 : 0.0));
    // h = 0 behaves the same for any kind
    Vec w0 = weights(2, 5, 0.0, KernelSpec::epanechnikov());
    CHECK(w0(2) == 1.0);
}

TEST_CASE("uniform kernel with full window is flat") {
    Vec w = weights(2, 5, 1.0, KernelSpec::uniform());
    for (int j = 0; j < 5; ++j) CHECK(w(j) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("epanechnikov weights match direct evaluation") {
    // T = 7, t = 3 (the interior midpoint), h = 3/7 so Th = 3
    const int T = 7, t = 3;
    const double h = 3.0 / 7.0;
    KernelSpec k = KernelSpec::epanechnikov();
    Vec w = weights(t, T, h, k);
    double raw[7];
    double total = 0.0;
    for (int j = 0; j < T; ++j) {
        const double x = (j - t) / 3.0;
        raw[j] = std::abs(x) > 1.0 ? 0.0 : 0.75 * (1.0 - x * x);
        total += raw[j];
    }
    for (int j = 0; j < T; ++j) CHECK(w(j) == doctest::Approx(raw[j] / total).epsilon(1e-12));
    CHECK(w(0) == 0.0);  // |j - t| = Th lies outside the open support
    CHECK(w(6) == 0.0);
}

TEST_CASE("weights sum to one and are symmetric at interior t") {
    for (KernelSpec k : {KernelSpec::epanechnikov(), KernelSpec::uniform(),
                         KernelSpec::triangular()}) {
        for (double h : {0.1, 0.25, 0.5}) {
            const int T = 21, t = 10;
            Vec w = weights(t, T, h, k);
            CHECK(std::abs(w.sum() - 1.0) < 1e-12);
            for (int d = 1; d <= 10; ++d)
                CHECK(w(t + d) == doctest::Approx(w(t - d)).epsilon(1e-12));
            const int th = static_cast<int>(std::ceil(T * h));
            for (int j = 0; j < T; ++j)
                if (std::abs(j - t) >= th + 1) CHECK(w(j) == 0.0);
        }
    }
}

TEST_CASE("kernel constants closed form and by quadrature") {
    auto [ae, re] = kernel_constants(KernelSpec::epanechnikov());
    CHECK(ae == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(re == doctest::Approx(0.6).epsilon(1e-15));
    auto [au, ru] = kernel_constants(KernelSpec::uniform());
    CHECK(au == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(ru == doctest::Approx(0.5).epsilon(1e-15));
    auto [at, rt] = kernel_constants(KernelSpec::triangular());
    CHECK(at == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(rt == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    for (KernelSpec k : {KernelSpec::epanechnikov(), KernelSpec::uniform(),
                         KernelSpec::triangular()}) {
        auto [alpha, r] = kernel_constants(k);
        const double mass = oracles::simpson([&](double x) { return k(x); });
        const double alpha_q = oracles::simpson([&](double x) { return x * x * k(x); });
        const double r_q = oracles::simpson([&](double x) { return k(x) * k(x); });
        CHECK(std::abs(mass - 1.0) < 1e-10);
        CHECK(std::abs(alpha_q - alpha) < 1e-10);
        CHECK(std::abs(r_q - r) < 1e-10);
    }
    CHECK_THROWS_AS(kernel_constants(KernelSpec::degenerate()), UnsupportedFamily);
}

TEST_CASE("plug-in bandwidth branches and arithmetic") {
    BandwidthPlan plan;
    plan.rank_guess = 1;
    plan.plug_in_scale = 1.0;
    plan.plug_in_d2 = 1.0;
    PanelSummary empty_summary;

    // huge n drives the formula toward zero: degenerate branch
    CHECK(plug_in_bandwidth(empty_summary, DesignKind::Completion, 2, 2, 1000000000,
                            10, plan) == 0.0);

    // direct arithmetic of the closed form at a realistic setting
    BandwidthPlan plan2;
    plan2.rank_guess = 10;
    plan2.plug_in_scale = 5.0;
    plan2.plug_in_d2 = 1.0;
    const double h = plug_in_bandwidth(empty_summary, DesignKind::Completion, 500, 300,
                                       30000, 100, plan2);
    const double expect =
        std::pow(5.0 * 5.0 * 10.0 * 500.0 * std::log(800.0) / (30000.0 * 100.0), 0.2);
    CHECK(h == doctest::Approx(expect).epsilon(1e-12));
    CHECK(h > 0.0);
    CHECK(h < 1.0);

    // linearity in c_h before clamping
    CHECK(plug_in_bandwidth_raw(5.0, 10, DesignKind::Completion, 500, 300, 30000, 100,
                                2.0) == doctest::Approx(2.0 * expect).epsilon(1e-12));
}

TEST_CASE("plug-in bandwidth monotonicity and scaling") {
    const double base = plug_in_bandwidth_raw(2.0, 5, DesignKind::Completion, 120, 80,
                                              1000, 50, 1.0);
    // nonincreasing in nT
    CHECK(plug_in_bandwidth_raw(2.0, 5, DesignKind::Completion, 120, 80, 2000, 50, 1.0) <
          base);
    // nondecreasing in rank and scale
    CHECK(plug_in_bandwidth_raw(2.0, 6, DesignKind::Completion, 120, 80, 1000, 50, 1.0) >
          base);
    CHECK(plug_in_bandwidth_raw(3.0, 5, DesignKind::Completion, 120, 80, 1000, 50, 1.0) >
          base);
    // doubling nT scales by exactly 2^{-1/5}
    const double doubled = plug_in_bandwidth_raw(2.0, 5, DesignKind::Completion, 120, 80,
                                                 1000, 100, 1.0);
    CHECK(doubled == doctest::Approx(base * std::pow(2.0, -0.2)).epsilon(1e-12));
}

TEST_CASE("plug-in estimates derive from the summary") {
    PanelSummary s;
    s.mean_y = {1.0, 2.0, 1.5};
    s.top_decile_abs_y = 4.0;
    BandwidthPlan plan;
    plan.rank_guess = 2;
    plug_in_bandwidth(s, DesignKind::Completion, 40, 30, 200, 3, plan);
    CHECK(plan.plug_in_scale == doctest::Approx(4.0));
    CHECK(plan.plug_in_d2 == doctest::Approx(1.5));  // |2-1| + |1.5-2|
}

TEST_CASE("invalid dims raise") {
    BandwidthPlan plan;
    plan.plug_in_scale = 1.0;
    PanelSummary s;
    CHECK_THROWS_AS(
        plug_in_bandwidth(s, DesignKind::Completion, 0, 10, 100, 10, plan),
        InvalidDims);
    CHECK_THROWS_AS(weights(5, 5, 0.1, KernelSpec::uniform()), IndexOutOfRange);
}
