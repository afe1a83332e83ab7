// Conditional spline coupling flow: spline-level invertibility and log-det
// exactness, identity initialization, density normalization by quadrature,
// sampling consistency, and finite-difference gradient checks.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mnpe/flow.hpp"

using namespace mnpe;

namespace {

constexpr double kTail = 5.0;

struct SplineParams {
    std::vector<double> widths, heights, derivs;
};

SplineParams random_spline(Rng& rng, int bins) {
    SplineParams p;
    for (int i = 0; i < bins; ++i) {
        p.widths.push_back(std::exp(rng.normal(0.0, 0.8)));
        p.heights.push_back(std::exp(rng.normal(0.0, 0.8)));
    }
    for (int i = 0; i <= bins; ++i) p.derivs.push_back(std::exp(rng.normal(0.0, 0.6)));
    p.derivs.front() = 1.0;  // linear tails need unit boundary slope
    p.derivs.back() = 1.0;
    return p;
}

double gauss_logpdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * M_PI); }

}  // namespace

TEST_CASE("rq spline round-trips below 1e-10 across random parameters") {
    Rng rng(17);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const SplineParams p = random_spline(rng, 8);
        for (int i = 0; i < 50; ++i) {
            // Cover the interior, the boundary neighborhood, and the tails.
            const double x = rng.uniform(-1.3 * kTail, 1.3 * kTail);
            const auto [y, logdet_fwd] =
                rq_spline(x, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail);
            const auto [back, logdet_inv] =
                rq_spline(y, p.widths, p.heights, p.derivs, SplineDirection::kInverse, kTail);
            worst = std::max(worst, std::fabs(back - x));
            // The two log-dets are of the applied maps, so they cancel exactly.
            worst = std::max(worst, std::fabs(logdet_fwd + logdet_inv));
        }
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("rq spline is the identity outside the interval and monotone inside") {
    Rng rng(19);
    const SplineParams p = random_spline(rng, 6);
    for (double x : {-kTail - 2.0, -kTail, kTail, kTail + 3.5}) {
        const auto [y, logdet] =
            rq_spline(x, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail);
        CHECK(y == doctest::Approx(x).epsilon(1e-14));
        CHECK(logdet == doctest::Approx(0.0));
    }
    double prev = -1e300;
    for (int i = 0; i <= 400; ++i) {
        const double x = -kTail + 2.0 * kTail * i / 400.0;
        const auto [y, logdet] =
            rq_spline(x, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail);
        CHECK(y > prev);
        CHECK(std::isfinite(logdet));
        prev = y;
    }
    // Interval endpoints map to themselves.
    CHECK(rq_spline(-kTail + 1e-9, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail)
              .first == doctest::Approx(-kTail).epsilon(1e-6));
}

TEST_CASE("rq spline log-det matches the finite-difference slope") {
    Rng rng(23);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const SplineParams p = random_spline(rng, 10);
        for (int i = 0; i < 20; ++i) {
            const double x = rng.uniform(-kTail * 0.98, kTail * 0.98);
            const double h = 1e-6;
            auto at = [&](double v) {
                return rq_spline(v, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail)
                    .first;
            };
            const double slope = (at(x + h) - at(x - h)) / (2 * h);
            const double logdet =
                rq_spline(x, p.widths, p.heights, p.derivs, SplineDirection::kForward, kTail).second;
            worst = std::max(worst, std::fabs(std::log(slope) - logdet));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("degenerate bins are clamped and counted rather than breaking") {
    reset_spline_clamp_count();
    std::vector<double> widths = {1e-13, 1.0, 1.0, 1.0};
    std::vector<double> heights = {1.0, 1.0, 1.0, 1e-13};
    std::vector<double> derivs = {1.0, 0.5, 2.0, 0.7, 1.0};
    const auto [y, logdet] =
        rq_spline(0.3, widths, heights, derivs, SplineDirection::kForward, kTail);
    CHECK(std::isfinite(y));
    CHECK(std::isfinite(logdet));
    CHECK(spline_clamp_count() > 0);
    reset_spline_clamp_count();
    CHECK(spline_clamp_count() == 0);
}

TEST_CASE("fresh flows are exactly the standard normal") {
    for (int k : {1, 2, 3}) {
        FlowConfig config;
        config.dim = k;
        config.num_transforms = 3;
        config.num_bins = 5;
        config.conditioner_hidden = {16, 16};
        SplineCouplingFlow flow(config, 2);
        Rng rng(31);
        flow.init(rng);

        Rng draw(5);
        Vector condition(2);
        condition << 0.7, -0.4;
        for (int i = 0; i < 20; ++i) {
            Vector theta(k);
            for (int d = 0; d < k; ++d) theta[d] = draw.normal(0.0, 2.0);
            double want = 0.0;
            for (int d = 0; d < k; ++d) want += gauss_logpdf(theta[d]);
            CHECK(flow.log_prob(theta, condition) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("split sizes alternate and cover all coordinates") {
    FlowConfig config;
    config.dim = 3;
    config.num_transforms = 4;
    SplineCouplingFlow flow(config, 1);
    for (int m = 0; m < 4; ++m) {
        const auto [pass, transform] = flow.split_sizes(m);
        CHECK(pass + transform == 3);
        CHECK(transform >= 1);
    }
    CHECK(flow.split_sizes(0) != flow.split_sizes(1));

    FlowConfig one;
    one.dim = 1;
    SplineCouplingFlow f1(one, 2);
    CHECK(f1.split_sizes(0).first == 0);
    CHECK(f1.split_sizes(0).second == 1);
}

namespace {

// A flow with stirred conditioner weights so densities are genuinely
// non-Gaussian and condition-dependent.
SplineCouplingFlow stirred_flow(int k, int condition_width, std::uint64_t seed) {
    FlowConfig config;
    config.dim = k;
    config.num_transforms = 3;
    config.num_bins = 6;
    config.conditioner_hidden = {16, 16};
    SplineCouplingFlow flow(config, condition_width);
    Rng rng(seed);
    flow.init(rng);
    for (Mlp& net : flow.conditioners()) {
        Linear& last = net.layers().back();
        for (int i = 0; i < last.weight.size(); ++i) last.weight.data()[i] += 0.25 * rng.normal();
        for (int i = 0; i < last.bias.size(); ++i) last.bias[i] += 0.25 * rng.normal();
    }
    return flow;
}

}  // namespace

TEST_CASE("stirred flow density integrates to one (1-D quadrature)") {
    const SplineCouplingFlow flow = stirred_flow(1, 2, 41);
    Vector condition(2);
    condition << 1.2, -0.3;
    const int grid = 4000;
    const double lo = -9.0, hi = 9.0;
    double integral = 0.0;
    for (int i = 0; i < grid; ++i) {
        Vector theta(1);
        theta << lo + (hi - lo) * (i + 0.5) / grid;
        integral += std::exp(flow.log_prob(theta, condition));
    }
    integral *= (hi - lo) / grid;
    CHECK(integral == doctest::Approx(1.0).epsilon(2e-4));
}

TEST_CASE("stirred flow density integrates to one (2-D quadrature)") {
    const SplineCouplingFlow flow = stirred_flow(2, 1, 43);
    Vector condition(1);
    condition << 0.5;
    const int grid = 220;
    const double lo = -8.0, hi = 8.0;
    double integral = 0.0;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            Vector theta(2);
            theta << lo + (hi - lo) * (i + 0.5) / grid, lo + (hi - lo) * (j + 0.5) / grid;
            integral += std::exp(flow.log_prob(theta, condition));
        }
    integral *= (hi - lo) * (hi - lo) / (grid * grid);
    CHECK(integral == doctest::Approx(1.0).epsilon(2e-3));
}

TEST_CASE("sample histograms match the density and respond to the condition") {
    const SplineCouplingFlow flow = stirred_flow(1, 1, 47);
    Vector cond_a(1), cond_b(1);
    cond_a << -2.0;
    cond_b << 2.0;

    Rng rng(3);
    const int n = 120000;
    const Matrix draws = flow.sample(cond_a, n, rng);
    REQUIRE(draws.rows() == 1);
    REQUIRE(draws.cols() == n);

    // Compare the empirical CDF at a few probes with the quadrature CDF.
    for (double probe : {-1.0, 0.0, 0.8}) {
        double cdf_emp = 0.0;
        for (int i = 0; i < n; ++i) cdf_emp += draws(0, i) < probe ? 1.0 : 0.0;
        cdf_emp /= n;
        double cdf_quad = 0.0;
        const int grid = 4000;
        for (int i = 0; i < grid; ++i) {
            const double t = -9.0 + (probe + 9.0) * (i + 0.5) / grid;
            Vector theta(1);
            theta << t;
            cdf_quad += std::exp(flow.log_prob(theta, cond_a));
        }
        cdf_quad *= (probe + 9.0) / grid;
        CHECK(std::fabs(cdf_emp - cdf_quad) < 0.01);
    }

    // A different condition visibly moves the density.
    Vector theta(1);
    theta << 0.0;
    CHECK(flow.log_prob(theta, cond_a) != doctest::Approx(flow.log_prob(theta, cond_b)));

    SUBCASE("sampling is deterministic given the seed") {
        Rng r1(9), r2(9);
        const Matrix m1 = flow.sample(cond_a, 40, r1);
        const Matrix m2 = flow.sample(cond_a, 40, r2);
        CHECK((m1 - m2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("log_prob_batch equals pointwise log_prob") {
    const SplineCouplingFlow flow = stirred_flow(2, 2, 53);
    Rng rng(7);
    Matrix theta(2, 9), condition(2, 9);
    for (int i = 0; i < theta.size(); ++i) theta.data()[i] = rng.normal(0.0, 1.5);
    for (int i = 0; i < condition.size(); ++i) condition.data()[i] = rng.normal();
    const Vector batch = flow.log_prob_batch(theta, condition);
    for (int i = 0; i < 9; ++i)
        CHECK(batch[i] == doctest::Approx(flow.log_prob(theta.col(i), condition.col(i))).epsilon(1e-12));
}

TEST_CASE("flow nll gradients match finite differences") {
    FlowConfig config;
    config.dim = 2;
    config.num_transforms = 2;
    config.num_bins = 4;
    config.conditioner_hidden = {8};
    SplineCouplingFlow flow(config, 2);
    Rng rng(61);
    flow.init(rng);
    for (Mlp& net : flow.conditioners())
        for (Linear& lin : net.layers())
            for (int i = 0; i < lin.weight.size(); ++i) lin.weight.data()[i] += 0.1 * rng.normal();

    Matrix theta(2, 6), condition(2, 6);
    for (int i = 0; i < theta.size(); ++i) theta.data()[i] = rng.normal(0.0, 1.2);
    for (int i = 0; i < condition.size(); ++i) condition.data()[i] = rng.normal();

    std::vector<std::vector<LinearGrad>> grads;
    Matrix d_condition;
    const double loss = flow.nll_batch(theta, condition, &grads, &d_condition);
    CHECK(std::isfinite(loss));
    REQUIRE(grads.size() == flow.conditioners().size());

    auto loss_fn = [&]() { return flow.nll_batch(theta, condition, nullptr, nullptr); };
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t t = 0; t < flow.conditioners().size(); ++t) {
        Mlp& net = flow.conditioners()[t];
        for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
            Linear& lin = net.layers()[layer];
            for (int i = 0; i < lin.weight.size(); ++i) {
                double& slot = lin.weight.data()[i];
                const double keep = slot;
                slot = keep + h;
                const double up = loss_fn();
                slot = keep - h;
                const double down = loss_fn();
                slot = keep;
                const double want = (up - down) / (2 * h);
                worst = std::max(worst, std::fabs(grads[t][layer].d_weight.data()[i] - want) /
                                            std::max(1.0, std::fabs(want)));
            }
            for (int i = 0; i < lin.bias.size(); ++i) {
                double& slot = lin.bias[i];
                const double keep = slot;
                slot = keep + h;
                const double up = loss_fn();
                slot = keep - h;
                const double down = loss_fn();
                slot = keep;
                const double want = (up - down) / (2 * h);
                worst = std::max(worst, std::fabs(grads[t][layer].d_bias[i] - want) /
                                            std::max(1.0, std::fabs(want)));
            }
        }
    }
    for (int i = 0; i < condition.size(); ++i) {
        double& slot = condition.data()[i];
        const double keep = slot;
        slot = keep + h;
        const double up = loss_fn();
        slot = keep - h;
        const double down = loss_fn();
        slot = keep;
        const double want = (up - down) / (2 * h);
        worst = std::max(worst,
                         std::fabs(d_condition.data()[i] - want) / std::max(1.0, std::fabs(want)));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("flow construction rejects inconsistent configurations") {
    FlowConfig config;
    config.dim = 0;
    CHECK_THROWS_AS(SplineCouplingFlow(config, 1), ConfigError);
    config.dim = 2;
    config.num_bins = 0;
    CHECK_THROWS_AS(SplineCouplingFlow(config, 1), ConfigError);
    config.num_bins = 8;
    config.conditioner_hidden = {};
    CHECK_THROWS_AS(SplineCouplingFlow(config, 1), ConfigError);

    FlowConfig ok;
    ok.dim = 2;
    SplineCouplingFlow flow(ok, 3);
    Rng rng(1);
    flow.init(rng);
    Vector bad_theta(1), condition(3);
    bad_theta << 0.0;
    condition << 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(flow.log_prob(bad_theta, condition), InputError);
    Vector theta(2), bad_condition(2);
    theta << 0.0, 0.0;
    bad_condition << 0.0, 0.0;
    CHECK_THROWS_AS(flow.log_prob(theta, bad_condition), InputError);
}
