// Benchmark simulators: parameter spaces, prior laws, observation models,
// exact likelihood formulas, the M/M/c steady-state formula against closed
// forms and a discrete-event oracle, and rejection bookkeeping.

#include <cmath>
#include <set>
#include <vector>

#include "des_mmc.hpp"
#include "doctest.h"
#include "mnpe/simulators.hpp"

using namespace mnpe;

TEST_CASE("toy model: space, prior, observation law, likelihood") {
    const GaussianToyModel toy;
    const MixedParamSpace space = toy.space();
    CHECK(space.l() == 1);
    CHECK(space.k() == 1);
    CHECK(space.discrete.dim(0).classes == 2);
    CHECK(space.discrete.dim(0).display_offset == 0);
    CHECK(toy.obs_dim() == 1);
    CHECK(toy.obs_transforms() == std::vector<ObsTransformKind>{ObsTransformKind::kIdentity});

    Rng rng(11);
    const int n = 100000;
    double sum_d = 0.0, sum_c = 0.0, sum_c2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const MixedSample s = toy.sample_prior(rng);
        sum_d += s.theta_d[0];
        sum_c += s.theta_c[0];
        sum_c2 += s.theta_c[0] * s.theta_c[0];
    }
    CHECK(std::fabs(sum_d / n - 0.5) < 0.01);
    CHECK(std::fabs(sum_c / n) < 0.015);
    CHECK(std::fabs(sum_c2 / n - 1.0) < 0.02);

    // x | theta ~ N(theta_c + 2*theta_d, 0.5^2).
    MixedSample theta;
    theta.theta_d = {1};
    theta.theta_c = Vector(1);
    theta.theta_c[0] = -0.7;
    double sx = 0.0, sx2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = toy.simulate(theta, rng)[0];
        sx += x;
        sx2 += x * x;
    }
    const double mean = sx / n;
    CHECK(std::fabs(mean - 1.3) < 0.01);
    CHECK(std::fabs(sx2 / n - mean * mean - 0.25) < 0.01);

    Vector x(1);
    x << 0.9;
    const double want = -0.5 * std::pow((0.9 - (-0.7) - 2.0) / 0.5, 2) -
                        0.5 * std::log(2.0 * M_PI) - std::log(0.5);
    CHECK(toy.log_likelihood(theta, x) == doctest::Approx(want).epsilon(1e-12));
    CHECK(toy.in_support(theta));
}

TEST_CASE("m/m/c expected queue length matches closed forms") {
    // M/M/1: Lq = rho^2 / (1 - rho).
    for (double gamma : {1.0, 3.0, 6.3}) {
        const double mu = 7.0;
        const double rho = gamma / mu;
        CHECK(queue_expected_length(gamma, mu, 1) ==
              doctest::Approx(rho * rho / (1.0 - rho)).epsilon(1e-12));
    }
    // M/M/2 at gamma = mu: pi0 = 1/3, Lq = 1/3 (Erlang C by hand).
    CHECK(queue_expected_length(4.0, 4.0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // Adding servers strictly shrinks the queue; far-overprovisioned systems
    // have essentially no queue.
    double prev = queue_expected_length(9.0, 4.0, 3);
    for (int c = 4; c <= 8; ++c) {
        const double cur = queue_expected_length(9.0, 4.0, c);
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK(queue_expected_length(1.0, 10.0, 6) < 1e-6);

    CHECK_THROWS_AS(queue_expected_length(8.0, 4.0, 2), StabilityError);
    CHECK_THROWS_AS(queue_expected_length(8.0, 2.0, 4), StabilityError);
}

TEST_CASE("m/m/c formula agrees with the discrete-event oracle") {
    struct Case {
        double gamma, mu;
        int c;
    };
    // Moderate-load cases spanning one to five servers.
    const Case cases[] = {{4.0, 5.0, 1}, {7.0, 4.5, 2}, {9.0, 3.8, 3}, {10.0, 2.6, 5}};
    Rng rng(2024);
    for (const Case& k : cases) {
        const double formula = queue_expected_length(k.gamma, k.mu, k.c);
        const double des = test::des_mmc_waiting(k.gamma, k.mu, k.c, 1.5e5, 500.0, rng);
        CHECK(std::fabs(des - formula) / formula < 0.05);
    }
}

TEST_CASE("queue model: space, transforms, rejection rules, observation law") {
    const TandemQueueModel queue;
    const MixedParamSpace space = queue.space();
    CHECK(space.l() == 2);
    CHECK(space.k() == 3);
    for (int i = 0; i < 2; ++i) {
        CHECK(space.discrete.dim(i).classes == 5);
        CHECK(space.discrete.dim(i).display_offset == 2);
    }
    CHECK(queue.obs_dim() == 5);
    const auto transforms = queue.obs_transforms();
    for (int i = 0; i < 3; ++i) CHECK(transforms[static_cast<std::size_t>(i)] == ObsTransformKind::kIdentity);
    for (int i = 3; i < 5; ++i) CHECK(transforms[static_cast<std::size_t>(i)] == ObsTransformKind::kLog1p);

    SUBCASE("explicit rejection cases") {
        MixedSample unstable;
        unstable.theta_d = {0, 0};  // c = (2, 2)
        unstable.theta_c = Vector(3);
        unstable.theta_c << 20.0, 8.0, 5.0;  // rho_1 = 20/16 >= 1
        bool was_unstable = false;
        CHECK(queue.rejected(unstable, &was_unstable));
        CHECK(was_unstable);
        CHECK_FALSE(queue.in_support(unstable));

        MixedSample near;  // stable but E[Q_1] explodes
        near.theta_d = {0, 4};
        near.theta_c = Vector(3);
        near.theta_c << 9.0, 4.6, 5.0;  // rho_1 = 0.978
        CHECK(queue.rejected(near, &was_unstable));
        CHECK_FALSE(was_unstable);

        MixedSample fine;
        fine.theta_d = {2, 2};
        fine.theta_c = Vector(3);
        fine.theta_c << 9.0, 8.0, 5.0;
        CHECK_FALSE(queue.rejected(fine));
        CHECK(queue.in_support(fine));
        const auto [q1, q2] = queue.expected_lengths(fine);
        CHECK(q1 == doctest::Approx(queue_expected_length(9.0, 8.0, 4)));
        CHECK(q2 == doctest::Approx(queue_expected_length(9.0, 5.0, 4)));
    }

    SUBCASE("accepted prior draws respect both rules; lognormal medians check out") {
        Rng rng(5);
        const int n = 20000;
        double log_gamma_sum = 0.0, log_mu1_sum = 0.0, log_mu2_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const MixedSample s = queue.sample_prior(rng);
            CHECK_FALSE(queue.rejected(s));
            log_gamma_sum += std::log(s.theta_c[0]);
            log_mu1_sum += std::log(s.theta_c[1]);
            log_mu2_sum += std::log(s.theta_c[2]);
            CHECK(s.theta_d[0] >= 0);
            CHECK(s.theta_d[0] <= 4);
        }
        // Rejection trims high-gamma/low-mu draws, so accepted log-medians sit
        // near (but not exactly at) the untruncated ones; generous windows.
        CHECK(std::fabs(log_gamma_sum / n - std::log(9.0)) < 0.1);
        CHECK(std::fabs(log_mu1_sum / n - std::log(8.0)) < 0.1);
        CHECK(std::fabs(log_mu2_sum / n - std::log(5.0)) < 0.1);
    }

    SUBCASE("observations: poisson counts around gamma*T, truncated-normal queue reads") {
        MixedSample theta;
        theta.theta_d = {2, 2};
        theta.theta_c = Vector(3);
        theta.theta_c << 9.0, 8.0, 5.0;
        const auto [q1, q2] = queue.expected_lengths(theta);
        Rng rng(17);
        const int n = 20000;
        double counts = 0.0, reads1 = 0.0, reads2 = 0.0;
        double min_read = 1e300;
        for (int i = 0; i < n; ++i) {
            const Vector x = queue.simulate(theta, rng);
            REQUIRE(x.size() == 5);
            counts += (x[0] + x[1] + x[2]) / 3.0;
            reads1 += x[3];
            reads2 += x[4];
            min_read = std::min(min_read, std::min(x[3], x[4]));
        }
        CHECK(std::fabs(counts / n - 900.0) < 1.0);
        CHECK(std::fabs(reads1 / n - q1) < 0.01);
        CHECK(std::fabs(reads2 / n - q2) < 0.01);
        CHECK(min_read >= 0.0);

        const Vector x_probe = queue.simulate(theta, rng);
        const double ll = queue.log_likelihood(theta, x_probe);
        double manual = 0.0;
        for (int i = 0; i < 3; ++i) manual += log_poisson_pmf(x_probe[i], 900.0);
        manual += log_truncated_normal_pdf(x_probe[3], q1, 0.1);
        manual += log_truncated_normal_pdf(x_probe[4], q2, 0.1);
        CHECK(ll == doctest::Approx(manual).epsilon(1e-12));
    }
}

TEST_CASE("poisson and truncated-normal log densities match hand calculations") {
    // log P(k=3 | mean 2.5) = 3 log 2.5 - 2.5 - log 3!
    CHECK(log_poisson_pmf(3.0, 2.5) ==
          doctest::Approx(3.0 * std::log(2.5) - 2.5 - std::log(6.0)).epsilon(1e-12));
    CHECK(log_poisson_pmf(0.0, 1.7) == doctest::Approx(-1.7).epsilon(1e-12));

    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-5));
    CHECK(normal_cdf(-1.0) == doctest::Approx(0.1586553).epsilon(1e-5));

    // Truncation to [0, inf): density / P(X >= 0), P from the normal CDF.
    const double q = 0.5, m = 0.3, sd = 0.1;
    const double z = (q - m) / sd;
    const double want = -0.5 * z * z - 0.5 * std::log(2.0 * M_PI) - std::log(sd) -
                        std::log(normal_cdf(m / sd));
    CHECK(log_truncated_normal_pdf(q, m, sd) == doctest::Approx(want).epsilon(1e-10));
    // Below the truncation point the density vanishes.
    CHECK(log_truncated_normal_pdf(-0.01, m, sd) == -INFINITY);
}

TEST_CASE("coal model: space, prior, segmented observation law, data series") {
    const CoalChangepointModel coal;
    const MixedParamSpace space = coal.space();
    CHECK(space.l() == 1);
    CHECK(space.k() == 2);
    CHECK(space.discrete.dim(0).classes == 111);
    CHECK(space.discrete.dim(0).display_offset == 1851);
    CHECK(coal.obs_dim() == 111);
    for (ObsTransformKind t : coal.obs_transforms()) CHECK(t == ObsTransformKind::kSqrt);

    Rng rng(23);
    const int n = 50000;
    double rate_sum = 0.0;
    std::set<int> years;
    for (int i = 0; i < n; ++i) {
        const MixedSample s = coal.sample_prior(rng);
        years.insert(s.theta_d[0]);
        rate_sum += s.theta_c[0] + s.theta_c[1];
        CHECK(s.theta_c[0] > 0.0);
    }
    CHECK(years.size() == 111);  // the uniform prior reaches every year
    CHECK(std::fabs(rate_sum / (2 * n) - 1.0) < 0.02);  // Exp(1) rates

    MixedSample theta;
    theta.theta_d = {40};  // switch after 40 early years
    theta.theta_c = Vector(2);
    theta.theta_c << 3.0, 0.8;
    double early = 0.0, late = 0.0;
    const int reps = 3000;
    for (int i = 0; i < reps; ++i) {
        const Vector y = coal.simulate(theta, rng);
        REQUIRE(y.size() == 111);
        for (int t = 0; t < 40; ++t) early += y[t];
        for (int t = 40; t < 111; ++t) late += y[t];
    }
    CHECK(std::fabs(early / (40.0 * reps) - 3.0) < 0.03);
    CHECK(std::fabs(late / (71.0 * reps) - 0.8) < 0.02);

    const Vector y = coal.simulate(theta, rng);
    double manual = 0.0;
    for (int t = 0; t < 111; ++t) manual += log_poisson_pmf(y[t], t < 40 ? 3.0 : 0.8);
    CHECK(coal.log_likelihood(theta, y) == doctest::Approx(manual).epsilon(1e-12));

    const Vector counts = coal_disaster_counts();
    REQUIRE(counts.size() == 111);
    double first40 = 0.0, last40 = 0.0;
    for (int t = 0; t < 111; ++t) {
        CHECK(counts[t] >= 0.0);
        CHECK(counts[t] == std::floor(counts[t]));
        if (t < 40) first40 += counts[t];
        if (t >= 71) last40 += counts[t];
    }
    CHECK(first40 / 40.0 > 2.0 * (last40 / 40.0));  // the historical decline
}

TEST_CASE("simulator factory resolves names and aliases") {
    CHECK(make_simulator("gaussian_toy")->name() == "gaussian_toy");
    CHECK(make_simulator("tandem_queue")->name() == "tandem_queue");
    CHECK(make_simulator("coal_changepoint")->name() == "coal_changepoint");
    CHECK(make_simulator("coal")->name() == "coal_changepoint");
    CHECK_THROWS_AS(make_simulator("unknown_model"), InputError);
}

TEST_CASE("generate_dataset is deterministic with faithful bookkeeping") {
    const auto queue = make_simulator("tandem_queue");
    const Dataset a = generate_dataset(*queue, 2000, 99);
    const Dataset b = generate_dataset(*queue, 2000, 99);
    CHECK(a.size() == 2000);
    CHECK(a.theta_d == b.theta_d);
    CHECK((a.theta_c - b.theta_c).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.meta.seed == 99);
    CHECK(a.meta.n_requested == 2000);
    CHECK(a.meta.simulator == "tandem_queue");
    // The prior rejects roughly 4% of draws; allow a broad band.
    const double frac = static_cast<double>(a.meta.n_rejected()) / (2000.0 + a.meta.n_rejected());
    CHECK(frac > 0.005);
    CHECK(frac < 0.12);
    CHECK_NOTHROW(a.validate(queue->space()));

    const Dataset c = generate_dataset(*queue, 2000, 100);
    CHECK((a.x - c.x).cwiseAbs().maxCoeff() > 0.0);

    const auto toy = make_simulator("gaussian_toy");
    const Dataset d = generate_dataset(*toy, 500, 1);
    CHECK(d.meta.n_rejected() == 0);
    CHECK(d.theta_c.rows() == 1);
    CHECK(d.x.rows() == 1);
}
