// Foundations: RNG samplers, dual-number forward mode, normalizer, masked
// MLP forward/backward against finite differences, Adam, and the generic
// training loop.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mnpe/dual.hpp"
#include "mnpe/nn.hpp"

using namespace mnpe;

namespace {

// Central finite difference of a scalar function of one coordinate.
template <typename F>
double fd(F f, double& slot, double h = 1e-6) {
    const double keep = slot;
    slot = keep + h;
    const double up = f();
    slot = keep - h;
    const double down = f();
    slot = keep;
    return (up - down) / (2.0 * h);
}

double rel_err(double got, double want) {
    return std::fabs(got - want) / std::max({1.0, std::fabs(got), std::fabs(want)});
}

}  // namespace

TEST_CASE("rng uniform stays inside the open unit interval") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 200000; ++i) {
        const double u = rng.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
    CHECK(lo < 1e-4);  // the stream actually explores the interval
    CHECK(hi > 1.0 - 1e-4);
}

TEST_CASE("rng sampler moments match their distributions") {
    Rng rng(123);
    const int n = 200000;

    SUBCASE("standard normal") {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = rng.normal();
            sum += z;
            sum2 += z * z;
        }
        CHECK(std::fabs(sum / n) < 0.01);
        CHECK(std::fabs(sum2 / n - 1.0) < 0.02);
    }
    SUBCASE("exponential mean 1/rate") {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += rng.exponential(2.5);
        CHECK(std::fabs(sum / n - 0.4) < 0.005);
    }
    SUBCASE("gamma mean shape/rate and variance shape/rate^2") {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double g = rng.gamma(3.0, 2.0);
            sum += g;
            sum2 += g * g;
        }
        const double mean = sum / n;
        CHECK(std::fabs(mean - 1.5) < 0.01);
        CHECK(std::fabs(sum2 / n - mean * mean - 0.75) < 0.02);
    }
    SUBCASE("gamma with shape below one") {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += rng.gamma(0.4, 1.0);
        CHECK(std::fabs(sum / n - 0.4) < 0.01);
    }
    SUBCASE("poisson small-mean regime (inversion)") {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double k = static_cast<double>(rng.poisson(5.0));
            sum += k;
            sum2 += k * k;
        }
        const double mean = sum / n;
        CHECK(std::fabs(mean - 5.0) < 0.05);
        CHECK(std::fabs(sum2 / n - mean * mean - 5.0) < 0.15);
    }
    SUBCASE("poisson large-mean regime (transformed rejection)") {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double k = static_cast<double>(rng.poisson(900.0));
            sum += k;
            sum2 += k * k;
        }
        const double mean = sum / n;
        CHECK(std::fabs(mean - 900.0) < 0.5);
        CHECK(std::fabs(sum2 / n - mean * mean - 900.0) / 900.0 < 0.03);
    }
    SUBCASE("truncated normal mean matches the closed form") {
        // E[X | X >= 0], X ~ N(0,1) is phi(0)/(1-Phi(0)) = sqrt(2/pi).
        double sum = 0.0;
        double min_seen = 1e300;
        for (int i = 0; i < n; ++i) {
            const double t = rng.truncated_normal(0.0, 1.0, 0.0);
            sum += t;
            min_seen = std::min(min_seen, t);
        }
        CHECK(min_seen >= 0.0);
        CHECK(std::fabs(sum / n - std::sqrt(2.0 / M_PI)) < 0.01);
    }
}

TEST_CASE("rng uniform_int is in-range and unbiased across cells") {
    Rng rng(99);
    const int n = 100000;
    std::vector<int> counts(10, 0);
    for (int i = 0; i < n; ++i) {
        const auto v = rng.uniform_int(static_cast<std::uint64_t>(10));
        REQUIRE(v < 10);
        ++counts[static_cast<std::size_t>(v)];
    }
    // Each cell is Binomial(n, 1/10): sd ~ 94.9; allow 5 sd.
    for (int c : counts) CHECK(std::fabs(c - n / 10.0) < 5.0 * std::sqrt(n * 0.1 * 0.9));

    // Inclusive signed overload touches both endpoints and nothing outside.
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(static_cast<std::int64_t>(-3), static_cast<std::int64_t>(3));
        REQUIRE(v >= -3);
        REQUIRE(v <= 3);
        saw_lo = saw_lo || v == -3;
        saw_hi = saw_hi || v == 3;
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
}

TEST_CASE("rng streams are deterministic and spawned streams are distinct") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.raw() == b.raw());

    Rng parent(7);
    Rng c1 = parent.spawn(0);
    Rng c2 = parent.spawn(1);
    int differ = 0;
    for (int i = 0; i < 64; ++i) differ += c1.raw() != c2.raw() ? 1 : 0;
    CHECK(differ > 60);
}

TEST_CASE("rng shuffle is a deterministic permutation") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    auto w = v;
    Rng r1(3), r2(3);
    r1.shuffle(v);
    r2.shuffle(w);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("sigmoid and log_sum_exp basics") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5));
    CHECK(sigmoid(500.0) == doctest::Approx(1.0));
    CHECK(sigmoid(-500.0) == doctest::Approx(0.0));
    CHECK(sigmoid(-3.0) + sigmoid(3.0) == doctest::Approx(1.0));
    CHECK(log_sum_exp({std::log(1.0), std::log(3.0)}) == doctest::Approx(std::log(4.0)));
    CHECK(log_sum_exp({1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
    CHECK(log_sum_exp({-INFINITY, 2.0}) == doctest::Approx(2.0));
}

TEST_CASE("dual numbers differentiate a composite expression exactly") {
    // f(a, b) = exp(a) * b + log(b) / sqrt(a) - a/b at (a, b) = (0.7, 1.9)
    auto value = [](double a, double b) {
        return std::exp(a) * b + std::log(b) / std::sqrt(a) - a / b;
    };
    const double a0 = 0.7, b0 = 1.9;
    Dual a = Dual::variable(a0, 2, 0);
    Dual b = Dual::variable(b0, 2, 1);
    Dual f = exp(a) * b + log(b) / sqrt(a) - a / b;
    CHECK(f.v == doctest::Approx(value(a0, b0)));

    const double h = 1e-7;
    const double da = (value(a0 + h, b0) - value(a0 - h, b0)) / (2 * h);
    const double db = (value(a0, b0 + h) - value(a0, b0 - h)) / (2 * h);
    CHECK(f.d[0] == doctest::Approx(da).epsilon(1e-6));
    CHECK(f.d[1] == doctest::Approx(db).epsilon(1e-6));
}

TEST_CASE("normalizer round-trips and reports the exact jacobian") {
    Rng rng(5);
    Matrix data(3, 40);
    for (int i = 0; i < data.rows(); ++i)
        for (int j = 0; j < data.cols(); ++j) data(i, j) = rng.normal(2.0 * i, i + 1.0);
    const Normalizer norm = Normalizer::fit(data);

    Vector x(3);
    x << 0.3, -1.2, 7.0;
    const Vector z = norm.transform(x);
    CHECK((norm.inverse(z) - x).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(norm.log_det_jacobian() ==
          doctest::Approx(-(std::log(norm.std()[0]) + std::log(norm.std()[1]) +
                            std::log(norm.std()[2]))));

    // Transformed data has mean ~0 and sd ~1 per feature.
    const Matrix z_all = norm.transform_batch(data);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::fabs(z_all.row(i).mean()) < 1e-12);
        const double var = z_all.row(i).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("constant features stay finite through the epsilon floor") {
        Matrix flat = Matrix::Constant(1, 10, 3.0);
        const Normalizer n2 = Normalizer::fit(flat);
        Vector v(1);
        v << 3.0;
        CHECK(std::isfinite(n2.transform(v)[0]));
        CHECK(n2.inverse(n2.transform(v))[0] == doctest::Approx(3.0));
    }
    SUBCASE("identity does nothing") {
        const Normalizer id = Normalizer::identity(3);
        CHECK((id.transform(x) - x).cwiseAbs().maxCoeff() == 0.0);
        CHECK(id.log_det_jacobian() == 0.0);
    }
}

TEST_CASE("mlp backward matches finite differences on every parameter") {
    Rng rng(11);
    Mlp net = Mlp::make(3, {5, 4}, 2, Activation::kTanh);
    net.init_glorot(rng);

    Matrix input(3, 7);
    for (int i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
    Matrix weights_on_output(2, 7);
    for (int i = 0; i < weights_on_output.size(); ++i) weights_on_output.data()[i] = rng.normal();

    auto loss = [&]() { return (net.forward_batch(input).array() * weights_on_output.array()).sum(); };

    MlpCache cache;
    net.forward_batch(input, &cache);
    std::vector<LinearGrad> grads;
    const Matrix d_input = net.backward(cache, weights_on_output, &grads);

    double worst = 0.0;
    for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
        Linear& lin = net.layers()[layer];
        for (int i = 0; i < lin.weight.size(); ++i)
            worst = std::max(worst, rel_err(grads[layer].d_weight.data()[i],
                                            fd(loss, lin.weight.data()[i])));
        for (int i = 0; i < lin.bias.size(); ++i)
            worst = std::max(worst,
                             rel_err(grads[layer].d_bias.data()[i], fd(loss, lin.bias.data()[i])));
    }
    for (int i = 0; i < input.size(); ++i)
        worst = std::max(worst, rel_err(d_input.data()[i], fd(loss, input.data()[i])));
    CHECK(worst < 1e-7);
}

TEST_CASE("masked layers keep masked weights inert in value and gradient") {
    Rng rng(13);
    Mlp net = Mlp::make(4, {6}, 3, Activation::kRelu);
    net.init_glorot(rng);
    // Checkerboard mask on the first layer.
    Matrix mask = Matrix::Zero(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) mask(i, j) = (i + j) % 2;
    net.layers()[0].mask = mask;

    Vector x(4);
    x << 0.3, -0.7, 1.1, 0.2;
    const Vector before = net.forward(x);
    // Changing a masked weight cannot change the output.
    net.layers()[0].weight(0, 0) += 100.0;  // mask(0,0) == 0
    CHECK((net.forward(x) - before).cwiseAbs().maxCoeff() == 0.0);

    Matrix input = x;
    MlpCache cache;
    net.forward_batch(input, &cache);
    std::vector<LinearGrad> grads;
    net.backward(cache, Matrix::Ones(3, 1), &grads);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j)
            if (mask(i, j) == 0.0) CHECK(grads[0].d_weight(i, j) == 0.0);
}

TEST_CASE("residual conditioner networks are gradient-correct") {
    Rng rng(17);
    Mlp net = Mlp::make_residual(3, 8, 2, 2, 4);
    net.init_glorot(rng);

    Matrix input(3, 5);
    for (int i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
    Matrix sel(4, 5);
    for (int i = 0; i < sel.size(); ++i) sel.data()[i] = rng.normal();
    auto loss = [&]() { return (net.forward_batch(input).array() * sel.array()).sum(); };

    MlpCache cache;
    net.forward_batch(input, &cache);
    std::vector<LinearGrad> grads;
    net.backward(cache, sel, &grads);

    double worst = 0.0;
    for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
        Linear& lin = net.layers()[layer];
        for (int i = 0; i < lin.weight.size(); ++i)
            worst = std::max(worst, rel_err(grads[layer].d_weight.data()[i],
                                            fd(loss, lin.weight.data()[i])));
    }
    CHECK(worst < 1e-6);

    SUBCASE("zeroed last layer makes the network output exactly zero") {
        net.zero_last_layer();
        CHECK(net.forward_batch(input).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("adam first step follows the bias-corrected update") {
    Mlp net = Mlp::make(1, {}, 1, Activation::kIdentity);
    net.layers()[0].weight(0, 0) = 2.0;
    net.layers()[0].bias(0) = 0.5;
    AdamState adam(net);
    std::vector<LinearGrad> grads(1);
    grads[0].d_weight = Matrix::Constant(1, 1, 0.3);
    grads[0].d_bias = Vector::Constant(1, -0.7);
    AdamConfig config;
    config.learning_rate = 1e-2;
    adam.step(net, grads, config);
    // After bias correction the first update is lr * g / (|g| + eps').
    CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(2.0 - 1e-2).epsilon(1e-5));
    CHECK(net.layers()[0].bias(0) == doctest::Approx(0.5 + 1e-2).epsilon(1e-5));
    CHECK(adam.steps_taken() == 1);
}

TEST_CASE("validation_split is a disjoint deterministic cover with a ceil-sized holdout") {
    Rng r1(21), r2(21);
    auto [train1, val1] = validation_split(103, 0.1, r1);
    auto [train2, val2] = validation_split(103, 0.1, r2);
    CHECK(train1 == train2);
    CHECK(val1 == val2);
    CHECK(val1.size() == 11);  // ceil(0.1 * 103)
    CHECK(train1.size() == 92);
    std::vector<int> seen(103, 0);
    for (auto i : train1) ++seen[static_cast<std::size_t>(i)];
    for (auto i : val1) ++seen[static_cast<std::size_t>(i)];
    for (int c : seen) CHECK(c == 1);
}

TEST_CASE("training loop fits a linear map and restores the best parameters") {
    Rng rng(31);
    const int n = 400;
    Matrix x(1, n), y(1, n);
    for (int i = 0; i < n; ++i) {
        x(0, i) = rng.uniform(-2.0, 2.0);
        y(0, i) = 2.0 * x(0, i) + 1.0;
    }
    Mlp net = Mlp::make(1, {16}, 1, Activation::kTanh);
    net.init_glorot(rng);
    MlpRegressor model(std::move(net), x, y);

    TrainConfig config;
    config.learning_rate = 1e-2;
    config.batch_size = 64;
    config.max_epochs = 200;
    config.patience_epochs = 30;
    config.seed = 5;
    const TrainResult result = train_model(model, n, config);

    CHECK(result.epochs_run == static_cast<int>(result.train_losses.size()));
    CHECK(result.best_epoch >= 0);
    CHECK(result.best_epoch < result.epochs_run);
    CHECK(result.best_val_loss ==
          doctest::Approx(result.val_losses[static_cast<std::size_t>(result.best_epoch)]));
    CHECK(result.best_val_loss < 1e-2);

    // The restored parameters reproduce the best validation loss.
    Rng split_rng(config.seed);
    auto [train_idx, val_idx] = validation_split(n, config.validation_fraction, split_rng);
    const double val_now =
        model.eval_loss(val_idx.data(), static_cast<int>(val_idx.size()));
    CHECK(val_now == doctest::Approx(result.best_val_loss).epsilon(1e-9));
}

TEST_CASE("training loop stops early and raises on non-finite loss") {
    Rng rng(37);
    const int n = 200;
    Matrix x(1, n), y(1, n);
    for (int i = 0; i < n; ++i) {
        x(0, i) = rng.normal();
        y(0, i) = x(0, i);
    }
    SUBCASE("zero patience stops quickly") {
        Mlp net = Mlp::make(1, {4}, 1, Activation::kTanh);
        net.init_glorot(rng);
        MlpRegressor model(std::move(net), x, y);
        TrainConfig config;
        config.max_epochs = 500;
        config.patience_epochs = 0;
        const TrainResult result = train_model(model, n, config);
        CHECK(result.epochs_run < 500);
    }
    SUBCASE("non-finite targets raise TrainingError") {
        Matrix bad = y;
        bad(0, 7) = INFINITY;
        Mlp net = Mlp::make(1, {4}, 1, Activation::kTanh);
        net.init_glorot(rng);
        MlpRegressor model(std::move(net), x, bad);
        TrainConfig config;
        config.max_epochs = 5;
        CHECK_THROWS_AS(train_model(model, n, config), TrainingError);
    }
}

TEST_CASE("logistic regressor drives a separable problem to high accuracy") {
    Rng rng(41);
    const int n = 600;
    Matrix x(2, n), y(1, n);
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        x(0, i) = rng.normal(label ? 2.0 : -2.0, 0.5);
        x(1, i) = rng.normal();
        y(0, i) = label;
    }
    Mlp net = Mlp::make(2, {8}, 1, Activation::kRelu);
    net.init_glorot(rng);
    MlpRegressor model(std::move(net), x, y, /*logistic=*/true);
    TrainConfig config;
    config.learning_rate = 5e-3;
    config.batch_size = 64;
    config.max_epochs = 60;
    config.seed = 2;
    train_model(model, n, config);

    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const double logit = model.network().forward(x.col(i))[0];
        correct += (logit > 0.0) == (y(0, i) > 0.5) ? 1 : 0;
    }
    CHECK(correct > n * 95 / 100);
}
