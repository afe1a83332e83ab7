// Categorical masked autoregressive estimator: schema bookkeeping, exact
// autoregressive structure of the masks, enumeration normalization, sampling
// consistency, and gradient correctness.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mnpe/made.hpp"

using namespace mnpe;

namespace {

DiscreteSchema small_schema() {
    return DiscreteSchema({{"first", 3, 0}, {"second", 2, 5}, {"third", 4, -1}});
}

CategoricalMade random_made(const DiscreteSchema& schema, int context_width, std::uint64_t seed) {
    CategoricalMade made(schema, context_width, {24, 24});
    Rng rng(seed);
    made.init(rng);
    // Glorot keeps early softmaxes near uniform; stir the last layer so the
    // structural tests run on a non-trivial distribution.
    Mlp& net = made.network();
    for (int i = 0; i < net.layers().back().weight.size(); ++i)
        net.layers().back().weight.data()[i] += 0.3 * rng.normal();
    return made;
}

double pmf_sum(const CategoricalMade& made, const Vector& context) {
    double total = 0.0;
    for (double p : made.class_probabilities(context)) total += p;
    return total;
}

}  // namespace

TEST_CASE("discrete schema exposes offsets, widths, and configuration counts") {
    const DiscreteSchema schema = small_schema();
    CHECK(schema.size() == 3);
    CHECK(schema.one_hot_width() == 9);
    CHECK(schema.block_offset(0) == 0);
    CHECK(schema.block_offset(1) == 3);
    CHECK(schema.block_offset(2) == 5);
    CHECK(schema.config_count() == 24);

    CHECK_NOTHROW(schema.validate_indices({2, 1, 3}));
    CHECK_THROWS_AS(schema.validate_indices({3, 0, 0}), InputError);
    CHECK_THROWS_AS(schema.validate_indices({0, -1, 0}), InputError);
    CHECK_THROWS_AS(schema.validate_indices({0, 0}), InputError);

    SUBCASE("config_count saturates at the cap instead of overflowing") {
        std::vector<DiscreteDim> dims(64, DiscreteDim{"d", 4, 0});
        const DiscreteSchema wide(dims);
        CHECK(wide.config_count(1000000) == 1000000);
    }
}

TEST_CASE("made masks have the declared shapes and zero forbidden paths") {
    const DiscreteSchema schema = small_schema();
    const int context_width = 4;
    const std::vector<int> hidden = {10, 7};
    const auto masks = build_made_masks(schema, hidden, context_width);
    REQUIRE(masks.size() == 3);
    CHECK(masks[0].rows() == 10);
    CHECK(masks[0].cols() == schema.one_hot_width() + context_width);
    CHECK(masks[1].rows() == 7);
    CHECK(masks[1].cols() == 10);
    CHECK(masks[2].rows() == schema.one_hot_width());
    CHECK(masks[2].cols() == 7);

    // Path counting: the product of the masks counts connectivity routes from
    // each input to each output, so a zero entry certifies no path exists.
    const Matrix paths = masks[2] * masks[1] * masks[0];
    for (int out_dim = 0; out_dim < schema.size(); ++out_dim) {
        for (int row = schema.block_offset(out_dim);
             row < schema.block_offset(out_dim) + schema.dim(out_dim).classes; ++row) {
            // No path from the one-hot inputs of this or any later dimension.
            for (int in_dim = out_dim; in_dim < schema.size(); ++in_dim)
                for (int col = schema.block_offset(in_dim);
                     col < schema.block_offset(in_dim) + schema.dim(in_dim).classes; ++col)
                    CHECK(paths(row, col) == 0.0);
            // Context inputs and strictly earlier dimensions stay reachable.
            for (int col = schema.one_hot_width(); col < paths.cols(); ++col)
                CHECK(paths(row, col) > 0.0);
            for (int in_dim = 0; in_dim < out_dim; ++in_dim)
                for (int col = schema.block_offset(in_dim);
                     col < schema.block_offset(in_dim) + schema.dim(in_dim).classes; ++col)
                    CHECK(paths(row, col) > 0.0);
        }
    }
}

TEST_CASE("logit blocks are bitwise invariant to current and later dimensions") {
    const DiscreteSchema schema = small_schema();
    const CategoricalMade made = random_made(schema, 2, 101);
    Vector context(2);
    context << 0.4, -1.3;

    const Vector base = made.logits({1, 0, 2}, context);
    for (int changed = 0; changed < 3; ++changed) {
        std::vector<int> other = {1, 0, 2};
        other[static_cast<std::size_t>(changed)] =
            (other[static_cast<std::size_t>(changed)] + 1) % schema.dim(changed).classes;
        const Vector perturbed = made.logits(other, context);
        for (int block = 0; block < 3; ++block) {
            const int off = schema.block_offset(block);
            for (int c = 0; c < schema.dim(block).classes; ++c) {
                if (block <= changed) {
                    CHECK(perturbed[off + c] == base[off + c]);  // exact, not approximate
                }
            }
        }
        // Sanity: changing an earlier dimension must actually reach later blocks.
        if (changed < 2) {
            const int off = schema.block_offset(changed + 1);
            double delta = 0.0;
            for (int c = 0; c < schema.dim(changed + 1).classes; ++c)
                delta += std::fabs(perturbed[off + c] - base[off + c]);
            CHECK(delta > 0.0);
        }
    }

    // The context reaches every block.
    Vector context2 = context;
    context2[0] += 0.25;
    const Vector shifted = made.logits({1, 0, 2}, context2);
    for (int block = 0; block < 3; ++block) {
        const int off = schema.block_offset(block);
        double delta = 0.0;
        for (int c = 0; c < schema.dim(block).classes; ++c)
            delta += std::fabs(shifted[off + c] - base[off + c]);
        CHECK(delta > 0.0);
    }
}

TEST_CASE("enumerated pmf is normalized and matches per-configuration log_prob") {
    const DiscreteSchema schema = small_schema();
    const CategoricalMade made = random_made(schema, 3, 202);
    Vector context(3);
    context << 1.0, -0.5, 0.2;

    const std::vector<double> pmf = made.class_probabilities(context);
    REQUIRE(pmf.size() == 24);
    CHECK(std::fabs(pmf_sum(made, context) - 1.0) < 1e-12);

    // Odometer order: last dimension fastest.
    std::size_t flat = 0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 4; ++c, ++flat)
                CHECK(pmf[flat] ==
                      doctest::Approx(std::exp(made.log_prob({a, b, c}, context))).epsilon(1e-12));
}

TEST_CASE("single-dimension made reduces to a context-conditioned softmax") {
    const DiscreteSchema schema({{"only", 4, 0}});
    CategoricalMade made(schema, 1, {12});
    Rng rng(7);
    made.init(rng);
    Vector context(1);
    context << 0.8;

    const Vector logits = made.logits({0}, context);
    double z = 0.0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits[c]);
    for (int c = 0; c < 4; ++c)
        CHECK(made.log_prob({c}, context) ==
              doctest::Approx(logits[c] - std::log(z)).epsilon(1e-12));
}

TEST_CASE("sampling frequencies match the enumerated pmf") {
    const DiscreteSchema schema = small_schema();
    const CategoricalMade made = random_made(schema, 1, 303);
    Vector context(1);
    context << 0.1;
    const std::vector<double> pmf = made.class_probabilities(context);

    Rng rng(9);
    const int n = 60000;
    const auto draws = made.sample(context, n, rng);
    REQUIRE(draws.size() == static_cast<std::size_t>(n));
    std::vector<double> freq(24, 0.0);
    for (const auto& draw : draws) {
        const std::size_t flat = static_cast<std::size_t>((draw[0] * 2 + draw[1]) * 4 + draw[2]);
        freq[flat] += 1.0 / n;
    }
    for (std::size_t i = 0; i < 24; ++i) {
        const double sd = std::sqrt(std::max(pmf[i] * (1.0 - pmf[i]), 1e-12) / n);
        CHECK(std::fabs(freq[i] - pmf[i]) < 5.0 * sd + 1e-4);
    }

    SUBCASE("sampling is deterministic given the seed") {
        Rng r1(33), r2(33);
        CHECK(made.sample(context, 50, r1) == made.sample(context, 50, r2));
    }
}

TEST_CASE("marginals agree between enumeration and monte carlo") {
    const DiscreteSchema schema = small_schema();
    const CategoricalMade made = random_made(schema, 1, 404);
    Vector context(1);
    context << -0.6;

    const auto exact = made.marginals(context);
    REQUIRE(exact.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(exact[static_cast<std::size_t>(i)].size() == schema.dim(i).classes);
        CHECK(exact[static_cast<std::size_t>(i)].sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

    Rng rng(55);
    const auto mc = made.marginals_monte_carlo(context, 60000, rng);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK((mc[i] - exact[i]).cwiseAbs().maxCoeff() < 0.015);
}

TEST_CASE("enumeration above the cap throws CapabilityError") {
    std::vector<DiscreteDim> dims(12, DiscreteDim{"d", 6, 0});  // 6^12 > 2e9
    const DiscreteSchema schema(dims);
    CategoricalMade made(schema, 1, {16});
    Rng rng(1);
    made.init(rng);
    Vector context(1);
    context << 0.0;
    CHECK_THROWS_AS(made.class_probabilities(context), CapabilityError);
    CHECK_THROWS_AS(made.marginals(context), CapabilityError);
    // The sampling path stays available for such spaces.
    Rng sampler(2);
    CHECK_NOTHROW(made.marginals_monte_carlo(context, 100, sampler));
}

TEST_CASE("nll gradients match finite differences") {
    const DiscreteSchema schema({{"a", 3, 0}, {"b", 2, 0}});
    CategoricalMade made(schema, 2, {9});
    Rng rng(71);
    made.init(rng);

    std::vector<std::vector<int>> targets = {{0, 1}, {2, 0}, {1, 1}, {2, 1}, {0, 0}};
    Matrix context(2, 5);
    for (int i = 0; i < context.size(); ++i) context.data()[i] = rng.normal();

    std::vector<LinearGrad> grads;
    Matrix d_context;
    const double loss = made.nll_batch(targets, context, &grads, &d_context);

    // The batch NLL equals the mean of per-sample log_probs.
    double manual = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i)
        manual -= made.log_prob(targets[i], context.col(static_cast<std::int64_t>(i)));
    CHECK(loss == doctest::Approx(manual / 5.0).epsilon(1e-12));

    auto loss_fn = [&]() {
        return made.nll_batch(targets, context, nullptr, nullptr);
    };
    const double h = 1e-6;
    double worst = 0.0;
    Mlp& net = made.network();
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
            worst = std::max(worst, std::fabs(grads[layer].d_weight.data()[i] - want) /
                                        std::max(1.0, std::fabs(want)));
        }
    }
    for (int i = 0; i < context.size(); ++i) {
        double& slot = context.data()[i];
        const double keep = slot;
        slot = keep + h;
        const double up = loss_fn();
        slot = keep - h;
        const double down = loss_fn();
        slot = keep;
        const double want = (up - down) / (2 * h);
        worst = std::max(worst,
                         std::fabs(d_context.data()[i] - want) / std::max(1.0, std::fabs(want)));
    }
    CHECK(worst < 1e-7);

    // Masked parameters receive exactly zero gradient.
    for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
        const Linear& lin = net.layers()[layer];
        if (!lin.mask) continue;
        for (int i = 0; i < lin.weight.size(); ++i)
            if (lin.mask->data()[i] == 0.0) CHECK(grads[layer].d_weight.data()[i] == 0.0);
    }
}

TEST_CASE("a 111-class dimension enumerates and samples cleanly") {
    const DiscreteSchema schema({{"year", 111, 1851}});
    CategoricalMade made(schema, 4, {32});
    Rng rng(88);
    made.init(rng);
    Vector context(4);
    context << 0.2, -0.1, 0.7, 0.0;
    CHECK(std::fabs(pmf_sum(made, context) - 1.0) < 1e-12);
    Rng sampler(3);
    const auto draws = made.sample(context, 10, sampler);
    for (const auto& draw : draws) {
        CHECK(draw[0] >= 0);
        CHECK(draw[0] < 111);
    }
}
