#include "mnpe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mnpe/nn.hpp"

namespace mnpe {

namespace {

// Binary cross-entropy with logits; d_logit = sigmoid(z) - y.
double bce_backward(const Matrix& logits, const std::vector<int>& labels,
                    const std::vector<std::int64_t>& batch, Matrix* d_logits) {
    double loss = 0.0;
    for (int i = 0; i < logits.cols(); ++i) {
        const double z = logits(0, i);
        const double y = static_cast<double>(labels[static_cast<std::size_t>(batch[i])]);
        // softplus(z) - y*z, computed stably for large |z|.
        loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
        (*d_logits)(0, i) = sigmoid(z) - y;
    }
    (*d_logits) /= static_cast<double>(logits.cols());
    return loss / static_cast<double>(logits.cols());
}

struct FoldSplit {
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> test;
};

// Contiguous chunks of one shuffle; chunk f is fold f's held-out set.
std::vector<FoldSplit> make_folds(std::int64_t n, int folds, Rng& rng) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<FoldSplit> splits(static_cast<std::size_t>(folds));
    for (std::int64_t i = 0; i < n; ++i) {
        const int fold = static_cast<int>(i * folds / n);
        for (int f = 0; f < folds; ++f) {
            auto& split = splits[static_cast<std::size_t>(f)];
            (f == fold ? split.test : split.train).push_back(order[static_cast<std::size_t>(i)]);
        }
    }
    return splits;
}

bool fold_degenerate(const std::vector<FoldSplit>& splits, const std::vector<int>& labels) {
    for (const FoldSplit& split : splits) {
        for (const auto* part : {&split.train, &split.test}) {
            if (part->empty()) return true;
            const int first = labels[static_cast<std::size_t>(part->front())];
            bool mixed = false;
            for (std::int64_t idx : *part)
                if (labels[static_cast<std::size_t>(idx)] != first) {
                    mixed = true;
                    break;
                }
            if (!mixed) return true;
        }
    }
    return false;
}

Matrix gather_columns(const Matrix& data, const std::vector<std::int64_t>& indices) {
    Matrix out(data.rows(), static_cast<std::int64_t>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) out.col(static_cast<std::int64_t>(i)) = data.col(indices[i]);
    return out;
}

double fold_accuracy(const Matrix& pooled, const std::vector<int>& labels, const FoldSplit& split,
                     const C2stConfig& config, Rng& rng) {
    const Matrix train = gather_columns(pooled, split.train);
    const Normalizer norm = Normalizer::fit(train);
    const Matrix train_z = norm.transform_batch(train);

    Mlp net = Mlp::make(static_cast<int>(pooled.rows()), config.hidden, 1, Activation::kRelu);
    net.init_glorot(rng);
    AdamState adam(net);
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;

    std::vector<std::int64_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<LinearGrad> grads;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::int64_t> batch_cols(order.begin() + static_cast<std::int64_t>(start),
                                                 order.begin() + static_cast<std::int64_t>(stop));
            Matrix batch(train_z.rows(), static_cast<std::int64_t>(batch_cols.size()));
            std::vector<std::int64_t> batch_rows(batch_cols.size());
            for (std::size_t i = 0; i < batch_cols.size(); ++i) {
                batch.col(static_cast<std::int64_t>(i)) = train_z.col(batch_cols[i]);
                batch_rows[i] = split.train[static_cast<std::size_t>(batch_cols[i])];
            }
            MlpCache cache;
            const Matrix logits = net.forward_batch(batch, &cache);
            Matrix d_logits(1, logits.cols());
            bce_backward(logits, labels, batch_rows, &d_logits);
            net.backward(cache, d_logits, &grads);
            adam.step(net, grads, adam_config);
        }
    }

    std::int64_t hits = 0;
    for (std::int64_t idx : split.test) {
        const Vector z = norm.transform(pooled.col(idx));
        const double logit = net.forward(z)[0];
        const int pred = logit > 0.0 ? 1 : 0;
        if (pred == labels[static_cast<std::size_t>(idx)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(split.test.size());
}

}  // namespace

C2stResult c2st(const Matrix& a, const Matrix& b, const C2stConfig& config) {
    if (a.rows() != b.rows()) throw InputError("c2st: sample sets differ in dimensionality");
    if (a.cols() < 100 || b.cols() < 100)
        throw InputError("c2st: each sample set needs at least 100 samples");
    if (config.folds < 2) throw InputError("c2st: needs at least 2 folds");

    const std::int64_t n = a.cols() + b.cols();
    Matrix pooled(a.rows(), n);
    pooled.leftCols(a.cols()) = a;
    pooled.rightCols(b.cols()) = b;
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = a.cols(); i < n; ++i) labels[static_cast<std::size_t>(i)] = 1;

    std::vector<FoldSplit> splits;
    std::uint64_t shuffle_seed = config.seed;
    bool usable = false;
    for (int attempt = 0; attempt < config.max_reshuffles; ++attempt, ++shuffle_seed) {
        Rng shuffle_rng(shuffle_seed);
        splits = make_folds(n, config.folds, shuffle_rng);
        if (!fold_degenerate(splits, labels)) {
            usable = true;
            break;
        }
    }
    if (!usable)
        throw InputError("c2st: folds stayed single-class after " +
                         std::to_string(config.max_reshuffles) + " reshuffles");

    C2stResult result;
    result.config = config;
    result.n_a = static_cast<int>(a.cols());
    result.n_b = static_cast<int>(b.cols());
    for (int f = 0; f < config.folds; ++f) {
        Rng fold_rng(config.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(f + 1)));
        result.fold_accuracy.push_back(
            fold_accuracy(pooled, labels, splits[static_cast<std::size_t>(f)], config, fold_rng));
    }
    result.score = std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) /
                   static_cast<double>(config.folds);
    return result;
}

Matrix encode_mixed(const std::vector<MixedSample>& samples, const MixedParamSpace& space) {
    if (samples.empty()) throw InputError("encode_mixed: empty sample set");
    const int width = space.discrete.one_hot_width() + space.k();
    Matrix out = Matrix::Zero(width, static_cast<std::int64_t>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const MixedSample& sample = samples[i];
        space.discrete.validate_indices(sample.theta_d);
        if (sample.theta_c.size() != space.k())
            throw InputError("encode_mixed: continuous dimension mismatch");
        const auto col = static_cast<std::int64_t>(i);
        for (int d = 0; d < space.l(); ++d)
            out(space.discrete.block_offset(d) + sample.theta_d[static_cast<std::size_t>(d)],
                col) = 1.0;
        for (int j = 0; j < space.k(); ++j)
            out(space.discrete.one_hot_width() + j, col) = sample.theta_c[j];
    }
    return out;
}

C2stResult c2st_mixed(const std::vector<MixedSample>& a, const std::vector<MixedSample>& b,
                      const MixedParamSpace& space, const C2stConfig& config) {
    return c2st(encode_mixed(a, space), encode_mixed(b, space), config);
}

PredictiveMseResult predictive_mse(const PosteriorSampler& posterior, const Simulator& model,
                                   int n_test, Rng& rng) {
    if (n_test < 1) throw InputError("predictive_mse needs n_test >= 1");
    const std::vector<ObsTransformKind> transforms = model.obs_transforms();
    const auto transform = [&](const Vector& x) {
        Vector out(x.size());
        for (int i = 0; i < x.size(); ++i)
            out[i] = apply_obs_transform(transforms[static_cast<std::size_t>(i)], x[i]);
        return out;
    };
    constexpr int kMaxRedrawsPerPair = 1000;
    PredictiveMseResult result;
    result.n_test = n_test;
    double total = 0.0;
    for (int i = 0; i < n_test; ++i) {
        Rng pair_rng = rng.spawn(static_cast<std::uint64_t>(i));
        const MixedSample theta_o = model.sample_prior(pair_rng);
        const Vector x_o = model.simulate(theta_o, pair_rng);
        Vector x_post;
        int redraws = 0;
        for (;; ++redraws) {
            if (redraws > kMaxRedrawsPerPair)
                throw StabilityError(
                    "predictive_mse: posterior draws kept landing outside the simulator's "
                    "supported parameter region");
            const MixedSample theta_s = posterior.posterior_sample(x_o, 1, pair_rng).front();
            if (!model.in_support(theta_s)) {
                ++result.n_resampled;
                continue;
            }
            x_post = model.simulate(theta_s, pair_rng);
            break;
        }
        total += (transform(x_o) - transform(x_post)).squaredNorm() /
                 static_cast<double>(x_o.size());
    }
    result.mse = total / static_cast<double>(n_test);
    return result;
}

}  // namespace mnpe
