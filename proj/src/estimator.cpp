#include "mnpe/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mnpe {

std::string obs_transform_name(ObsTransformKind kind) {
    switch (kind) {
        case ObsTransformKind::kIdentity: return "identity";
        case ObsTransformKind::kSqrt: return "sqrt";
        case ObsTransformKind::kLog1p: return "log1p";
    }
    throw ConfigError("unknown observation transform");
}

ObsTransformKind obs_transform_from_name(const std::string& name) {
    if (name == "identity") return ObsTransformKind::kIdentity;
    if (name == "sqrt") return ObsTransformKind::kSqrt;
    if (name == "log1p") return ObsTransformKind::kLog1p;
    throw InputError("unknown observation transform: " + name);
}

double apply_obs_transform(ObsTransformKind kind, double value) {
    switch (kind) {
        case ObsTransformKind::kIdentity: return value;
        case ObsTransformKind::kSqrt: return std::sqrt(std::max(value, 0.0));
        case ObsTransformKind::kLog1p: return std::log1p(std::max(value, 0.0));
    }
    throw ConfigError("unknown observation transform");
}

void Dataset::validate(const MixedParamSpace& space) const {
    const std::int64_t n = size();
    if (static_cast<std::int64_t>(theta_d.size()) != n || theta_c.cols() != n) {
        throw InputError("dataset row counts disagree between columns");
    }
    if (theta_c.rows() != space.k()) throw InputError("dataset continuous width mismatch");
    for (const std::vector<int>& row : theta_d) space.discrete.validate_indices(row);
    check_finite(theta_c, "dataset theta_c");
    check_finite(x, "dataset x");
}

namespace {

Matrix gather_columns(const Matrix& data, const std::int64_t* indices, int n) {
    Matrix out(data.rows(), n);
    for (int i = 0; i < n; ++i) out.col(i) = data.col(indices[i]);
    return out;
}

Matrix one_hot_batch(const DiscreteSchema& schema, const std::vector<std::vector<int>>& theta_d) {
    Matrix out = Matrix::Zero(schema.one_hot_width(), static_cast<Eigen::Index>(theta_d.size()));
    for (std::size_t s = 0; s < theta_d.size(); ++s) {
        for (int i = 0; i < schema.size(); ++i) {
            out(schema.block_offset(i) + theta_d[s][static_cast<std::size_t>(i)],
                static_cast<Eigen::Index>(s)) = 1.0;
        }
    }
    return out;
}

// Trains both heads (and the shared embedding) jointly under the factorized
// NLL: discrete cross entropy plus conditional flow NLL.
class JointModel : public TrainableModel {
public:
    JointModel(MnpeEstimator& est, const Dataset& data, const Matrix& x_normalized,
               const Matrix& theta_c_normalized)
        : est_(est), data_(data), xn_(x_normalized), tcn_(theta_c_normalized) {
        if (est_.embedding_) adam_embed_ = AdamState(*est_.embedding_);
        if (est_.made_) adam_made_ = AdamState(est_.made_->network());
        if (est_.flow_) {
            for (const Mlp& c : est_.flow_->conditioners()) adam_flow_.emplace_back(c);
        }
    }

    double train_batch(const std::int64_t* indices, int n, double learning_rate) override {
        return pass(indices, n, true, learning_rate);
    }

    double eval_loss(const std::int64_t* indices, int n) override {
        return pass(indices, n, false, 0.0);
    }

    void snapshot() override {
        snap_embed_ = est_.embedding_;
        if (est_.made_) snap_made_ = est_.made_->network();
        if (est_.flow_) snap_flow_ = est_.flow_->conditioners();
    }

    void restore_snapshot() override {
        est_.embedding_ = snap_embed_;
        if (est_.made_) est_.made_->network() = snap_made_;
        if (est_.flow_) est_.flow_->conditioners() = snap_flow_;
    }

private:
    double pass(const std::int64_t* indices, int n, bool update, double learning_rate) {
        const Matrix x_batch = gather_columns(xn_, indices, n);
        std::vector<std::vector<int>> d_batch(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) d_batch[static_cast<std::size_t>(i)] = data_.theta_d[static_cast<std::size_t>(indices[i])];

        MlpCache embed_cache;
        Matrix context = est_.embedding_
                             ? est_.embedding_->forward_batch(x_batch, update ? &embed_cache : nullptr)
                             : x_batch;

        AdamConfig adam_config;
        adam_config.learning_rate = learning_rate;
        Matrix d_context_total = Matrix::Zero(context.rows(), n);
        double loss = 0.0;

        std::vector<LinearGrad> made_grads;
        if (est_.made_) {
            Matrix d_context;
            loss += est_.made_->nll_batch(d_batch, context, update ? &made_grads : nullptr,
                                          update ? &d_context : nullptr);
            if (update) d_context_total += d_context;
        }

        std::vector<std::vector<LinearGrad>> flow_grads;
        if (est_.flow_) {
            const Matrix tc_batch = gather_columns(tcn_, indices, n);
            Matrix condition(est_.space_.discrete.one_hot_width() + context.rows(), n);
            if (est_.space_.l() > 0) {
                condition.topRows(est_.space_.discrete.one_hot_width()) =
                    one_hot_batch(est_.space_.discrete, d_batch);
            }
            condition.bottomRows(context.rows()) = context;
            Matrix d_condition;
            loss += est_.flow_->nll_batch(tc_batch, condition, update ? &flow_grads : nullptr,
                                          update ? &d_condition : nullptr);
            if (update) d_context_total += d_condition.bottomRows(context.rows());
        }

        if (update) {
            if (est_.embedding_) {
                std::vector<LinearGrad> embed_grads;
                est_.embedding_->backward(embed_cache, d_context_total, &embed_grads);
                adam_embed_.step(*est_.embedding_, embed_grads, adam_config);
            }
            if (est_.made_) adam_made_.step(est_.made_->network(), made_grads, adam_config);
            if (est_.flow_) {
                for (std::size_t m = 0; m < flow_grads.size(); ++m) {
                    adam_flow_[m].step(est_.flow_->conditioners()[m], flow_grads[m], adam_config);
                }
            }
        }
        return loss;
    }

    MnpeEstimator& est_;
    const Dataset& data_;
    const Matrix& xn_;
    const Matrix& tcn_;
    AdamState adam_embed_;
    AdamState adam_made_;
    std::vector<AdamState> adam_flow_;
    std::optional<Mlp> snap_embed_;
    Mlp snap_made_;
    std::vector<Mlp> snap_flow_;
};

}  // namespace

Vector MnpeEstimator::transform_obs(const Vector& x_obs) const {
    if (x_obs.size() != static_cast<Eigen::Index>(obs_transforms_.size())) {
        throw InputError("observation width mismatch");
    }
    Vector t(x_obs.size());
    for (Eigen::Index i = 0; i < x_obs.size(); ++i) {
        t[i] = apply_obs_transform(obs_transforms_[static_cast<std::size_t>(i)], x_obs[i]);
    }
    return t;
}

Vector MnpeEstimator::context(const Vector& x_obs) const {
    check_finite(x_obs, "observation");
    const Vector xn = x_norm_.transform(transform_obs(x_obs));
    return embedding_ ? embedding_->forward(xn) : xn;
}

Matrix MnpeEstimator::context_batch(const Matrix& x_obs) const {
    Matrix t(x_obs.rows(), x_obs.cols());
    for (Eigen::Index c = 0; c < x_obs.cols(); ++c) {
        t.col(c) = transform_obs(x_obs.col(c));
    }
    const Matrix xn = x_norm_.transform_batch(t);
    return embedding_ ? embedding_->forward_batch(xn) : xn;
}

int MnpeEstimator::context_dim() const {
    return embedding_ ? embedding_->out_dim() : x_norm_.dim();
}

Vector MnpeEstimator::flow_condition(const std::vector<int>& theta_d, const Vector& ctx) const {
    Vector condition(space_.discrete.one_hot_width() + ctx.size());
    condition.setZero();
    for (int i = 0; i < space_.l(); ++i) {
        condition[space_.discrete.block_offset(i) + theta_d[static_cast<std::size_t>(i)]] = 1.0;
    }
    condition.tail(ctx.size()) = ctx;
    return condition;
}

MnpeEstimator MnpeEstimator::fit(const MixedParamSpace& space, const Dataset& data,
                                 const ArchitectureConfig& arch, const TrainConfig& train_config,
                                 const std::vector<ObsTransformKind>& obs_transforms,
                                 TrainResult* training_log) {
    if (space.l() == 0 && space.k() == 0) throw ConfigError("parameter space is empty");
    data.validate(space);
    if (data.x.rows() != static_cast<Eigen::Index>(obs_transforms.size())) {
        throw ConfigError("observation transform count does not match observation width");
    }

    MnpeEstimator est;
    est.space_ = space;
    est.arch_ = arch;
    est.obs_transforms_ = obs_transforms;

    // Observation transforms apply to every sample; normalizer statistics come
    // from the training split only.
    Matrix tx(data.x.rows(), data.x.cols());
    for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
        for (Eigen::Index r = 0; r < data.x.rows(); ++r) {
            tx(r, c) = apply_obs_transform(obs_transforms[static_cast<std::size_t>(r)], data.x(r, c));
        }
    }
    {
        Rng split_rng(train_config.seed);
        auto [train_idx, val_idx] = validation_split(data.size(), train_config.validation_fraction,
                                                     split_rng);
        est.x_norm_ = Normalizer::fit(gather_columns(tx, train_idx.data(),
                                                     static_cast<int>(train_idx.size())));
        if (space.k() > 0) {
            est.theta_c_norm_ = Normalizer::fit(gather_columns(
                data.theta_c, train_idx.data(), static_cast<int>(train_idx.size())));
        } else {
            est.theta_c_norm_ = Normalizer::identity(0);
        }
    }
    const Matrix xn = est.x_norm_.transform_batch(tx);
    const Matrix tcn = space.k() > 0 ? est.theta_c_norm_.transform_batch(data.theta_c)
                                     : Matrix(0, data.size());

    Rng init_rng(train_config.seed);
    const bool use_embedding = arch.embedding_dim > 0;
    if (use_embedding) {
        est.embedding_ = Mlp::make(static_cast<int>(data.x.rows()), arch.embedding_hidden,
                                   arch.embedding_dim);
        est.embedding_->init_glorot(init_rng);
    }
    const int ctx_dim = use_embedding ? arch.embedding_dim : static_cast<int>(data.x.rows());
    if (space.l() > 0) {
        est.made_ = CategoricalMade(space.discrete, ctx_dim, arch.made_hidden);
        est.made_->init(init_rng);
    }
    if (space.k() > 0) {
        FlowConfig flow_config;
        flow_config.dim = space.k();
        flow_config.num_transforms = arch.flow_transforms;
        flow_config.num_bins = arch.flow_bins;
        flow_config.tail_bound = arch.tail_bound;
        flow_config.conditioner_hidden = arch.flow_hidden;
        flow_config.conditioner_blocks = arch.flow_conditioner_blocks;
        est.flow_ = SplineCouplingFlow(flow_config, space.discrete.one_hot_width() + ctx_dim);
        est.flow_->init(init_rng);
    }

    Matrix embed_input = xn;  // keep alive; JointModel holds references
    JointModel joint(est, data, embed_input, tcn);
    TrainResult log = train_model(joint, data.size(), train_config);
    if (training_log) *training_log = std::move(log);
    return est;
}

double MnpeEstimator::joint_log_prob(const MixedSample& theta, const Vector& x_obs) const {
    if (static_cast<int>(theta.theta_d.size()) != space_.l() ||
        theta.theta_c.size() != space_.k()) {
        throw InputError("sample does not match parameter space");
    }
    space_.discrete.validate_indices(theta.theta_d);
    const Vector ctx = context(x_obs);
    double lp = 0.0;
    if (made_) lp += made_->log_prob(theta.theta_d, ctx);
    if (flow_) {
        const Vector tcn = theta_c_norm_.transform(theta.theta_c);
        lp += flow_->log_prob(tcn, flow_condition(theta.theta_d, ctx));
        lp += theta_c_norm_.log_det_jacobian();
    }
    return lp;
}

std::pair<double, double> MnpeEstimator::joint_loss_parts(
    const Dataset& data, const std::vector<std::int64_t>& indices) const {
    if (indices.empty()) throw InputError("empty batch");
    const int n = static_cast<int>(indices.size());
    for (int i = 0; i < n; ++i) {
        const std::int64_t idx = indices[static_cast<std::size_t>(i)];
        if (idx < 0 || idx >= data.size()) {
            throw InputError("batch index out of range at position " + std::to_string(i));
        }
    }
    const Matrix x_batch = gather_columns(data.x, indices.data(), n);
    const Matrix ctx = context_batch(x_batch);
    std::vector<std::vector<int>> d_batch(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d_batch[static_cast<std::size_t>(i)] = data.theta_d[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];

    double discrete_nll = 0.0;
    if (made_) discrete_nll = made_->nll_batch(d_batch, ctx, nullptr, nullptr);

    double continuous_nll = 0.0;
    if (flow_) {
        Matrix tc(space_.k(), n);
        for (int i = 0; i < n; ++i) {
            tc.col(i) = theta_c_norm_.transform(
                data.theta_c.col(indices[static_cast<std::size_t>(i)]));
        }
        Matrix condition(space_.discrete.one_hot_width() + ctx.rows(), n);
        if (space_.l() > 0) {
            condition.topRows(space_.discrete.one_hot_width()) =
                one_hot_batch(space_.discrete, d_batch);
        }
        condition.bottomRows(ctx.rows()) = ctx;
        const Vector lps = flow_->log_prob_batch(tc, condition);
        for (int i = 0; i < n; ++i) {
            if (!std::isfinite(lps[i])) {
                throw TrainingError("non-finite loss at sample " +
                                        std::to_string(indices[static_cast<std::size_t>(i)]),
                                    -1, -1);
            }
        }
        continuous_nll = -lps.mean();
    }
    return {discrete_nll, continuous_nll};
}

double MnpeEstimator::joint_loss(const Dataset& data, const std::vector<std::int64_t>& indices) const {
    const auto [d, c] = joint_loss_parts(data, indices);
    return d + c;
}

std::vector<MixedSample> MnpeEstimator::posterior_sample(const Vector& x_obs, int n,
                                                         Rng& rng) const {
    if (n < 1) throw InputError("sample count must be positive");
    const Vector ctx = context(x_obs);
    std::vector<MixedSample> samples(static_cast<std::size_t>(n));
    std::vector<std::vector<int>> d_draws;
    if (made_) {
        d_draws = made_->sample(ctx, n, rng);
    } else {
        d_draws.assign(static_cast<std::size_t>(n), {});
    }
    for (int i = 0; i < n; ++i) samples[static_cast<std::size_t>(i)].theta_d = d_draws[static_cast<std::size_t>(i)];

    if (flow_) {
        // Group draws by discrete configuration so conditioner evaluations
        // batch across draws sharing a condition vector.
        std::map<std::vector<int>, std::vector<int>> groups;
        for (int i = 0; i < n; ++i) groups[d_draws[static_cast<std::size_t>(i)]].push_back(i);
        for (const auto& [config, positions] : groups) {
            const Vector condition = flow_condition(config, ctx);
            const Matrix draws = flow_->sample(condition, static_cast<int>(positions.size()), rng);
            for (std::size_t g = 0; g < positions.size(); ++g) {
                samples[static_cast<std::size_t>(positions[g])].theta_c =
                    theta_c_norm_.inverse(draws.col(static_cast<Eigen::Index>(g)));
            }
        }
    } else {
        for (int i = 0; i < n; ++i) samples[static_cast<std::size_t>(i)].theta_c = Vector(0);
    }
    return samples;
}

std::vector<Vector> MnpeEstimator::discrete_marginal_probs(const Vector& x_obs, Rng& rng) const {
    if (!made_) return {};
    const Vector ctx = context(x_obs);
    constexpr std::int64_t kCap = 1000000;
    if (space_.discrete.config_count(kCap + 1) > kCap) {
        return made_->marginals_monte_carlo(ctx, 10000, rng);
    }
    return made_->marginals(ctx, kCap);
}

std::vector<double> MnpeEstimator::discrete_pmf(const Vector& x_obs,
                                                std::int64_t enumeration_cap) const {
    if (!made_) return {1.0};
    return made_->class_probabilities(context(x_obs), enumeration_cap);
}

}  // namespace mnpe
