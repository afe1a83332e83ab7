#include "mnpe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mnpe {

Normalizer::Normalizer(Vector mean, Vector std, double epsilon)
    : mean_(std::move(mean)), std_(std::move(std)) {
    if (mean_.size() != std_.size()) throw ConfigError("normalizer mean/std size mismatch");
    for (Eigen::Index i = 0; i < std_.size(); ++i) std_[i] = std::max(std_[i], epsilon);
}

Normalizer Normalizer::fit(const Matrix& data, double epsilon) {
    if (data.cols() == 0) throw ConfigError("cannot fit normalizer on empty data");
    Vector mean = data.rowwise().mean();
    Vector var = (data.colwise() - mean).array().square().rowwise().mean();
    return Normalizer(std::move(mean), var.array().sqrt(), epsilon);
}

Normalizer Normalizer::identity(int dim) {
    return Normalizer(Vector::Zero(dim), Vector::Ones(dim));
}

Vector Normalizer::transform(const Vector& x) const {
    return (x - mean_).cwiseQuotient(std_);
}

Vector Normalizer::inverse(const Vector& y) const {
    return y.cwiseProduct(std_) + mean_;
}

Matrix Normalizer::transform_batch(const Matrix& x) const {
    return (x.colwise() - mean_).array().colwise() / std_.array();
}

double Normalizer::log_det_jacobian() const {
    return -std_.array().log().sum();
}

Matrix Linear::effective_weight() const {
    return mask ? weight.cwiseProduct(*mask) : weight;
}

namespace {

Matrix apply_activation(Activation act, const Matrix& z) {
    switch (act) {
        case Activation::kIdentity: return z;
        case Activation::kRelu: return z.cwiseMax(0.0);
        case Activation::kTanh: return z.array().tanh().matrix();
    }
    throw ConfigError("unknown activation");
}

// Elementwise a'(z) given the pre-activation z.
Matrix activation_grad(Activation act, const Matrix& z) {
    switch (act) {
        case Activation::kIdentity: return Matrix::Ones(z.rows(), z.cols());
        case Activation::kRelu: return (z.array() > 0.0).cast<double>().matrix();
        case Activation::kTanh: return (1.0 - z.array().tanh().square()).matrix();
    }
    throw ConfigError("unknown activation");
}

}  // namespace

Mlp Mlp::make(int in_dim, const std::vector<int>& hidden, int out_dim,
              Activation hidden_activation) {
    if (in_dim < 0 || out_dim <= 0) throw ConfigError("invalid MLP dimensions");
    Mlp mlp;
    int prev = in_dim;
    for (int width : hidden) {
        if (width <= 0) throw ConfigError("hidden width must be positive");
        Linear layer;
        layer.weight = Matrix::Zero(width, prev);
        layer.bias = Vector::Zero(width);
        layer.activation = hidden_activation;
        mlp.layers_.push_back(std::move(layer));
        prev = width;
    }
    Linear out;
    out.weight = Matrix::Zero(out_dim, prev);
    out.bias = Vector::Zero(out_dim);
    out.activation = Activation::kIdentity;
    mlp.layers_.push_back(std::move(out));
    return mlp;
}

Mlp Mlp::make_residual(int in_dim, int width, int depth, int blocks, int out_dim) {
    std::vector<int> hidden(static_cast<std::size_t>(depth), width);
    Mlp mlp = make(in_dim, hidden, out_dim);
    for (int b = 0; b < blocks; ++b) {
        Linear layer;
        layer.weight = Matrix::Zero(width, width);
        layer.bias = Vector::Zero(width);
        layer.activation = Activation::kRelu;
        layer.residual = true;
        mlp.layers_.insert(mlp.layers_.end() - 1, std::move(layer));
    }
    return mlp;
}

void Mlp::init_glorot(Rng& rng) {
    for (Linear& layer : layers_) {
        const double limit = std::sqrt(6.0 / (layer.in_dim() + layer.out_dim()));
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
                layer.weight(i, j) = rng.uniform(-limit, limit);
            }
        }
        layer.bias.setZero();
    }
}

void Mlp::zero_last_layer() {
    layers_.back().weight.setZero();
    layers_.back().bias.setZero();
}

Vector Mlp::forward(const Vector& input) const {
    Matrix out = forward_batch(input);
    return out.col(0);
}

Matrix Mlp::forward_batch(const Matrix& input, MlpCache* cache) const {
    if (input.rows() != in_dim()) throw ConfigError("MLP input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->pre_acts.clear();
    }
    Matrix x = input;
    for (const Linear& layer : layers_) {
        Matrix z = (layer.effective_weight() * x).colwise() + layer.bias;
        Matrix y = apply_activation(layer.activation, z);
        if (layer.residual) y += x;
        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->pre_acts.push_back(std::move(z));
        }
        x = std::move(y);
    }
    if (cache) cache->output = x;
    return x;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& d_output,
                     std::vector<LinearGrad>* grads) const {
    if (grads) grads->resize(layers_.size());
    Matrix dy = d_output;
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const Linear& layer = layers_[static_cast<std::size_t>(li)];
        const Matrix& x = cache.inputs[static_cast<std::size_t>(li)];
        const Matrix& z = cache.pre_acts[static_cast<std::size_t>(li)];
        Matrix dz = dy.cwiseProduct(activation_grad(layer.activation, z));
        if (grads) {
            LinearGrad& g = (*grads)[static_cast<std::size_t>(li)];
            g.d_weight = dz * x.transpose();
            if (layer.mask) g.d_weight = g.d_weight.cwiseProduct(*layer.mask);
            g.d_bias = dz.rowwise().sum();
        }
        Matrix dx = layer.effective_weight().transpose() * dz;
        if (layer.residual) dx += dy;  // the identity skip path
        dy = std::move(dx);
    }
    return dy;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const Linear& layer : layers_) {
        n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    }
    return n;
}

AdamState::AdamState(const Mlp& model) {
    for (const Linear& layer : model.layers()) {
        LinearGrad zero;
        zero.d_weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
        zero.d_bias = Vector::Zero(layer.bias.size());
        m_.push_back(zero);
        v_.push_back(std::move(zero));
    }
}

void AdamState::step(Mlp& model, const std::vector<LinearGrad>& grads, const AdamConfig& config) {
    if (grads.size() != m_.size()) throw ConfigError("Adam state/gradient layer count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t_));
    for (std::size_t li = 0; li < grads.size(); ++li) {
        Linear& layer = model.layers()[li];
        auto update = [&](Matrix& param, Matrix& m, Matrix& v, const Matrix& g) {
            m = config.beta1 * m + (1.0 - config.beta1) * g;
            v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
            param.array() -= config.learning_rate * (m.array() / bc1) /
                             ((v.array() / bc2).sqrt() + config.epsilon);
        };
        update(layer.weight, m_[li].d_weight, v_[li].d_weight, grads[li].d_weight);
        Vector& mb = m_[li].d_bias;
        Vector& vb = v_[li].d_bias;
        const Vector& gb = grads[li].d_bias;
        mb = config.beta1 * mb + (1.0 - config.beta1) * gb;
        vb = config.beta2 * vb + (1.0 - config.beta2) * gb.cwiseProduct(gb);
        layer.bias.array() -= config.learning_rate * (mb.array() / bc1) /
                              ((vb.array() / bc2).sqrt() + config.epsilon);
    }
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> validation_split(
    std::int64_t num_samples, double validation_fraction, Rng& rng) {
    if (num_samples <= 0) throw ConfigError("cannot train on an empty dataset");
    if (validation_fraction <= 0.0 || validation_fraction >= 1.0) {
        throw ConfigError("validation_fraction must lie in (0,1)");
    }
    const auto n_val = static_cast<std::int64_t>(
        std::ceil(validation_fraction * static_cast<double>(num_samples)));
    if (n_val >= num_samples) throw ConfigError("validation split leaves no training data");
    std::vector<std::int64_t> perm(static_cast<std::size_t>(num_samples));
    std::iota(perm.begin(), perm.end(), 0);
    // Fisher-Yates with our own RNG: the shuffle is part of the determinism contract.
    for (std::int64_t i = num_samples - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    std::vector<std::int64_t> val(perm.end() - n_val, perm.end());
    std::vector<std::int64_t> train(perm.begin(), perm.end() - n_val);
    return {std::move(train), std::move(val)};
}

TrainResult train_model(TrainableModel& model, std::int64_t num_samples, const TrainConfig& config) {
    if (config.batch_size <= 0 || config.max_epochs <= 0 || config.patience_epochs < 0) {
        throw ConfigError("invalid training configuration");
    }
    Rng rng(config.seed);
    auto [train, val] = validation_split(num_samples, config.validation_fraction, rng);

    TrainResult result;
    double best = INFINITY;
    int since_improvement = 0;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        for (std::size_t i = train.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i)));
            std::swap(train[i - 1], train[j]);
        }
        double epoch_loss = 0.0;
        std::int64_t seen = 0;
        int batch_index = 0;
        for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const int n = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), train.size() - start));
            const double loss = model.train_batch(&train[start], n, config.learning_rate);
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite training loss", epoch, batch_index);
            }
            epoch_loss += loss * n;
            seen += n;
            ++batch_index;
        }
        const double train_loss = epoch_loss / static_cast<double>(seen);
        const double val_loss = model.eval_loss(val.data(), static_cast<int>(val.size()));
        if (!std::isfinite(val_loss)) {
            throw TrainingError("non-finite validation loss", epoch, -1);
        }
        result.train_losses.push_back(train_loss);
        result.val_losses.push_back(val_loss);
        result.epochs_run = epoch + 1;
        if (val_loss < best) {
            best = val_loss;
            result.best_epoch = epoch;
            result.best_val_loss = val_loss;
            since_improvement = 0;
            model.snapshot();
        } else {
            ++since_improvement;
        }
        if (since_improvement >= config.patience_epochs) break;
    }
    model.restore_snapshot();
    return result;
}

MlpRegressor::MlpRegressor(Mlp network, Matrix inputs, Matrix targets, bool logistic)
    : network_(std::move(network)),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      logistic_(logistic),
      adam_(network_) {
    if (inputs_.cols() != targets_.cols()) throw ConfigError("inputs/targets sample count mismatch");
    snapshot_ = network_;
}

double MlpRegressor::loss_and_grad(const std::int64_t* indices, int n, std::vector<LinearGrad>* grads) {
    Matrix x(inputs_.rows(), n);
    Matrix t(targets_.rows(), n);
    for (int i = 0; i < n; ++i) {
        x.col(i) = inputs_.col(indices[i]);
        t.col(i) = targets_.col(indices[i]);
    }
    MlpCache cache;
    Matrix y = network_.forward_batch(x, grads ? &cache : nullptr);
    double loss;
    Matrix dy;
    if (logistic_) {
        // Binary cross-entropy on sigmoid(z) with targets in {0,1}, evaluated
        // in the stable logit form: BCE = max(z,0) - z*t + log(1+exp(-|z|)).
        Eigen::ArrayXXd logits = y.array();
        Eigen::ArrayXXd labels = t.array();
        loss = (logits.cwiseMax(0.0) - logits * labels + (1.0 + (-logits.abs()).exp()).log()).mean();
        if (grads) {
            Eigen::ArrayXXd sig = logits.unaryExpr([](double v) { return sigmoid(v); });
            dy = ((sig - labels) / static_cast<double>(n * y.rows())).matrix();
        }
    } else {
        Matrix err = y - t;
        loss = 0.5 * err.squaredNorm() / static_cast<double>(n);
        if (grads) dy = err / static_cast<double>(n);
    }
    if (grads) network_.backward(cache, dy, grads);
    return loss;
}

double MlpRegressor::train_batch(const std::int64_t* indices, int n, double learning_rate) {
    std::vector<LinearGrad> grads;
    const double loss = loss_and_grad(indices, n, &grads);
    AdamConfig config;
    config.learning_rate = learning_rate;
    adam_.step(network_, grads, config);
    return loss;
}

double MlpRegressor::eval_loss(const std::int64_t* indices, int n) {
    return loss_and_grad(indices, n, nullptr);
}

void MlpRegressor::snapshot() { snapshot_ = network_; }

void MlpRegressor::restore_snapshot() { network_ = snapshot_; }

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw InputError(std::string("non-finite values in ") + what);
}

void check_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw InputError(std::string("non-finite values in ") + what);
}

}  // namespace mnpe
