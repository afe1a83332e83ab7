#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "mnpe/common.hpp"

namespace mnpe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Per-dimension z-scoring. transform(inverse(x)) == x to 1e-10; std entries
// are floored at epsilon so constant dimensions stay finite.
class Normalizer {
public:
    Normalizer() = default;
    Normalizer(Vector mean, Vector std, double epsilon = 1e-8);

    // Columns of `data` are samples; statistics are per row (feature).
    static Normalizer fit(const Matrix& data, double epsilon = 1e-8);
    static Normalizer identity(int dim);

    Vector transform(const Vector& x) const;
    Vector inverse(const Vector& y) const;
    Matrix transform_batch(const Matrix& x) const;

    // log |d transform(x) / dx| = -sum log std; the density correction when a
    // density over transformed coordinates is mapped back to original scale.
    double log_det_jacobian() const;

    const Vector& mean() const { return mean_; }
    const Vector& std() const { return std_; }
    int dim() const { return static_cast<int>(mean_.size()); }

private:
    Vector mean_;
    Vector std_;
};

enum class Activation { kIdentity, kRelu, kTanh };

// Dense layer with optional binary weight mask. The effective weight is
// weight .* mask on every forward and gradient evaluation; masked positions
// receive exactly zero gradient. The mask is fixed at construction.
struct Linear {
    Matrix weight;                 // out x in
    Vector bias;                   // out
    std::optional<Matrix> mask;    // same shape as weight; entries in {0,1}
    Activation activation = Activation::kIdentity;
    bool residual = false;         // out = act(Wx+b) + x; requires square W

    int in_dim() const { return static_cast<int>(weight.cols()); }
    int out_dim() const { return static_cast<int>(weight.rows()); }
    Matrix effective_weight() const;
};

struct LinearGrad {
    Matrix d_weight;
    Vector d_bias;
};

// Activations cached during a batched forward pass, needed for backward.
struct MlpCache {
    std::vector<Matrix> inputs;     // input to each layer, features x batch
    std::vector<Matrix> pre_acts;   // W*x+b per layer
    Matrix output;
};

// Feedforward network; batches are stored one sample per column.
class Mlp {
public:
    Mlp() = default;

    // Plain MLP: hidden layers with `hidden_activation`, identity output.
    static Mlp make(int in_dim, const std::vector<int>& hidden, int out_dim,
                    Activation hidden_activation = Activation::kRelu);

    // Adds `blocks` square residual ReLU layers between the hidden stack and
    // the output layer (used by flow conditioners when configured).
    static Mlp make_residual(int in_dim, int width, int depth, int blocks, int out_dim);

    void init_glorot(Rng& rng);
    void zero_last_layer();  // zero output weights+bias: network output is exactly 0

    Vector forward(const Vector& input) const;
    Matrix forward_batch(const Matrix& input, MlpCache* cache = nullptr) const;

    // dL/d(output) in, per-layer parameter gradients out; returns dL/d(input).
    Matrix backward(const MlpCache& cache, const Matrix& d_output,
                    std::vector<LinearGrad>* grads) const;

    std::vector<Linear>& layers() { return layers_; }
    const std::vector<Linear>& layers() const { return layers_; }
    int in_dim() const { return layers_.front().in_dim(); }
    int out_dim() const { return layers_.back().out_dim(); }
    std::size_t parameter_count() const;

private:
    std::vector<Linear> layers_;
};

// Standard Adam with bias correction.
struct AdamConfig {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const Mlp& model);
    void step(Mlp& model, const std::vector<LinearGrad>& grads, const AdamConfig& config);
    std::int64_t steps_taken() const { return t_; }

private:
    std::vector<LinearGrad> m_;
    std::vector<LinearGrad> v_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    double learning_rate = 5e-4;
    int batch_size = 200;
    double validation_fraction = 0.1;
    int patience_epochs = 20;
    int max_epochs = 500;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> train_losses;  // one entry per completed epoch
    std::vector<double> val_losses;
    int best_epoch = -1;               // index into the loss arrays
    double best_val_loss = 0.0;
    int epochs_run = 0;
};

// Anything trainable by the generic loop: batch gradient step, held-out
// evaluation, and parameter snapshot/restore for best-epoch recovery.
class TrainableModel {
public:
    virtual ~TrainableModel() = default;
    virtual double train_batch(const std::int64_t* indices, int n, double learning_rate) = 0;
    virtual double eval_loss(const std::int64_t* indices, int n) = 0;
    virtual void snapshot() = 0;
    virtual void restore_snapshot() = 0;
};

// Seeded shuffle, last ceil(validation_fraction*N) samples held out, short
// final batches used, early stop once patience epochs pass without validation
// improvement (patience 0 stops after one epoch), best parameters restored.
TrainResult train_model(TrainableModel& model, std::int64_t num_samples, const TrainConfig& config);

// The exact split train_model performs: seeded Fisher-Yates shuffle, last
// ceil(validation_fraction*N) indices held out. Exposed so callers can fit
// preprocessing statistics on the training portion only.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> validation_split(
    std::int64_t num_samples, double validation_fraction, Rng& rng);

// MLP regression under mean squared error; exercises the training loop on its
// own and serves as the C2ST classifier backbone (with logistic targets).
class MlpRegressor : public TrainableModel {
public:
    MlpRegressor(Mlp network, Matrix inputs, Matrix targets, bool logistic = false);

    double train_batch(const std::int64_t* indices, int n, double learning_rate) override;
    double eval_loss(const std::int64_t* indices, int n) override;
    void snapshot() override;
    void restore_snapshot() override;

    const Mlp& network() const { return network_; }
    Mlp& network() { return network_; }

private:
    double loss_and_grad(const std::int64_t* indices, int n, std::vector<LinearGrad>* grads);

    Mlp network_;
    Mlp snapshot_;
    Matrix inputs_;   // features x N
    Matrix targets_;  // outputs x N
    bool logistic_;
    AdamState adam_;
};

void check_finite(const Matrix& m, const char* what);
void check_finite(const Vector& v, const char* what);

}  // namespace mnpe
