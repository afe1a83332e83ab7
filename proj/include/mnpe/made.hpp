#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mnpe/nn.hpp"

namespace mnpe {

// One discrete parameter dimension. display_offset maps internal class
// indices 0..classes-1 to user-facing values at I/O boundaries (queue server
// counts start at 2, the changepoint year at 1851).
struct DiscreteDim {
    std::string name;
    int classes = 2;
    std::int64_t display_offset = 0;
};

// Ordered discrete dimensions; the order fixes the autoregressive
// factorization and is persisted in checkpoints.
class DiscreteSchema {
public:
    DiscreteSchema() = default;
    explicit DiscreteSchema(std::vector<DiscreteDim> dims);

    int size() const { return static_cast<int>(dims_.size()); }
    const DiscreteDim& dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    const std::vector<DiscreteDim>& dims() const { return dims_; }
    int one_hot_width() const { return one_hot_width_; }
    // Start of dimension i's one-hot (and logit) block.
    int block_offset(int i) const { return offsets_[static_cast<std::size_t>(i)]; }
    // Product of class counts; saturates at the cap rather than overflowing.
    std::int64_t config_count(std::int64_t cap = (1LL << 62)) const;

    void validate_indices(const std::vector<int>& theta_d) const;

private:
    std::vector<DiscreteDim> dims_;
    std::vector<int> offsets_;
    int one_hot_width_ = 0;
};

// Degree-based autoregressive masks for a network mapping
// [one-hot(theta_d) || context] to concatenated per-dimension logit blocks.
// Context inputs have degree 0 (visible everywhere); the one-hot inputs of
// dimension i have degree i+1; hidden degrees cycle 1..l. Connectivity:
// input->hidden iff in_degree < hidden_degree, hidden->hidden iff
// from_degree <= to_degree, hidden->output block i iff degree <= i+1.
// The composition makes logit block i depend on strictly preceding
// dimensions and the context only.
std::vector<Matrix> build_made_masks(const DiscreteSchema& schema,
                                     const std::vector<int>& hidden_layout, int context_width);

// Conditional categorical masked autoregressive estimator for q(theta_d | x).
class CategoricalMade {
public:
    CategoricalMade() = default;
    CategoricalMade(DiscreteSchema schema, int context_width, std::vector<int> hidden_layout);

    void init(Rng& rng) { network_.init_glorot(rng); }

    // Sum over dimensions of log softmax(block_i)[theta_d[i]]; one forward pass.
    double log_prob(const std::vector<int>& theta_d, const Vector& context) const;

    // Sequential sampling, one forward pass per dimension per draw.
    std::vector<std::vector<int>> sample(const Vector& context, int n, Rng& rng) const;

    // Exact PMF over all configurations by prefix-sharing enumeration, in
    // odometer order (last dimension fastest). Throws CapabilityError above
    // the cap; Monte Carlo marginals are the fallback there.
    std::vector<double> class_probabilities(const Vector& context,
                                            std::int64_t enumeration_cap = 1000000) const;

    // Per-dimension marginal probabilities, by summation over the exact PMF.
    std::vector<Vector> marginals(const Vector& context,
                                  std::int64_t enumeration_cap = 1000000) const;
    // Marginals estimated from n samples (for spaces above the cap).
    std::vector<Vector> marginals_monte_carlo(const Vector& context, int n, Rng& rng) const;

    // Mean NLL over a batch (= sum of per-dimension cross entropies); fills
    // parameter gradients and the loss gradient w.r.t. the context columns.
    double nll_batch(const std::vector<std::vector<int>>& theta_d, const Matrix& context,
                     std::vector<LinearGrad>* grads, Matrix* d_context) const;

    // Raw logits for one input (testing hook for the autoregressive property).
    Vector logits(const std::vector<int>& theta_d, const Vector& context) const;

    const DiscreteSchema& schema() const { return schema_; }
    int context_width() const { return context_width_; }
    const std::vector<int>& hidden_layout() const { return hidden_layout_; }
    Mlp& network() { return network_; }
    const Mlp& network() const { return network_; }

private:
    Matrix batch_input(const std::vector<std::vector<int>>& theta_d, const Matrix& context) const;

    DiscreteSchema schema_;
    int context_width_ = 0;
    std::vector<int> hidden_layout_;
    Mlp network_;
};

}  // namespace mnpe
