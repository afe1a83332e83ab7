#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mnpe/nn.hpp"

namespace mnpe {

enum class SplineDirection { kForward, kInverse };

// Monotone rational-quadratic spline on [-tail_bound, tail_bound], identity
// outside. `widths`/`heights` are positive bin sizes (normalized internally
// to span the interval), `derivatives` the K+1 knot derivatives (pass 1 at
// the boundaries for continuous linear tails). Returns the mapped value and
// log |d out / d in| of the applied direction. Bins degenerating below 1e-6
// after normalization are clamped and counted.
std::pair<double, double> rq_spline(double value, const std::vector<double>& widths,
                                    const std::vector<double>& heights,
                                    const std::vector<double>& derivatives,
                                    SplineDirection direction, double tail_bound);

std::uint64_t spline_clamp_count();
void reset_spline_clamp_count();

struct FlowConfig {
    int dim = 1;                               // k, continuous dimensionality
    int num_transforms = 5;
    int num_bins = 8;
    double tail_bound = 5.0;                   // spline interval on z-scored data
    std::vector<int> conditioner_hidden = {32, 32, 32};
    int conditioner_blocks = 0;                // extra residual layers per conditioner
};

// Conditional normalizing flow over k z-scored continuous parameters:
// coupling transforms with rational-quadratic splines, full-vector reversal
// between transforms, standard normal base. Pass/transform half sizes
// alternate (ceil/floor) so odd k still gets every coordinate transformed at
// least every second layer. For k=1, couplings degenerate to stacked 1-D
// conditional splines whose parameters come from the condition vector alone.
class SplineCouplingFlow {
public:
    SplineCouplingFlow() = default;
    SplineCouplingFlow(FlowConfig config, int condition_width);

    // Glorot hidden layers, zeroed output layers: the initial flow is exactly
    // the identity, so log_prob starts at the standard normal density.
    void init(Rng& rng);

    double log_prob(const Vector& theta_c, const Vector& condition) const;
    Vector log_prob_batch(const Matrix& theta_c, const Matrix& condition) const;

    // n draws for one condition vector; conditioner evaluations are batched.
    Matrix sample(const Vector& condition, int n, Rng& rng) const;

    // Mean NLL over the batch; when `grads` is given, fills per-conditioner
    // parameter gradients (outer index = transform) and d(loss)/d(condition).
    double nll_batch(const Matrix& theta_c, const Matrix& condition,
                     std::vector<std::vector<LinearGrad>>* grads, Matrix* d_condition) const;

    int dim() const { return config_.dim; }
    const FlowConfig& config() const { return config_; }
    int condition_width() const { return condition_width_; }
    std::vector<Mlp>& conditioners() { return conditioners_; }
    const std::vector<Mlp>& conditioners() const { return conditioners_; }

    // Split sizes for transform m: {pass, transform}.
    std::pair<int, int> split_sizes(int transform_index) const;

private:
    FlowConfig config_;
    int condition_width_ = 0;
    std::vector<Mlp> conditioners_;
    int params_per_coordinate_ = 0;  // 3*num_bins - 1 raw spline parameters
};

}  // namespace mnpe
