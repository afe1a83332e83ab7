#pragma once

#include <cstdint>
#include <vector>

#include "mnpe/simulators.hpp"

namespace mnpe {

// ---------------------------------------------------------------------------
// Classifier two-sample test (C2ST): held-out accuracy of a small fixed MLP
// trained to distinguish two sample sets. 0.5 = indistinguishable.
// ---------------------------------------------------------------------------

struct C2stConfig {
    std::vector<int> hidden = {64, 64};  // ReLU MLP, single logit output
    int folds = 5;
    int epochs = 50;
    int batch_size = 128;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    int max_reshuffles = 5;  // retries when a fold degenerates to one class
};

struct C2stResult {
    double score = 0.0;                  // mean held-out accuracy over folds
    std::vector<double> fold_accuracy;   // one entry per fold
    int n_a = 0;
    int n_b = 0;
    C2stConfig config;
};

// Columns of `a` and `b` are samples; features are z-scored on each training
// fold before the classifier sees them. Both sets need >= 100 samples.
C2stResult c2st(const Matrix& a, const Matrix& b, const C2stConfig& config = {});

// Mixed-sample featurization: [one-hot(theta_d) || theta_c] per column.
Matrix encode_mixed(const std::vector<MixedSample>& samples, const MixedParamSpace& space);

C2stResult c2st_mixed(const std::vector<MixedSample>& a, const std::vector<MixedSample>& b,
                      const MixedParamSpace& space, const C2stConfig& config = {});

// ---------------------------------------------------------------------------
// Posterior-predictive mean squared error: per test pair, draw one posterior
// sample for the observed x and one re-simulation from it, then compare
// observation features (after the simulator's per-dimension transforms).
// ---------------------------------------------------------------------------

struct PredictiveMseResult {
    double mse = 0.0;  // mean over pairs of mean-per-feature squared error
    int n_test = 0;
    std::int64_t n_resampled = 0;  // posterior redraws after rejected re-simulations
};

PredictiveMseResult predictive_mse(const PosteriorSampler& posterior, const Simulator& model,
                                   int n_test, Rng& rng);

}  // namespace mnpe
