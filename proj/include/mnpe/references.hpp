#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mnpe/simulators.hpp"

namespace mnpe {

// Closed-form posterior for the Gaussian toy model:
//   P(theta_d=1 | x) = sigmoid(a(2x - a) / (2(sigma^2 + 1)))
//   theta_c | theta_d, x ~ N((x - a*theta_d)/(1 + sigma^2), sigma^2/(1 + sigma^2))
class ToyAnalyticPosterior : public PosteriorSampler {
public:
    explicit ToyAnalyticPosterior(const GaussianToyModel& model = GaussianToyModel());

    double prob_shift(double x) const;
    double conditional_mean(double x, int theta_d) const;
    double conditional_var() const;
    // Joint mixed posterior density p(theta_d, theta_c | x).
    double joint_density(int theta_d, double theta_c, double x) const;

    std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const override;
    std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const override;

private:
    double a_;
    double sigma_;
};

// Exact posterior for the coal changepoint model by Exponential-Poisson
// conjugacy: per switchpoint s the marginal likelihood factorizes over the
// two segments as Gamma(S+1)/(n+1)^(S+1) (S = segment count sum, n = segment
// length in years; the s-independent prod 1/y_t! factor is dropped), giving
// an exact 111-way PMF and Gamma(S+1, n+1) rate conditionals.
class CoalExactPosterior : public PosteriorSampler {
public:
    explicit CoalExactPosterior(const Vector& x);

    const Vector& switch_pmf() const { return pmf_; }
    // (shape, rate) of the Gamma posterior for each rate given switch index.
    std::pair<double, double> early_gamma(int switch_idx) const;
    std::pair<double, double> late_gamma(int switch_idx) const;
    // Marginal posterior means, switchpoint-averaged.
    double lambda_early_mean() const;
    double lambda_late_mean() const;

    std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const override;
    std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const override;

private:
    Vector x_;
    Vector pmf_;
    std::vector<double> early_sum_;  // prefix count sums: sum_{t < s} y_t
};

struct QueueReferenceDiagnostics {
    // Normalized posterior probability and effective sample size per server
    // configuration, in odometer order over (c1, c2).
    std::vector<double> config_probs;
    std::vector<double> ess;
    // Proposal-acceptance bookkeeping: prior draws attempted per configuration
    // to reach the budget of accepted draws.
    std::vector<std::int64_t> attempts;
    std::int64_t budget = 0;
};

// Importance-sampling reference posterior for the tandem queue. For each of
// the 25 server configurations, proposals are drawn from the continuous prior
// truncated to that configuration's acceptance region; weights are the exact
// observation likelihood. Configuration probabilities pool the per-
// configuration marginal-likelihood estimates (mean weight). The reference
// is valid only if every retained configuration (probability > 1%) has
// ESS >= 500; diagnostics are always inspectable, but drawing samples or
// marginals from an invalid reference throws ReferenceInvalidError.
// Memory stays O(1) in the budget: the weighting pass keeps only summary
// statistics, and sampling re-generates each configuration's accepted
// proposal stream (and weights) from its seed.
class QueueReference : public PosteriorSampler {
public:
    static constexpr double kMinEss = 500.0;
    static constexpr double kRetainedProb = 0.01;

    using LogLikFn = std::function<double(const MixedSample&, const Vector&)>;

    // `log_lik` overrides the observation likelihood (used by prior-recovery
    // tests); the default is the model's exact log_likelihood.
    QueueReference(const TandemQueueModel& model, const Vector& x, std::int64_t budget,
                   std::uint64_t seed, LogLikFn log_lik = {});

    const QueueReferenceDiagnostics& diagnostics() const { return diag_; }
    bool valid() const { return invalid_reason_.empty(); }
    // Throws ReferenceInvalidError when the ESS criterion failed.
    void ensure_valid() const;
    // Index of the most probable (c1, c2) configuration, odometer order.
    int mode_config() const;

    std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const override;
    std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const override;

private:
    void check_same_observation(const Vector& x_obs) const;
    // Re-draws the accepted proposal stream for one configuration,
    // identically to the weighting pass.
    MixedSample draw_proposal(int config, Rng& rng) const;
    MixedSample draw_proposal_counted(int config, Rng& rng, std::int64_t* attempts) const;
    double log_weight(const MixedSample& theta) const;
    std::uint64_t config_seed(int config) const;

    TandemQueueModel model_;
    Vector x_;
    std::int64_t budget_;
    std::uint64_t seed_;
    LogLikFn log_lik_;
    std::vector<double> log_sum_weight_;  // per config: log sum_j w_j
    std::vector<double> max_log_weight_;  // per config: max_j log w_j
    QueueReferenceDiagnostics diag_;
    std::string invalid_reason_;
};

// One-call convenience per the reference workflow: build the importance-
// sampling reference (fresh seed from `rng`) and return n resampled draws.
std::vector<MixedSample> queue_reference_sample(const Vector& x, int n, Rng& rng,
                                                std::int64_t budget,
                                                QueueReferenceDiagnostics* diagnostics = nullptr);

// Deliberately miscalibrated wrapper used to validate that the calibration
// diagnostics flag overconfidence: continuous samples are shrunk toward
// their empirical mean by `std_factor`, and discrete marginals are sharpened
// with temperature `temperature` (p^(1/T), renormalized) before resampling.
class OverconfidentPosterior : public PosteriorSampler {
public:
    OverconfidentPosterior(const PosteriorSampler& base, double std_factor = 0.5,
                           double temperature = 0.2);

    std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const override;
    std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const override;

private:
    const PosteriorSampler& base_;
    double std_factor_;
    double temperature_;
};

}  // namespace mnpe
