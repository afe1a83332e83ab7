#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mnpe/estimator.hpp"

namespace mnpe {

// A benchmark generative model: prior over the mixed parameter space
// (including any rejection rules), forward observation model, and the exact
// pointwise log-likelihood of that observation model.
class Simulator {
public:
    virtual ~Simulator() = default;

    virtual std::string name() const = 0;
    virtual MixedParamSpace space() const = 0;
    virtual int obs_dim() const = 0;
    // Per-dimension preprocessing the estimator should apply to observations.
    virtual std::vector<ObsTransformKind> obs_transforms() const = 0;

    // One accepted prior draw; rejections (if the model has any) are counted
    // into `meta` when provided.
    virtual MixedSample sample_prior(Rng& rng, DatasetMeta* meta = nullptr) const = 0;
    virtual Vector simulate(const MixedSample& theta, Rng& rng) const = 0;
    virtual double log_likelihood(const MixedSample& theta, const Vector& x) const = 0;
    // Whether theta survives the model's rejection rules (trivially true for
    // models without any); posterior draws outside the support cannot be
    // re-simulated meaningfully.
    virtual bool in_support(const MixedSample&) const { return true; }
};

// x | theta ~ N(theta_c + a*theta_d, sigma^2), theta_c ~ N(0,1),
// theta_d ~ Uniform{0,1}.
class GaussianToyModel : public Simulator {
public:
    GaussianToyModel(double a = 2.0, double sigma = 0.5);

    std::string name() const override { return "gaussian_toy"; }
    MixedParamSpace space() const override;
    int obs_dim() const override { return 1; }
    std::vector<ObsTransformKind> obs_transforms() const override;
    MixedSample sample_prior(Rng& rng, DatasetMeta* meta = nullptr) const override;
    Vector simulate(const MixedSample& theta, Rng& rng) const override;
    double log_likelihood(const MixedSample& theta, const Vector& x) const override;

    double a() const { return a_; }
    double sigma() const { return sigma_; }

private:
    double a_;
    double sigma_;
};

// Steady-state expected number waiting in an M/M/c queue with arrival rate
// gamma and per-server rate mu: E[Q] = r^c * rho * pi0 / (c! (1-rho)^2),
// r = gamma/mu, rho = r/c. Throws StabilityError when rho >= 1.
double queue_expected_length(double gamma, double mu, int c);

// Two M/M/c stations in tandem. theta = (c1, c2; gamma, mu1, mu2) with
// c_i ~ Uniform{2..6}, gamma ~ LogNormal(log 9, 0.3),
// mu1 ~ LogNormal(log 8, 0.3), mu2 ~ LogNormal(log 5, 0.3). Draws violating
// stability (rho_i >= 1) or producing near-unstable systems (E[Q_i] > 10)
// are rejected and re-drawn. Observation: three counts ~ Poisson(gamma*T)
// and two queue lengths ~ TruncatedNormal(E[Q_i], sigma_obs, lower=0).
class TandemQueueModel : public Simulator {
public:
    TandemQueueModel(double horizon = 100.0, double sigma_obs = 0.1);

    std::string name() const override { return "tandem_queue"; }
    MixedParamSpace space() const override;
    int obs_dim() const override { return 5; }
    std::vector<ObsTransformKind> obs_transforms() const override;
    MixedSample sample_prior(Rng& rng, DatasetMeta* meta = nullptr) const override;
    Vector simulate(const MixedSample& theta, Rng& rng) const override;
    double log_likelihood(const MixedSample& theta, const Vector& x) const override;

    // (E[Q_1], E[Q_2]) for an accepted theta; StabilityError if unstable.
    std::pair<double, double> expected_lengths(const MixedSample& theta) const;
    // True when theta violates either rejection rule.
    bool rejected(const MixedSample& theta, bool* unstable = nullptr) const;
    bool in_support(const MixedSample& theta) const override { return !rejected(theta); }

    double horizon() const { return horizon_; }
    double sigma_obs() const { return sigma_obs_; }

    static constexpr int kMinServers = 2;
    static constexpr int kMaxServers = 6;
    static constexpr double kNearUnstableCap = 10.0;

private:
    double horizon_;
    double sigma_obs_;
};

// Disaster counts per year over 1851..1961 with a Poisson rate that switches
// from lambda_early to lambda_late at year s: s ~ Uniform{1851..1961},
// lambda_* ~ Exponential(1), y_t ~ Poisson(lambda_early [t<s] + lambda_late [t>=s]).
class CoalChangepointModel : public Simulator {
public:
    static constexpr int kFirstYear = 1851;
    static constexpr int kNumYears = 111;

    std::string name() const override { return "coal_changepoint"; }
    MixedParamSpace space() const override;
    int obs_dim() const override { return kNumYears; }
    std::vector<ObsTransformKind> obs_transforms() const override;
    MixedSample sample_prior(Rng& rng, DatasetMeta* meta = nullptr) const override;
    Vector simulate(const MixedSample& theta, Rng& rng) const override;
    double log_likelihood(const MixedSample& theta, const Vector& x) const override;
};

// Historical UK coal-mining disaster counts, 1851..1961.
Vector coal_disaster_counts();

// Accepts "gaussian_toy", "tandem_queue", "coal_changepoint" (alias "coal").
std::unique_ptr<Simulator> make_simulator(const std::string& name);

// n accepted (theta, x) pairs with rejection bookkeeping in the metadata.
Dataset generate_dataset(const Simulator& sim, std::int64_t n, std::uint64_t seed);

// Exact log Poisson PMF via lgamma; continuous in the count argument.
double log_poisson_pmf(double count, double mean);
// Log density of Normal(mean, sd) truncated to [0, inf), evaluated at q.
double log_truncated_normal_pdf(double q, double mean, double sd);
// Standard normal CDF.
double normal_cdf(double z);

}  // namespace mnpe
