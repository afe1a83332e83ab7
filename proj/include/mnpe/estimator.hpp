#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mnpe/flow.hpp"
#include "mnpe/made.hpp"
#include "mnpe/nn.hpp"

namespace mnpe {

// Per-dimension observation preprocessing fixed by the simulator and stored
// with the estimator.
enum class ObsTransformKind { kIdentity, kSqrt, kLog1p };

std::string obs_transform_name(ObsTransformKind kind);
ObsTransformKind obs_transform_from_name(const std::string& name);
double apply_obs_transform(ObsTransformKind kind, double value);

// theta = (theta_d, theta_c): l discrete dimensions with class counts plus k
// continuous dimensions. Continuous prior descriptors are provenance strings
// persisted with checkpoints; sampling lives in the simulators.
struct MixedParamSpace {
    DiscreteSchema discrete;
    std::vector<std::string> continuous_names;
    std::vector<std::string> continuous_priors;

    int l() const { return discrete.size(); }
    int k() const { return static_cast<int>(continuous_names.size()); }
};

struct MixedSample {
    std::vector<int> theta_d;  // internal 0-based class indices
    Vector theta_c;
};

struct DatasetMeta {
    std::string simulator;
    std::uint64_t seed = 0;
    std::int64_t n_requested = 0;
    std::int64_t n_rejected_unstable = 0;       // stability rule (rho_i >= 1)
    std::int64_t n_rejected_near_unstable = 0;  // E[Q_i] > 10 among stable draws
    std::int64_t n_rejected() const { return n_rejected_unstable + n_rejected_near_unstable; }
};

// Columnar parameter-observation pairs; matrices hold one sample per column.
struct Dataset {
    std::vector<std::vector<int>> theta_d;  // N rows of l indices
    Matrix theta_c;                         // k x N
    Matrix x;                               // d x N
    DatasetMeta meta;

    std::int64_t size() const { return x.cols(); }
    void validate(const MixedParamSpace& space) const;
};

struct ArchitectureConfig {
    std::vector<int> made_hidden = {32, 32, 32};
    std::vector<int> flow_hidden = {32, 32, 32};
    int flow_transforms = 5;
    int flow_bins = 8;
    double tail_bound = 5.0;
    int flow_conditioner_blocks = 0;
    std::vector<int> embedding_hidden;  // empty plus embedding_dim=0: no embedding net
    int embedding_dim = 0;
};

// Abstract posterior surface shared by trained estimators and the reference
// posteriors, so calibration and metrics run identically on either.
class PosteriorSampler {
public:
    virtual ~PosteriorSampler() = default;
    virtual std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const = 0;
    // Per-discrete-dimension marginal class probabilities given x_obs.
    virtual std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const = 0;
};

// The joint mixed posterior estimator: categorical MADE for q(theta_d|x),
// conditional spline flow for q(theta_c|theta_d,x), optional shared
// observation embedding, and the persisted preprocessing pipeline.
// joint_log_prob = discrete log_prob + conditional flow log_prob + the
// Jacobian of the theta_c normalization, exactly, by construction.
class MnpeEstimator : public PosteriorSampler {
public:
    MnpeEstimator() = default;

    static MnpeEstimator fit(const MixedParamSpace& space, const Dataset& data,
                             const ArchitectureConfig& arch, const TrainConfig& train_config,
                             const std::vector<ObsTransformKind>& obs_transforms,
                             TrainResult* training_log = nullptr);

    double joint_log_prob(const MixedSample& theta, const Vector& x_obs) const;
    // (discrete NLL, continuous NLL) averaged over the given dataset rows.
    std::pair<double, double> joint_loss_parts(const Dataset& data,
                                               const std::vector<std::int64_t>& indices) const;
    double joint_loss(const Dataset& data, const std::vector<std::int64_t>& indices) const;

    std::vector<MixedSample> posterior_sample(const Vector& x_obs, int n, Rng& rng) const override;
    std::vector<Vector> discrete_marginal_probs(const Vector& x_obs, Rng& rng) const override;

    // Exact PMF over the discrete configurations (enumeration cap applies).
    std::vector<double> discrete_pmf(const Vector& x_obs,
                                     std::int64_t enumeration_cap = 1000000) const;

    void save(const std::string& path) const;
    static MnpeEstimator load(const std::string& path);

    // Observation pipeline: per-dim transform, z-score, optional embedding.
    Vector context(const Vector& x_obs) const;
    Matrix context_batch(const Matrix& x_obs) const;

    const MixedParamSpace& space() const { return space_; }
    int obs_dim() const { return x_norm_.dim(); }

    // Serialized state; public so the checkpoint codec and tests stay simple.
    MixedParamSpace space_;
    ArchitectureConfig arch_;
    std::vector<ObsTransformKind> obs_transforms_;
    Normalizer theta_c_norm_;
    Normalizer x_norm_;
    std::optional<Mlp> embedding_;
    std::optional<CategoricalMade> made_;     // engaged iff l >= 1
    std::optional<SplineCouplingFlow> flow_;  // engaged iff k >= 1

    Vector transform_obs(const Vector& x_obs) const;
    Vector flow_condition(const std::vector<int>& theta_d, const Vector& context) const;
    int context_dim() const;
};

}  // namespace mnpe
