#include "mnpe/references.hpp"

#include <algorithm>
#include <cmath>

namespace mnpe {

// ---------------------------------------------------------------------------
// Toy analytic posterior

ToyAnalyticPosterior::ToyAnalyticPosterior(const GaussianToyModel& model)
    : a_(model.a()), sigma_(model.sigma()) {}

double ToyAnalyticPosterior::prob_shift(double x) const {
    return sigmoid(a_ * (2.0 * x - a_) / (2.0 * (sigma_ * sigma_ + 1.0)));
}

double ToyAnalyticPosterior::conditional_mean(double x, int theta_d) const {
    return (x - a_ * theta_d) / (1.0 + sigma_ * sigma_);
}

double ToyAnalyticPosterior::conditional_var() const {
    return sigma_ * sigma_ / (1.0 + sigma_ * sigma_);
}

double ToyAnalyticPosterior::joint_density(int theta_d, double theta_c, double x) const {
    if (theta_d != 0 && theta_d != 1) throw InputError("theta_d must be 0 or 1");
    const double p1 = prob_shift(x);
    const double mean = conditional_mean(x, theta_d);
    const double var = conditional_var();
    const double z = (theta_c - mean) * (theta_c - mean) / var;
    return (theta_d == 1 ? p1 : 1.0 - p1) * std::exp(-0.5 * z) / std::sqrt(2.0 * M_PI * var);
}

std::vector<MixedSample> ToyAnalyticPosterior::posterior_sample(const Vector& x_obs, int n,
                                                                Rng& rng) const {
    if (x_obs.size() != 1) throw InputError("toy observation must be 1-dimensional");
    if (n <= 0) throw InputError("sample count must be positive");
    const double p1 = prob_shift(x_obs[0]);
    const double sd = std::sqrt(conditional_var());
    std::vector<MixedSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        MixedSample s;
        const int d = rng.uniform() < p1 ? 1 : 0;
        s.theta_d = {d};
        s.theta_c = Vector(1);
        s.theta_c[0] = rng.normal(conditional_mean(x_obs[0], d), sd);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<Vector> ToyAnalyticPosterior::discrete_marginal_probs(const Vector& x_obs, Rng&) const {
    if (x_obs.size() != 1) throw InputError("toy observation must be 1-dimensional");
    const double p1 = prob_shift(x_obs[0]);
    Vector probs(2);
    probs << 1.0 - p1, p1;
    return {probs};
}

// ---------------------------------------------------------------------------
// Coal exact posterior

namespace {

// log integral of lambda^S e^{-(n+1) lambda} over lambda > 0 under the
// Exponential(1) prior (prior density folded into n+1).
double log_segment_marginal(double count_sum, double length) {
    return std::lgamma(count_sum + 1.0) - (count_sum + 1.0) * std::log(length + 1.0);
}

}  // namespace

CoalExactPosterior::CoalExactPosterior(const Vector& x) : x_(x) {
    const int n = CoalChangepointModel::kNumYears;
    if (x_.size() != n) throw InputError("coal observation must cover all years");
    for (int t = 0; t < n; ++t) {
        if (x_[t] < 0.0) throw InputError("coal counts must be non-negative");
    }
    early_sum_.resize(static_cast<std::size_t>(n) + 1, 0.0);
    for (int t = 0; t < n; ++t) early_sum_[static_cast<std::size_t>(t) + 1] = early_sum_[static_cast<std::size_t>(t)] + x_[t];

    std::vector<double> log_marginal(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        const double early = early_sum_[static_cast<std::size_t>(s)];
        const double late = early_sum_[static_cast<std::size_t>(n)] - early;
        log_marginal[static_cast<std::size_t>(s)] =
            log_segment_marginal(early, s) + log_segment_marginal(late, n - s);
    }
    const double norm = log_sum_exp(log_marginal);
    pmf_ = Vector(n);
    for (int s = 0; s < n; ++s) pmf_[s] = std::exp(log_marginal[static_cast<std::size_t>(s)] - norm);
}

std::pair<double, double> CoalExactPosterior::early_gamma(int switch_idx) const {
    return {early_sum_[static_cast<std::size_t>(switch_idx)] + 1.0, switch_idx + 1.0};
}

std::pair<double, double> CoalExactPosterior::late_gamma(int switch_idx) const {
    const int n = CoalChangepointModel::kNumYears;
    const double late = early_sum_[static_cast<std::size_t>(n)] - early_sum_[static_cast<std::size_t>(switch_idx)];
    return {late + 1.0, n - switch_idx + 1.0};
}

double CoalExactPosterior::lambda_early_mean() const {
    double m = 0.0;
    for (int s = 0; s < pmf_.size(); ++s) {
        const auto [shape, rate] = early_gamma(s);
        m += pmf_[s] * shape / rate;
    }
    return m;
}

double CoalExactPosterior::lambda_late_mean() const {
    double m = 0.0;
    for (int s = 0; s < pmf_.size(); ++s) {
        const auto [shape, rate] = late_gamma(s);
        m += pmf_[s] * shape / rate;
    }
    return m;
}

std::vector<MixedSample> CoalExactPosterior::posterior_sample(const Vector& x_obs, int n,
                                                              Rng& rng) const {
    if (!x_obs.isApprox(x_)) {
        throw InputError("coal reference was built for a different observation");
    }
    if (n <= 0) throw InputError("sample count must be positive");
    std::vector<MixedSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        double cdf = 0.0;
        int s_idx = static_cast<int>(pmf_.size()) - 1;
        for (int s = 0; s < pmf_.size(); ++s) {
            cdf += pmf_[s];
            if (u <= cdf) {
                s_idx = s;
                break;
            }
        }
        MixedSample s;
        s.theta_d = {s_idx};
        s.theta_c = Vector(2);
        const auto [e_shape, e_rate] = early_gamma(s_idx);
        const auto [l_shape, l_rate] = late_gamma(s_idx);
        s.theta_c[0] = rng.gamma(e_shape, e_rate);
        s.theta_c[1] = rng.gamma(l_shape, l_rate);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<Vector> CoalExactPosterior::discrete_marginal_probs(const Vector& x_obs, Rng&) const {
    if (!x_obs.isApprox(x_)) {
        throw InputError("coal reference was built for a different observation");
    }
    return {pmf_};
}

// ---------------------------------------------------------------------------
// Queue importance-sampling reference

namespace {

// Streaming log-sum-exp: max is tracked online, the shifted sum rescaled
// when the max moves.
struct StreamingLse {
    double max = -INFINITY;
    double sum = 0.0;  // sum of exp(v - max)

    void add(double v) {
        if (v == -INFINITY) return;
        if (v > max) {
            sum = sum * std::exp(max - v) + 1.0;
            max = v;
        } else {
            sum += std::exp(v - max);
        }
    }
    double value() const { return sum == 0.0 ? -INFINITY : max + std::log(sum); }
};

}  // namespace

double QueueReference::log_weight(const MixedSample& theta) const {
    return log_lik_ ? log_lik_(theta, x_) : model_.log_likelihood(theta, x_);
}

QueueReference::QueueReference(const TandemQueueModel& model, const Vector& x, std::int64_t budget,
                               std::uint64_t seed, LogLikFn log_lik)
    : model_(model), x_(x), budget_(budget), seed_(seed), log_lik_(std::move(log_lik)) {
    if (x_.size() != model_.obs_dim()) throw InputError("queue observation must be 5-dimensional");
    if (budget_ <= 0) throw InputError("reference budget must be positive");
    const int classes = TandemQueueModel::kMaxServers - TandemQueueModel::kMinServers + 1;
    const int num_configs = classes * classes;

    log_sum_weight_.resize(static_cast<std::size_t>(num_configs));
    max_log_weight_.resize(static_cast<std::size_t>(num_configs));
    diag_.ess.resize(static_cast<std::size_t>(num_configs));
    diag_.attempts.assign(static_cast<std::size_t>(num_configs), 0);
    diag_.budget = budget_;

    for (int cfg = 0; cfg < num_configs; ++cfg) {
        Rng rng(config_seed(cfg));
        StreamingLse lse, lse2;
        std::int64_t attempts = 0;
        for (std::int64_t j = 0; j < budget_; ++j) {
            const MixedSample theta = draw_proposal_counted(cfg, rng, &attempts);
            const double lw = log_weight(theta);
            lse.add(lw);
            lse2.add(2.0 * lw);
        }
        diag_.attempts[static_cast<std::size_t>(cfg)] = attempts;
        log_sum_weight_[static_cast<std::size_t>(cfg)] = lse.value();
        max_log_weight_[static_cast<std::size_t>(cfg)] = lse.max;
        diag_.ess[static_cast<std::size_t>(cfg)] =
            lse2.value() > -INFINITY ? std::exp(2.0 * lse.value() - lse2.value()) : 0.0;
    }

    // Configuration probabilities pool the per-configuration mean weights;
    // the budget is common, so the 1/budget factors cancel in normalization.
    const double norm = log_sum_exp(log_sum_weight_);
    if (!std::isfinite(norm)) {
        invalid_reason_ = "all importance weights vanished; observation unreachable";
        diag_.config_probs.assign(static_cast<std::size_t>(num_configs), 0.0);
        return;
    }
    diag_.config_probs.resize(static_cast<std::size_t>(num_configs));
    for (int cfg = 0; cfg < num_configs; ++cfg) {
        diag_.config_probs[static_cast<std::size_t>(cfg)] =
            std::exp(log_sum_weight_[static_cast<std::size_t>(cfg)] - norm);
    }
    for (int cfg = 0; cfg < num_configs; ++cfg) {
        if (diag_.config_probs[static_cast<std::size_t>(cfg)] > kRetainedProb &&
            diag_.ess[static_cast<std::size_t>(cfg)] < kMinEss) {
            invalid_reason_ =
                "importance-sampling reference invalid: configuration " + std::to_string(cfg) +
                " retained with probability " +
                std::to_string(diag_.config_probs[static_cast<std::size_t>(cfg)]) + " but ESS " +
                std::to_string(diag_.ess[static_cast<std::size_t>(cfg)]) + " < " +
                std::to_string(kMinEss) + "; increase the budget";
            return;
        }
    }
}

void QueueReference::ensure_valid() const {
    if (!valid()) throw ReferenceInvalidError(invalid_reason_);
}

int QueueReference::mode_config() const {
    int mode = 0;
    for (int cfg = 1; cfg < static_cast<int>(diag_.config_probs.size()); ++cfg) {
        if (diag_.config_probs[static_cast<std::size_t>(cfg)] >
            diag_.config_probs[static_cast<std::size_t>(mode)]) {
            mode = cfg;
        }
    }
    return mode;
}

std::uint64_t QueueReference::config_seed(int config) const {
    return seed_ ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(config) + 1));
}

MixedSample QueueReference::draw_proposal(int config, Rng& rng) const {
    return draw_proposal_counted(config, rng, nullptr);
}

MixedSample QueueReference::draw_proposal_counted(int config, Rng& rng,
                                                  std::int64_t* attempts) const {
    const int classes = TandemQueueModel::kMaxServers - TandemQueueModel::kMinServers + 1;
    MixedSample s;
    s.theta_d = {config / classes, config % classes};
    s.theta_c = Vector(3);
    for (;;) {
        if (attempts) ++*attempts;
        s.theta_c[0] = std::exp(rng.normal(std::log(9.0), 0.3));
        s.theta_c[1] = std::exp(rng.normal(std::log(8.0), 0.3));
        s.theta_c[2] = std::exp(rng.normal(std::log(5.0), 0.3));
        if (!model_.rejected(s)) return s;
    }
}

void QueueReference::check_same_observation(const Vector& x_obs) const {
    if (x_obs.size() != x_.size() || !x_obs.isApprox(x_)) {
        throw InputError("queue reference was built for a different observation");
    }
}

std::vector<MixedSample> QueueReference::posterior_sample(const Vector& x_obs, int n,
                                                          Rng& rng) const {
    check_same_observation(x_obs);
    ensure_valid();
    if (n <= 0) throw InputError("sample count must be positive");
    const int num_configs = static_cast<int>(log_sum_weight_.size());

    // Allocate draws to configurations by the pooled posterior probabilities.
    std::vector<int> config_of(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        double cdf = 0.0;
        int cfg = num_configs - 1;
        for (int c = 0; c < num_configs; ++c) {
            cdf += diag_.config_probs[static_cast<std::size_t>(c)];
            if (u <= cdf) {
                cfg = c;
                break;
            }
        }
        config_of[static_cast<std::size_t>(i)] = cfg;
    }

    // Within each configuration, sampling-importance-resampling: targets are
    // uniform positions on the total weight mass, and one replay of the
    // accepted proposal stream walks the running weight sum past each sorted
    // target. Weights are shifted by the stored per-configuration maximum so
    // the running sum stays in range.
    std::vector<MixedSample> out(static_cast<std::size_t>(n));
    for (int cfg = 0; cfg < num_configs; ++cfg) {
        std::vector<int> requesters;
        for (int i = 0; i < n; ++i) {
            if (config_of[static_cast<std::size_t>(i)] == cfg) requesters.push_back(i);
        }
        if (requesters.empty()) continue;
        const double max_lw = max_log_weight_[static_cast<std::size_t>(cfg)];
        const double total = std::exp(log_sum_weight_[static_cast<std::size_t>(cfg)] - max_lw);
        std::vector<std::pair<double, int>> targets;  // (position, requester)
        targets.reserve(requesters.size());
        for (int who : requesters) targets.emplace_back(rng.uniform() * total, who);
        std::sort(targets.begin(), targets.end());

        Rng replay(config_seed(cfg));
        double acc = 0.0;
        std::size_t next = 0;
        for (std::int64_t j = 0; j < budget_ && next < targets.size(); ++j) {
            const MixedSample theta = draw_proposal(cfg, replay);
            acc += std::exp(log_weight(theta) - max_lw);
            while (next < targets.size() && targets[next].first <= acc) {
                out[static_cast<std::size_t>(targets[next].second)] = theta;
                ++next;
            }
            if (j == budget_ - 1) {
                // Rounding can leave the last targets a hair past the sum.
                for (; next < targets.size(); ++next) {
                    out[static_cast<std::size_t>(targets[next].second)] = theta;
                }
            }
        }
    }
    return out;
}

std::vector<Vector> QueueReference::discrete_marginal_probs(const Vector& x_obs, Rng&) const {
    check_same_observation(x_obs);
    ensure_valid();
    const int classes = TandemQueueModel::kMaxServers - TandemQueueModel::kMinServers + 1;
    Vector p1 = Vector::Zero(classes);
    Vector p2 = Vector::Zero(classes);
    for (int cfg = 0; cfg < classes * classes; ++cfg) {
        p1[cfg / classes] += diag_.config_probs[static_cast<std::size_t>(cfg)];
        p2[cfg % classes] += diag_.config_probs[static_cast<std::size_t>(cfg)];
    }
    return {p1, p2};
}

std::vector<MixedSample> queue_reference_sample(const Vector& x, int n, Rng& rng,
                                                std::int64_t budget,
                                                QueueReferenceDiagnostics* diagnostics) {
    const TandemQueueModel model;
    QueueReference reference(model, x, budget, rng.raw());
    if (diagnostics) *diagnostics = reference.diagnostics();
    return reference.posterior_sample(x, n, rng);
}

// ---------------------------------------------------------------------------
// Overconfident wrapper

OverconfidentPosterior::OverconfidentPosterior(const PosteriorSampler& base, double std_factor,
                                               double temperature)
    : base_(base), std_factor_(std_factor), temperature_(temperature) {
    if (std_factor_ <= 0.0 || temperature_ <= 0.0) {
        throw ConfigError("overconfidence factors must be positive");
    }
}

std::vector<Vector> OverconfidentPosterior::discrete_marginal_probs(const Vector& x_obs,
                                                                    Rng& rng) const {
    std::vector<Vector> probs = base_.discrete_marginal_probs(x_obs, rng);
    for (Vector& p : probs) {
        Vector sharpened = p.array().max(1e-300).log() / temperature_;
        const double m = sharpened.maxCoeff();
        sharpened = (sharpened.array() - m).exp();
        p = sharpened / sharpened.sum();
    }
    return probs;
}

std::vector<MixedSample> OverconfidentPosterior::posterior_sample(const Vector& x_obs, int n,
                                                                  Rng& rng) const {
    std::vector<MixedSample> samples = base_.posterior_sample(x_obs, n, rng);
    if (samples.empty()) return samples;
    const auto k = samples.front().theta_c.size();
    Vector mean = Vector::Zero(k);
    for (const MixedSample& s : samples) mean += s.theta_c;
    mean /= static_cast<double>(samples.size());
    for (MixedSample& s : samples) {
        s.theta_c = mean + std_factor_ * (s.theta_c - mean);
    }
    // Resample the discrete part from the sharpened marginals.
    const std::vector<Vector> probs = discrete_marginal_probs(x_obs, rng);
    for (MixedSample& s : samples) {
        for (std::size_t dim = 0; dim < probs.size(); ++dim) {
            const double u = rng.uniform();
            double cdf = 0.0;
            int cls = static_cast<int>(probs[dim].size()) - 1;
            for (int c = 0; c < probs[dim].size(); ++c) {
                cdf += probs[dim][c];
                if (u <= cdf) {
                    cls = c;
                    break;
                }
            }
            s.theta_d[dim] = cls;
        }
    }
    return samples;
}

}  // namespace mnpe
