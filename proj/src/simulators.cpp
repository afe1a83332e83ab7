#include "mnpe/simulators.hpp"

#include <cmath>

namespace mnpe {

double log_poisson_pmf(double count, double mean) {
    if (count < 0.0) return -INFINITY;
    if (mean <= 0.0) {
        if (mean < 0.0) throw InputError("Poisson mean must be non-negative");
        return count == 0.0 ? 0.0 : -INFINITY;
    }
    return count * std::log(mean) - mean - std::lgamma(count + 1.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

double log_truncated_normal_pdf(double q, double mean, double sd) {
    if (sd <= 0.0) throw InputError("truncated normal sd must be positive");
    if (q < 0.0) return -INFINITY;
    const double z = (q - mean) / sd;
    return -0.5 * z * z - 0.5 * std::log(2.0 * M_PI) - std::log(sd) -
           std::log(normal_cdf(mean / sd));
}

// ---------------------------------------------------------------------------
// Gaussian toy

GaussianToyModel::GaussianToyModel(double a, double sigma) : a_(a), sigma_(sigma) {
    if (sigma_ <= 0.0) throw ConfigError("toy model noise must be positive");
}

MixedParamSpace GaussianToyModel::space() const {
    MixedParamSpace s;
    s.discrete = DiscreteSchema({{"theta_d", 2, 0}});
    s.continuous_names = {"theta_c"};
    s.continuous_priors = {"Normal(0, 1)"};
    return s;
}

std::vector<ObsTransformKind> GaussianToyModel::obs_transforms() const {
    return {ObsTransformKind::kIdentity};
}

MixedSample GaussianToyModel::sample_prior(Rng& rng, DatasetMeta*) const {
    MixedSample s;
    s.theta_d = {static_cast<int>(rng.uniform_int(0, 1))};
    s.theta_c = Vector(1);
    s.theta_c[0] = rng.normal();
    return s;
}

Vector GaussianToyModel::simulate(const MixedSample& theta, Rng& rng) const {
    space().discrete.validate_indices(theta.theta_d);
    Vector x(1);
    x[0] = rng.normal(theta.theta_c[0] + a_ * theta.theta_d[0], sigma_);
    return x;
}

double GaussianToyModel::log_likelihood(const MixedSample& theta, const Vector& x) const {
    space().discrete.validate_indices(theta.theta_d);
    if (x.size() != 1) throw InputError("toy observation must be 1-dimensional");
    const double z = (x[0] - theta.theta_c[0] - a_ * theta.theta_d[0]) / sigma_;
    return -0.5 * z * z - 0.5 * std::log(2.0 * M_PI) - std::log(sigma_);
}

// ---------------------------------------------------------------------------
// Tandem queue

double queue_expected_length(double gamma, double mu, int c) {
    if (gamma <= 0.0 || mu <= 0.0) throw InputError("queue rates must be positive");
    if (c < 1) throw InputError("server count must be at least 1");
    const double r = gamma / mu;
    const double rho = r / static_cast<double>(c);
    if (rho >= 1.0) {
        throw StabilityError("queue is unstable: rho = " + std::to_string(rho));
    }
    // pi0 = [sum_{n<c} r^n/n! + r^c/(c!(1-rho))]^{-1}; terms built iteratively
    // to avoid factorial overflow for the server counts used here.
    double term = 1.0;  // r^n / n!
    double sum = 0.0;
    for (int n = 0; n < c; ++n) {
        sum += term;
        term *= r / static_cast<double>(n + 1);
    }
    // After the loop, term = r^c / c!.
    const double pi0 = 1.0 / (sum + term / (1.0 - rho));
    return term * rho * pi0 / ((1.0 - rho) * (1.0 - rho));
}

TandemQueueModel::TandemQueueModel(double horizon, double sigma_obs)
    : horizon_(horizon), sigma_obs_(sigma_obs) {
    if (horizon_ <= 0.0) throw ConfigError("queue horizon must be positive");
    if (sigma_obs_ <= 0.0) throw ConfigError("queue observation noise must be positive");
}

MixedParamSpace TandemQueueModel::space() const {
    MixedParamSpace s;
    const int classes = kMaxServers - kMinServers + 1;
    s.discrete = DiscreteSchema({{"c1", classes, kMinServers}, {"c2", classes, kMinServers}});
    s.continuous_names = {"gamma", "mu1", "mu2"};
    s.continuous_priors = {"LogNormal(log 9, 0.3)", "LogNormal(log 8, 0.3)",
                           "LogNormal(log 5, 0.3)"};
    return s;
}

std::vector<ObsTransformKind> TandemQueueModel::obs_transforms() const {
    return {ObsTransformKind::kIdentity, ObsTransformKind::kIdentity, ObsTransformKind::kIdentity,
            ObsTransformKind::kLog1p, ObsTransformKind::kLog1p};
}

std::pair<double, double> TandemQueueModel::expected_lengths(const MixedSample& theta) const {
    const double gamma = theta.theta_c[0];
    return {queue_expected_length(gamma, theta.theta_c[1], theta.theta_d[0] + kMinServers),
            queue_expected_length(gamma, theta.theta_c[2], theta.theta_d[1] + kMinServers)};
}

bool TandemQueueModel::rejected(const MixedSample& theta, bool* unstable) const {
    const double gamma = theta.theta_c[0];
    for (int i = 0; i < 2; ++i) {
        const int c = theta.theta_d[static_cast<std::size_t>(i)] + kMinServers;
        const double rho = gamma / (static_cast<double>(c) * theta.theta_c[1 + i]);
        if (rho >= 1.0) {
            if (unstable) *unstable = true;
            return true;
        }
    }
    const auto [q1, q2] = expected_lengths(theta);
    if (unstable) *unstable = false;
    return q1 > kNearUnstableCap || q2 > kNearUnstableCap;
}

MixedSample TandemQueueModel::sample_prior(Rng& rng, DatasetMeta* meta) const {
    for (;;) {
        MixedSample s;
        s.theta_d = {static_cast<int>(rng.uniform_int(0, kMaxServers - kMinServers)),
                     static_cast<int>(rng.uniform_int(0, kMaxServers - kMinServers))};
        s.theta_c = Vector(3);
        s.theta_c[0] = std::exp(rng.normal(std::log(9.0), 0.3));
        s.theta_c[1] = std::exp(rng.normal(std::log(8.0), 0.3));
        s.theta_c[2] = std::exp(rng.normal(std::log(5.0), 0.3));
        bool unstable = false;
        if (!rejected(s, &unstable)) return s;
        if (meta) {
            if (unstable) {
                ++meta->n_rejected_unstable;
            } else {
                ++meta->n_rejected_near_unstable;
            }
        }
    }
}

Vector TandemQueueModel::simulate(const MixedSample& theta, Rng& rng) const {
    space().discrete.validate_indices(theta.theta_d);
    const auto [q1_mean, q2_mean] = expected_lengths(theta);  // StabilityError if unstable
    const double rate = theta.theta_c[0] * horizon_;
    Vector x(5);
    x[0] = static_cast<double>(rng.poisson(rate));
    x[1] = static_cast<double>(rng.poisson(rate));
    x[2] = static_cast<double>(rng.poisson(rate));
    x[3] = rng.truncated_normal(q1_mean, sigma_obs_, 0.0);
    x[4] = rng.truncated_normal(q2_mean, sigma_obs_, 0.0);
    return x;
}

double TandemQueueModel::log_likelihood(const MixedSample& theta, const Vector& x) const {
    space().discrete.validate_indices(theta.theta_d);
    if (x.size() != 5) throw InputError("queue observation must be 5-dimensional");
    const auto [q1_mean, q2_mean] = expected_lengths(theta);
    const double rate = theta.theta_c[0] * horizon_;
    double ll = 0.0;
    for (int i = 0; i < 3; ++i) ll += log_poisson_pmf(x[i], rate);
    ll += log_truncated_normal_pdf(x[3], q1_mean, sigma_obs_);
    ll += log_truncated_normal_pdf(x[4], q2_mean, sigma_obs_);
    return ll;
}

// ---------------------------------------------------------------------------
// Coal-mining changepoint

MixedParamSpace CoalChangepointModel::space() const {
    MixedParamSpace s;
    s.discrete = DiscreteSchema({{"s", kNumYears, kFirstYear}});
    s.continuous_names = {"lambda_early", "lambda_late"};
    s.continuous_priors = {"Exponential(1)", "Exponential(1)"};
    return s;
}

std::vector<ObsTransformKind> CoalChangepointModel::obs_transforms() const {
    return std::vector<ObsTransformKind>(kNumYears, ObsTransformKind::kSqrt);
}

MixedSample CoalChangepointModel::sample_prior(Rng& rng, DatasetMeta*) const {
    MixedSample s;
    s.theta_d = {static_cast<int>(rng.uniform_int(0, kNumYears - 1))};
    s.theta_c = Vector(2);
    s.theta_c[0] = rng.exponential(1.0);
    s.theta_c[1] = rng.exponential(1.0);
    return s;
}

Vector CoalChangepointModel::simulate(const MixedSample& theta, Rng& rng) const {
    space().discrete.validate_indices(theta.theta_d);
    if (theta.theta_c[0] <= 0.0 || theta.theta_c[1] <= 0.0) {
        throw InputError("disaster rates must be positive");
    }
    const int switch_idx = theta.theta_d[0];
    Vector x(kNumYears);
    for (int t = 0; t < kNumYears; ++t) {
        x[t] = static_cast<double>(rng.poisson(t < switch_idx ? theta.theta_c[0] : theta.theta_c[1]));
    }
    return x;
}

double CoalChangepointModel::log_likelihood(const MixedSample& theta, const Vector& x) const {
    space().discrete.validate_indices(theta.theta_d);
    if (x.size() != kNumYears) throw InputError("coal observation must cover all years");
    if (theta.theta_c[0] <= 0.0 || theta.theta_c[1] <= 0.0) {
        throw InputError("disaster rates must be positive");
    }
    const int switch_idx = theta.theta_d[0];
    double ll = 0.0;
    for (int t = 0; t < kNumYears; ++t) {
        ll += log_poisson_pmf(x[t], t < switch_idx ? theta.theta_c[0] : theta.theta_c[1]);
    }
    return ll;
}

Vector coal_disaster_counts() {
    // UK coal-mining disasters per year, 1851..1961 (Jarrett's corrected series).
    static const int kCounts[CoalChangepointModel::kNumYears] = {
        4, 5, 4, 1, 0, 4, 3, 4, 0, 6, 3, 3, 4, 0, 2, 6, 3, 3, 5, 4, 5, 3, 1, 4, 4, 1, 5, 5,
        3, 4, 2, 5, 2, 2, 3, 4, 2, 1, 3, 2, 1, 1, 1, 1, 2, 1, 3, 0, 0, 1, 0, 1, 1, 0, 0, 3,
        1, 0, 3, 2, 2, 0, 1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 2, 1, 0, 0, 0, 1, 1, 0, 2, 3, 3, 1,
        1, 2, 1, 1, 1, 1, 2, 4, 2, 0, 0, 0, 1, 4, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 1};
    Vector x(CoalChangepointModel::kNumYears);
    for (int t = 0; t < CoalChangepointModel::kNumYears; ++t) x[t] = kCounts[t];
    return x;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Simulator> make_simulator(const std::string& name) {
    if (name == "gaussian_toy") return std::make_unique<GaussianToyModel>();
    if (name == "tandem_queue") return std::make_unique<TandemQueueModel>();
    if (name == "coal_changepoint" || name == "coal") {
        return std::make_unique<CoalChangepointModel>();
    }
    throw InputError("unknown model '" + name +
                     "' (expected gaussian_toy, tandem_queue, or coal_changepoint)");
}

Dataset generate_dataset(const Simulator& sim, std::int64_t n, std::uint64_t seed) {
    if (n <= 0) throw InputError("dataset size must be positive");
    const MixedParamSpace space = sim.space();
    Dataset data;
    data.meta.simulator = sim.name();
    data.meta.seed = seed;
    data.meta.n_requested = n;
    data.theta_d.reserve(static_cast<std::size_t>(n));
    data.theta_c = Matrix(space.k(), n);
    data.x = Matrix(sim.obs_dim(), n);
    Rng rng(seed);
    for (std::int64_t s = 0; s < n; ++s) {
        const MixedSample theta = sim.sample_prior(rng, &data.meta);
        const Vector x = sim.simulate(theta, rng);
        data.theta_d.push_back(theta.theta_d);
        data.theta_c.col(s) = theta.theta_c;
        data.x.col(s) = x;
    }
    data.validate(space);
    return data;
}

}  // namespace mnpe
