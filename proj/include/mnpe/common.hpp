#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mnpe {

// Error taxonomy. The CLI maps these onto distinct exit codes:
// InputError/ConfigError -> 2, TrainingError -> 3, ReferenceInvalidError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-facing input: malformed files, out-of-range values, unknown names.
struct InputError : Error {
    using Error::Error;
};

// Inconsistent construction: shape mismatches, invalid hyperparameters.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite loss or other optimization failure; carries where it happened.
struct TrainingError : Error {
    int epoch = -1;
    int batch = -1;
    TrainingError(const std::string& msg, int epoch_, int batch_)
        : Error(msg + " (epoch " + std::to_string(epoch_) + ", batch " + std::to_string(batch_) + ")"),
          epoch(epoch_),
          batch(batch_) {}
};

// Operation exceeds a declared capability (e.g. enumeration over too large a discrete space).
struct CapabilityError : Error {
    using Error::Error;
};

// Queueing-theory stability violation (rho >= 1).
struct StabilityError : Error {
    using Error::Error;
};

// A reference posterior failed its own validity diagnostics (e.g. importance-sampling ESS).
struct ReferenceInvalidError : Error {
    using Error::Error;
};

// File/serialization failures, including checkpoint checksum mismatches.
struct IoError : Error {
    using Error::Error;
};

// Seeded RNG with self-contained samplers so that streams are reproducible
// across standard libraries and platforms (std::*_distribution is
// implementation-defined). All methods consume a deterministic number of
// engine draws given their arguments.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform on the open interval (0, 1); never returns 0 or 1 so log() is safe.
    double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n): bounded rejection sampling.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = gen_();
            if (x >= threshold) return x % n;
        }
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller without caching the second variate: stream position stays
    // a simple function of call count.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    // Marsaglia-Tsang for shape >= 1, with the u^(1/shape) boost below 1.
    double gamma(double shape, double rate) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    // Poisson: inversion by sequential search for small means, Hormann's PTRS
    // transformed rejection for large means (arrival counts here reach ~10^3).
    std::int64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 30.0) {
            const double target = uniform();
            double p = std::exp(-mean);
            double cdf = p;
            std::int64_t k = 0;
            while (cdf < target && k < 2000) {
                ++k;
                p *= mean / static_cast<double>(k);
                cdf += p;
            }
            return k;
        }
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            double v = uniform();
            const double us = 0.5 - std::fabs(u);
            const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
            if (k < 0.0 || (us < 0.013 && v > us)) continue;
            if (std::log(v * invalpha / (a / (us * us) + b)) <=
                k * loglam - mean - std::lgamma(k + 1.0)) {
                return static_cast<std::int64_t>(k);
            }
        }
    }

    // Normal truncated to [lower, inf): rejection from the untruncated normal.
    // Acceptance >= Phi((mean-lower)/sd), which is >= 0.5 whenever mean >= lower.
    double truncated_normal(double mean, double sd, double lower) {
        for (;;) {
            const double x = normal(mean, sd);
            if (x >= lower) return x;
        }
    }

    // Independent child stream; distinct keys give distinct streams.
    Rng spawn(std::uint64_t key) {
        return Rng(gen_() ^ (0x9e3779b97f4a7c15ULL * (key + 1)));
    }

    // Fisher-Yates; part of the determinism contract (std::shuffle is
    // implementation-defined).
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(static_cast<std::uint64_t>(i)));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    // The engine's output sequence is fully specified by the standard, so
    // streams are portable; only the std distributions are not, hence the
    // hand-written samplers above.
    std::mt19937_64 gen_;
};

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double log_sum_exp(const std::vector<double>& v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace mnpe
