#include "mnpe/flow.hpp"

#include <atomic>
#include <cmath>

#include "mnpe/dual.hpp"

namespace mnpe {

namespace {

std::atomic<std::uint64_t> g_spline_clamps{0};

constexpr int kMaxBins = 16;
constexpr double kMinBinSize = 1e-6;
constexpr double kMinBinFraction = 1e-3;
constexpr double kMinDerivative = 1e-3;

// softplus(raw + shift) == 1 - kMinDerivative at raw = 0, so zero-initialized
// conditioners produce knot derivatives of exactly 1 (identity spline).
double derivative_shift() {
    static const double shift = std::log(std::exp(1.0 - kMinDerivative) - 1.0);
    return shift;
}

template <typename T>
T t_const(double v, int num_partials);
template <>
double t_const<double>(double v, int) {
    return v;
}
template <>
Dual t_const<Dual>(double v, int num_partials) {
    return Dual::constant(v, num_partials);
}

// Rational-quadratic evaluation on prebuilt knots. cx/cy are the K+1 knot
// positions spanning [-B,B] in input/output space, dv the K+1 positive knot
// derivatives. Returns (mapped value, log|d out/d in|) for the requested
// direction; the caller handles the identity tails.
template <typename T>
std::pair<T, T> rq_eval_knots(const T& input, const T* cx, const T* cy, const T* dv, int num_bins,
                              bool inverse, int num_partials) {
    const T* knots = inverse ? cy : cx;
    int idx = 0;
    for (int i = num_bins - 1; i >= 0; --i) {
        if (value(input) >= value(knots[i])) {
            idx = i;
            break;
        }
    }
    const T w = cx[idx + 1] - cx[idx];
    const T h = cy[idx + 1] - cy[idx];
    const T s = h / w;
    const T d0 = dv[idx];
    const T d1 = dv[idx + 1];
    const T two_s_gap = d0 + d1 - 2.0 * s;
    if (!inverse) {
        const T xi = (input - cx[idx]) / w;
        const T q = xi * (1.0 - xi);
        const T den = s + two_s_gap * q;
        const T out = cy[idx] + h * (s * xi * xi + d0 * q) / den;
        const T deriv =
            s * s * (d1 * xi * xi + 2.0 * s * q + d0 * (1.0 - xi) * (1.0 - xi)) / (den * den);
        return {out, log(deriv)};
    }
    const T dy = input - cy[idx];
    const T a = h * (s - d0) + dy * two_s_gap;
    const T b = h * d0 - dy * two_s_gap;
    const T c = -1.0 * s * dy;
    T disc = b * b - 4.0 * a * c;
    if (value(disc) < 0.0) disc = t_const<T>(0.0, num_partials);  // roundoff at knots
    const T xi = (2.0 * c) / (-1.0 * b - sqrt(disc));
    const T out = cx[idx] + xi * w;
    const T q = xi * (1.0 - xi);
    const T den = s + two_s_gap * q;
    const T deriv =
        s * s * (d1 * xi * xi + 2.0 * s * q + d0 * (1.0 - xi) * (1.0 - xi)) / (den * den);
    return {out, -1.0 * log(deriv)};
}

// Constrain raw conditioner outputs (3K-1 reals) to valid knots: softmax with
// a minimum bin fraction for widths and heights, shifted softplus with a
// floor for the K-1 interior derivatives, boundary derivatives fixed at 1.
template <typename T>
void knots_from_raw(const T* raw, int num_bins, double tail_bound, T* cx, T* cy, T* dv,
                    int num_partials) {
    const double span = 2.0 * tail_bound;
    auto fill = [&](const T* logits, T* cum) {
        double mx = value(logits[0]);
        for (int i = 1; i < num_bins; ++i) mx = std::max(mx, value(logits[i]));
        T total = t_const<T>(0.0, num_partials);
        T e[kMaxBins];
        for (int i = 0; i < num_bins; ++i) {
            e[i] = exp(logits[i] - mx);
            total = total + e[i];
        }
        cum[0] = t_const<T>(-tail_bound, num_partials);
        for (int i = 0; i < num_bins; ++i) {
            const T frac = kMinBinFraction + (1.0 - num_bins * kMinBinFraction) * (e[i] / total);
            cum[i + 1] = cum[i] + span * frac;
        }
    };
    fill(raw, cx);
    fill(raw + num_bins, cy);
    dv[0] = t_const<T>(1.0, num_partials);
    dv[num_bins] = t_const<T>(1.0, num_partials);
    for (int j = 1; j < num_bins; ++j) {
        dv[j] = kMinDerivative + softplus(raw[2 * num_bins + j - 1] + derivative_shift());
    }
}

template <typename T>
std::pair<T, T> rq_spline_from_raw(const T& input, const T* raw, int num_bins, double tail_bound,
                                   bool inverse, int num_partials) {
    if (value(input) <= -tail_bound || value(input) >= tail_bound) {
        return {input, t_const<T>(0.0, num_partials)};
    }
    T cx[kMaxBins + 1], cy[kMaxBins + 1], dv[kMaxBins + 1];
    knots_from_raw(raw, num_bins, tail_bound, cx, cy, dv, num_partials);
    return rq_eval_knots(input, cx, cy, dv, num_bins, inverse, num_partials);
}

Matrix reverse_rows(const Matrix& m) {
    return m.colwise().reverse();
}

}  // namespace

std::uint64_t spline_clamp_count() { return g_spline_clamps.load(); }
void reset_spline_clamp_count() { g_spline_clamps.store(0); }

std::pair<double, double> rq_spline(double value, const std::vector<double>& widths,
                                    const std::vector<double>& heights,
                                    const std::vector<double>& derivatives,
                                    SplineDirection direction, double tail_bound) {
    const int num_bins = static_cast<int>(widths.size());
    if (num_bins < 1 || num_bins > kMaxBins) throw ConfigError("unsupported spline bin count");
    if (heights.size() != widths.size() || derivatives.size() != widths.size() + 1) {
        throw ConfigError("spline parameter sizes inconsistent");
    }
    for (double d : derivatives) {
        if (!(d > 0.0)) throw ConfigError("spline derivatives must be strictly positive");
    }
    if (value <= -tail_bound || value >= tail_bound) return {value, 0.0};

    // Normalize bin sizes to span [-B, B]; clamp (and count) degenerate bins.
    auto build = [&](const std::vector<double>& sizes, double* cum) {
        double total = 0.0;
        for (double w : sizes) {
            if (!(w > 0.0)) throw ConfigError("spline bin sizes must be strictly positive");
            total += w;
        }
        bool clamped = false;
        double norm[kMaxBins];
        double renorm = 0.0;
        for (int i = 0; i < num_bins; ++i) {
            norm[i] = sizes[static_cast<std::size_t>(i)] / total * 2.0 * tail_bound;
            if (norm[i] < kMinBinSize) {
                norm[i] = kMinBinSize;
                clamped = true;
            }
            renorm += norm[i];
        }
        if (clamped) ++g_spline_clamps;
        cum[0] = -tail_bound;
        for (int i = 0; i < num_bins; ++i) {
            cum[i + 1] = cum[i] + norm[i] / renorm * 2.0 * tail_bound;
        }
    };
    double cx[kMaxBins + 1], cy[kMaxBins + 1], dv[kMaxBins + 1];
    build(widths, cx);
    build(heights, cy);
    for (int i = 0; i <= num_bins; ++i) dv[i] = derivatives[static_cast<std::size_t>(i)];
    return rq_eval_knots(value, cx, cy, dv, num_bins,
                         direction == SplineDirection::kInverse, 0);
}

SplineCouplingFlow::SplineCouplingFlow(FlowConfig config, int condition_width)
    : config_(std::move(config)), condition_width_(condition_width) {
    if (config_.dim < 1) throw ConfigError("flow dimensionality must be >= 1");
    if (config_.num_transforms < 1) throw ConfigError("flow needs at least one transform");
    if (config_.num_bins < 1 || config_.num_bins > kMaxBins) {
        throw ConfigError("unsupported spline bin count");
    }
    if (config_.conditioner_hidden.empty()) throw ConfigError("conditioner needs hidden layers");
    params_per_coordinate_ = 3 * config_.num_bins - 1;
    if (params_per_coordinate_ + 1 > Dual::kMaxPartials) {
        throw ConfigError("bin count exceeds the derivative propagation capacity");
    }
    for (int m = 0; m < config_.num_transforms; ++m) {
        const auto [n_pass, n_trans] = split_sizes(m);
        const int in_dim = n_pass + condition_width_;
        const int out_dim = n_trans * params_per_coordinate_;
        if (config_.conditioner_blocks > 0) {
            for (int w : config_.conditioner_hidden) {
                if (w != config_.conditioner_hidden.front()) {
                    throw ConfigError("residual conditioner blocks require uniform hidden widths");
                }
            }
            conditioners_.push_back(Mlp::make_residual(
                in_dim, config_.conditioner_hidden.front(),
                static_cast<int>(config_.conditioner_hidden.size()), config_.conditioner_blocks,
                out_dim));
        } else {
            conditioners_.push_back(Mlp::make(in_dim, config_.conditioner_hidden, out_dim));
        }
    }
}

std::pair<int, int> SplineCouplingFlow::split_sizes(int transform_index) const {
    const int k = config_.dim;
    if (k == 1) return {0, 1};
    // Alternating ceil/floor split so odd k covers every coordinate at least
    // every second transform (the reversal between transforms swaps halves).
    const int n_pass = (transform_index % 2 == 0) ? (k + 1) / 2 : k / 2;
    return {n_pass, k - n_pass};
}

void SplineCouplingFlow::init(Rng& rng) {
    for (Mlp& c : conditioners_) {
        c.init_glorot(rng);
        c.zero_last_layer();
    }
}

double SplineCouplingFlow::log_prob(const Vector& theta_c, const Vector& condition) const {
    Matrix t(theta_c.size(), 1);
    t.col(0) = theta_c;
    Matrix c(condition.size(), 1);
    c.col(0) = condition;
    return log_prob_batch(t, c)[0];
}

Vector SplineCouplingFlow::log_prob_batch(const Matrix& theta_c, const Matrix& condition) const {
    const int k = config_.dim;
    const int n = static_cast<int>(theta_c.cols());
    if (theta_c.rows() != k) throw InputError("flow input dimensionality mismatch");
    if (condition.rows() != condition_width_ || condition.cols() != n) {
        throw InputError("flow condition shape mismatch");
    }
    check_finite(theta_c, "flow input");
    const int P = params_per_coordinate_;
    Matrix v = theta_c;
    Vector logdet = Vector::Zero(n);
    for (int m = config_.num_transforms - 1; m >= 0; --m) {
        const auto [n_pass, n_trans] = split_sizes(m);
        Matrix cond_in(n_pass + condition_width_, n);
        if (n_pass > 0) cond_in.topRows(n_pass) = v.topRows(n_pass);
        cond_in.bottomRows(condition_width_) = condition;
        const Matrix raw = conditioners_[static_cast<std::size_t>(m)].forward_batch(cond_in);
        for (int s = 0; s < n; ++s) {
            for (int j = 0; j < n_trans; ++j) {
                const auto [x, ld] = rq_spline_from_raw<double>(
                    v(n_pass + j, s), &raw(j * P, s), config_.num_bins, config_.tail_bound, true, 0);
                v(n_pass + j, s) = x;
                logdet[s] += ld;
            }
        }
        if (m > 0) v = reverse_rows(v);
    }
    const double norm_const = 0.5 * k * std::log(2.0 * M_PI);
    Vector result(n);
    for (int s = 0; s < n; ++s) {
        result[s] = -0.5 * v.col(s).squaredNorm() - norm_const + logdet[s];
    }
    return result;
}

Matrix SplineCouplingFlow::sample(const Vector& condition, int n, Rng& rng) const {
    if (condition.size() != condition_width_) throw InputError("flow condition width mismatch");
    if (n < 1) throw InputError("sample count must be positive");
    const int k = config_.dim;
    const int P = params_per_coordinate_;
    Matrix v(k, n);
    for (int s = 0; s < n; ++s) {
        for (int j = 0; j < k; ++j) v(j, s) = rng.normal();
    }
    for (int m = 0; m < config_.num_transforms; ++m) {
        if (m > 0) v = reverse_rows(v);
        const auto [n_pass, n_trans] = split_sizes(m);
        Matrix cond_in(n_pass + condition_width_, n);
        if (n_pass > 0) cond_in.topRows(n_pass) = v.topRows(n_pass);
        cond_in.bottomRows(condition_width_) = condition.replicate(1, n);
        const Matrix raw = conditioners_[static_cast<std::size_t>(m)].forward_batch(cond_in);
        for (int s = 0; s < n; ++s) {
            for (int j = 0; j < n_trans; ++j) {
                const auto [x, ld] = rq_spline_from_raw<double>(
                    v(n_pass + j, s), &raw(j * P, s), config_.num_bins, config_.tail_bound, false, 0);
                v(n_pass + j, s) = x;
            }
        }
    }
    return v;
}

double SplineCouplingFlow::nll_batch(const Matrix& theta_c, const Matrix& condition,
                                     std::vector<std::vector<LinearGrad>>* grads,
                                     Matrix* d_condition) const {
    const int n = static_cast<int>(theta_c.cols());
    if (!grads) {
        return -log_prob_batch(theta_c, condition).mean();
    }
    const int k = config_.dim;
    const int P = params_per_coordinate_;
    const int M = config_.num_transforms;
    if (theta_c.rows() != k) throw InputError("flow input dimensionality mismatch");
    if (condition.rows() != condition_width_ || condition.cols() != n) {
        throw InputError("flow condition shape mismatch");
    }
    check_finite(theta_c, "flow input");

    struct StageCache {
        int n_pass = 0;
        int n_trans = 0;
        MlpCache mlp;
        Matrix dxdy, dlddy;                  // n_trans x n
        std::vector<Matrix> dxdraw, dlddraw; // per coord: P x n
    };
    std::vector<StageCache> caches(static_cast<std::size_t>(M));

    // Inverse pass data -> base with dual-number derivatives of each spline
    // w.r.t. its input and raw parameters.
    Matrix v = theta_c;
    Vector logdet = Vector::Zero(n);
    const int num_partials = P + 1;
    for (int m = M - 1; m >= 0; --m) {
        StageCache& sc = caches[static_cast<std::size_t>(m)];
        const auto [n_pass, n_trans] = split_sizes(m);
        sc.n_pass = n_pass;
        sc.n_trans = n_trans;
        Matrix cond_in(n_pass + condition_width_, n);
        if (n_pass > 0) cond_in.topRows(n_pass) = v.topRows(n_pass);
        cond_in.bottomRows(condition_width_) = condition;
        const Matrix raw =
            conditioners_[static_cast<std::size_t>(m)].forward_batch(cond_in, &sc.mlp);
        sc.dxdy = Matrix::Zero(n_trans, n);
        sc.dlddy = Matrix::Zero(n_trans, n);
        sc.dxdraw.assign(static_cast<std::size_t>(n_trans), Matrix::Zero(P, n));
        sc.dlddraw.assign(static_cast<std::size_t>(n_trans), Matrix::Zero(P, n));
        for (int s = 0; s < n; ++s) {
            for (int j = 0; j < n_trans; ++j) {
                Dual input = Dual::variable(v(n_pass + j, s), num_partials, 0);
                Dual raw_dual[3 * kMaxBins];
                for (int r = 0; r < P; ++r) {
                    raw_dual[r] = Dual::variable(raw(j * P + r, s), num_partials, r + 1);
                }
                const auto [x, ld] = rq_spline_from_raw<Dual>(input, raw_dual, config_.num_bins,
                                                              config_.tail_bound, true, num_partials);
                v(n_pass + j, s) = x.v;
                logdet[s] += ld.v;
                sc.dxdy(j, s) = x.d[0];
                sc.dlddy(j, s) = ld.d[0];
                for (int r = 0; r < P; ++r) {
                    sc.dxdraw[static_cast<std::size_t>(j)](r, s) = x.d[static_cast<std::size_t>(r + 1)];
                    sc.dlddraw[static_cast<std::size_t>(j)](r, s) = ld.d[static_cast<std::size_t>(r + 1)];
                }
            }
        }
        if (m > 0) v = reverse_rows(v);
    }
    const double norm_const = 0.5 * k * std::log(2.0 * M_PI);
    const double loss =
        (0.5 * v.squaredNorm() + n * norm_const - logdet.sum()) / static_cast<double>(n);

    // Backward base -> data. Layer order in the inverse pass was
    // [c_{M-1}^{-1}, R, ..., c_1^{-1}, R, c_0^{-1}]; backpropagation walks it
    // in reverse.
    grads->resize(static_cast<std::size_t>(M));
    Matrix d_cond_total = Matrix::Zero(condition_width_, n);
    Matrix g = v / static_cast<double>(n);  // dL/dz from the base density term
    const double ld_scale = -1.0 / static_cast<double>(n);
    for (int m = 0; m < M; ++m) {
        if (m > 0) g = reverse_rows(g);
        StageCache& sc = caches[static_cast<std::size_t>(m)];
        Matrix d_raw = Matrix::Zero(sc.n_trans * P, n);
        Matrix g_b(sc.n_trans, n);
        for (int s = 0; s < n; ++s) {
            for (int j = 0; j < sc.n_trans; ++j) {
                const double gx = g(sc.n_pass + j, s);
                g_b(j, s) = gx * sc.dxdy(j, s) + ld_scale * sc.dlddy(j, s);
                for (int r = 0; r < P; ++r) {
                    d_raw(j * P + r, s) = gx * sc.dxdraw[static_cast<std::size_t>(j)](r, s) +
                                          ld_scale * sc.dlddraw[static_cast<std::size_t>(j)](r, s);
                }
            }
        }
        std::vector<LinearGrad> stage_grads;
        const Matrix d_in = conditioners_[static_cast<std::size_t>(m)].backward(
            sc.mlp, d_raw, &stage_grads);
        (*grads)[static_cast<std::size_t>(m)] = std::move(stage_grads);
        Matrix g_next(k, n);
        if (sc.n_pass > 0) {
            g_next.topRows(sc.n_pass) = g.topRows(sc.n_pass) + d_in.topRows(sc.n_pass);
        }
        g_next.bottomRows(sc.n_trans) = g_b;
        d_cond_total += d_in.bottomRows(condition_width_);
        g = std::move(g_next);
    }
    if (d_condition) *d_condition = std::move(d_cond_total);
    return loss;
}

}  // namespace mnpe
