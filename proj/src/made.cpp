#include "mnpe/made.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace mnpe {

DiscreteSchema::DiscreteSchema(std::vector<DiscreteDim> dims) : dims_(std::move(dims)) {
    offsets_.reserve(dims_.size());
    for (const DiscreteDim& d : dims_) {
        if (d.classes < 2) throw ConfigError("discrete dimension needs at least 2 classes");
        offsets_.push_back(one_hot_width_);
        one_hot_width_ += d.classes;
    }
}

std::int64_t DiscreteSchema::config_count(std::int64_t cap) const {
    std::int64_t n = 1;
    for (const DiscreteDim& d : dims_) {
        if (n > cap / d.classes) return cap;
        n *= d.classes;
    }
    return n;
}

void DiscreteSchema::validate_indices(const std::vector<int>& theta_d) const {
    if (static_cast<int>(theta_d.size()) != size()) {
        throw InputError("discrete index count does not match schema");
    }
    for (int i = 0; i < size(); ++i) {
        if (theta_d[static_cast<std::size_t>(i)] < 0 ||
            theta_d[static_cast<std::size_t>(i)] >= dim(i).classes) {
            throw InputError("discrete class index out of range for dimension " + dim(i).name);
        }
    }
}

std::vector<Matrix> build_made_masks(const DiscreteSchema& schema,
                                     const std::vector<int>& hidden_layout, int context_width) {
    const int l = schema.size();
    if (l == 0) throw ConfigError("MADE needs at least one discrete dimension");
    if (hidden_layout.empty()) throw ConfigError("MADE needs at least one hidden layer");
    for (int width : hidden_layout) {
        if (width < l) throw ConfigError("MADE hidden width smaller than number of dimensions");
    }

    // 1-based degree per input column: one-hot of dim i has degree i+1,
    // context columns degree 0.
    const int in_width = schema.one_hot_width() + context_width;
    std::vector<int> in_degree(static_cast<std::size_t>(in_width), 0);
    for (int i = 0; i < l; ++i) {
        for (int c = 0; c < schema.dim(i).classes; ++c) {
            in_degree[static_cast<std::size_t>(schema.block_offset(i) + c)] = i + 1;
        }
    }

    auto hidden_degree = [l](int unit) { return (unit % l) + 1; };

    std::vector<Matrix> masks;
    std::vector<int> prev_degree = in_degree;
    bool prev_is_input = true;
    for (int width : hidden_layout) {
        Matrix mask = Matrix::Zero(width, static_cast<Eigen::Index>(prev_degree.size()));
        for (int u = 0; u < width; ++u) {
            const int h = hidden_degree(u);
            for (std::size_t j = 0; j < prev_degree.size(); ++j) {
                const int p = prev_degree[j];
                const bool connect = prev_is_input ? (p < h) : (p <= h);
                if (connect) mask(u, static_cast<Eigen::Index>(j)) = 1.0;
            }
        }
        masks.push_back(std::move(mask));
        prev_degree.assign(static_cast<std::size_t>(width), 0);
        for (int u = 0; u < width; ++u) prev_degree[static_cast<std::size_t>(u)] = hidden_degree(u);
        prev_is_input = false;
    }

    Matrix out_mask = Matrix::Zero(schema.one_hot_width(), static_cast<Eigen::Index>(prev_degree.size()));
    for (int i = 0; i < l; ++i) {
        for (int c = 0; c < schema.dim(i).classes; ++c) {
            const int row = schema.block_offset(i) + c;
            for (std::size_t j = 0; j < prev_degree.size(); ++j) {
                if (prev_degree[j] <= i + 1) out_mask(row, static_cast<Eigen::Index>(j)) = 1.0;
            }
        }
    }
    masks.push_back(std::move(out_mask));
    return masks;
}

CategoricalMade::CategoricalMade(DiscreteSchema schema, int context_width,
                                 std::vector<int> hidden_layout)
    : schema_(std::move(schema)), context_width_(context_width), hidden_layout_(std::move(hidden_layout)) {
    std::vector<Matrix> masks = build_made_masks(schema_, hidden_layout_, context_width_);
    network_ = Mlp::make(schema_.one_hot_width() + context_width_, hidden_layout_,
                         schema_.one_hot_width());
    for (std::size_t li = 0; li < masks.size(); ++li) {
        network_.layers()[li].mask = std::move(masks[li]);
    }
}

namespace {

// log softmax of one logit block evaluated at `index`.
double block_log_softmax_at(const Vector& logits, int offset, int classes, int index) {
    double mx = -INFINITY;
    for (int c = 0; c < classes; ++c) mx = std::max(mx, logits[offset + c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(logits[offset + c] - mx);
    return logits[offset + index] - mx - std::log(denom);
}

Vector block_softmax(const Vector& logits, int offset, int classes) {
    Vector p(classes);
    double mx = -INFINITY;
    for (int c = 0; c < classes; ++c) mx = std::max(mx, logits[offset + c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
        p[c] = std::exp(logits[offset + c] - mx);
        denom += p[c];
    }
    p /= denom;
    return p;
}

}  // namespace

Vector CategoricalMade::logits(const std::vector<int>& theta_d, const Vector& context) const {
    schema_.validate_indices(theta_d);
    if (context.size() != context_width_) throw InputError("context width mismatch");
    Vector input = Vector::Zero(network_.in_dim());
    for (int i = 0; i < schema_.size(); ++i) {
        input[schema_.block_offset(i) + theta_d[static_cast<std::size_t>(i)]] = 1.0;
    }
    input.tail(context_width_) = context;
    return network_.forward(input);
}

double CategoricalMade::log_prob(const std::vector<int>& theta_d, const Vector& context) const {
    const Vector z = logits(theta_d, context);
    double lp = 0.0;
    for (int i = 0; i < schema_.size(); ++i) {
        lp += block_log_softmax_at(z, schema_.block_offset(i), schema_.dim(i).classes,
                                   theta_d[static_cast<std::size_t>(i)]);
    }
    return lp;
}

std::vector<std::vector<int>> CategoricalMade::sample(const Vector& context, int n, Rng& rng) const {
    if (context.size() != context_width_) throw InputError("context width mismatch");
    if (n < 1) throw InputError("sample count must be positive");
    std::vector<std::vector<int>> draws(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        Vector input = Vector::Zero(network_.in_dim());
        input.tail(context_width_) = context;
        std::vector<int> draw(static_cast<std::size_t>(schema_.size()));
        for (int i = 0; i < schema_.size(); ++i) {
            const Vector z = network_.forward(input);
            const Vector p = block_softmax(z, schema_.block_offset(i), schema_.dim(i).classes);
            // Inverse CDF over class order with a single uniform draw.
            const double u = rng.uniform();
            double cdf = 0.0;
            int chosen = schema_.dim(i).classes - 1;
            for (int c = 0; c < schema_.dim(i).classes; ++c) {
                cdf += p[c];
                if (u < cdf) {
                    chosen = c;
                    break;
                }
            }
            draw[static_cast<std::size_t>(i)] = chosen;
            input[schema_.block_offset(i) + chosen] = 1.0;
        }
        draws[static_cast<std::size_t>(s)] = std::move(draw);
    }
    return draws;
}

std::vector<double> CategoricalMade::class_probabilities(const Vector& context,
                                                         std::int64_t enumeration_cap) const {
    if (context.size() != context_width_) throw InputError("context width mismatch");
    const std::int64_t total = schema_.config_count(enumeration_cap + 1);
    if (total > enumeration_cap) {
        throw CapabilityError(
            "discrete space too large to enumerate; use Monte Carlo marginals instead");
    }
    std::vector<double> pmf(static_cast<std::size_t>(total), 0.0);
    // Depth-first over prefixes: logit block i depends only on dims < i, so
    // one forward pass per prefix serves all classes of dimension i.
    Vector input = Vector::Zero(network_.in_dim());
    input.tail(context_width_) = context;
    std::int64_t flat = 0;
    std::function<void(int, double)> visit = [&](int dim, double log_prefix) {
        const Vector z = network_.forward(input);
        const int offset = schema_.block_offset(dim);
        const int classes = schema_.dim(dim).classes;
        for (int c = 0; c < classes; ++c) {
            const double lp = log_prefix + block_log_softmax_at(z, offset, classes, c);
            if (dim + 1 == schema_.size()) {
                pmf[static_cast<std::size_t>(flat++)] = std::exp(lp);
            } else {
                input[offset + c] = 1.0;
                visit(dim + 1, lp);
                input[offset + c] = 0.0;
            }
        }
    };
    visit(0, 0.0);
    return pmf;
}

std::vector<Vector> CategoricalMade::marginals(const Vector& context,
                                               std::int64_t enumeration_cap) const {
    const std::vector<double> pmf = class_probabilities(context, enumeration_cap);
    std::vector<Vector> result;
    result.reserve(static_cast<std::size_t>(schema_.size()));
    for (int i = 0; i < schema_.size(); ++i) {
        result.push_back(Vector::Zero(schema_.dim(i).classes));
    }
    // Odometer order: dimension l-1 varies fastest.
    std::vector<int> config(static_cast<std::size_t>(schema_.size()), 0);
    for (double p : pmf) {
        for (int i = 0; i < schema_.size(); ++i) result[static_cast<std::size_t>(i)][config[static_cast<std::size_t>(i)]] += p;
        for (int i = schema_.size() - 1; i >= 0; --i) {
            if (++config[static_cast<std::size_t>(i)] < schema_.dim(i).classes) break;
            config[static_cast<std::size_t>(i)] = 0;
        }
    }
    return result;
}

std::vector<Vector> CategoricalMade::marginals_monte_carlo(const Vector& context, int n,
                                                           Rng& rng) const {
    std::vector<std::vector<int>> draws = sample(context, n, rng);
    std::vector<Vector> result;
    for (int i = 0; i < schema_.size(); ++i) result.push_back(Vector::Zero(schema_.dim(i).classes));
    for (const std::vector<int>& draw : draws) {
        for (int i = 0; i < schema_.size(); ++i) {
            result[static_cast<std::size_t>(i)][draw[static_cast<std::size_t>(i)]] += 1.0 / n;
        }
    }
    return result;
}

Matrix CategoricalMade::batch_input(const std::vector<std::vector<int>>& theta_d,
                                    const Matrix& context) const {
    const int n = static_cast<int>(theta_d.size());
    Matrix input = Matrix::Zero(network_.in_dim(), n);
    for (int s = 0; s < n; ++s) {
        schema_.validate_indices(theta_d[static_cast<std::size_t>(s)]);
        for (int i = 0; i < schema_.size(); ++i) {
            input(schema_.block_offset(i) + theta_d[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)], s) = 1.0;
        }
        input.col(s).tail(context_width_) = context.col(s);
    }
    return input;
}

double CategoricalMade::nll_batch(const std::vector<std::vector<int>>& theta_d,
                                  const Matrix& context, std::vector<LinearGrad>* grads,
                                  Matrix* d_context) const {
    const int n = static_cast<int>(theta_d.size());
    if (n == 0) throw InputError("empty batch");
    if (context.cols() != n || context.rows() != context_width_) {
        throw InputError("context batch shape mismatch");
    }
    const Matrix input = batch_input(theta_d, context);
    MlpCache cache;
    const Matrix z = network_.forward_batch(input, grads ? &cache : nullptr);

    double nll = 0.0;
    Matrix dz;
    if (grads) dz = Matrix::Zero(z.rows(), z.cols());
    for (int s = 0; s < n; ++s) {
        for (int i = 0; i < schema_.size(); ++i) {
            const int offset = schema_.block_offset(i);
            const int classes = schema_.dim(i).classes;
            const int target = theta_d[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
            double mx = -INFINITY;
            for (int c = 0; c < classes; ++c) mx = std::max(mx, z(offset + c, s));
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) denom += std::exp(z(offset + c, s) - mx);
            nll -= z(offset + target, s) - mx - std::log(denom);
            if (grads) {
                for (int c = 0; c < classes; ++c) {
                    const double p = std::exp(z(offset + c, s) - mx) / denom;
                    dz(offset + c, s) = (p - (c == target ? 1.0 : 0.0)) / n;
                }
            }
        }
    }
    nll /= n;
    if (grads) {
        const Matrix d_input = network_.backward(cache, dz, grads);
        if (d_context) *d_context = d_input.bottomRows(context_width_);
    }
    return nll;
}

}  // namespace mnpe
