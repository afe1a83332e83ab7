#include "mnpe/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace mnpe {

namespace {

using Json = nlohmann::json;

// Linear-interpolation percentile (the common "type 7" estimator) on an
// already-sorted vector; p in [0, 1].
double sorted_percentile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

void check_rank_args(int n_test, int s) {
    if (n_test < 1) throw InputError("rank statistics need n_test >= 1");
    if (s < 1) throw InputError("rank statistics need s >= 1 posterior samples");
}

struct DeviationSummary {
    double eod = 0.0;
    double max_dev = 0.0;
};

DeviationSummary ecdf_deviation(const std::vector<double>& ecdf) {
    if (ecdf.size() < 2) throw InputError("eCDF grid must have at least two points");
    const auto n_grid = ecdf.size();
    const double denom = static_cast<double>(n_grid - 1);
    DeviationSummary out;
    for (std::size_t r = 0; r < n_grid; ++r) {
        const double dev = std::abs(ecdf[r] - static_cast<double>(r) / denom);
        out.eod += dev;
        out.max_dev = std::max(out.max_dev, dev);
    }
    out.eod /= static_cast<double>(n_grid);
    return out;
}

DeviationSummary rank_deviation(const std::vector<int>& ranks, int s,
                                std::vector<std::int64_t>& scratch_counts) {
    // Histogram + prefix sum form of rank_ecdf, reusing one counts buffer so
    // the Monte Carlo baseline does not reallocate per replicate.
    scratch_counts.assign(static_cast<std::size_t>(s) + 1, 0);
    for (int r : ranks) {
        if (r < 0 || r > s) throw InputError("rank outside [0, s]");
        ++scratch_counts[static_cast<std::size_t>(r)];
    }
    const double n = static_cast<double>(ranks.size());
    const double denom = static_cast<double>(s + 1);
    DeviationSummary out;
    std::int64_t below = 0;
    // Grid point r = 0 contributes |0 - 0| = 0; accumulate r = 1..s+1.
    for (int r = 1; r <= s + 1; ++r) {
        below += scratch_counts[static_cast<std::size_t>(r - 1)];
        const double dev = std::abs(static_cast<double>(below) / n - static_cast<double>(r) / denom);
        out.eod += dev;
        out.max_dev = std::max(out.max_dev, dev);
    }
    out.eod /= static_cast<double>(s + 2);
    return out;
}

double log_choose(std::int64_t n, std::int64_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

// E|K/n - p| for K ~ Binomial(n, p), by full enumeration.
double binomial_mean_abs_dev(std::int64_t n, double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    const double log_p = std::log(p);
    const double log_q = std::log1p(-p);
    double total = 0.0;
    for (std::int64_t k = 0; k <= n; ++k) {
        const double log_pmf = log_choose(n, k) + static_cast<double>(k) * log_p +
                               static_cast<double>(n - k) * log_q;
        total += std::exp(log_pmf) *
                 std::abs(static_cast<double>(k) / static_cast<double>(n) - p);
    }
    return total;
}

void check_baseline_args(const std::vector<std::int64_t>& bin_counts,
                         const std::vector<double>& bin_centers, std::int64_t n) {
    if (bin_counts.size() != bin_centers.size())
        throw InputError("bin_counts and bin_centers must have equal length");
    std::int64_t total = 0;
    for (std::size_t i = 0; i < bin_counts.size(); ++i) {
        if (bin_counts[i] < 0) throw InputError("negative bin count");
        if (bin_centers[i] < 0.0 || bin_centers[i] > 1.0)
            throw InputError("bin centers must lie in [0, 1]");
        total += bin_counts[i];
    }
    if (total != n) throw InputError("bin counts must sum to n");
    if (n < 1) throw InputError("baselines need n >= 1");
}

struct TestPair {
    MixedSample theta;
    Vector x;
};

TestPair draw_test_pair(const Simulator& model, Rng& rng) {
    TestPair pair;
    pair.theta = model.sample_prior(rng);
    pair.x = model.simulate(pair.theta, rng);
    return pair;
}

Json baseline_to_json(const EodBaseline& baseline) {
    return Json{{"mean", baseline.mean},         {"lo", baseline.lo},
                {"hi", baseline.hi},             {"max_dev_95", baseline.max_dev_95},
                {"n_test", baseline.n_test},     {"s", baseline.s},
                {"n_mc", baseline.n_mc}};
}

}  // namespace

std::vector<double> rank_ecdf(const std::vector<int>& ranks, int s) {
    check_rank_args(static_cast<int>(ranks.size()), s);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(s) + 1, 0);
    for (int r : ranks) {
        if (r < 0 || r > s) throw InputError("rank outside [0, s]");
        ++counts[static_cast<std::size_t>(r)];
    }
    std::vector<double> ecdf(static_cast<std::size_t>(s) + 2, 0.0);
    const double n = static_cast<double>(ranks.size());
    std::int64_t below = 0;
    for (int r = 1; r <= s + 1; ++r) {
        below += counts[static_cast<std::size_t>(r - 1)];
        ecdf[static_cast<std::size_t>(r)] = static_cast<double>(below) / n;
    }
    ecdf.front() = 0.0;
    ecdf.back() = 1.0;  // every rank is < s + 1 by construction
    return ecdf;
}

double eod_from_ecdf(const std::vector<double>& ecdf) { return ecdf_deviation(ecdf).eod; }

double max_dev_from_ecdf(const std::vector<double>& ecdf) {
    return ecdf_deviation(ecdf).max_dev;
}

EodBaseline eod_uniform_baseline(int n_test, int s, int n_mc, Rng& rng) {
    check_rank_args(n_test, s);
    if (n_mc < 1000) throw InputError("eod_uniform_baseline needs n_mc >= 1000");
    std::vector<double> eods(static_cast<std::size_t>(n_mc));
    std::vector<double> max_devs(static_cast<std::size_t>(n_mc));
    std::vector<int> ranks(static_cast<std::size_t>(n_test));
    std::vector<std::int64_t> scratch;
    double mean = 0.0;
    for (int m = 0; m < n_mc; ++m) {
        for (auto& r : ranks)
            r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s) + 1));
        const DeviationSummary dev = rank_deviation(ranks, s, scratch);
        eods[static_cast<std::size_t>(m)] = dev.eod;
        max_devs[static_cast<std::size_t>(m)] = dev.max_dev;
        mean += dev.eod;
    }
    std::sort(eods.begin(), eods.end());
    std::sort(max_devs.begin(), max_devs.end());
    EodBaseline baseline;
    baseline.mean = mean / static_cast<double>(n_mc);
    baseline.lo = sorted_percentile(eods, 0.025);
    baseline.hi = sorted_percentile(eods, 0.975);
    baseline.max_dev_95 = sorted_percentile(max_devs, 0.95);
    baseline.n_test = n_test;
    baseline.s = s;
    baseline.n_mc = n_mc;
    return baseline;
}

SbcReport sbc_report_from_ranks(const std::vector<std::string>& names,
                                const std::vector<std::vector<int>>& ranks, int s,
                                int n_mc_baseline, Rng& rng) {
    if (names.size() != ranks.size())
        throw InputError("sbc_report_from_ranks: one name per rank array required");
    if (ranks.empty()) throw InputError("sbc_report_from_ranks: no rank arrays given");
    const auto n_test = ranks.front().size();
    SbcReport report;
    report.n_test = static_cast<int>(n_test);
    report.s = s;
    for (std::size_t j = 0; j < ranks.size(); ++j) {
        if (ranks[j].size() != n_test)
            throw InputError("sbc_report_from_ranks: rank arrays differ in length");
        SbcDimension dim;
        dim.name = names[j];
        dim.ranks = ranks[j];
        dim.ecdf = rank_ecdf(dim.ranks, s);
        const DeviationSummary dev = ecdf_deviation(dim.ecdf);
        dim.eod = dev.eod;
        dim.max_dev = dev.max_dev;
        report.dims.push_back(std::move(dim));
    }
    report.baseline = eod_uniform_baseline(report.n_test, s, n_mc_baseline, rng);
    return report;
}

SbcReport sbc_ranks(const PosteriorSampler& posterior, const Simulator& model, int n_test,
                    int s, Rng& rng, int n_mc_baseline) {
    check_rank_args(n_test, s);
    const MixedParamSpace space = model.space();
    if (space.k() == 0) throw InputError("sbc_ranks needs at least one continuous dimension");
    std::vector<std::vector<int>> ranks(static_cast<std::size_t>(space.k()),
                                        std::vector<int>(static_cast<std::size_t>(n_test), 0));
    for (int i = 0; i < n_test; ++i) {
        Rng pair_rng = rng.spawn(static_cast<std::uint64_t>(i));
        const TestPair pair = draw_test_pair(model, pair_rng);
        const std::vector<MixedSample> samples = posterior.posterior_sample(pair.x, s, pair_rng);
        for (int j = 0; j < space.k(); ++j) {
            int below = 0;
            for (const MixedSample& sample : samples)
                if (sample.theta_c[j] < pair.theta.theta_c[j]) ++below;
            ranks[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = below;
        }
    }
    return sbc_report_from_ranks(space.continuous_names, ranks, s, n_mc_baseline, rng);
}

double ece_baseline_halfnormal(const std::vector<std::int64_t>& bin_counts,
                               const std::vector<double>& bin_centers, std::int64_t n) {
    check_baseline_args(bin_counts, bin_centers, n);
    double total = 0.0;
    for (std::size_t i = 0; i < bin_counts.size(); ++i) {
        if (bin_counts[i] == 0) continue;
        const double p = bin_centers[i];
        total += std::sqrt(static_cast<double>(bin_counts[i]) * p * (1.0 - p));
    }
    return std::sqrt(2.0 / M_PI) * total / static_cast<double>(n);
}

double ece_baseline_exact(const std::vector<std::int64_t>& bin_counts,
                          const std::vector<double>& bin_centers, std::int64_t n) {
    check_baseline_args(bin_counts, bin_centers, n);
    double total = 0.0;
    for (std::size_t i = 0; i < bin_counts.size(); ++i) {
        if (bin_counts[i] == 0) continue;
        if (bin_counts[i] > kExactBaselineCap) {
            char msg[160];
            std::snprintf(msg, sizeof(msg),
                          "ece_baseline_exact: bin %zu holds %lld > %lld members; "
                          "use ece_baseline_halfnormal",
                          i, static_cast<long long>(bin_counts[i]),
                          static_cast<long long>(kExactBaselineCap));
            throw CapabilityError(msg);
        }
        total += static_cast<double>(bin_counts[i]) *
                 binomial_mean_abs_dev(bin_counts[i], bin_centers[i]);
    }
    return total / static_cast<double>(n);
}

ReliabilityDimension reliability_from_outcomes(const std::string& name,
                                               const std::vector<double>& confidence,
                                               const std::vector<int>& correct, int b) {
    if (b < 1) throw InputError("reliability binning needs b >= 1");
    if (confidence.size() != correct.size() || confidence.empty())
        throw InputError("reliability binning needs matching non-empty outcome arrays");
    ReliabilityDimension dim;
    dim.name = name;
    dim.bins.resize(static_cast<std::size_t>(b));
    std::vector<double> conf_sum(static_cast<std::size_t>(b), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(b), 0.0);
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        const double c = confidence[i];
        if (c < 0.0 || c > 1.0 + 1e-12) throw InputError("confidence outside [0, 1]");
        const int bin = std::min(b - 1, static_cast<int>(std::floor(c * static_cast<double>(b))));
        auto& entry = dim.bins[static_cast<std::size_t>(bin)];
        ++entry.count;
        conf_sum[static_cast<std::size_t>(bin)] += c;
        acc_sum[static_cast<std::size_t>(bin)] += correct[i] ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(confidence.size());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(b));
    std::vector<double> centers(static_cast<std::size_t>(b));
    double ece = 0.0;
    for (int i = 0; i < b; ++i) {
        auto& entry = dim.bins[static_cast<std::size_t>(i)];
        entry.center = (static_cast<double>(i) + 0.5) / static_cast<double>(b);
        counts[static_cast<std::size_t>(i)] = entry.count;
        centers[static_cast<std::size_t>(i)] = entry.center;
        if (entry.count > 0) {
            entry.conf = conf_sum[static_cast<std::size_t>(i)] / static_cast<double>(entry.count);
            entry.acc = acc_sum[static_cast<std::size_t>(i)] / static_cast<double>(entry.count);
            ece += static_cast<double>(entry.count) / n * std::abs(entry.acc - entry.conf);
        }
    }
    dim.ece = ece;
    dim.baseline_halfnormal =
        ece_baseline_halfnormal(counts, centers, static_cast<std::int64_t>(confidence.size()));
    dim.baseline_exact =
        ece_baseline_exact(counts, centers, static_cast<std::int64_t>(confidence.size()));
    return dim;
}

ReliabilityReport ece_report(const PosteriorSampler& posterior, const Simulator& model,
                             int n_test, int b, Rng& rng) {
    if (n_test < 1) throw InputError("ece_report needs n_test >= 1");
    if (b < 1) throw InputError("ece_report needs b >= 1");
    const MixedParamSpace space = model.space();
    if (space.l() == 0) throw InputError("ece_report needs at least one discrete dimension");
    std::vector<std::vector<double>> confidence(static_cast<std::size_t>(space.l()));
    std::vector<std::vector<int>> correct(static_cast<std::size_t>(space.l()));
    for (int i = 0; i < n_test; ++i) {
        Rng pair_rng = rng.spawn(static_cast<std::uint64_t>(i));
        const TestPair pair = draw_test_pair(model, pair_rng);
        const std::vector<Vector> marginals = posterior.discrete_marginal_probs(pair.x, pair_rng);
        for (int d = 0; d < space.l(); ++d) {
            const Vector& probs = marginals[static_cast<std::size_t>(d)];
            int top = 0;
            for (int j = 1; j < probs.size(); ++j)
                if (probs[j] > probs[top]) top = j;
            confidence[static_cast<std::size_t>(d)].push_back(probs[top]);
            correct[static_cast<std::size_t>(d)].push_back(
                top == pair.theta.theta_d[static_cast<std::size_t>(d)] ? 1 : 0);
        }
    }
    ReliabilityReport report;
    report.n_test = n_test;
    report.b = b;
    for (int d = 0; d < space.l(); ++d)
        report.dims.push_back(reliability_from_outcomes(space.discrete.dim(d).name,
                                                        confidence[static_cast<std::size_t>(d)],
                                                        correct[static_cast<std::size_t>(d)], b));
    return report;
}

ReliabilityDimension ece(const PosteriorSampler& posterior, const Simulator& model, int dim,
                         int n_test, int b, Rng& rng) {
    const MixedParamSpace space = model.space();
    if (dim < 0 || dim >= space.l()) throw InputError("ece: discrete dimension out of range");
    ReliabilityReport report = ece_report(posterior, model, n_test, b, rng);
    return std::move(report.dims[static_cast<std::size_t>(dim)]);
}

CalibrationReport calibration_report(const PosteriorSampler& posterior, const Simulator& model,
                                     const CalibrationConfig& config, std::uint64_t seed) {
    if (config.n_test < 1 || config.s < 1 || config.b < 1)
        throw InputError("calibration_report needs n_test, s, b >= 1");
    const MixedParamSpace space = model.space();
    Rng rng(seed);
    CalibrationReport report;
    report.config = config;
    report.seed = seed;

    std::vector<std::vector<int>> ranks(static_cast<std::size_t>(space.k()),
                                        std::vector<int>(static_cast<std::size_t>(config.n_test)));
    std::vector<std::vector<double>> confidence(static_cast<std::size_t>(space.l()));
    std::vector<std::vector<int>> correct(static_cast<std::size_t>(space.l()));
    for (int i = 0; i < config.n_test; ++i) {
        Rng pair_rng = rng.spawn(static_cast<std::uint64_t>(i));
        const TestPair pair = draw_test_pair(model, pair_rng);
        const std::vector<MixedSample> samples =
            posterior.posterior_sample(pair.x, config.s, pair_rng);
        for (int j = 0; j < space.k(); ++j) {
            int below = 0;
            for (const MixedSample& sample : samples)
                if (sample.theta_c[j] < pair.theta.theta_c[j]) ++below;
            ranks[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = below;
        }
        if (space.l() > 0) {
            const std::vector<Vector> marginals =
                posterior.discrete_marginal_probs(pair.x, pair_rng);
            for (int d = 0; d < space.l(); ++d) {
                const Vector& probs = marginals[static_cast<std::size_t>(d)];
                int top = 0;
                for (int j = 1; j < probs.size(); ++j)
                    if (probs[j] > probs[top]) top = j;
                confidence[static_cast<std::size_t>(d)].push_back(probs[top]);
                correct[static_cast<std::size_t>(d)].push_back(
                    top == pair.theta.theta_d[static_cast<std::size_t>(d)] ? 1 : 0);
            }
        }
    }
    if (space.k() > 0)
        report.sbc = sbc_report_from_ranks(space.continuous_names, ranks, config.s,
                                           config.n_mc_baseline, rng);
    report.reliability.n_test = config.n_test;
    report.reliability.b = config.b;
    for (int d = 0; d < space.l(); ++d)
        report.reliability.dims.push_back(
            reliability_from_outcomes(space.discrete.dim(d).name,
                                      confidence[static_cast<std::size_t>(d)],
                                      correct[static_cast<std::size_t>(d)], config.b));
    return report;
}

std::string calibration_report_to_json(const CalibrationReport& report) {
    Json root;
    root["schema"] = "mnpe-calibration-report";
    root["config"] = Json{{"n_test", report.config.n_test},
                          {"s", report.config.s},
                          {"b", report.config.b},
                          {"n_mc_baseline", report.config.n_mc_baseline},
                          {"seed", report.seed}};
    Json sbc;
    sbc["n_test"] = report.sbc.n_test;
    sbc["s"] = report.sbc.s;
    sbc["baseline"] = baseline_to_json(report.sbc.baseline);
    sbc["dims"] = Json::array();
    for (const SbcDimension& dim : report.sbc.dims) {
        sbc["dims"].push_back(Json{{"name", dim.name},
                                   {"ranks", dim.ranks},
                                   {"ecdf", dim.ecdf},
                                   {"eod", dim.eod},
                                   {"max_dev", dim.max_dev}});
    }
    root["sbc"] = std::move(sbc);
    Json rel;
    rel["n_test"] = report.reliability.n_test;
    rel["b"] = report.reliability.b;
    rel["dims"] = Json::array();
    for (const ReliabilityDimension& dim : report.reliability.dims) {
        Json bins = Json::array();
        for (const ReliabilityBin& bin : dim.bins)
            bins.push_back(Json{{"count", bin.count},
                                {"conf", bin.conf},
                                {"acc", bin.acc},
                                {"center", bin.center}});
        rel["dims"].push_back(Json{{"name", dim.name},
                                   {"bins", std::move(bins)},
                                   {"ece", dim.ece},
                                   {"baseline_halfnormal", dim.baseline_halfnormal},
                                   {"baseline_exact", dim.baseline_exact}});
    }
    root["reliability"] = std::move(rel);
    return root.dump(2);
}

void save_calibration_report(const CalibrationReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << calibration_report_to_json(report) << '\n';
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace mnpe
