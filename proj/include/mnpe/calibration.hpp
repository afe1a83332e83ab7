#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mnpe/simulators.hpp"

namespace mnpe {

// ---------------------------------------------------------------------------
// Continuous calibration: simulation-based calibration ranks, rank eCDFs, and
// the error-over-diagonal (EoD) summary with a Monte Carlo uniform baseline.
// ---------------------------------------------------------------------------

// Monte Carlo null distribution of the EoD statistic under perfectly uniform
// ranks over {0..s}, for a rank sample of size n_test.
struct EodBaseline {
    double mean = 0.0;
    double lo = 0.0;          // 2.5th percentile of EoD
    double hi = 0.0;          // 97.5th percentile of EoD
    double max_dev_95 = 0.0;  // 95th percentile of the maximum eCDF deviation
    int n_test = 0;
    int s = 0;
    int n_mc = 0;
};

struct SbcDimension {
    std::string name;
    std::vector<int> ranks;     // length n_test, each in [0, s]
    std::vector<double> ecdf;   // grid r = 0..s+1; endpoints exactly 0 and 1
    double eod = 0.0;           // mean |ecdf(r) - r/(s+1)| over the grid
    double max_dev = 0.0;       // max  |ecdf(r) - r/(s+1)| over the grid
};

struct SbcReport {
    int n_test = 0;
    int s = 0;
    std::vector<SbcDimension> dims;
    EodBaseline baseline;
};

// eCDF of a rank array on the grid r = 0..s+1: ecdf[r] = #{rank < r} / n.
// The first entry is exactly 0 and the last exactly 1; under uniform ranks
// the expected curve is the diagonal r/(s+1).
std::vector<double> rank_ecdf(const std::vector<int>& ranks, int s);
double eod_from_ecdf(const std::vector<double>& ecdf);
double max_dev_from_ecdf(const std::vector<double>& ecdf);

// Mean and percentile band of EoD (plus the simultaneous 95% band of the
// maximum deviation) across n_mc synthetic uniform-rank draws.
EodBaseline eod_uniform_baseline(int n_test, int s, int n_mc, Rng& rng);

// Assemble a report from already-collected ranks (one array per continuous
// dimension). Used directly when the posterior column is produced by a
// bespoke loop, e.g. validity-gated importance-sampling references.
SbcReport sbc_report_from_ranks(const std::vector<std::string>& names,
                                const std::vector<std::vector<int>>& ranks, int s,
                                int n_mc_baseline, Rng& rng);

// Full pipeline: draw n_test (theta, x) pairs from the model, draw s
// posterior samples per pair, and rank each continuous truth within its
// marginal posterior sample (rank = #{sample < truth}).
SbcReport sbc_ranks(const PosteriorSampler& posterior, const Simulator& model, int n_test,
                    int s, Rng& rng, int n_mc_baseline = 2000);

// ---------------------------------------------------------------------------
// Discrete calibration: top-label reliability bins, ECE, and the
// finite-sample expected-ECE baselines under perfect calibration.
// ---------------------------------------------------------------------------

struct ReliabilityBin {
    std::int64_t count = 0;
    double conf = 0.0;    // mean top-label confidence of members
    double acc = 0.0;     // fraction of members whose top label was correct
    double center = 0.0;  // bin midpoint, the p_b of the baselines
};

struct ReliabilityDimension {
    std::string name;
    std::vector<ReliabilityBin> bins;  // B equal-width bins tiling [0, 1]
    double ece = 0.0;
    double baseline_halfnormal = 0.0;
    double baseline_exact = 0.0;
};

struct ReliabilityReport {
    int n_test = 0;
    int b = 0;
    std::vector<ReliabilityDimension> dims;
};

// Expected ECE under perfect calibration with the given bin occupancy, using
// the half-normal approximation  (1/N) sqrt(2/pi) sum_b sqrt(n_b p_b (1-p_b)).
double ece_baseline_halfnormal(const std::vector<std::int64_t>& bin_counts,
                               const std::vector<double>& bin_centers, std::int64_t n);

// Exact variant: per bin, E|acc - p_b| by full enumeration of
// Binomial(n_b, p_b). Bins with more than kExactBaselineCap members throw
// CapabilityError directing callers to the half-normal variant.
inline constexpr std::int64_t kExactBaselineCap = 100000;
double ece_baseline_exact(const std::vector<std::int64_t>& bin_counts,
                          const std::vector<double>& bin_centers, std::int64_t n);

// Bin per-pair (confidence, correctness) outcomes into B equal-width bins and
// attach ECE plus both baselines. Empty bins contribute zero throughout.
ReliabilityDimension reliability_from_outcomes(const std::string& name,
                                               const std::vector<double>& confidence,
                                               const std::vector<int>& correct, int b);

// Full pipeline over all discrete dimensions: draw n_test (theta, x) pairs,
// take each dimension's top-label prediction and confidence from the
// posterior's marginal class probabilities, and bin against the truth.
ReliabilityReport ece_report(const PosteriorSampler& posterior, const Simulator& model,
                             int n_test, int b, Rng& rng);

// Single-dimension convenience matching the report entry for `dim`.
ReliabilityDimension ece(const PosteriorSampler& posterior, const Simulator& model, int dim,
                         int n_test, int b, Rng& rng);

// ---------------------------------------------------------------------------
// Combined report.
// ---------------------------------------------------------------------------

struct CalibrationConfig {
    int n_test = 500;
    int s = 1000;
    int b = 10;
    int n_mc_baseline = 2000;
};

struct CalibrationReport {
    CalibrationConfig config;
    std::uint64_t seed = 0;
    SbcReport sbc;
    ReliabilityReport reliability;
};

// One pass over shared test pairs: rank statistics for every continuous
// dimension and reliability bins for every discrete dimension. The seed is
// recorded in the report so runs are reproducible from the serialized file.
CalibrationReport calibration_report(const PosteriorSampler& posterior, const Simulator& model,
                                     const CalibrationConfig& config, std::uint64_t seed);

// JSON-shaped serialization (rank arrays, eCDF grids, bin tables, scalars,
// baselines, and the exact configuration).
std::string calibration_report_to_json(const CalibrationReport& report);
void save_calibration_report(const CalibrationReport& report, const std::string& path);

}  // namespace mnpe
