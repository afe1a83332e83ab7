// Batch command-line surface: simulate, train, sample, logprob, calibrate,
// benchmark. Every command is deterministic given its flags; outputs are CSV
// (tabular) or JSON (reports/configs). Exit codes: 0 success, 2 input or
// configuration error, 3 training failure, 4 invalid reference posterior.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#include "mnpe/calibration.hpp"
#include "mnpe/dataset.hpp"
#include "mnpe/metrics.hpp"
#include "mnpe/references.hpp"
#include "mnpe/run_config.hpp"

namespace fs = std::filesystem;
using namespace mnpe;

namespace {

using Json = nlohmann::json;

// Relative output paths land under MNPE_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    if (path.empty()) throw InputError("empty output path");
    const char* root = std::getenv("MNPE_OUTPUT_ROOT");
    if (root == nullptr || *root == '\0' || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

std::string ensure_out_dir(const std::string& path) {
    const std::string resolved = resolve_out(path);
    std::error_code ec;
    fs::create_directories(resolved, ec);
    if (ec) throw IoError("cannot create output directory " + resolved + ": " + ec.message());
    return resolved;
}

// Numeric list from an inline comma/space-separated string or, with a
// leading '@', from a whitespace/comma-separated text file (a single x_0,...
// header line is skipped if present).
std::vector<double> parse_number_list(const std::string& spec, const char* what) {
    std::string text = spec;
    if (!spec.empty() && spec.front() == '@') {
        std::ifstream in(spec.substr(1), std::ios::binary);
        if (!in) throw IoError(std::string("cannot open ") + what + " file " + spec.substr(1));
        std::ostringstream buffer;
        buffer << in.rdbuf();
        text = buffer.str();
        if (const auto nl = text.find('\n'); nl != std::string::npos) {
            const std::string head = text.substr(0, nl);
            if (head.find_first_not_of("xthetacd_0123456789,_ \r") == std::string::npos &&
                head.find_first_of("0123456789") != std::string::npos &&
                head.find_first_of("x") != std::string::npos && head.find('_') != std::string::npos)
                text = text.substr(nl + 1);
        }
    }
    for (char& c : text)
        if (c == ',' || c == '\r' || c == '\n' || c == '\t') c = ' ';
    std::vector<double> values;
    std::istringstream stream(text);
    std::string token;
    while (stream >> token) {
        char* end = nullptr;
        const double v = std::strtod(token.c_str(), &end);
        if (end == nullptr || *end != '\0')
            throw InputError(std::string("cannot parse ") + what + " entry \"" + token + "\"");
        values.push_back(v);
    }
    if (values.empty()) throw InputError(std::string("empty ") + what + " list");
    return values;
}

Vector parse_observation(const std::string& spec, int obs_dim) {
    const std::vector<double> values = parse_number_list(spec, "observation");
    if (static_cast<int>(values.size()) != obs_dim)
        throw InputError("observation has " + std::to_string(values.size()) +
                         " entries, the model expects " + std::to_string(obs_dim));
    Vector x(obs_dim);
    for (int i = 0; i < obs_dim; ++i) x[i] = values[static_cast<std::size_t>(i)];
    return x;
}

// theta in dataset column order: discrete dims on display scale, then
// continuous dims.
MixedSample parse_theta(const std::string& spec, const MixedParamSpace& space) {
    const std::vector<double> values = parse_number_list(spec, "theta");
    if (static_cast<int>(values.size()) != space.l() + space.k())
        throw InputError("theta has " + std::to_string(values.size()) + " entries, the space has " +
                         std::to_string(space.l()) + " discrete + " + std::to_string(space.k()) +
                         " continuous dimensions");
    MixedSample theta;
    theta.theta_d.resize(static_cast<std::size_t>(space.l()));
    theta.theta_c = Vector(space.k());
    for (int i = 0; i < space.l(); ++i)
        theta.theta_d[static_cast<std::size_t>(i)] =
            discrete_index_from_display(space, i, values[static_cast<std::size_t>(i)]);
    for (int j = 0; j < space.k(); ++j)
        theta.theta_c[j] = values[static_cast<std::size_t>(space.l() + j)];
    return theta;
}

void check_estimator_matches_model(const MnpeEstimator& estimator, const Simulator& model) {
    const MixedParamSpace& a = estimator.space();
    const MixedParamSpace b = model.space();
    bool same = a.l() == b.l() && a.k() == b.k() && a.continuous_names == b.continuous_names;
    for (int i = 0; same && i < a.l(); ++i) {
        same = a.discrete.dim(i).name == b.discrete.dim(i).name &&
               a.discrete.dim(i).classes == b.discrete.dim(i).classes;
    }
    if (!same || estimator.obs_dim() != model.obs_dim())
        throw InputError("checkpoint was trained for a different parameter space than model '" +
                         model.name() + "'");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string model;
    std::int64_t n = 0;
    std::uint64_t seed = 0;
    std::string out;
};

void run_simulate(const SimulateArgs& args) {
    const auto model = make_simulator(args.model);
    const Dataset data = generate_dataset(*model, args.n, args.seed);
    const std::string out = resolve_out(args.out);
    save_dataset(data, model->space(), out);
    std::printf("wrote %lld samples to %s (%lld rejected draws)\n",
                static_cast<long long>(data.size()), out.c_str(),
                static_cast<long long>(data.meta.n_rejected()));
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
};

void run_train(const TrainArgs& args) {
    auto [data, space] = load_dataset(resolve_out(args.data));
    RunConfig config = args.config.empty() ? default_run_config(data.meta.simulator)
                                           : load_run_config(args.config);
    if (config.model != data.meta.simulator)
        throw InputError("config is for model '" + config.model + "' but the dataset came from '" +
                         data.meta.simulator + "'");
    const auto model = make_simulator(config.model);
    const std::string out_dir = ensure_out_dir(args.out);

    TrainResult log;
    const MnpeEstimator estimator =
        MnpeEstimator::fit(space, data, config.arch, config.train, model->obs_transforms(), &log);
    estimator.save((fs::path(out_dir) / "estimator.ckpt").string());
    save_training_log(log, (fs::path(out_dir) / "training_log.csv").string());
    save_run_config(config, (fs::path(out_dir) / "config.resolved.json").string());
    std::printf("trained on %lld samples: best val loss %.6f at epoch %d (%d epochs run)\n",
                static_cast<long long>(data.size()), log.best_val_loss, log.best_epoch,
                log.epochs_run);
}

// --- sample -----------------------------------------------------------------

struct SampleArgs {
    std::string ckpt;
    std::string obs;
    std::int64_t n = 1000;
    std::uint64_t seed = 0;
    std::string out;
};

void run_sample(const SampleArgs& args) {
    const MnpeEstimator estimator = MnpeEstimator::load(resolve_out(args.ckpt));
    const Vector x = parse_observation(args.obs, estimator.obs_dim());
    Rng rng(args.seed);
    const auto samples = estimator.posterior_sample(x, static_cast<int>(args.n), rng);
    const std::string out = resolve_out(args.out);
    save_mixed_samples(samples, estimator.space(), out);
    Json run{{"command", "sample"}, {"ckpt", args.ckpt},  {"obs", args.obs},
             {"n", args.n},         {"seed", args.seed},  {"out", args.out}};
    write_text(out + ".run.json", run.dump(2) + "\n");
    std::printf("wrote %lld posterior samples to %s\n", static_cast<long long>(args.n),
                out.c_str());
}

// --- logprob ----------------------------------------------------------------

struct LogprobArgs {
    std::string ckpt;
    std::string theta;
    std::string obs;
};

void run_logprob(const LogprobArgs& args) {
    const MnpeEstimator estimator = MnpeEstimator::load(resolve_out(args.ckpt));
    const Vector x = parse_observation(args.obs, estimator.obs_dim());
    const MixedSample theta = parse_theta(args.theta, estimator.space());
    std::printf("%s\n", format_double(estimator.joint_log_prob(theta, x)).c_str());
}

// --- calibrate --------------------------------------------------------------

struct CalibrateArgs {
    std::string ckpt;
    std::string model;
    int n_test = 500;
    int s = 1000;
    int bins = 10;
    std::uint64_t seed = 0;
    std::string out;
};

void write_ecdf_csv(const SbcReport& sbc, const std::string& path) {
    std::ostringstream out;
    out << "dim,grid,ecdf,diagonal\n";
    for (const SbcDimension& dim : sbc.dims) {
        const auto denom = static_cast<double>(dim.ecdf.size() - 1);
        for (std::size_t r = 0; r < dim.ecdf.size(); ++r)
            out << dim.name << "," << static_cast<double>(r) / denom << ","
                << format_double(dim.ecdf[r]) << "," << format_double(static_cast<double>(r) / denom)
                << "\n";
    }
    write_text(path, out.str());
}

void write_reliability_csv(const ReliabilityReport& reliability, const std::string& path) {
    std::ostringstream out;
    // rule_of_thumb_ok flags bins where the half-normal approximation is
    // reliable: min(n_b p_b, n_b (1-p_b)) >= 5.
    out << "dim,bin_center,count,conf,acc,rule_of_thumb_ok\n";
    for (const ReliabilityDimension& dim : reliability.dims) {
        for (const ReliabilityBin& bin : dim.bins) {
            const double nb = static_cast<double>(bin.count);
            const bool ok = std::min(nb * bin.center, nb * (1.0 - bin.center)) >= 5.0;
            out << dim.name << "," << format_double(bin.center) << "," << bin.count << ","
                << format_double(bin.conf) << "," << format_double(bin.acc) << "," << (ok ? 1 : 0)
                << "\n";
        }
    }
    write_text(path, out.str());
}

void run_calibrate(const CalibrateArgs& args) {
    const MnpeEstimator estimator = MnpeEstimator::load(resolve_out(args.ckpt));
    const auto model = make_simulator(args.model);
    check_estimator_matches_model(estimator, *model);
    CalibrationConfig config;
    config.n_test = args.n_test;
    config.s = args.s;
    config.b = args.bins;
    const CalibrationReport report = calibration_report(estimator, *model, config, args.seed);
    const std::string out_dir = ensure_out_dir(args.out);
    save_calibration_report(report, (fs::path(out_dir) / "calibration_report.json").string());
    write_ecdf_csv(report.sbc, (fs::path(out_dir) / "sbc_ecdf.csv").string());
    write_reliability_csv(report.reliability, (fs::path(out_dir) / "reliability.csv").string());
    RunConfig run = default_run_config(args.model);
    run.eval.n_test = args.n_test;
    run.eval.s = args.s;
    run.eval.b = args.bins;
    save_run_config(run, (fs::path(out_dir) / "config.resolved.json").string());
    double worst_eod = 0.0;
    for (const SbcDimension& dim : report.sbc.dims) worst_eod = std::max(worst_eod, dim.eod);
    std::printf("calibration report written to %s (worst EoD %.4f, band hi %.4f)\n",
                out_dir.c_str(), worst_eod, report.sbc.baseline.hi);
}

// --- benchmark --------------------------------------------------------------

struct BenchmarkArgs {
    std::string task;
    std::string config;
    std::vector<std::int64_t> budgets;
    std::vector<std::uint64_t> seeds;
    int n_obs = 0;  // 0: per-task default
    std::string out;
};

struct BenchmarkCell {
    std::int64_t budget = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    double c2st_joint = 0.0;
    double c2st_marginals = 0.0;
    double eod = 0.0;
    double ece = 0.0;
    double wall_seconds = 0.0;
};

// Reference posterior samples for one observation; empty optional when the
// queue importance-sampling reference never reached a valid ESS.
std::optional<std::vector<MixedSample>> reference_samples(const std::string& task,
                                                          const Simulator& model, const Vector& x,
                                                          int n, Rng& rng) {
    if (task == "gaussian_toy") {
        const auto& toy = dynamic_cast<const GaussianToyModel&>(model);
        return ToyAnalyticPosterior(toy).posterior_sample(x, n, rng);
    }
    if (task == "coal_changepoint") return CoalExactPosterior(x).posterior_sample(x, n, rng);
    const auto& queue = dynamic_cast<const TandemQueueModel&>(model);
    for (std::int64_t budget = 200000; budget <= 1600000; budget *= 2) {
        const QueueReference reference(queue, x, budget, rng.raw());
        if (reference.valid()) return reference.posterior_sample(x, n, rng);
    }
    return std::nullopt;
}

BenchmarkCell run_benchmark_cell(const RunConfig& base, const Simulator& model,
                                 std::int64_t budget, std::uint64_t seed, int n_obs) {
    BenchmarkCell cell;
    cell.budget = budget;
    cell.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();

    const Dataset data = generate_dataset(model, budget, seed ^ 0x5eedULL);
    RunConfig config = base;
    config.train.seed = seed;
    const MnpeEstimator estimator =
        MnpeEstimator::fit(model.space(), data, config.arch, config.train, model.obs_transforms());

    constexpr int kC2stSamples = 1000;
    Rng eval_rng(seed ^ 0xe7a1ULL);
    const MixedParamSpace space = model.space();
    double joint_sum = 0.0, marginal_sum = 0.0;
    int cells_done = 0;
    for (int o = 0; o < n_obs; ++o) {
        Rng obs_rng = eval_rng.spawn(static_cast<std::uint64_t>(o));
        const MixedSample theta_o = model.sample_prior(obs_rng);
        const Vector x_o = model.simulate(theta_o, obs_rng);
        auto reference = reference_samples(config.model, model, x_o, kC2stSamples, obs_rng);
        if (!reference) {
            cell.status = "reference_invalid";
            continue;
        }
        const auto estimated = estimator.posterior_sample(x_o, kC2stSamples, obs_rng);
        C2stConfig c2st_config;
        c2st_config.seed = obs_rng.raw();
        joint_sum += c2st_mixed(estimated, *reference, space, c2st_config).score;
        double per_dim = 0.0;
        for (int j = 0; j < space.k(); ++j) {
            Matrix a(1, kC2stSamples), b(1, kC2stSamples);
            for (int i = 0; i < kC2stSamples; ++i) {
                a(0, i) = estimated[static_cast<std::size_t>(i)].theta_c[j];
                b(0, i) = (*reference)[static_cast<std::size_t>(i)].theta_c[j];
            }
            per_dim += c2st(a, b, c2st_config).score;
        }
        marginal_sum += per_dim / static_cast<double>(space.k());
        ++cells_done;
    }
    if (cells_done == 0) {
        cell.status = "reference_invalid";
        cell.c2st_joint = cell.c2st_marginals = cell.eod = cell.ece =
            std::numeric_limits<double>::quiet_NaN();
    } else {
        cell.c2st_joint = joint_sum / cells_done;
        cell.c2st_marginals = marginal_sum / cells_done;
        CalibrationConfig cal;
        cal.n_test = base.eval.n_test;
        cal.s = base.eval.s;
        cal.b = base.eval.b;
        const CalibrationReport report =
            calibration_report(estimator, model, cal, seed ^ 0xca1bULL);
        double eod = 0.0;
        for (const SbcDimension& dim : report.sbc.dims) eod += dim.eod;
        cell.eod = eod / static_cast<double>(report.sbc.dims.size());
        double ece_sum = 0.0;
        for (const ReliabilityDimension& dim : report.reliability.dims) ece_sum += dim.ece;
        cell.ece = ece_sum / static_cast<double>(report.reliability.dims.size());
    }
    cell.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cell;
}

void run_benchmark(const BenchmarkArgs& args) {
    RunConfig config = args.config.empty() ? default_run_config(args.task)
                                           : load_run_config(args.config);
    if (config.model != args.task && !args.task.empty())
        throw InputError("config is for model '" + config.model + "' but --task is '" + args.task +
                         "'");
    const auto model = make_simulator(config.model);
    const std::vector<std::int64_t> budgets =
        args.budgets.empty() ? config.eval.budgets : args.budgets;
    const std::vector<std::uint64_t> seeds = args.seeds.empty() ? config.eval.seeds : args.seeds;
    const int n_obs = args.n_obs > 0 ? args.n_obs : (config.model == "tandem_queue" ? 3 : 10);
    const std::string out_dir = ensure_out_dir(args.out);

    std::ostringstream results, timings;
    results << "task,budget,seed,c2st_joint,c2st_marginals,eod,ece,status\n";
    timings << "task,budget,seed,wall_seconds\n";
    for (std::int64_t budget : budgets) {
        for (std::uint64_t seed : seeds) {
            const BenchmarkCell cell = run_benchmark_cell(config, *model, budget, seed, n_obs);
            results << config.model << "," << budget << "," << seed << ","
                    << format_double(cell.c2st_joint) << "," << format_double(cell.c2st_marginals)
                    << "," << format_double(cell.eod) << "," << format_double(cell.ece) << ","
                    << cell.status << "\n";
            timings << config.model << "," << budget << "," << seed << ","
                    << format_double(cell.wall_seconds) << "\n";
            std::printf("budget %lld seed %llu: c2st %.4f (%s), %.1fs\n",
                        static_cast<long long>(budget), static_cast<unsigned long long>(seed),
                        cell.c2st_joint, cell.status.c_str(), cell.wall_seconds);
        }
    }
    // Deterministic results and wall-clock timings are split so the results
    // table is byte-identical across reruns of the same configuration.
    write_text((fs::path(out_dir) / "results.csv").string(), results.str());
    write_text((fs::path(out_dir) / "timings.csv").string(), timings.str());
    config.eval.budgets = budgets;
    config.eval.seeds = seeds;
    save_run_config(config, (fs::path(out_dir) / "config.resolved.json").string());
    std::printf("benchmark results written to %s\n", out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Amortized posterior estimation for simulators with mixed discrete/continuous "
        "parameters: dataset generation, training, sampling, calibration, and benchmarks"};
    app.require_subcommand(1);

    SimulateArgs simulate_args;
    auto* simulate = app.add_subcommand("simulate", "Draw (theta, x) pairs from a model's prior "
                                                    "and simulator into a dataset CSV");
    simulate->add_option("--model", simulate_args.model,
                         "gaussian_toy | tandem_queue | coal_changepoint")->required();
    simulate->add_option("--n", simulate_args.n, "number of accepted samples")->required();
    simulate->add_option("--seed", simulate_args.seed, "RNG seed (default 0)");
    simulate->add_option("--out", simulate_args.out, "output CSV path")->required();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Fit the mixed posterior estimator on a dataset");
    train->add_option("--data", train_args.data, "dataset CSV from `simulate`")->required();
    train->add_option("--config", train_args.config,
                      "run-config JSON (default: the dataset's model defaults)");
    train->add_option("--out", train_args.out, "output directory")->required();

    SampleArgs sample_args;
    auto* sample = app.add_subcommand("sample", "Draw posterior samples at an observation");
    sample->add_option("--ckpt", sample_args.ckpt, "estimator checkpoint")->required();
    sample->add_option("--obs", sample_args.obs,
                       "observation: comma-separated values, or @file")->required();
    sample->add_option("--n", sample_args.n, "number of samples (default 1000)");
    sample->add_option("--seed", sample_args.seed, "RNG seed (default 0)");
    sample->add_option("--out", sample_args.out, "output CSV path")->required();

    LogprobArgs logprob_args;
    auto* logprob = app.add_subcommand("logprob",
                                       "Print the joint posterior log density of theta given obs");
    logprob->add_option("--ckpt", logprob_args.ckpt, "estimator checkpoint")->required();
    logprob->add_option("--theta", logprob_args.theta,
                        "parameter values, dataset column order (discrete on display scale)")
        ->required();
    logprob->add_option("--obs", logprob_args.obs,
                        "observation: comma-separated values, or @file")->required();

    CalibrateArgs calibrate_args;
    auto* calibrate = app.add_subcommand("calibrate",
                                         "Rank and reliability calibration of a trained estimator");
    calibrate->add_option("--ckpt", calibrate_args.ckpt, "estimator checkpoint")->required();
    calibrate->add_option("--model", calibrate_args.model, "model the estimator was trained on")
        ->required();
    calibrate->add_option("--n-test", calibrate_args.n_test, "test pairs (default 500)");
    calibrate->add_option("--s", calibrate_args.s, "posterior samples per pair (default 1000)");
    calibrate->add_option("--bins", calibrate_args.bins, "reliability bins (default 10)");
    calibrate->add_option("--seed", calibrate_args.seed, "RNG seed (default 0)");
    calibrate->add_option("--out", calibrate_args.out, "output directory")->required();

    BenchmarkArgs benchmark_args;
    auto* benchmark = app.add_subcommand("benchmark",
                                         "Budget sweep: simulate, train, and score against the "
                                         "task's reference posterior");
    benchmark->add_option("--task", benchmark_args.task,
                          "gaussian_toy | tandem_queue | coal_changepoint")->required();
    benchmark->add_option("--config", benchmark_args.config, "run-config JSON overriding defaults");
    benchmark->add_option("--budgets", benchmark_args.budgets, "training budgets")
        ->delimiter(',');
    benchmark->add_option("--seeds", benchmark_args.seeds, "training seeds")->delimiter(',');
    benchmark->add_option("--n-obs", benchmark_args.n_obs,
                          "test observations per cell (default 10; tandem_queue 3)");
    benchmark->add_option("--out", benchmark_args.out, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (simulate->parsed()) run_simulate(simulate_args);
        if (train->parsed()) run_train(train_args);
        if (sample->parsed()) run_sample(sample_args);
        if (logprob->parsed()) run_logprob(logprob_args);
        if (calibrate->parsed()) run_calibrate(calibrate_args);
        if (benchmark->parsed()) run_benchmark(benchmark_args);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ReferenceInvalidError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
