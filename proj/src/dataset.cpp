#include "mnpe/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mnpe {

namespace {

using Json = nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& text, std::int64_t line_no) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0') {
        throw InputError("line " + std::to_string(line_no) + ": not a number: '" + text + "'");
    }
    return v;
}

std::vector<std::string> header_columns(const MixedParamSpace& space, bool with_obs, int obs_dim) {
    std::vector<std::string> cols;
    for (int i = 0; i < space.l(); ++i) cols.push_back("theta_d_" + std::to_string(i));
    for (int j = 0; j < space.k(); ++j) cols.push_back("theta_c_" + std::to_string(j));
    if (with_obs) {
        for (int d = 0; d < obs_dim; ++d) cols.push_back("x_" + std::to_string(d));
    }
    return cols;
}

void check_header(const std::vector<std::string>& found, const std::vector<std::string>& expected,
                  const std::string& path) {
    if (found != expected) {
        std::string want;
        for (const std::string& c : expected) want += (want.empty() ? "" : ",") + c;
        throw InputError("unexpected CSV header in " + path + " (expected: " + want + ")");
    }
}

Json space_to_json(const MixedParamSpace& space) {
    Json dims = Json::array();
    for (const DiscreteDim& d : space.discrete.dims()) {
        dims.push_back({{"name", d.name}, {"classes", d.classes}, {"offset", d.display_offset}});
    }
    return {{"discrete", dims},
            {"continuous_names", space.continuous_names},
            {"continuous_priors", space.continuous_priors}};
}

MixedParamSpace space_from_json(const Json& j) {
    MixedParamSpace space;
    std::vector<DiscreteDim> dims;
    for (const Json& d : j.at("discrete")) {
        dims.push_back({d.at("name").get<std::string>(), d.at("classes").get<int>(),
                        d.at("offset").get<std::int64_t>()});
    }
    space.discrete = DiscreteSchema(std::move(dims));
    space.continuous_names = j.at("continuous_names").get<std::vector<std::string>>();
    space.continuous_priors = j.at("continuous_priors").get<std::vector<std::string>>();
    return space;
}

// Discrete display value -> internal 0-based index, with range check.
int discrete_index_from_display_at(const MixedParamSpace& space, int dim, double value,
                                   std::int64_t line_no) {
    try {
        return discrete_index_from_display(space, dim, value);
    } catch (const InputError& e) {
        throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
}

}  // namespace

int discrete_index_from_display(const MixedParamSpace& space, int dim, double value) {
    const DiscreteDim& d = space.discrete.dims()[static_cast<std::size_t>(dim)];
    const double raw = value - static_cast<double>(d.display_offset);
    const auto idx = static_cast<std::int64_t>(std::llround(raw));
    if (std::abs(raw - static_cast<double>(idx)) > 1e-9 || idx < 0 || idx >= d.classes) {
        throw InputError("value " + format_double(value) +
                         " is not a valid class of discrete dimension '" + d.name + "'");
    }
    return static_cast<int>(idx);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void save_dataset(const Dataset& data, const MixedParamSpace& space, const std::string& path) {
    data.validate(space);
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IoError("cannot open for writing: " + path);

    const auto cols = header_columns(space, true, static_cast<int>(data.x.rows()));
    for (std::size_t i = 0; i < cols.size(); ++i) file << (i ? "," : "") << cols[i];
    file << "\n";

    const auto& dims = space.discrete.dims();
    for (std::int64_t s = 0; s < data.size(); ++s) {
        bool first = true;
        for (int i = 0; i < space.l(); ++i) {
            const std::int64_t display = data.theta_d[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] +
                                         dims[static_cast<std::size_t>(i)].display_offset;
            file << (first ? "" : ",") << display;
            first = false;
        }
        for (int j = 0; j < space.k(); ++j) {
            file << (first ? "" : ",") << format_double(data.theta_c(j, s));
            first = false;
        }
        for (Eigen::Index d = 0; d < data.x.rows(); ++d) {
            file << (first ? "" : ",") << format_double(data.x(d, s));
            first = false;
        }
        file << "\n";
    }
    if (!file) throw IoError("write failed: " + path);

    Json meta = {{"simulator", data.meta.simulator},
                 {"seed", data.meta.seed},
                 {"n_requested", data.meta.n_requested},
                 {"n_rejected_unstable", data.meta.n_rejected_unstable},
                 {"n_rejected_near_unstable", data.meta.n_rejected_near_unstable},
                 {"space", space_to_json(space)},
                 {"obs_dim", data.x.rows()}};
    std::ofstream meta_file(path + ".meta.json", std::ios::trunc);
    if (!meta_file) throw IoError("cannot open for writing: " + path + ".meta.json");
    meta_file << meta.dump(2) << "\n";
    if (!meta_file) throw IoError("write failed: " + path + ".meta.json");
}

std::pair<Dataset, MixedParamSpace> load_dataset(const std::string& path) {
    std::ifstream meta_file(path + ".meta.json");
    if (!meta_file) throw InputError("missing dataset metadata sidecar: " + path + ".meta.json");
    Json meta;
    MixedParamSpace space;
    Dataset data;
    int obs_dim = 0;
    try {
        meta = Json::parse(meta_file);
        space = space_from_json(meta.at("space"));
        data.meta.simulator = meta.at("simulator").get<std::string>();
        data.meta.seed = meta.at("seed").get<std::uint64_t>();
        data.meta.n_requested = meta.at("n_requested").get<std::int64_t>();
        data.meta.n_rejected_unstable = meta.at("n_rejected_unstable").get<std::int64_t>();
        data.meta.n_rejected_near_unstable = meta.at("n_rejected_near_unstable").get<std::int64_t>();
        obs_dim = meta.at("obs_dim").get<int>();
    } catch (const Json::exception& e) {
        throw InputError("malformed dataset metadata " + path + ".meta.json: " + e.what());
    }

    std::ifstream file(path);
    if (!file) throw InputError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(file, line)) throw InputError("empty dataset file: " + path);
    check_header(split_csv_line(line), header_columns(space, true, obs_dim), path);

    std::vector<std::vector<int>> theta_d;
    std::vector<double> theta_c_flat;
    std::vector<double> x_flat;
    std::int64_t line_no = 1;
    const std::size_t expected = static_cast<std::size_t>(space.l() + space.k() + obs_dim);
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected) {
            throw InputError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected) + " fields, found " +
                             std::to_string(fields.size()));
        }
        std::size_t f = 0;
        std::vector<int> row(static_cast<std::size_t>(space.l()));
        for (int i = 0; i < space.l(); ++i, ++f) {
            row[static_cast<std::size_t>(i)] =
                discrete_index_from_display_at(space, i, parse_double(fields[f], line_no), line_no);
        }
        theta_d.push_back(std::move(row));
        for (int j = 0; j < space.k(); ++j, ++f) theta_c_flat.push_back(parse_double(fields[f], line_no));
        for (int d = 0; d < obs_dim; ++d, ++f) x_flat.push_back(parse_double(fields[f], line_no));
    }

    const auto n = static_cast<std::int64_t>(theta_d.size());
    data.theta_d = std::move(theta_d);
    data.theta_c = Matrix(space.k(), n);
    data.x = Matrix(obs_dim, n);
    for (std::int64_t s = 0; s < n; ++s) {
        for (int j = 0; j < space.k(); ++j) {
            data.theta_c(j, s) = theta_c_flat[static_cast<std::size_t>(s * space.k() + j)];
        }
        for (int d = 0; d < obs_dim; ++d) {
            data.x(d, s) = x_flat[static_cast<std::size_t>(s * obs_dim + d)];
        }
    }
    data.validate(space);
    return {std::move(data), std::move(space)};
}

void save_mixed_samples(const std::vector<MixedSample>& samples, const MixedParamSpace& space,
                        const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IoError("cannot open for writing: " + path);
    const auto cols = header_columns(space, false, 0);
    for (std::size_t i = 0; i < cols.size(); ++i) file << (i ? "," : "") << cols[i];
    file << "\n";
    const auto& dims = space.discrete.dims();
    for (const MixedSample& s : samples) {
        if (static_cast<int>(s.theta_d.size()) != space.l() ||
            static_cast<int>(s.theta_c.size()) != space.k()) {
            throw InputError("sample does not match parameter space");
        }
        bool first = true;
        for (int i = 0; i < space.l(); ++i) {
            file << (first ? "" : ",")
                 << (s.theta_d[static_cast<std::size_t>(i)] + dims[static_cast<std::size_t>(i)].display_offset);
            first = false;
        }
        for (int j = 0; j < space.k(); ++j) {
            file << (first ? "" : ",") << format_double(s.theta_c[j]);
            first = false;
        }
        file << "\n";
    }
    if (!file) throw IoError("write failed: " + path);
}

std::vector<MixedSample> load_mixed_samples(const std::string& path, const MixedParamSpace& space) {
    std::ifstream file(path);
    if (!file) throw InputError("cannot open samples: " + path);
    std::string line;
    if (!std::getline(file, line)) throw InputError("empty samples file: " + path);
    check_header(split_csv_line(line), header_columns(space, false, 0), path);

    std::vector<MixedSample> samples;
    std::int64_t line_no = 1;
    const std::size_t expected = static_cast<std::size_t>(space.l() + space.k());
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected) {
            throw InputError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected) + " fields, found " +
                             std::to_string(fields.size()));
        }
        MixedSample s;
        s.theta_d.resize(static_cast<std::size_t>(space.l()));
        s.theta_c = Vector(space.k());
        std::size_t f = 0;
        for (int i = 0; i < space.l(); ++i, ++f) {
            s.theta_d[static_cast<std::size_t>(i)] =
                discrete_index_from_display_at(space, i, parse_double(fields[f], line_no), line_no);
        }
        for (int j = 0; j < space.k(); ++j, ++f) s.theta_c[j] = parse_double(fields[f], line_no);
        samples.push_back(std::move(s));
    }
    return samples;
}

void save_training_log(const TrainResult& log, const std::string& path) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IoError("cannot open for writing: " + path);
    file << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < log.train_losses.size(); ++e) {
        file << e << "," << format_double(log.train_losses[e]) << ","
             << format_double(log.val_losses[e]) << "\n";
    }
    if (!file) throw IoError("write failed: " + path);
}

}  // namespace mnpe
