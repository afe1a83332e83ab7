#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mnpe/estimator.hpp"

// Checkpoint container: magic, version, JSON header (architecture, schema,
// array directory), payload (little-endian f64 arrays; masks as packed bit
// arrays), FNV-1a 64 checksum over everything before it. The checksum is
// verified before any state is constructed, so a corrupted file never
// produces a partial load. Round trips are bit-exact.

namespace mnpe {

namespace {

constexpr char kMagic[8] = {'M', 'N', 'P', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_u64(out, bits);
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void require(std::size_t n) const {
        if (pos + n > bytes.size()) throw IoError("checkpoint truncated");
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
};

using Json = nlohmann::json;

// Array directory entry kinds: "f64" (doubles) and "mask" (bits). Matrices
// are traversed in Eigen's native column-major order.
struct ArrayRef {
    std::string name;
    std::string kind;
    const Matrix* matrix = nullptr;
    const Vector* vector = nullptr;
};

void collect_mlp(std::vector<ArrayRef>& arrays, const std::string& prefix, const Mlp& mlp) {
    for (std::size_t li = 0; li < mlp.layers().size(); ++li) {
        const Linear& layer = mlp.layers()[li];
        const std::string base = prefix + "." + std::to_string(li);
        arrays.push_back({base + ".weight", "f64", &layer.weight, nullptr});
        arrays.push_back({base + ".bias", "f64", nullptr, &layer.bias});
        if (layer.mask) arrays.push_back({base + ".mask", "mask", &*layer.mask, nullptr});
    }
}

std::vector<ArrayRef> collect_arrays(const MnpeEstimator& est) {
    std::vector<ArrayRef> arrays;
    arrays.push_back({"theta_c_norm.mean", "f64", nullptr, &est.theta_c_norm_.mean()});
    arrays.push_back({"theta_c_norm.std", "f64", nullptr, &est.theta_c_norm_.std()});
    arrays.push_back({"x_norm.mean", "f64", nullptr, &est.x_norm_.mean()});
    arrays.push_back({"x_norm.std", "f64", nullptr, &est.x_norm_.std()});
    if (est.embedding_) collect_mlp(arrays, "embedding", *est.embedding_);
    if (est.made_) collect_mlp(arrays, "made", est.made_->network());
    if (est.flow_) {
        for (std::size_t m = 0; m < est.flow_->conditioners().size(); ++m) {
            collect_mlp(arrays, "flow." + std::to_string(m), est.flow_->conditioners()[m]);
        }
    }
    return arrays;
}

// Mutable counterpart used when loading.
struct MutableArrayRef {
    Matrix* matrix = nullptr;
    Vector* vector = nullptr;
    bool is_mask = false;
};

void collect_mlp_mut(std::vector<MutableArrayRef>& arrays, Mlp& mlp) {
    for (Linear& layer : mlp.layers()) {
        arrays.push_back({&layer.weight, nullptr, false});
        arrays.push_back({nullptr, &layer.bias, false});
        if (layer.mask) arrays.push_back({&*layer.mask, nullptr, true});
    }
}

}  // namespace

void MnpeEstimator::save(const std::string& path) const {
    Json header;
    header["schema"] = "mnpe-estimator";
    Json dims = Json::array();
    for (const DiscreteDim& d : space_.discrete.dims()) {
        dims.push_back({{"name", d.name}, {"classes", d.classes}, {"offset", d.display_offset}});
    }
    header["space"] = {{"discrete", dims},
                       {"continuous_names", space_.continuous_names},
                       {"continuous_priors", space_.continuous_priors}};
    std::vector<std::string> transforms;
    for (ObsTransformKind t : obs_transforms_) transforms.push_back(obs_transform_name(t));
    header["obs_transforms"] = transforms;
    header["arch"] = {{"made_hidden", arch_.made_hidden},
                      {"flow_hidden", arch_.flow_hidden},
                      {"flow_transforms", arch_.flow_transforms},
                      {"flow_bins", arch_.flow_bins},
                      {"tail_bound_milli", static_cast<std::int64_t>(arch_.tail_bound * 1000.0)},
                      {"flow_conditioner_blocks", arch_.flow_conditioner_blocks},
                      {"embedding_hidden", arch_.embedding_hidden},
                      {"embedding_dim", arch_.embedding_dim}};
    header["has_embedding"] = embedding_.has_value();
    header["has_made"] = made_.has_value();
    header["has_flow"] = flow_.has_value();

    const std::vector<ArrayRef> arrays = collect_arrays(*this);
    Json directory = Json::array();
    for (const ArrayRef& a : arrays) {
        const Eigen::Index rows = a.matrix ? a.matrix->rows() : a.vector->size();
        const Eigen::Index cols = a.matrix ? a.matrix->cols() : 1;
        directory.push_back({{"name", a.name}, {"kind", a.kind}, {"rows", rows}, {"cols", cols}});
    }
    header["arrays"] = directory;

    std::string blob(kMagic, sizeof(kMagic));
    append_u32(blob, kVersion);
    const std::string header_bytes = header.dump();
    append_u64(blob, header_bytes.size());
    blob += header_bytes;
    for (const ArrayRef& a : arrays) {
        if (a.kind == "f64") {
            if (a.matrix) {
                for (Eigen::Index c = 0; c < a.matrix->cols(); ++c) {
                    for (Eigen::Index r = 0; r < a.matrix->rows(); ++r) append_f64(blob, (*a.matrix)(r, c));
                }
            } else {
                for (Eigen::Index i = 0; i < a.vector->size(); ++i) append_f64(blob, (*a.vector)[i]);
            }
        } else {
            // Bit array, column-major, LSB-first within each byte.
            std::uint8_t byte = 0;
            int filled = 0;
            for (Eigen::Index c = 0; c < a.matrix->cols(); ++c) {
                for (Eigen::Index r = 0; r < a.matrix->rows(); ++r) {
                    if ((*a.matrix)(r, c) != 0.0) byte |= static_cast<std::uint8_t>(1 << filled);
                    if (++filled == 8) {
                        blob.push_back(static_cast<char>(byte));
                        byte = 0;
                        filled = 0;
                    }
                }
            }
            if (filled > 0) blob.push_back(static_cast<char>(byte));
        }
    }
    append_u64(blob, fnv1a(blob));

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open checkpoint for writing: " + path);
    file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!file) throw IoError("checkpoint write failed: " + path);
}

MnpeEstimator MnpeEstimator::load(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (blob.size() < sizeof(kMagic) + 4 + 8 + 8) throw IoError("checkpoint truncated");

    // Verify the checksum before touching any content.
    const std::string body = blob.substr(0, blob.size() - 8);
    Reader tail{blob, blob.size() - 8};
    if (tail.u64() != fnv1a(body)) {
        throw IoError("checkpoint checksum mismatch (file corrupted): " + path);
    }

    Reader r{blob, 0};
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    r.pos = sizeof(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t header_len = r.u64();
    r.require(header_len);
    Json header;
    try {
        header = Json::parse(blob.substr(r.pos, header_len));
    } catch (const Json::exception& e) {
        throw IoError(std::string("checkpoint header unreadable: ") + e.what());
    }
    r.pos += header_len;

    MnpeEstimator est;
    try {
        if (header.at("schema") != "mnpe-estimator") throw IoError("unexpected checkpoint schema");
        std::vector<DiscreteDim> dims;
        for (const Json& d : header.at("space").at("discrete")) {
            dims.push_back({d.at("name").get<std::string>(), d.at("classes").get<int>(),
                            d.at("offset").get<std::int64_t>()});
        }
        est.space_.discrete = DiscreteSchema(std::move(dims));
        est.space_.continuous_names =
            header.at("space").at("continuous_names").get<std::vector<std::string>>();
        est.space_.continuous_priors =
            header.at("space").at("continuous_priors").get<std::vector<std::string>>();
        for (const std::string& name : header.at("obs_transforms").get<std::vector<std::string>>()) {
            est.obs_transforms_.push_back(obs_transform_from_name(name));
        }
        const Json& arch = header.at("arch");
        est.arch_.made_hidden = arch.at("made_hidden").get<std::vector<int>>();
        est.arch_.flow_hidden = arch.at("flow_hidden").get<std::vector<int>>();
        est.arch_.flow_transforms = arch.at("flow_transforms").get<int>();
        est.arch_.flow_bins = arch.at("flow_bins").get<int>();
        est.arch_.tail_bound = static_cast<double>(arch.at("tail_bound_milli").get<std::int64_t>()) / 1000.0;
        est.arch_.flow_conditioner_blocks = arch.at("flow_conditioner_blocks").get<int>();
        est.arch_.embedding_hidden = arch.at("embedding_hidden").get<std::vector<int>>();
        est.arch_.embedding_dim = arch.at("embedding_dim").get<int>();

        const int obs_dim = static_cast<int>(est.obs_transforms_.size());
        const bool has_embedding = header.at("has_embedding").get<bool>();
        const bool has_made = header.at("has_made").get<bool>();
        const bool has_flow = header.at("has_flow").get<bool>();
        const int ctx_dim = has_embedding ? est.arch_.embedding_dim : obs_dim;
        if (has_embedding) {
            est.embedding_ = Mlp::make(obs_dim, est.arch_.embedding_hidden, est.arch_.embedding_dim);
        }
        if (has_made) {
            est.made_ = CategoricalMade(est.space_.discrete, ctx_dim, est.arch_.made_hidden);
        }
        if (has_flow) {
            FlowConfig fc;
            fc.dim = static_cast<int>(est.space_.continuous_names.size());
            fc.num_transforms = est.arch_.flow_transforms;
            fc.num_bins = est.arch_.flow_bins;
            fc.tail_bound = est.arch_.tail_bound;
            fc.conditioner_hidden = est.arch_.flow_hidden;
            fc.conditioner_blocks = est.arch_.flow_conditioner_blocks;
            est.flow_ = SplineCouplingFlow(fc, est.space_.discrete.one_hot_width() + ctx_dim);
        }

        // Normalizers are loaded as raw arrays below; placeholders first.
        Vector tc_mean(est.space_.continuous_names.size()), tc_std(est.space_.continuous_names.size());
        Vector x_mean(obs_dim), x_std(obs_dim);
        tc_std.setOnes();
        x_std.setOnes();

        std::vector<MutableArrayRef> targets;
        targets.push_back({nullptr, &tc_mean, false});
        targets.push_back({nullptr, &tc_std, false});
        targets.push_back({nullptr, &x_mean, false});
        targets.push_back({nullptr, &x_std, false});
        if (est.embedding_) collect_mlp_mut(targets, *est.embedding_);
        if (est.made_) collect_mlp_mut(targets, est.made_->network());
        if (est.flow_) {
            for (Mlp& c : est.flow_->conditioners()) collect_mlp_mut(targets, c);
        }

        const Json& directory = header.at("arrays");
        if (directory.size() != targets.size()) {
            throw IoError("checkpoint array directory does not match architecture");
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const Json& entry = directory[i];
            MutableArrayRef& t = targets[i];
            const Eigen::Index rows = t.matrix ? t.matrix->rows() : t.vector->size();
            const Eigen::Index cols = t.matrix ? t.matrix->cols() : 1;
            if (entry.at("rows").get<Eigen::Index>() != rows ||
                entry.at("cols").get<Eigen::Index>() != cols) {
                throw IoError("checkpoint array shape mismatch for " +
                              entry.at("name").get<std::string>());
            }
            const bool expect_mask = entry.at("kind") == "mask";
            if (expect_mask != t.is_mask) {
                throw IoError("checkpoint array kind mismatch for " +
                              entry.at("name").get<std::string>());
            }
            if (t.is_mask) {
                const Eigen::Index total = rows * cols;
                r.require(static_cast<std::size_t>((total + 7) / 8));
                for (Eigen::Index idx = 0; idx < total; ++idx) {
                    const auto byte = static_cast<unsigned char>(blob[r.pos + static_cast<std::size_t>(idx / 8)]);
                    (*t.matrix)(idx % rows, idx / rows) = (byte >> (idx % 8)) & 1 ? 1.0 : 0.0;
                }
                r.pos += static_cast<std::size_t>((total + 7) / 8);
            } else if (t.matrix) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    for (Eigen::Index row = 0; row < rows; ++row) (*t.matrix)(row, c) = r.f64();
                }
            } else {
                for (Eigen::Index idx = 0; idx < rows; ++idx) (*t.vector)[idx] = r.f64();
            }
        }
        est.theta_c_norm_ = Normalizer(tc_mean, tc_std, 0.0);
        est.x_norm_ = Normalizer(x_mean, x_std, 0.0);
    } catch (const Json::exception& e) {
        throw IoError(std::string("checkpoint header field missing or malformed: ") + e.what());
    }
    return est;
}

}  // namespace mnpe
