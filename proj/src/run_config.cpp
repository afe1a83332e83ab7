#include "mnpe/run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace mnpe {

namespace {

using Json = nlohmann::json;

void reject_unknown_keys(const Json& object, const char* block,
                         std::initializer_list<const char*> known) {
    for (const auto& [key, value] : object.items()) {
        bool found = false;
        for (const char* k : known)
            if (key == k) {
                found = true;
                break;
            }
        if (!found)
            throw ConfigError(std::string("unknown key \"") + key + "\" in " + block + " block");
    }
}

template <typename T>
void read_if_present(const Json& object, const char* key, T* target) {
    if (auto it = object.find(key); it != object.end()) *target = it->get<T>();
}

void overlay_architecture(const Json& object, ArchitectureConfig* arch) {
    reject_unknown_keys(object, "architecture",
                        {"made_hidden", "flow_hidden", "flow_transforms", "flow_bins",
                         "tail_bound", "flow_conditioner_blocks", "embedding_hidden",
                         "embedding_dim"});
    read_if_present(object, "made_hidden", &arch->made_hidden);
    read_if_present(object, "flow_hidden", &arch->flow_hidden);
    read_if_present(object, "flow_transforms", &arch->flow_transforms);
    read_if_present(object, "flow_bins", &arch->flow_bins);
    read_if_present(object, "tail_bound", &arch->tail_bound);
    read_if_present(object, "flow_conditioner_blocks", &arch->flow_conditioner_blocks);
    read_if_present(object, "embedding_hidden", &arch->embedding_hidden);
    read_if_present(object, "embedding_dim", &arch->embedding_dim);
}

void overlay_training(const Json& object, TrainConfig* train) {
    reject_unknown_keys(object, "training",
                        {"learning_rate", "batch_size", "validation_fraction",
                         "patience_epochs", "max_epochs", "seed"});
    read_if_present(object, "learning_rate", &train->learning_rate);
    read_if_present(object, "batch_size", &train->batch_size);
    read_if_present(object, "validation_fraction", &train->validation_fraction);
    read_if_present(object, "patience_epochs", &train->patience_epochs);
    read_if_present(object, "max_epochs", &train->max_epochs);
    read_if_present(object, "seed", &train->seed);
}

void overlay_evaluation(const Json& object, EvaluationConfig* eval) {
    reject_unknown_keys(object, "evaluation", {"n_test", "s", "b", "budgets", "seeds"});
    read_if_present(object, "n_test", &eval->n_test);
    read_if_present(object, "s", &eval->s);
    read_if_present(object, "b", &eval->b);
    read_if_present(object, "budgets", &eval->budgets);
    read_if_present(object, "seeds", &eval->seeds);
}

}  // namespace

RunConfig default_run_config(const std::string& model) {
    RunConfig config;
    config.model = model;
    config.eval.seeds = {0, 1, 2};
    if (model == "gaussian_toy") {
        config.arch.made_hidden = {32, 32, 32};
        config.arch.flow_hidden = {32, 32, 32};
        config.arch.flow_transforms = 5;
        config.arch.flow_bins = 8;
        config.arch.flow_conditioner_blocks = 4;
        config.eval.budgets = {100, 1000, 10000};
    } else if (model == "tandem_queue") {
        config.arch.made_hidden = {256, 256, 256, 256};
        config.arch.flow_hidden = {256, 256, 256, 256};
        config.arch.flow_transforms = 4;
        config.arch.flow_bins = 9;
        config.train.batch_size = 500;
        config.train.max_epochs = 300;
        config.eval.budgets = {50000};
    } else if (model == "coal_changepoint" || model == "coal") {
        config.model = "coal_changepoint";
        config.arch.made_hidden = {128, 128};
        config.arch.flow_hidden = {64};
        config.arch.flow_transforms = 2;
        config.arch.flow_bins = 10;
        config.arch.embedding_hidden = {64};
        config.arch.embedding_dim = 32;
        config.eval.budgets = {1000, 5000, 20000};
    } else {
        throw ConfigError("unknown model \"" + model + "\" (expected gaussian_toy, tandem_queue, or coal_changepoint)");
    }
    return config;
}

RunConfig run_config_from_json_text(const std::string& text) {
    Json root;
    try {
        root = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown_keys(root, "top-level",
                        {"model", "architecture", "training", "evaluation", "paths"});
    if (!root.contains("model") || !root["model"].is_string())
        throw ConfigError("run config needs a \"model\" string");
    RunConfig config = default_run_config(root["model"].get<std::string>());
    try {
        if (root.contains("architecture")) overlay_architecture(root["architecture"], &config.arch);
        if (root.contains("training")) overlay_training(root["training"], &config.train);
        if (root.contains("evaluation")) overlay_evaluation(root["evaluation"], &config.eval);
        if (root.contains("paths")) {
            reject_unknown_keys(root["paths"], "paths", {"out_dir"});
            read_if_present(root["paths"], "out_dir", &config.out_dir);
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("run config field has the wrong type: ") + e.what());
    }
    if (config.train.batch_size < 1 || config.train.max_epochs < 1)
        throw ConfigError("training block needs positive batch_size and max_epochs");
    if (config.eval.n_test < 1 || config.eval.s < 1 || config.eval.b < 1)
        throw ConfigError("evaluation block needs positive n_test, s, and b");
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open run config " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return run_config_from_json_text(buffer.str());
}

std::string run_config_to_json(const RunConfig& config) {
    Json root;
    root["model"] = config.model;
    root["architecture"] = Json{{"made_hidden", config.arch.made_hidden},
                                {"flow_hidden", config.arch.flow_hidden},
                                {"flow_transforms", config.arch.flow_transforms},
                                {"flow_bins", config.arch.flow_bins},
                                {"tail_bound", config.arch.tail_bound},
                                {"flow_conditioner_blocks", config.arch.flow_conditioner_blocks},
                                {"embedding_hidden", config.arch.embedding_hidden},
                                {"embedding_dim", config.arch.embedding_dim}};
    root["training"] = Json{{"learning_rate", config.train.learning_rate},
                            {"batch_size", config.train.batch_size},
                            {"validation_fraction", config.train.validation_fraction},
                            {"patience_epochs", config.train.patience_epochs},
                            {"max_epochs", config.train.max_epochs},
                            {"seed", config.train.seed}};
    root["evaluation"] = Json{{"n_test", config.eval.n_test},
                              {"s", config.eval.s},
                              {"b", config.eval.b},
                              {"budgets", config.eval.budgets},
                              {"seeds", config.eval.seeds}};
    root["paths"] = Json{{"out_dir", config.out_dir}};
    return root.dump(2);
}

void save_run_config(const RunConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << run_config_to_json(config) << '\n';
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace mnpe
