#include "skiff/session_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "skiff/errors.hpp"
#include "skiff/strategies.hpp"

namespace skiff {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

[[noreturn]] void fail(const std::string& msg, const std::string& key, const YAML::Node& at) {
    throw SchemaError(msg + " (line " + std::to_string(line_of(at)) + ")", key, line_of(at));
}

void reject_unknown(const YAML::Node& section, const std::string& section_name,
                    const std::set<std::string>& allowed) {
    if (!section.IsDefined() || section.IsNull()) return;
    if (!section.IsMap()) fail("section '" + section_name + "' must be a mapping", section_name, section);
    for (const auto& kv : section) {
        std::string key = kv.first.as<std::string>();
        if (allowed.count(key) == 0)
            fail("unknown key '" + key + "' in " + section_name, section_name + "." + key, kv.first);
    }
}

bool is_nullish(const YAML::Node& n) {
    if (!n.IsDefined() || n.IsNull()) return true;
    if (n.IsScalar()) {
        const std::string& s = n.Scalar();
        return s == "None" || s == "none" || s == "null" || s == "~" || s.empty();
    }
    return false;
}

Value yaml_to_value(const YAML::Node& n) {
    if (!n.IsDefined() || n.IsNull()) return Value();
    if (n.IsSequence()) {
        ValueList l;
        for (const auto& e : n) l.push_back(yaml_to_value(e));
        return Value(std::move(l));
    }
    if (n.IsMap()) {
        ValueMap m;
        for (const auto& kv : n) m.emplace(kv.first.as<std::string>(), yaml_to_value(kv.second));
        return Value(std::move(m));
    }
    // scalar: try int, then float, then bool, else string
    const std::string& s = n.Scalar();
    try {
        size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos == s.size()) return Value(static_cast<int64_t>(v));
    } catch (...) {
    }
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos == s.size()) return Value(v);
    } catch (...) {
    }
    if (s == "true" || s == "True" || s == "TRUE") return Value(true);
    if (s == "false" || s == "False" || s == "FALSE") return Value(false);
    return Value(s);
}

ValueMap args_map(const YAML::Node& n, const std::string& key) {
    if (is_nullish(n)) return {};
    if (!n.IsMap()) throw SchemaError("'" + key + "' must be a mapping or None", key, n.Mark().line + 1);
    return yaml_to_value(n).as_map();
}

template <typename T>
T get_or(const YAML::Node& section, const std::string& key, T def) {
    if (!section.IsDefined() || section.IsNull()) return def;
    YAML::Node n = section[key];
    if (is_nullish(n)) return def;
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw SchemaError("bad value for '" + key + "'", key, n.Mark().line + 1);
    }
}

YAML::Node require_section(const YAML::Node& root, const std::string& name) {
    YAML::Node n = root[name];
    if (!n.IsDefined() || n.IsNull())
        throw SchemaError("missing required section '" + name + "'", name, 1);
    return n;
}

template <typename T>
T require_key(const YAML::Node& section, const std::string& section_name, const std::string& key) {
    YAML::Node n = section[key];
    if (is_nullish(n))
        throw SchemaError("missing required key '" + key + "' in " + section_name,
                          section_name + "." + key, section.Mark().line + 1);
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw SchemaError("bad value for '" + key + "'", key, n.Mark().line + 1);
    }
}

}  // namespace

SessionConfig parse_session_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw SchemaError("yaml parse error: " + std::string(e.what()), "", e.mark.line + 1);
    }
    if (!root.IsMap()) throw SchemaError("config must be a yaml mapping", "", 1);
    reject_unknown(root, "config",
                   {"session_config", "benchmark_config", "server_training_config",
                    "client_training_config", "model_config"});

    SessionConfig cfg;
    cfg.source_text = yaml_text;

    YAML::Node sc = require_section(root, "session_config");
    reject_unknown(sc, "session_config",
                   {"session_id", "use_gpu", "aggregator", "aggregator_args", "client_selection",
                    "client_selection_args", "checkpoint_interval", "validation_round_interval",
                    "generate_plots", "seed", "heartbeat_miss_threshold", "deadline_factor",
                    "termination"});
    cfg.session_id = require_key<std::string>(sc, "session_config", "session_id");
    cfg.use_gpu = get_or<bool>(sc, "use_gpu", false);
    cfg.aggregator = require_key<std::string>(sc, "session_config", "aggregator");
    cfg.aggregator_args = args_map(sc["aggregator_args"], "aggregator_args");
    cfg.client_selection = require_key<std::string>(sc, "session_config", "client_selection");
    cfg.client_selection_args = args_map(sc["client_selection_args"], "client_selection_args");
    cfg.checkpoint_interval = get_or<int64_t>(sc, "checkpoint_interval", 5);
    if (cfg.checkpoint_interval < 1)
        throw SchemaError("checkpoint_interval must be >= 1", "checkpoint_interval");
    cfg.validation_round_interval = get_or<int64_t>(sc, "validation_round_interval", 1);
    cfg.generate_plots = get_or<bool>(sc, "generate_plots", false);
    cfg.seed = get_or<uint64_t>(sc, "seed", 0);
    cfg.heartbeat_miss_threshold = get_or<int>(sc, "heartbeat_miss_threshold", 5);
    cfg.deadline_factor = get_or<double>(sc, "deadline_factor", 1.5);
    if (sc["termination"].IsDefined() && !is_nullish(sc["termination"])) {
        YAML::Node term = sc["termination"];
        reject_unknown(term, "termination", {"time_budget_s", "accuracy_threshold"});
        if (!is_nullish(term["time_budget_s"]))
            cfg.termination.time_budget_s = term["time_budget_s"].as<double>();
        if (!is_nullish(term["accuracy_threshold"]))
            cfg.termination.accuracy_threshold = term["accuracy_threshold"].as<double>();
    }

    YAML::Node bc = root["benchmark_config"];
    reject_unknown(bc, "benchmark_config", {"skip_benchmark", "benchmark_minibatches"});
    cfg.skip_benchmark = get_or<bool>(bc, "skip_benchmark", false);
    cfg.benchmark_minibatches = get_or<int>(bc, "benchmark_minibatches", 5);

    YAML::Node stc = require_section(root, "server_training_config");
    reject_unknown(stc, "server_training_config",
                   {"model_dir", "global_model_validation_batch_size", "num_training_rounds",
                    "validation_dataset", "data_dir"});
    cfg.model_dir = get_or<std::string>(stc, "model_dir", "");
    cfg.global_model_validation_batch_size = get_or<int64_t>(stc, "global_model_validation_batch_size", 100);
    cfg.num_training_rounds = require_key<int64_t>(stc, "server_training_config", "num_training_rounds");
    if (cfg.num_training_rounds < 1)
        throw SchemaError("num_training_rounds must be >= 1", "num_training_rounds");
    cfg.validation_dataset = get_or<std::string>(stc, "validation_dataset", "");
    cfg.data_dir = get_or<std::string>(stc, "data_dir", "");

    YAML::Node ctc = require_section(root, "client_training_config");
    reject_unknown(ctc, "client_training_config",
                   {"model_id", "model_class", "dataset", "epochs", "batch_size", "learning_rate",
                    "train_timeout_duration_s", "loss_function", "loss_function_custom", "optimizer",
                    "optimizer_custom", "seed"});
    cfg.model_id = require_key<std::string>(ctc, "client_training_config", "model_id");
    cfg.model_class = get_or<std::string>(ctc, "model_class", "");
    cfg.dataset = require_key<std::string>(ctc, "client_training_config", "dataset");
    cfg.epochs = get_or<int64_t>(ctc, "epochs", 1);
    cfg.batch_size = get_or<int64_t>(ctc, "batch_size", 32);
    cfg.learning_rate = get_or<double>(ctc, "learning_rate", 0.01);
    cfg.train_timeout_duration_s = get_or<double>(ctc, "train_timeout_duration_s", 0.0);
    cfg.loss_function = get_or<std::string>(ctc, "loss_function", "crossentropy");
    if (cfg.loss_function != "crossentropy" && cfg.loss_function != "mse")
        throw SchemaError("loss_function must be 'crossentropy' or 'mse'", "loss_function");
    cfg.loss_function_custom = get_or<bool>(ctc, "loss_function_custom", false);
    cfg.optimizer = get_or<std::string>(ctc, "optimizer", "sgd");
    if (cfg.optimizer != "sgd" && cfg.optimizer != "adam")
        throw SchemaError("optimizer must be 'sgd' or 'adam'", "optimizer");
    cfg.optimizer_custom = get_or<bool>(ctc, "optimizer_custom", false);
    cfg.trainer_seed = get_or<uint64_t>(ctc, "seed", 0);
    if (cfg.epochs < 0) throw SchemaError("epochs must be >= 0", "epochs");
    if (cfg.batch_size < 1) throw SchemaError("batch_size must be >= 1", "batch_size");
    if (cfg.learning_rate <= 0) throw SchemaError("learning_rate must be > 0", "learning_rate");

    YAML::Node mc = root["model_config"];
    reject_unknown(mc, "model_config",
                   {"use_custom_dataloader", "custom_loader_args", "use_custom_trainer",
                    "custom_trainer_args", "use_custom_validator", "custom_validator_args",
                    "model_args"});
    if (mc.IsDefined() && !mc.IsNull()) {
        cfg.use_custom_dataloader = get_or<bool>(mc, "use_custom_dataloader", false);
        cfg.custom_loader_args = args_map(mc["custom_loader_args"], "custom_loader_args");
        cfg.use_custom_trainer = get_or<bool>(mc, "use_custom_trainer", false);
        cfg.custom_trainer_args = args_map(mc["custom_trainer_args"], "custom_trainer_args");
        cfg.use_custom_validator = get_or<bool>(mc, "use_custom_validator", false);
        cfg.custom_validator_args = args_map(mc["custom_validator_args"], "custom_validator_args");
        cfg.model_args = args_map(mc["model_args"], "model_args");
    }

    if (!selector_exists(cfg.client_selection))
        throw SchemaError("unknown client_selection strategy '" + cfg.client_selection + "'",
                          "client_selection");
    if (!aggregator_exists(cfg.aggregator))
        throw SchemaError("unknown aggregator strategy '" + cfg.aggregator + "'", "aggregator");

    return cfg;
}

SessionConfig load_session_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_session_config(ss.str());
}

}  // namespace skiff
