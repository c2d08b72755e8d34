#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "skiff/value.hpp"

namespace skiff {

struct TerminationSpec {
    std::optional<double> time_budget_s;
    std::optional<double> accuracy_threshold;
};

/// Declarative session description parsed from the YAML config. Sections and
/// keys follow the documented schema; unknown keys are rejected with the key
/// name and line.
struct SessionConfig {
    // session_config
    std::string session_id;
    bool use_gpu = false;
    std::string aggregator;
    ValueMap aggregator_args;
    std::string client_selection;
    ValueMap client_selection_args;
    int64_t checkpoint_interval = 5;
    int64_t validation_round_interval = 1;
    bool generate_plots = false;
    uint64_t seed = 0;
    int heartbeat_miss_threshold = 5;
    double deadline_factor = 1.5;
    TerminationSpec termination;

    // benchmark_config
    bool skip_benchmark = false;
    int benchmark_minibatches = 5;

    // server_training_config
    std::string model_dir;
    int64_t global_model_validation_batch_size = 100;
    int64_t num_training_rounds = 0;
    std::string validation_dataset;
    std::string data_dir;

    // client_training_config
    std::string model_id;
    std::string model_class;
    std::string dataset;
    int64_t epochs = 1;
    int64_t batch_size = 32;
    double learning_rate = 0.01;
    double train_timeout_duration_s = 0;  // 0: derive from benchmarks (deadline_factor x slowest)
    std::string loss_function = "crossentropy";
    bool loss_function_custom = false;
    std::string optimizer = "sgd";
    bool optimizer_custom = false;
    uint64_t trainer_seed = 0;

    // model_config
    bool use_custom_dataloader = false;
    ValueMap custom_loader_args;
    bool use_custom_trainer = false;
    ValueMap custom_trainer_args;
    bool use_custom_validator = false;
    ValueMap custom_validator_args;
    ValueMap model_args;

    std::string source_text;  // the YAML this config was parsed from
};

SessionConfig parse_session_config(const std::string& yaml_text);          // throws SchemaError
SessionConfig load_session_config(const std::filesystem::path& path);     // throws SchemaError

}  // namespace skiff
