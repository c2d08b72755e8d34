#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skiff/state.hpp"

namespace skiff {

// Thin typed accessors over the predefined state entries. Primary key is the
// client id (or session id for the training-session state), secondary key is
// the field name. They work on any handle; writes still go through the
// handle's RO/RW check.

class ClientInfoView {
public:
    explicit ClientInfoView(StateHandle h) : h_(std::move(h)) {}

    std::vector<std::string> client_ids() const {
        std::set<std::string> ids;
        for (const auto& [primary, _] : h_.keys()) ids.insert(primary);
        return {ids.begin(), ids.end()};
    }
    bool known(const std::string& id) const { return h_.get(id, "join_timestamp").has_value(); }

    std::optional<std::string> rpc_endpoint(const std::string& id) const {
        auto v = h_.get(id, "rpc_endpoint");
        if (!v) return std::nullopt;
        return v->as_str();
    }
    void set_rpc_endpoint(const std::string& id, const std::string& ep) { h_.put(id, "rpc_endpoint", ep); }

    bool is_active(const std::string& id) const {
        auto v = h_.get(id, "is_active");
        return v && v->as_bool();
    }
    void set_active(const std::string& id, bool b) { h_.put(id, "is_active", b); }

    bool is_training(const std::string& id) const {
        auto v = h_.get(id, "is_training");
        return v && v->as_bool();
    }
    void set_training(const std::string& id, bool b) { h_.put(id, "is_training", b); }

    std::optional<double> benchmark(const std::string& id) const {
        auto v = h_.get(id, "benchmark");
        if (!v || v->is_nil()) return std::nullopt;
        return v->as_float();
    }
    void set_benchmark(const std::string& id, double seconds) { h_.put(id, "benchmark", seconds); }

    double heartbeat_timestamp(const std::string& id) const {
        auto v = h_.get(id, "heartbeat_timestamp");
        return v ? v->as_float() : 0.0;
    }
    void set_heartbeat_timestamp(const std::string& id, double t) { h_.put(id, "heartbeat_timestamp", t); }

    double heartbeat_interval(const std::string& id) const {
        auto v = h_.get(id, "heartbeat_interval");
        return v ? v->as_float() : 5.0;
    }
    void set_heartbeat_interval(const std::string& id, double t) { h_.put(id, "heartbeat_interval", t); }

    void set_join_timestamp(const std::string& id, double t) { h_.put(id, "join_timestamp", t); }
    double join_timestamp(const std::string& id) const {
        auto v = h_.get(id, "join_timestamp");
        return v ? v->as_float() : 0.0;
    }

    void set_hardware(const std::string& id, ValueMap info) { h_.put(id, "hardware_information", Value(std::move(info))); }
    void set_dataset_details(const std::string& id, ValueMap details) {
        h_.put(id, "dataset_details", Value(std::move(details)));
    }
    std::optional<ValueMap> dataset_details(const std::string& id) const {
        auto v = h_.get(id, "dataset_details");
        if (!v || v->kind() != Value::Kind::Map) return std::nullopt;
        return v->as_map();
    }

    /// Total training sample count advertised by the client; 0 when unknown.
    int64_t sample_count(const std::string& id) const {
        auto d = dataset_details(id);
        if (!d) return 0;
        auto it = d->find("label_counts");
        if (it == d->end() || it->second.kind() != Value::Kind::Map) return 0;
        int64_t n = 0;
        for (const auto& [_, c] : it->second.as_map()) n += c.as_int();
        return n;
    }

    std::vector<std::string> cached_models(const std::string& id) const {
        std::vector<std::string> out;
        auto v = h_.get(id, "models");
        if (!v || v->kind() != Value::Kind::List) return out;
        for (const auto& e : v->as_list()) out.push_back(e.as_str());
        return out;
    }
    void add_cached_model(const std::string& id, const std::string& sha) {
        auto models = cached_models(id);
        if (std::find(models.begin(), models.end(), sha) != models.end()) return;
        ValueList l;
        for (auto& m : models) l.push_back(Value(m));
        l.push_back(Value(sha));
        h_.put(id, "models", Value(std::move(l)));
    }
    void remove_cached_model(const std::string& id, const std::string& sha) {
        ValueList l;
        for (auto& m : cached_models(id))
            if (m != sha) l.push_back(Value(m));
        h_.put(id, "models", Value(std::move(l)));
    }

    std::vector<int64_t> failed_rounds(const std::string& id) const {
        std::vector<int64_t> out;
        auto v = h_.get(id, "failed_rounds");
        if (!v || v->kind() != Value::Kind::List) return out;
        for (const auto& e : v->as_list()) out.push_back(e.as_int());
        return out;
    }
    void append_failed_round(const std::string& id, int64_t round) {
        ValueList l;
        auto v = h_.get(id, "failed_rounds");
        if (v && v->kind() == Value::Kind::List) l = v->as_list();
        l.push_back(Value(round));
        h_.put(id, "failed_rounds", Value(std::move(l)));
    }
    void clear_failed_rounds(const std::string& id) { h_.put(id, "failed_rounds", Value(ValueList{})); }

    void append_heartbeat_history(const std::string& id, double sender_ts, size_t cap = 256) {
        ValueList l;
        auto v = h_.get(id, "heartbeat_history");
        if (v && v->kind() == Value::Kind::List) l = v->as_list();
        l.push_back(Value(sender_ts));
        if (l.size() > cap) l.erase(l.begin(), l.begin() + (l.size() - cap));
        h_.put(id, "heartbeat_history", Value(std::move(l)));
    }
    std::vector<double> heartbeat_history(const std::string& id) const {
        std::vector<double> out;
        auto v = h_.get(id, "heartbeat_history");
        if (!v || v->kind() != Value::Kind::List) return out;
        for (const auto& e : v->as_list()) out.push_back(e.as_float());
        return out;
    }

    StateHandle& handle() { return h_; }

private:
    StateHandle h_;
};

class TrainSessionView {
public:
    TrainSessionView(StateHandle h, std::string session_id)
        : h_(std::move(h)), sid_(std::move(session_id)) {}

    std::optional<ModelWeights> global_model() const {
        auto v = h_.get(sid_, "global_model");
        if (!v || v->kind() != Value::Kind::Weights) return std::nullopt;
        return v->as_weights();
    }
    void set_global_model(const ModelWeights& w) { h_.put(sid_, "global_model", Value(w)); }

    int64_t last_round_number() const {
        auto v = h_.get(sid_, "last_round_number");
        return v ? v->as_int() : 0;
    }
    void set_last_round_number(int64_t r) { h_.put(sid_, "last_round_number", r); }

    std::string status() const {
        auto v = h_.get(sid_, "status");
        return v ? v->as_str() : "";
    }
    void set_status(const std::string& s) { h_.put(sid_, "status", s); }

    void set_training_config(const std::string& yaml_text) { h_.put(sid_, "training_config", yaml_text); }
    std::string training_config() const {
        auto v = h_.get(sid_, "training_config");
        return v ? v->as_str() : "";
    }

    void set_state_ids() {
        h_.put(sid_, "training_state_id", std::string(state_id::kClientTraining));
        h_.put(sid_, "agg_state_id", std::string(state_id::kAggregation));
        h_.put(sid_, "cs_state_id", std::string(state_id::kClientSelection));
    }

    const std::string& session_id() const { return sid_; }

private:
    StateHandle h_;
    std::string sid_;
};

class ClientTrainingView {
public:
    explicit ClientTrainingView(StateHandle h) : h_(std::move(h)) {}

    void set_dispatch(const std::string& id, int64_t round, const std::string& model_id,
                      const std::string& dataset) {
        h_.put(id, "last_round_participated", round);
        h_.put(id, "current_model_id", model_id);
        h_.put(id, "current_dataset", dataset);
    }

    int64_t last_round_participated(const std::string& id) const {
        auto v = h_.get(id, "last_round_participated");
        return v ? v->as_int() : -1;
    }

    void set_missed_deadline(const std::string& id, bool b) { h_.put(id, "missed_deadline", b); }
    bool missed_deadline(const std::string& id) const {
        auto v = h_.get(id, "missed_deadline");
        return v && v->as_bool();
    }

    void set_model_weights(const std::string& id, const ModelWeights& w) {
        h_.put(id, "model_weights", Value(w));
    }
    void set_training_metrics(const std::string& id, ValueMap m) {
        h_.put(id, "training_metrics", Value(std::move(m)));
    }
    void set_validation_metrics(const std::string& id, ValueMap m) {
        h_.put(id, "validation_metrics", Value(std::move(m)));
    }
    std::optional<ValueMap> training_metrics(const std::string& id) const {
        auto v = h_.get(id, "training_metrics");
        if (!v || v->kind() != Value::Kind::Map) return std::nullopt;
        return v->as_map();
    }
    std::optional<ValueMap> validation_metrics(const std::string& id) const {
        auto v = h_.get(id, "validation_metrics");
        if (!v || v->kind() != Value::Kind::Map) return std::nullopt;
        return v->as_map();
    }

private:
    StateHandle h_;
};

}  // namespace skiff
