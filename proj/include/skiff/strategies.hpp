#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skiff/state.hpp"
#include "skiff/value.hpp"
#include "skiff/weights.hpp"

namespace skiff {

/// State bundle handed to clientSelect / aggregate. The owner module gets a
/// read-write handle to its own state and read-only handles to the other
/// four; the session manager constructs the matching variant per call.
struct StrategyContext {
    std::string session_id;
    std::vector<std::string> available_clients;  // active, per discovery
    StateHandle client_sel_state;
    StateHandle agg_state;
    StateHandle client_train_state;
    StateHandle client_info_state;
    StateHandle train_session_state;
    ValueMap user_config;  // strategy args plus round / num_rounds injected per call
};

struct SelectionResult {
    std::optional<std::vector<std::string>> train_clients;
    std::optional<std::vector<std::string>> validate_clients;

    bool deferred() const { return !train_clients && !validate_clients; }
};

class ClientSelector {
public:
    virtual ~ClientSelector() = default;
    virtual SelectionResult select(StrategyContext& ctx) = 0;
    /// The session manager aborted the in-flight round (m-of-n no longer
    /// satisfiable); drop round-scoped bookkeeping so the next select
    /// re-dispatches.
    virtual void on_round_abort(StrategyContext& ctx) { (void)ctx; }
    /// Restored from checkpoint / durable state: keep cross-round knowledge,
    /// drop in-flight round data, and arrange for a fresh dispatch.
    virtual void on_resume(StrategyContext& ctx) { (void)ctx; }
    /// Whether responses trained against an older global model version are
    /// still fed to the aggregator (asynchronous strategies) instead of being
    /// dropped as stale.
    virtual bool accepts_stale_responses() const { return false; }
};

struct AggregateInput {
    std::string client_id;
    std::optional<ModelWeights> local_model;  // absent => failure flag
    bool failure = false;
    int64_t update_round = 0;  // round the update was dispatched for
    int64_t data_count = 0;    // client's advertised sample count
};

class Aggregator {
public:
    virtual ~Aggregator() = default;
    /// Returns the new global model, or nullopt to defer (stashing the update
    /// in the aggregation state). Must clear its own round state when it
    /// emits a model.
    virtual std::optional<ModelWeights> aggregate(StrategyContext& ctx, const AggregateInput& in) = 0;
    virtual void on_round_abort(StrategyContext& ctx) { (void)ctx; }
    virtual void on_resume(StrategyContext& ctx) { (void)ctx; }
};

// Pure aggregation math, separately callable (and separately tested).

/// Sample-count weighted elementwise mean: sum(n_i * w_i) / sum(n_i).
/// Accumulates in double, emits float32. Throws ShapeMismatch on ragged
/// inputs or non-positive total weight.
ModelWeights fedavg_aggregate(const std::vector<std::pair<ModelWeights, double>>& models);

/// Staleness-discounted mixing: alpha_t = alpha * (t - tau + 1)^(-a),
/// result = (1 - alpha_t) * global + alpha_t * update.
ModelWeights fedasync_aggregate(const ModelWeights& global, const ModelWeights& update,
                                int64_t update_round, int64_t current_round, double alpha, double a);

struct StrategyPair {
    std::unique_ptr<ClientSelector> selector;
    std::unique_ptr<Aggregator> aggregator;
};

/// Built-in strategy registry, keyed by the YAML names. TiFL and HACCS
/// aggregate exactly like FedAvg, so those keys map to the FedAvg aggregator.
std::unique_ptr<ClientSelector> make_selector(const std::string& name);   // throws StrategyNotFound
std::unique_ptr<Aggregator> make_aggregator(const std::string& name);     // throws StrategyNotFound
bool selector_exists(const std::string& name);
bool aggregator_exists(const std::string& name);

// Config keys injected by the session manager into user_config on each call.
namespace strategy_key {
inline constexpr const char* kRound = "__round";            // current last_round_number
inline constexpr const char* kNumRounds = "__num_rounds";   // configured total rounds
inline constexpr const char* kSeed = "__seed";              // session seed
inline constexpr const char* kMinClients = "min_clients";   // FedAvg m-of-n
}  // namespace strategy_key

}  // namespace skiff
