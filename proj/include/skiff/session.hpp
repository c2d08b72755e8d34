#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skiff/discovery.hpp"
#include "skiff/metrics.hpp"
#include "skiff/session_config.hpp"
#include "skiff/state.hpp"
#include "skiff/state_views.hpp"
#include "skiff/strategies.hpp"
#include "skiff/transport.hpp"

namespace skiff {

struct LifecycleEvent {
    enum class Kind {
        SessionStart,
        ClientResponse,
        ClientFailure,
        PackageDelivered,
        BenchmarkDone,
        Stop,
    };
    Kind kind = Kind::SessionStart;
    std::string client_id;
    TrainResponse response;  // ClientResponse
    FailureReason reason = FailureReason::ConnectionLost;
    std::string detail;
    int64_t round = 0;  // dispatch round of the request this event belongs to
    bool validate_only = false;
    double benchmark_s = 0;   // BenchmarkDone
    bool delivered_ok = false;  // PackageDelivered
};

/// One entry per processed lifecycle event; the sequencing tests assert the
/// FedAvg/FedAsync orderings against this log.
struct EventLogEntry {
    std::string event;  // session_start | response | validate_response | failure | benchmark | package | stale_response | stale_failure
    std::string client;
    int64_t round_before = 0;
    int64_t round_after = 0;
    bool aggregate_called = false;
    bool aggregate_produced_model = false;
    int select_train = -1;     // -1 when NULL
    int select_validate = -1;  // -1 when NULL
    int dispatched = 0;
    bool round_aborted = false;
};

struct SessionOptions {
    std::filesystem::path checkpoint_dir;  // empty: checkpointing disabled
    std::filesystem::path metrics_path;    // per-round JSONL; empty: disabled
    std::filesystem::path result_path;     // summary json; empty: disabled
    size_t min_clients = 1;
    double client_wait_timeout_s = 30;
    double idle_reselect_period_s = 1.0;  // re-poll selection when idle (new clients may appear)
    double fallback_deadline_s = 30;      // used when no benchmark-derived estimate exists
    bool keep_event_log = false;
    bool verify_state_isolation = false;  // digest states around plugin calls (tests only)
};

struct SessionResult {
    std::string session_id;
    std::string status = "failed";  // completed | failed | stopped
    std::string terminated_by;      // rounds | accuracy | time_budget | stop | error
    std::string error;
    int64_t rounds_completed = 0;
    double final_accuracy = 0;
    double final_loss = 0;
    double total_s = 0;
    double overhead_total_s = 0;
    int64_t checkpoints_written = 0;

    nlohmann::json to_json() const;
};

/// Drives one training session: Client Selection -> Client Training ->
/// Aggregation -> Validation per lifecycle event, on a single serialized
/// event queue. Transport callbacks and timers only enqueue events; all
/// state mutation happens on the thread running run(). Callbacks that
/// outlive the session are absorbed by a shared gate, so late completions
/// cannot touch a dead manager.
class SessionManager {
public:
    SessionManager(SessionConfig cfg, SessionStates states, Transport& transport,
                   DiscoveryService& discovery, SessionOptions opts = {});
    ~SessionManager();

    SessionResult run();     // fresh session
    SessionResult resume();  // states restored from checkpoint / durable store

    void request_stop();
    void post(LifecycleEvent ev);

    /// Snapshot of the event log (safe to call while the session runs).
    std::vector<EventLogEntry> event_log() const;
    const SessionStates& states() const { return states_; }
    const ModelPackage& package() const { return package_; }

    /// Builds the session's model package: model_dir when present on disk,
    /// otherwise a manifest for the built-in trainer from model_args.
    static ModelPackage package_for(const SessionConfig& cfg);
    static ModelSpec model_spec_for(const SessionConfig& cfg);

private:
    struct PendingRequest {
        int64_t round = 0;
        bool validate_only = false;
        double dispatched_mono = 0;
        bool needs_package = false;
        bool needs_benchmark = false;
    };

    /// Owned via shared_ptr by the manager and by every in-flight transport
    /// callback; posts become no-ops once the manager is gone.
    struct PostGate {
        std::mutex mu;
        SessionManager* manager = nullptr;
        void post(LifecycleEvent ev) {
            std::lock_guard lk(mu);
            if (manager) manager->post(std::move(ev));
        }
    };

    SessionResult run_internal(bool resuming);
    void process_event(const LifecycleEvent& ev);
    void handle_session_start(EventLogEntry& log);
    void handle_response(const LifecycleEvent& ev, EventLogEntry& log);
    void handle_failure(const LifecycleEvent& ev, EventLogEntry& log);
    void handle_package_delivered(const LifecycleEvent& ev, EventLogEntry& log);
    void handle_benchmark_done(const LifecycleEvent& ev, EventLogEntry& log);

    std::optional<ModelWeights> invoke_aggregate(const AggregateInput& in, EventLogEntry& log);
    void adopt_new_global(const ModelWeights& w, const LifecycleEvent& ev, EventLogEntry& log);
    void invoke_select_and_dispatch(EventLogEntry& log);
    void maybe_abort_round(EventLogEntry& log);
    void dispatch_client(const std::string& cid, bool validate_only);
    void advance_dispatch(const std::string& cid);  // next pipeline step
    void send_train(const std::string& cid, PendingRequest& pr);
    double compute_deadline() const;
    void run_validation(double* val_seconds);
    void write_round_record(const LifecycleEvent& ev);
    void checkpoint_if_due(RoundRecord& rec);
    bool termination_reached(std::string* reason) const;
    void prime_benchmarks(EventLogEntry& log);

    StrategyContext make_cs_context();
    StrategyContext make_agg_context();
    ValueMap base_user_config(const ValueMap& args) const;

    SessionConfig cfg_;
    SessionStates states_;
    Transport& transport_;
    DiscoveryService& discovery_;
    SessionOptions opts_;

    std::unique_ptr<ClientSelector> selector_;
    std::unique_ptr<Aggregator> aggregator_;
    ModelPackage package_;
    std::string package_sha_;
    std::optional<Dataset> validation_data_;

    // event queue
    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::deque<LifecycleEvent> queue_;
    bool stop_requested_ = false;

    // round bookkeeping
    int64_t current_round_ = 0;  // last_round_number mirror
    std::map<std::string, PendingRequest> pending_;
    std::set<std::string> priming_pending_;
    bool priming_done_ = false;
    std::map<int64_t, double> round_first_dispatch_;
    std::map<int64_t, double> round_last_dispatch_;
    std::map<int64_t, std::set<std::string>> round_dispatched_;
    std::map<int64_t, size_t> round_failures_;
    std::vector<std::string> round_failed_clients_;
    double round_start_mono_ = 0;
    double session_start_mono_ = 0;
    double agg_time_accum_ = 0;
    double last_accuracy_ = 0;
    double last_loss_ = 0;
    bool have_accuracy_ = false;
    double train_wait_last_ = 0;

    MetricsWriter metrics_;
    SessionResult result_;
    mutable std::mutex log_mu_;
    std::vector<EventLogEntry> event_log_;
    int64_t checkpoints_written_ = 0;
    double checkpoint_time_last_ = 0;
    double total_overhead_ = 0;
};

}  // namespace skiff
