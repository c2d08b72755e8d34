#include "skiff/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "skiff/errors.hpp"
#include "skiff/log.hpp"

namespace skiff {

using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t h = a ^ 0x9E3779B97F4A7C15ull;
    h ^= b + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xFF51AFD7ED558CCDull;
    return h ^ (h >> 33);
}

constexpr int64_t kPrimingRound = -1;

}  // namespace

json SessionResult::to_json() const {
    json j;
    j["session_id"] = session_id;
    j["status"] = status;
    j["terminated_by"] = terminated_by;
    if (!error.empty()) j["error"] = error;
    j["rounds_completed"] = rounds_completed;
    j["final_accuracy"] = final_accuracy;
    j["final_loss"] = final_loss;
    j["total_s"] = total_s;
    j["overhead_total_s"] = overhead_total_s;
    j["checkpoints_written"] = checkpoints_written;
    return j;
}

SessionManager::SessionManager(SessionConfig cfg, SessionStates states, Transport& transport,
                               DiscoveryService& discovery, SessionOptions opts)
    : cfg_(std::move(cfg)), states_(std::move(states)), transport_(transport),
      discovery_(discovery), opts_(std::move(opts)) {}

SessionManager::~SessionManager() = default;

std::vector<EventLogEntry> SessionManager::event_log() const {
    std::lock_guard lk(log_mu_);
    return event_log_;
}

ModelSpec SessionManager::model_spec_for(const SessionConfig& cfg) {
    ModelSpec spec;
    auto arg = [&](const char* key) -> std::optional<Value> {
        auto it = cfg.model_args.find(key);
        if (it == cfg.model_args.end()) return std::nullopt;
        return it->second;
    };
    if (auto f = arg("family")) {
        spec.family = f->as_str();
    } else if (cfg.model_id == "logreg" || cfg.model_id == "mlp") {
        spec.family = cfg.model_id;
    } else {
        throw SchemaError("cannot resolve model family for model_id '" + cfg.model_id +
                              "'; set model_config.model_args.family to 'logreg' or 'mlp'",
                          "model_args.family");
    }
    if (spec.family != "logreg" && spec.family != "mlp")
        throw SchemaError("unknown model family '" + spec.family + "'", "model_args.family");
    auto dim = arg("input_dim");
    auto classes = arg("num_classes");
    if (!dim || !classes)
        throw SchemaError("model_args.input_dim and model_args.num_classes are required",
                          "model_args");
    spec.input_dim = static_cast<size_t>(dim->as_int());
    spec.num_classes = static_cast<int32_t>(classes->as_int());
    if (auto h = arg("hidden_units")) spec.hidden = static_cast<size_t>(h->as_int());
    if (spec.family == "mlp" && spec.hidden == 0) spec.hidden = 16;
    return spec;
}

ModelPackage SessionManager::package_for(const SessionConfig& cfg) {
    if (!cfg.model_dir.empty() && std::filesystem::is_directory(cfg.model_dir))
        return load_package_dir(cfg.model_dir);
    ModelSpec spec = model_spec_for(cfg);
    return build_builtin_package(cfg.model_id, spec.family, cfg.dataset, spec.input_dim,
                                 spec.num_classes, spec.hidden);
}

ValueMap SessionManager::base_user_config(const ValueMap& args) const {
    ValueMap cfg = args;
    cfg[strategy_key::kRound] = Value(current_round_);
    cfg[strategy_key::kNumRounds] = Value(cfg_.num_training_rounds);
    cfg[strategy_key::kSeed] = Value(static_cast<int64_t>(cfg_.seed));
    return cfg;
}

StrategyContext SessionManager::make_cs_context() {
    StrategyContext ctx;
    ctx.session_id = cfg_.session_id;
    ctx.available_clients = discovery_.active_clients();
    ctx.client_sel_state = StateHandle::rw(states_.client_selection);
    ctx.agg_state = StateHandle::ro(states_.aggregation);
    ctx.client_train_state = StateHandle::ro(states_.client_training);
    ctx.client_info_state = StateHandle::ro(states_.client_info);
    ctx.train_session_state = StateHandle::ro(states_.train_session);
    ctx.user_config = base_user_config(cfg_.client_selection_args);
    return ctx;
}

StrategyContext SessionManager::make_agg_context() {
    StrategyContext ctx;
    ctx.session_id = cfg_.session_id;
    ctx.available_clients = discovery_.active_clients();
    ctx.client_sel_state = StateHandle::ro(states_.client_selection);
    ctx.agg_state = StateHandle::rw(states_.aggregation);
    ctx.client_train_state = StateHandle::ro(states_.client_training);
    ctx.client_info_state = StateHandle::ro(states_.client_info);
    ctx.train_session_state = StateHandle::ro(states_.train_session);
    ctx.user_config = base_user_config(cfg_.aggregator_args);
    return ctx;
}

void SessionManager::post(LifecycleEvent ev) {
    std::lock_guard lk(queue_mu_);
    queue_.push_back(std::move(ev));
    queue_cv_.notify_one();
}

void SessionManager::request_stop() {
    LifecycleEvent ev;
    ev.kind = LifecycleEvent::Kind::Stop;
    post(std::move(ev));
}

SessionResult SessionManager::run() { return run_internal(false); }
SessionResult SessionManager::resume() { return run_internal(true); }

SessionResult SessionManager::run_internal(bool resuming) {
    result_ = {};
    result_.session_id = cfg_.session_id;

    selector_ = make_selector(cfg_.client_selection);
    aggregator_ = make_aggregator(cfg_.aggregator);
    package_ = package_for(cfg_);
    package_sha_ = package_.sha256();

    if (!cfg_.validation_dataset.empty()) {
        std::filesystem::path dir = std::filesystem::path(cfg_.data_dir) / cfg_.validation_dataset;
        if (dataset_exists(dir, "validation")) {
            validation_data_ = load_dataset(dir, "validation");
        } else if (dataset_exists(dir, "train")) {
            log_kv("leader", "validation_split_missing_using_train", {{"dir", dir.string()}});
            validation_data_ = load_dataset(dir, "train");
        } else {
            throw NotFound("validation dataset '" + cfg_.validation_dataset + "' not found under " +
                           cfg_.data_dir);
        }
    }

    if (!discovery_.wait_for_clients(opts_.min_clients, opts_.client_wait_timeout_s))
        throw NoClientsAvailable("no active clients after waiting " +
                                 fmt_double(opts_.client_wait_timeout_s) + "s");

    TrainSessionView session(StateHandle::rw(states_.train_session), cfg_.session_id);
    ClientInfoView info{StateHandle::rw(states_.client_info)};

    if (resuming) {
        double t0 = mono_s();
        current_round_ = session.last_round_number();
        // nothing is actually in flight in this process; any in-flight round
        // data beyond last_round_number is discarded by the strategy hooks
        for (const auto& id : info.client_ids()) info.set_training(id, false);
        {
            auto cs_ctx = make_cs_context();
            selector_->on_resume(cs_ctx);
            auto agg_ctx = make_agg_context();
            aggregator_->on_resume(agg_ctx);
        }
        session.set_status("running");
        log_kv("leader", "resume_complete",
               {{"session", cfg_.session_id},
                {"restored_round", std::to_string(current_round_)},
                {"resume_ms", fmt_double((mono_s() - t0) * 1000.0)}});
    } else {
        session.set_training_config(cfg_.source_text);
        session.set_state_ids();
        session.set_last_round_number(0);
        session.set_status("running");
        session.set_global_model(init_model(model_spec_for(cfg_), cfg_.seed));
        current_round_ = 0;
        for (const auto& id : info.client_ids()) {
            info.set_training(id, false);
            info.clear_failed_rounds(id);
        }
        log_kv("leader", "session_start",
               {{"session", cfg_.session_id},
                {"aggregator", cfg_.aggregator},
                {"client_selection", cfg_.client_selection},
                {"rounds", std::to_string(cfg_.num_training_rounds)}});
    }

    metrics_ = MetricsWriter(opts_.metrics_path);
    session_start_mono_ = mono_s();
    round_start_mono_ = session_start_mono_;

    {
        LifecycleEvent ev;
        ev.kind = LifecycleEvent::Kind::SessionStart;
        post(std::move(ev));
    }

    std::string term_reason;
    bool done = false;
    double last_idle_select = mono_s();
    try {
        while (!done) {
            LifecycleEvent ev;
            bool have_event = false;
            {
                std::unique_lock lk(queue_mu_);
                if (queue_cv_.wait_for(lk, std::chrono::milliseconds(100),
                                       [&] { return !queue_.empty(); })) {
                    ev = std::move(queue_.front());
                    queue_.pop_front();
                    have_event = true;
                }
            }
            if (have_event) {
                if (ev.kind == LifecycleEvent::Kind::Stop) {
                    result_.status = "stopped";
                    result_.terminated_by = "stop";
                    break;
                }
                process_event(ev);
                if (termination_reached(&term_reason)) {
                    result_.status = "completed";
                    result_.terminated_by = term_reason;
                    done = true;
                }
            } else {
                if (termination_reached(&term_reason)) {
                    result_.status = "completed";
                    result_.terminated_by = term_reason;
                    break;
                }
                // idle: nothing in flight — give selection another look so
                // newly joined or reinstated clients can be picked up
                if (pending_.empty() && priming_done_ &&
                    mono_s() - last_idle_select > opts_.idle_reselect_period_s) {
                    last_idle_select = mono_s();
                    EventLogEntry log;
                    log.event = "idle_reselect";
                    log.round_before = current_round_;
                    invoke_select_and_dispatch(log);
                    log.round_after = current_round_;
                    if (opts_.keep_event_log && log.dispatched > 0) {
                        std::lock_guard lk(log_mu_);
                        event_log_.push_back(log);
                    }
                }
            }
        }
    } catch (const std::exception& e) {
        result_.status = "failed";
        result_.terminated_by = "error";
        result_.error = e.what();
        log_kv("leader", "session_error", {{"error", e.what()}});
    }

    result_.rounds_completed = current_round_;
    result_.final_accuracy = last_accuracy_;
    result_.final_loss = last_loss_;
    result_.total_s = mono_s() - session_start_mono_;
    result_.overhead_total_s = total_overhead_;
    result_.checkpoints_written = checkpoints_written_;
    session.set_status(result_.status == "completed" ? "completed" : "failed");

    if (!opts_.result_path.empty()) {
        if (opts_.result_path.has_parent_path())
            std::filesystem::create_directories(opts_.result_path.parent_path());
        std::ofstream out(opts_.result_path, std::ios::trunc);
        out << result_.to_json().dump(2) << "\n";
    }
    log_kv("leader", "session_end",
           {{"session", cfg_.session_id},
            {"status", result_.status},
            {"terminated_by", result_.terminated_by},
            {"rounds", std::to_string(result_.rounds_completed)},
            {"accuracy", fmt_double(result_.final_accuracy)}});
    return result_;
}

bool SessionManager::termination_reached(std::string* reason) const {
    if (current_round_ >= cfg_.num_training_rounds) {
        *reason = "rounds";
        return true;
    }
    if (have_accuracy_ && cfg_.termination.accuracy_threshold &&
        last_accuracy_ >= *cfg_.termination.accuracy_threshold) {
        *reason = "accuracy";
        return true;
    }
    if (cfg_.termination.time_budget_s &&
        mono_s() - session_start_mono_ >= *cfg_.termination.time_budget_s) {
        *reason = "time_budget";
        return true;
    }
    return false;
}

void SessionManager::process_event(const LifecycleEvent& ev) {
    EventLogEntry log;
    log.client = ev.client_id;
    log.round_before = current_round_;
    switch (ev.kind) {
        case LifecycleEvent::Kind::SessionStart:
            log.event = "session_start";
            handle_session_start(log);
            break;
        case LifecycleEvent::Kind::ClientResponse:
            handle_response(ev, log);
            break;
        case LifecycleEvent::Kind::ClientFailure:
            handle_failure(ev, log);
            break;
        case LifecycleEvent::Kind::PackageDelivered:
            log.event = "package";
            handle_package_delivered(ev, log);
            break;
        case LifecycleEvent::Kind::BenchmarkDone:
            log.event = "benchmark";
            handle_benchmark_done(ev, log);
            break;
        case LifecycleEvent::Kind::Stop:
            break;
    }
    log.round_after = current_round_;
    if (opts_.keep_event_log) {
        std::lock_guard lk(log_mu_);
        event_log_.push_back(log);
    }
}

void SessionManager::handle_session_start(EventLogEntry& log) {
    if (!cfg_.skip_benchmark) prime_benchmarks(log);
    if (priming_pending_.empty()) {
        priming_done_ = true;
        invoke_select_and_dispatch(log);
    }
}

void SessionManager::prime_benchmarks(EventLogEntry& log) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    for (const auto& cid : discovery_.active_clients()) {
        if (info.benchmark(cid)) continue;
        auto ep = info.rpc_endpoint(cid);
        if (!ep) continue;
        PendingRequest pr;
        pr.round = kPrimingRound;
        auto cached = info.cached_models(cid);
        pr.needs_package = std::find(cached.begin(), cached.end(), package_sha_) == cached.end();
        pr.needs_benchmark = true;
        pr.dispatched_mono = mono_s();
        pending_[cid] = pr;
        priming_pending_.insert(cid);
        advance_dispatch(cid);
        ++log.dispatched;
    }
    if (!priming_pending_.empty())
        log_kv("leader", "benchmark_priming", {{"clients", std::to_string(priming_pending_.size())}});
}

void SessionManager::handle_response(const LifecycleEvent& ev, EventLogEntry& log) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    ClientTrainingView train{StateHandle::rw(states_.client_training)};
    const std::string& cid = ev.client_id;

    double dispatched_mono = 0;
    if (auto it = pending_.find(cid); it != pending_.end()) {
        dispatched_mono = it->second.dispatched_mono;
        pending_.erase(it);
    }
    info.set_training(cid, false);

    bool stale = !selector_->accepts_stale_responses() && ev.round != current_round_ + 1;

    if (ev.response.status != "ok") {
        // client answered but could not train (Busy, DatasetMissing, ...)
        log.event = stale ? "stale_failure" : "failure";
        info.append_failed_round(cid, ev.round);
        if (ev.response.error.rfind("PackageMissing", 0) == 0)
            info.remove_cached_model(cid, package_sha_);  // cache was wiped; redeliver next time
        log_kv("leader", "client_error_response",
               {{"client", cid}, {"round", std::to_string(ev.round)}, {"error", ev.response.error}});
        round_failures_[ev.round] += 1;
        if (!stale) {
            round_failed_clients_.push_back(cid);
            if (!ev.validate_only) {
                AggregateInput in;
                in.client_id = cid;
                in.failure = true;
                in.update_round = ev.round;
                invoke_aggregate(in, log);
                maybe_abort_round(log);
            }
            invoke_select_and_dispatch(log);
        }
        return;
    }

    if (stale) {
        log.event = "stale_response";
        log_kv("leader", "stale_response_dropped",
               {{"client", cid}, {"round", std::to_string(ev.round)}});
        return;
    }

    if (ev.validate_only) {
        log.event = "validate_response";
        ValueMap metrics = ev.response.validation_metrics;
        metrics["round"] = Value(current_round_);
        train.set_validation_metrics(cid, std::move(metrics));
        invoke_select_and_dispatch(log);
        return;
    }

    log.event = "response";
    train.set_missed_deadline(cid, false);
    if (ev.response.local_model) train.set_model_weights(cid, *ev.response.local_model);
    train.set_training_metrics(cid, ev.response.training_metrics);

    AggregateInput in;
    in.client_id = cid;
    in.local_model = ev.response.local_model;
    in.failure = !ev.response.local_model.has_value();
    in.update_round = ev.round;
    in.data_count = 0;
    if (auto it = ev.response.training_metrics.find("num_samples");
        it != ev.response.training_metrics.end())
        in.data_count = it->second.as_int();
    if (in.data_count <= 0) in.data_count = info.sample_count(cid);
    if (in.data_count <= 0) in.data_count = 1;

    auto new_global = invoke_aggregate(in, log);
    if (new_global) {
        double t_model = mono_s();
        train_wait_last_ = 0;
        if (auto it = round_first_dispatch_.find(ev.round); it != round_first_dispatch_.end())
            train_wait_last_ = t_model - it->second;
        else if (dispatched_mono > 0)
            train_wait_last_ = t_model - dispatched_mono;
        adopt_new_global(*new_global, ev, log);
    }
    invoke_select_and_dispatch(log);
}

void SessionManager::handle_failure(const LifecycleEvent& ev, EventLogEntry& log) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    ClientTrainingView train{StateHandle::rw(states_.client_training)};
    const std::string& cid = ev.client_id;

    pending_.erase(cid);

    if (ev.round == kPrimingRound) {
        log.event = "failure";
        priming_pending_.erase(cid);
        log_kv("leader", "benchmark_priming_failed", {{"client", cid}, {"detail", ev.detail}});
        if (priming_pending_.empty() && !priming_done_) {
            priming_done_ = true;
            invoke_select_and_dispatch(log);
        }
        return;
    }

    info.set_training(cid, false);
    bool stale = !selector_->accepts_stale_responses() && ev.round != current_round_ + 1;
    log.event = stale ? "stale_failure" : "failure";

    // the failed round is captured; the client stays in the pool
    info.append_failed_round(cid, ev.round);
    if (ev.reason == FailureReason::DeadlineExceeded) train.set_missed_deadline(cid, true);
    round_failures_[ev.round] += 1;
    log_kv("leader", "client_failure",
           {{"client", cid},
            {"round", std::to_string(ev.round)},
            {"reason", to_string(ev.reason)},
            {"detail", ev.detail}});

    if (stale) return;  // aggregation for that round already happened; recorded only

    round_failed_clients_.push_back(cid);
    if (!ev.validate_only) {
        AggregateInput in;
        in.client_id = cid;
        in.failure = true;
        in.update_round = ev.round;
        invoke_aggregate(in, log);
        maybe_abort_round(log);
    }
    invoke_select_and_dispatch(log);
}

void SessionManager::handle_package_delivered(const LifecycleEvent& ev, EventLogEntry& log) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    auto it = pending_.find(ev.client_id);
    if (!ev.delivered_ok) {
        LifecycleEvent fail;
        fail.kind = LifecycleEvent::Kind::ClientFailure;
        fail.client_id = ev.client_id;
        fail.reason = FailureReason::ConnectFailed;
        fail.detail = "package delivery failed: " + ev.detail;
        fail.round = it != pending_.end() ? it->second.round : ev.round;
        fail.validate_only = it != pending_.end() && it->second.validate_only;
        handle_failure(fail, log);
        return;
    }
    info.add_cached_model(ev.client_id, package_sha_);
    advance_dispatch(ev.client_id);
}

void SessionManager::handle_benchmark_done(const LifecycleEvent& ev, EventLogEntry& log) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    auto it = pending_.find(ev.client_id);
    if (!ev.delivered_ok) {
        LifecycleEvent fail;
        fail.kind = LifecycleEvent::Kind::ClientFailure;
        fail.client_id = ev.client_id;
        fail.reason = FailureReason::ConnectionLost;
        fail.detail = "benchmark failed: " + ev.detail;
        fail.round = it != pending_.end() ? it->second.round : ev.round;
        handle_failure(fail, log);
        return;
    }
    info.set_benchmark(ev.client_id, ev.benchmark_s);
    log_kv("leader", "benchmark_recorded",
           {{"client", ev.client_id}, {"seconds", fmt_double(ev.benchmark_s)}});
    if (it == pending_.end()) return;
    if (it->second.round == kPrimingRound) {
        pending_.erase(it);
        priming_pending_.erase(ev.client_id);
        if (priming_pending_.empty() && !priming_done_) {
            priming_done_ = true;
            invoke_select_and_dispatch(log);
        }
        return;
    }
    advance_dispatch(ev.client_id);
}

std::optional<ModelWeights> SessionManager::invoke_aggregate(const AggregateInput& in,
                                                             EventLogEntry& log) {
    auto ctx = make_agg_context();
    uint64_t before_cs = 0, before_ct = 0, before_ci = 0, before_ts = 0;
    if (opts_.verify_state_isolation) {
        before_cs = states_.client_selection->content_hash();
        before_ct = states_.client_training->content_hash();
        before_ci = states_.client_info->content_hash();
        before_ts = states_.train_session->content_hash();
    }
    double t0 = mono_s();
    auto result = aggregator_->aggregate(ctx, in);
    agg_time_accum_ += mono_s() - t0;
    if (opts_.verify_state_isolation) {
        if (before_cs != states_.client_selection->content_hash() ||
            before_ct != states_.client_training->content_hash() ||
            before_ci != states_.client_info->content_hash() ||
            before_ts != states_.train_session->content_hash())
            throw Error("aggregator mutated a read-only state");
    }
    log.aggregate_called = true;
    log.aggregate_produced_model = result.has_value();
    return result;
}

void SessionManager::adopt_new_global(const ModelWeights& w, const LifecycleEvent& ev,
                                      EventLogEntry& log) {
    TrainSessionView session(StateHandle::rw(states_.train_session), cfg_.session_id);
    current_round_ += 1;
    session.set_global_model(w);
    session.set_last_round_number(current_round_);

    double val_seconds = 0;
    if (validation_data_ && cfg_.validation_round_interval > 0 &&
        current_round_ % cfg_.validation_round_interval == 0) {
        double t0 = mono_s();
        ValueMap m = evaluate(w, *validation_data_, cfg_.loss_function);
        val_seconds = mono_s() - t0;
        last_accuracy_ = m["accuracy"].as_float();
        last_loss_ = m["loss"].as_float();
        have_accuracy_ = true;
    }

    RoundRecord rec;
    double now = mono_s();
    rec.round = current_round_;
    rec.wallclock_s = now - session_start_mono_;
    rec.round_s = now - round_start_mono_;
    rec.global_accuracy = last_accuracy_;
    rec.global_loss = last_loss_;
    if (auto it = round_dispatched_.find(ev.round); it != round_dispatched_.end())
        rec.selected_clients.assign(it->second.begin(), it->second.end());
    rec.failed_clients = round_failed_clients_;
    rec.agg_time_s = agg_time_accum_;
    rec.val_time_s = val_seconds;
    rec.train_wait_s = train_wait_last_;
    auto fd = round_first_dispatch_.find(ev.round);
    auto ld = round_last_dispatch_.find(ev.round);
    if (fd != round_first_dispatch_.end() && ld != round_last_dispatch_.end())
        rec.dispatch_spread_s = ld->second - fd->second;
    checkpoint_if_due(rec);
    rec.overhead_s = std::max(0.0, rec.round_s - rec.train_wait_s - rec.val_time_s);
    total_overhead_ += rec.overhead_s;
    metrics_.append(rec);

    log_kv("leader", "round_complete",
           {{"round", std::to_string(rec.round)},
            {"accuracy", fmt_double(rec.global_accuracy)},
            {"loss", fmt_double(rec.global_loss)},
            {"round_s", fmt_double(rec.round_s)},
            {"overhead_s", fmt_double(rec.overhead_s)}});

    round_start_mono_ = now;
    round_failed_clients_.clear();
    agg_time_accum_ = 0;
    train_wait_last_ = 0;
}

void SessionManager::checkpoint_if_due(RoundRecord& rec) {
    if (opts_.checkpoint_dir.empty()) return;
    if (cfg_.checkpoint_interval < 1 || current_round_ % cfg_.checkpoint_interval != 0) return;
    double t0 = mono_s();
    auto path = opts_.checkpoint_dir /
                (cfg_.session_id + "_round" + std::to_string(current_round_) + ".ckpt");
    try {
        write_checkpoint(states_, path, cfg_.session_id, current_round_);
        ++checkpoints_written_;
        rec.checkpoint_s = mono_s() - t0;
        log_kv("leader", "checkpoint_written",
               {{"round", std::to_string(current_round_)}, {"path", path.string()}});
    } catch (const IoFailure& e) {
        // the session continues; the failure is only logged
        log_kv("leader", "checkpoint_failed", {{"error", e.what()}});
    }
}

void SessionManager::maybe_abort_round(EventLogEntry& log) {
    if (selector_->accepts_stale_responses()) return;  // async strategies self-heal
    int64_t r = current_round_ + 1;
    auto it = round_dispatched_.find(r);
    if (it == round_dispatched_.end() || it->second.empty()) return;
    size_t n = it->second.size();
    size_t failures = round_failures_[r];
    int64_t m_cfg = 0;
    if (auto mit = cfg_.aggregator_args.find(strategy_key::kMinClients);
        mit != cfg_.aggregator_args.end())
        m_cfg = mit->second.as_int();
    size_t m = m_cfg > 0 ? std::min<size_t>(n, static_cast<size_t>(m_cfg)) : n;
    if (failures >= n || n - failures < m) {
        log_kv("leader", "round_aborted",
               {{"round", std::to_string(r)},
                {"dispatched", std::to_string(n)},
                {"failures", std::to_string(failures)},
                {"min_clients", std::to_string(m)}});
        auto cs_ctx = make_cs_context();
        selector_->on_round_abort(cs_ctx);
        auto agg_ctx = make_agg_context();
        aggregator_->on_round_abort(agg_ctx);
        round_dispatched_.erase(r);
        round_failures_.erase(r);
        round_first_dispatch_.erase(r);
        round_last_dispatch_.erase(r);
        log.round_aborted = true;
    }
}

void SessionManager::invoke_select_and_dispatch(EventLogEntry& log) {
    if (!priming_done_) return;
    auto ctx = make_cs_context();
    uint64_t before_agg = 0, before_ct = 0, before_ci = 0, before_ts = 0;
    if (opts_.verify_state_isolation) {
        before_agg = states_.aggregation->content_hash();
        before_ct = states_.client_training->content_hash();
        before_ci = states_.client_info->content_hash();
        before_ts = states_.train_session->content_hash();
    }
    SelectionResult sel = selector_->select(ctx);
    if (opts_.verify_state_isolation) {
        if (before_agg != states_.aggregation->content_hash() ||
            before_ct != states_.client_training->content_hash() ||
            before_ci != states_.client_info->content_hash() ||
            before_ts != states_.train_session->content_hash())
            throw Error("selector mutated a read-only state");
    }
    log.select_train = sel.train_clients ? static_cast<int>(sel.train_clients->size()) : -1;
    log.select_validate = sel.validate_clients ? static_cast<int>(sel.validate_clients->size()) : -1;
    if (sel.validate_clients)
        for (const auto& cid : *sel.validate_clients) {
            dispatch_client(cid, true);
            ++log.dispatched;
        }
    if (sel.train_clients)
        for (const auto& cid : *sel.train_clients) {
            dispatch_client(cid, false);
            ++log.dispatched;
        }
}

void SessionManager::dispatch_client(const std::string& cid, bool validate_only) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    ClientTrainingView train{StateHandle::rw(states_.client_training)};
    int64_t r = current_round_ + 1;

    auto ep = info.rpc_endpoint(cid);
    if (pending_.count(cid) > 0) {
        log_kv("leader", "dispatch_skipped_client_busy", {{"client", cid}});
        return;
    }
    if (!ep) {
        LifecycleEvent fail;
        fail.kind = LifecycleEvent::Kind::ClientFailure;
        fail.client_id = cid;
        fail.reason = FailureReason::ConnectFailed;
        fail.detail = "no rpc endpoint known";
        fail.round = r;
        fail.validate_only = validate_only;
        post(std::move(fail));
        return;
    }

    info.set_training(cid, true);
    train.set_dispatch(cid, r, cfg_.model_id, cfg_.dataset);

    PendingRequest pr;
    pr.round = r;
    pr.validate_only = validate_only;
    pr.dispatched_mono = mono_s();
    auto cached = info.cached_models(cid);
    pr.needs_package = std::find(cached.begin(), cached.end(), package_sha_) == cached.end();
    pr.needs_benchmark =
        !cfg_.skip_benchmark && !validate_only && !info.benchmark(cid).has_value();
    pending_[cid] = pr;
    advance_dispatch(cid);
}

void SessionManager::advance_dispatch(const std::string& cid) {
    auto it = pending_.find(cid);
    if (it == pending_.end()) return;
    PendingRequest& pr = it->second;
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    auto ep_str = info.rpc_endpoint(cid);
    if (!ep_str) return;
    Endpoint ep = Endpoint::parse(*ep_str);

    if (pr.needs_package) {
        pr.needs_package = false;
        int64_t round = pr.round;
        bool validate_only = pr.validate_only;
        transport_.deliver_package(ep, package_, [this, cid, round, validate_only](
                                                     bool ok, bool cached, std::string err) {
            (void)cached;
            LifecycleEvent ev;
            ev.kind = LifecycleEvent::Kind::PackageDelivered;
            ev.client_id = cid;
            ev.delivered_ok = ok;
            ev.detail = std::move(err);
            ev.round = round;
            ev.validate_only = validate_only;
            post(std::move(ev));
        });
        return;
    }
    if (pr.needs_benchmark) {
        pr.needs_benchmark = false;
        int64_t round = pr.round;
        transport_.send_benchmark_request(
            ep, package_sha_, cfg_.benchmark_minibatches, opts_.fallback_deadline_s * 2,
            [this, cid, round](bool ok, double seconds, std::string err) {
                LifecycleEvent ev;
                ev.kind = LifecycleEvent::Kind::BenchmarkDone;
                ev.client_id = cid;
                ev.delivered_ok = ok;
                ev.benchmark_s = seconds;
                ev.detail = std::move(err);
                ev.round = round;
                post(std::move(ev));
            });
        return;
    }
    send_train(cid, pr);
}

double SessionManager::compute_deadline() const {
    if (cfg_.train_timeout_duration_s > 0) return cfg_.train_timeout_duration_s;
    ClientInfoView info{StateHandle::ro(states_.client_info)};
    double slowest = 0;
    for (const auto& cid : discovery_.active_clients()) {
        auto bench = info.benchmark(cid);
        if (!bench) continue;
        double per_batch = *bench / std::max(1, cfg_.benchmark_minibatches);
        double n = static_cast<double>(std::max<int64_t>(info.sample_count(cid), 1));
        double batches = std::ceil(n / static_cast<double>(cfg_.batch_size)) *
                         static_cast<double>(std::max<int64_t>(cfg_.epochs, 1));
        slowest = std::max(slowest, per_batch * batches);
    }
    if (slowest <= 0) return opts_.fallback_deadline_s;
    return std::max(1.0, cfg_.deadline_factor * slowest);
}

void SessionManager::send_train(const std::string& cid, PendingRequest& pr) {
    ClientInfoView info{StateHandle::rw(states_.client_info)};
    TrainSessionView session(StateHandle::rw(states_.train_session), cfg_.session_id);
    auto global = session.global_model();
    if (!global) return;
    auto ep_str = info.rpc_endpoint(cid);
    if (!ep_str) return;

    TrainRequest req;
    req.session_id = cfg_.session_id;
    req.round_number = pr.round;
    req.package_sha256 = package_sha_;
    req.global_model = *global;
    req.hyperparameters.epochs = cfg_.epochs;
    req.hyperparameters.batch_size = cfg_.batch_size;
    req.hyperparameters.learning_rate = cfg_.learning_rate;
    req.hyperparameters.optimizer = cfg_.optimizer;
    req.hyperparameters.loss_function = cfg_.loss_function;
    req.hyperparameters.seed = mix64(cfg_.trainer_seed, mix64(static_cast<uint64_t>(pr.round), fnv1a(cid)));
    req.deadline_s = compute_deadline();
    req.validate_only = pr.validate_only;

    double now = mono_s();
    pr.dispatched_mono = now;
    if (round_first_dispatch_.find(pr.round) == round_first_dispatch_.end())
        round_first_dispatch_[pr.round] = now;
    round_last_dispatch_[pr.round] = now;
    round_dispatched_[pr.round].insert(cid);

    int64_t round = pr.round;
    bool validate_only = pr.validate_only;
    transport_.send_train_request(Endpoint::parse(*ep_str), req,
                                  [this, cid, round, validate_only](CompletionEvent ce) {
                                      LifecycleEvent ev;
                                      ev.client_id = cid;
                                      ev.round = round;
                                      ev.validate_only = validate_only;
                                      if (ce.ok) {
                                          ev.kind = LifecycleEvent::Kind::ClientResponse;
                                          ev.response = std::move(ce.response);
                                      } else {
                                          ev.kind = LifecycleEvent::Kind::ClientFailure;
                                          ev.reason = ce.reason;
                                          ev.detail = std::move(ce.detail);
                                      }
                                      post(std::move(ev));
                                  });
}

}  // namespace skiff
