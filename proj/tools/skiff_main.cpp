// skiff: federated-learning orchestration at desk scale.
//
// Subcommands compose into a one-machine pseudo-distributed run or an N-host
// run with only endpoint changes:
//   skiff broker    --listen 127.0.0.1:7700
//   skiff client    --config client.yaml
//   skiff leader    --session session.yaml --broker 127.0.0.1:7700 ...
//   skiff run       --session session.yaml --clients 8 ...
//   skiff partition --scheme label_skew --delta 3 --clients 46 --seed 7 ...
//   skiff faultlab  --session session.yaml --faults faults.yaml ...
//   skiff metrics   --in metrics.jsonl --csv out.csv
//
// Exit codes: 0 success, 2 config error, 3 runtime failure.

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skiff/client_agent.hpp"
#include "skiff/deployment.hpp"
#include "skiff/discovery.hpp"
#include "skiff/errors.hpp"
#include "skiff/faultlab.hpp"
#include "skiff/log.hpp"
#include "skiff/metrics.hpp"
#include "skiff/process.hpp"
#include "skiff/session.hpp"
#include "skiff/state.hpp"

using namespace skiff;

namespace {

std::atomic<bool> g_stop{false};

void install_signal_handlers() {
    struct sigaction sa{};
    sa.sa_handler = [](int) { g_stop = true; };
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
}

Endpoint env_or(const std::string& value, const char* env_name, const Endpoint& fallback) {
    if (!value.empty()) return Endpoint::parse(value);
    if (const char* e = std::getenv(env_name)) return Endpoint::parse(e);
    return fallback;
}

int run_broker(const std::string& listen) {
    install_signal_handlers();
    Broker broker;
    Endpoint ep = broker.start(Endpoint::parse(listen));
    std::cout << "broker listening on " << ep.str() << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    broker.stop();
    return 0;
}

int run_client(const std::string& config_path) {
    install_signal_handlers();
    ClientConfig cfg = ClientConfig::from_yaml_file(config_path);
    ClientAgent agent(cfg);
    agent.start();
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    agent.stop();
    return 0;
}

struct LeaderArgs {
    std::string session_path;
    std::string broker = "";
    std::string state_dir = "state";
    std::string checkpoint_dir = "";
    std::string metrics_path = "";
    std::string result_path = "";
    std::string data_dir = "";
    std::string log_file = "";
    bool durable = false;
    bool resume = false;
    size_t min_clients = 1;
    double wait_timeout_s = 30;
};

int run_leader(const LeaderArgs& args) {
    install_signal_handlers();
    if (!args.log_file.empty()) set_log_file(args.log_file);
    SessionConfig cfg = load_session_config(args.session_path);
    if (!args.data_dir.empty()) cfg.data_dir = args.data_dir;

    Endpoint broker = env_or(args.broker, "SKIFF_BROKER", Endpoint{"127.0.0.1", 7700});

    SessionStates states;
    if (args.resume) {
        double t0 = mono_s();
        if (args.durable && durable_states_exist(args.state_dir, cfg.session_id)) {
            states = open_durable_states(args.state_dir, cfg.session_id);
            log_kv("leader", "state_restore",
                   {{"source", "durable"}, {"restore_ms", fmt_double((mono_s() - t0) * 1000)}});
        } else if (auto ckpt = args.checkpoint_dir.empty()
                                   ? std::nullopt
                                   : find_latest_checkpoint(args.checkpoint_dir, cfg.session_id)) {
            CheckpointInfo info;
            states = restore_checkpoint(*ckpt, cfg.session_id, &info);
            log_kv("leader", "state_restore",
                   {{"source", ckpt->string()},
                    {"round", std::to_string(info.round_number)},
                    {"restore_ms", fmt_double((mono_s() - t0) * 1000)}});
            if (args.durable) {
                // continue write-through from the restored snapshot
                SessionStates durable = open_durable_states(args.state_dir, cfg.session_id);
                auto src = states.all();
                auto dst = durable.all();
                for (size_t i = 0; i < src.size(); ++i) {
                    dst[i]->clear();
                    merge_state(*dst[i], *src[i]);
                }
                states = durable;
            }
        } else {
            throw ResumeFailed("no durable state or checkpoint found for session '" +
                               cfg.session_id + "'");
        }
    } else if (args.durable) {
        states = open_durable_states(args.state_dir, cfg.session_id);
        for (auto& obj : states.all()) obj->clear();  // fresh session, fresh store
    } else {
        states = make_memory_states();
    }

    BrokerClient bus(broker);
    DiscoveryService discovery(StateHandle::rw(states.client_info), cfg.heartbeat_miss_threshold);
    discovery.attach(bus);
    bus.start();
    discovery.start_sweeper();

    TcpTransport transport;
    SessionOptions opts;
    opts.checkpoint_dir = args.checkpoint_dir;
    opts.metrics_path = args.metrics_path;
    opts.result_path = args.result_path;
    opts.min_clients = args.min_clients;
    opts.client_wait_timeout_s = args.wait_timeout_s;

    SessionManager manager(cfg, states, transport, discovery, opts);
    std::thread stopper([&manager] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        manager.request_stop();
    });
    SessionResult result = args.resume ? manager.resume() : manager.run();
    g_stop = true;
    stopper.join();
    transport.shutdown();
    discovery.stop();
    bus.stop();

    std::cout << result.to_json().dump(2) << std::endl;
    return result.status == "completed" ? 0 : 3;
}

struct RunArgs {
    std::string session_path;
    std::string out_dir = "run_out";
    int clients = 4;
    size_t samples = 2000;
    size_t dim = 16;
    int classes = 10;
    double separation = 6.0;
    std::string scheme = "iid";
    int delta = 3;
    double alpha = 0.5;
    uint64_t seed = 1;
    bool durable = false;
};

int run_local(const RunArgs& args) {
    install_signal_handlers();
    SessionConfig cfg = load_session_config(args.session_path);

    std::filesystem::path out(args.out_dir);
    std::filesystem::create_directories(out);
    set_log_file((out / "leader.log").string());

    Broker broker;
    Endpoint broker_ep = broker.start(Endpoint{"127.0.0.1", 0});

    DeploymentSpec spec;
    spec.clients = args.clients;
    spec.samples = args.samples;
    spec.dim = args.dim;
    spec.classes = args.classes;
    spec.separation = args.separation;
    spec.scheme = args.scheme;
    spec.delta = args.delta;
    spec.alpha = args.alpha;
    spec.seed = args.seed;
    spec.dataset_name = cfg.dataset;
    LocalDeployment dep = prepare_deployment(out / "deployment", spec, broker_ep);

    auto procs = spawn_client_processes(dep, current_executable());

    cfg.data_dir = dep.leader_data_dir.string();
    if (cfg.validation_dataset.empty()) cfg.validation_dataset = cfg.dataset;

    SessionStates states = args.durable ? open_durable_states(out / "state", cfg.session_id)
                                        : make_memory_states();
    if (args.durable)
        for (auto& obj : states.all()) obj->clear();

    BrokerClient bus(broker_ep);
    DiscoveryService discovery(StateHandle::rw(states.client_info), cfg.heartbeat_miss_threshold);
    discovery.attach(bus);
    bus.start();
    discovery.start_sweeper();
    discovery.wait_for_clients(static_cast<size_t>(args.clients), 30);

    TcpTransport transport;
    SessionOptions opts;
    opts.checkpoint_dir = out / "checkpoints";
    opts.metrics_path = out / "metrics.jsonl";
    opts.result_path = out / "result.json";
    opts.min_clients = static_cast<size_t>(args.clients);

    SessionManager manager(cfg, states, transport, discovery, opts);
    std::thread stopper([&manager] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        manager.request_stop();
    });
    SessionResult result = manager.run();
    g_stop = true;
    stopper.join();

    transport.shutdown();
    discovery.stop();
    bus.stop();
    for (auto& p : procs) p.kill();
    broker.stop();

    auto records = read_metrics_jsonl(out / "metrics.jsonl");
    export_metrics_csv(records, out / "metrics.csv");

    std::cout << result.to_json().dump(2) << std::endl;
    return result.status == "completed" ? 0 : 3;
}

struct PartitionArgs {
    std::string scheme = "iid";
    int clients = 4;
    int delta = 3;
    double alpha = 0.5;
    uint64_t seed = 1;
    std::string data_dir = "";  // existing dataset dir (train split); else synthetic
    std::string dataset_name = "blobs";
    size_t samples = 2000;
    size_t dim = 16;
    int classes = 10;
    std::string out_dir = "partition_out";
};

int run_partition(const PartitionArgs& args) {
    Dataset data;
    if (!args.data_dir.empty()) {
        data = load_dataset(args.data_dir, "train");
    } else {
        data = make_blobs(args.samples, args.dim, args.classes, 6.0, args.seed);
    }
    PartitionPlan plan;
    if (args.scheme == "iid")
        plan = partition_iid(data, args.clients, args.seed);
    else if (args.scheme == "label_skew")
        plan = partition_label_skew(data, args.clients, args.delta, args.seed);
    else if (args.scheme == "dirichlet")
        plan = partition_dirichlet(data, args.clients, args.alpha, args.seed);
    else
        throw SchemaError("unknown scheme '" + args.scheme + "'", "scheme");

    std::filesystem::path out(args.out_dir);
    for (int c = 0; c < args.clients; ++c) {
        Dataset shard = take_subset(data, plan.assignment[c]);
        save_dataset(shard, out / ("client_" + std::to_string(c)) / args.dataset_name, "train");
    }
    SkewMetrics metrics = skew_metrics(plan, data);
    nlohmann::json report;
    report["scheme"] = args.scheme;
    report["clients"] = args.clients;
    report["seed"] = args.seed;
    if (args.scheme == "label_skew") report["delta"] = args.delta;
    if (args.scheme == "dirichlet") report["alpha"] = args.alpha;
    report["cv"] = metrics.cv;
    report["js"] = metrics.js;
    nlohmann::json sizes = nlohmann::json::array();
    for (const auto& a : plan.assignment) sizes.push_back(a.size());
    report["client_sizes"] = sizes;
    {
        std::ofstream f(out / "skew_report.json", std::ios::trunc);
        f << report.dump(2) << "\n";
    }
    std::cout << report.dump(2) << std::endl;
    return 0;
}

struct FaultArgs {
    std::string session_path;
    std::string faults_path;
    std::string out_dir = "faultlab_out";
    bool baseline = false;
    int clients = 8;
    size_t samples = 4000;
    size_t dim = 16;
    int classes = 10;
    std::string scheme = "iid";
    uint64_t seed = 1;
};

// One experiment run: broker + client processes + leader. With leader kill
// rounds the leader runs as a child process (killable); otherwise in-process.
int run_faultlab(const FaultArgs& args) {
    install_signal_handlers();
    SessionConfig session_cfg = load_session_config(args.session_path);
    FaultPlan plan = FaultPlan::from_yaml_file(args.faults_path);
    bool inject = !args.baseline;

    std::filesystem::path out(args.out_dir);
    std::filesystem::create_directories(out);
    set_log_file((out / "faultlab.log").string());

    Broker broker;
    Endpoint broker_ep = broker.start(Endpoint{"127.0.0.1", 0});

    DeploymentSpec spec;
    spec.clients = args.clients;
    spec.samples = args.samples;
    spec.dim = args.dim;
    spec.classes = args.classes;
    spec.scheme = args.scheme;
    spec.seed = args.seed;
    spec.dataset_name = session_cfg.dataset;
    LocalDeployment dep = prepare_deployment(out / "deployment", spec, broker_ep);
    auto procs = spawn_client_processes(dep, current_executable());

    std::filesystem::path metrics_path = out / (inject ? "metrics_fault.jsonl" : "metrics_baseline.jsonl");
    std::filesystem::path result_path = out / (inject ? "result_fault.json" : "result_baseline.json");

    // precomputed, seed-replayable kill schedule
    std::vector<KillEvent> schedule;
    if (inject && plan.mttf_s > 0) {
        double horizon = session_cfg.termination.time_budget_s.value_or(3600.0);
        schedule = schedule_client_kills(dep.client_ids, plan, horizon);
        nlohmann::json jlog = nlohmann::json::array();
        for (const auto& k : schedule)
            jlog.push_back({{"client", k.client_id}, {"t_s", k.t_s}, {"check", k.check}});
        std::ofstream f(out / "kill_schedule.json", std::ios::trunc);
        f << jlog.dump(2) << "\n";
    }

    bool leader_as_process = inject && !plan.leader_kill_rounds.empty();
    int exit_code = 0;

    if (!leader_as_process) {
        SessionStates states = make_memory_states();
        BrokerClient bus(broker_ep);
        DiscoveryService discovery(StateHandle::rw(states.client_info), session_cfg.heartbeat_miss_threshold);
        discovery.attach(bus);
        bus.start();
        discovery.start_sweeper();
        discovery.wait_for_clients(static_cast<size_t>(args.clients), 30);

        session_cfg.data_dir = dep.leader_data_dir.string();
        if (session_cfg.validation_dataset.empty()) session_cfg.validation_dataset = session_cfg.dataset;

        TcpTransport transport;
        SessionOptions opts;
        opts.metrics_path = metrics_path;
        opts.result_path = result_path;
        opts.checkpoint_dir = out / "checkpoints";
        opts.min_clients = static_cast<size_t>(args.clients);
        SessionManager manager(session_cfg, states, transport, discovery, opts);

        std::atomic<bool> done{false};
        std::thread killer;
        std::ofstream kill_log(out / "kills.jsonl", std::ios::trunc);
        if (!schedule.empty()) {
            killer = std::thread([&] {
                double t0 = mono_s();
                size_t next = 0;
                std::map<std::string, size_t> index;
                for (size_t i = 0; i < dep.client_ids.size(); ++i) index[dep.client_ids[i]] = i;
                while (!done && next < schedule.size()) {
                    double elapsed = mono_s() - t0;
                    if (elapsed >= schedule[next].t_s) {
                        auto& ev = schedule[next];
                        procs[index[ev.client_id]].kill();
                        kill_log << nlohmann::json({{"client", ev.client_id},
                                                    {"t_s", elapsed},
                                                    {"scheduled_t_s", ev.t_s}})
                                        .dump()
                                 << "\n";
                        kill_log.flush();
                        log_kv("faultlab", "client_killed",
                               {{"client", ev.client_id}, {"t_s", fmt_double(elapsed)}});
                        ++next;
                    } else {
                        std::this_thread::sleep_for(std::chrono::milliseconds(50));
                    }
                }
            });
        }
        SessionResult result = manager.run();
        done = true;
        if (killer.joinable()) killer.join();
        transport.shutdown();
        discovery.stop();
        bus.stop();
        std::cout << result.to_json().dump(2) << std::endl;
        exit_code = result.status == "completed" ? 0 : 3;
    } else {
        // leader-kill experiment: the leader is a killable child process that
        // resumes from the durable store; kill -> resume is measured from the
        // replacement leader's own restore log lines
        std::filesystem::path state_dir = out / "state";
        std::filesystem::path leader_log = out / "leader.log";
        session_cfg.data_dir = dep.leader_data_dir.string();
        std::vector<std::string> base_argv = {current_executable().string(),
                                              "leader",
                                              "--session", args.session_path,
                                              "--broker", broker_ep.str(),
                                              "--state-dir", state_dir.string(),
                                              "--durable",
                                              "--metrics", metrics_path.string(),
                                              "--result", result_path.string(),
                                              "--data-dir", dep.leader_data_dir.string(),
                                              "--min-clients", std::to_string(args.clients),
                                              "--log-file", leader_log.string()};
        FailoverReport report;
        size_t kill_idx = 0;
        bool resume = false;
        bool session_done = false;
        std::optional<double> pending_kill_t;
        std::optional<int64_t> pending_kill_round;
        while (!session_done && !g_stop) {
            auto argv = base_argv;
            if (resume) argv.push_back("--resume");
            size_t resumes_before = parse_kv_log(leader_log.string(), "resume_complete").size();
            ProcessHandle leader = ProcessHandle::spawn(argv, out / "leader_stdout.log");

            if (pending_kill_t) {
                // wait for the replacement to report its restored round
                while (leader.running() && !g_stop) {
                    auto resumes = parse_kv_log(leader_log.string(), "resume_complete");
                    if (resumes.size() > resumes_before) {
                        report.detect_to_resume_s.push_back(mono_s() - *pending_kill_t);
                        int64_t restored = std::stoll(resumes.back().at("restored_round"));
                        report.rounds_lost.push_back(
                            std::max<int64_t>(0, *pending_kill_round - restored));
                        break;
                    }
                    std::this_thread::sleep_for(std::chrono::milliseconds(10));
                }
                pending_kill_t.reset();
                pending_kill_round.reset();
            }

            bool killed = false;
            while (leader.running() && !g_stop) {
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
                if (kill_idx >= plan.leader_kill_rounds.size()) continue;
                auto records = read_metrics_jsonl(metrics_path);
                if (!records.empty() && records.back().round >= plan.leader_kill_rounds[kill_idx]) {
                    int64_t round_at_kill = records.back().round;
                    leader.kill();
                    killed = true;
                    ++kill_idx;
                    ++report.kills;
                    pending_kill_t = mono_s();
                    pending_kill_round = round_at_kill;
                    log_kv("faultlab", "leader_killed",
                           {{"round", std::to_string(round_at_kill)}, {"mode", plan.failover}});
                }
            }
            if (killed) {
                resume = true;
                continue;
            }
            int code = leader.wait();
            exit_code = code == 0 ? 0 : 3;
            session_done = true;
        }
        std::ofstream f(out / "failover_report.json", std::ios::trunc);
        f << report.to_json().dump(2) << "\n";
    }

    for (auto& p : procs) p.kill();
    broker.stop();
    auto records = read_metrics_jsonl(metrics_path);
    export_metrics_csv(records, metrics_path.parent_path() /
                                    (metrics_path.stem().string() + ".csv"));
    return exit_code;
}

int run_metrics(const std::string& in, const std::string& csv) {
    auto records = read_metrics_jsonl(in);
    export_metrics_csv(records, csv);
    std::cout << "wrote " << records.size() << " rows to " << csv << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning orchestration at desk scale"};
    app.require_subcommand(1);

    std::string broker_listen = "127.0.0.1:7700";
    auto* broker_cmd = app.add_subcommand("broker", "run the publish-subscribe broker");
    broker_cmd->add_option("--listen", broker_listen, "host:port to listen on");

    std::string client_config;
    auto* client_cmd = app.add_subcommand("client", "run a client agent");
    client_cmd->add_option("--config", client_config, "client config yaml")->required();

    LeaderArgs leader_args;
    auto* leader_cmd = app.add_subcommand("leader", "run the leader for one session");
    leader_cmd->add_option("--session", leader_args.session_path, "session yaml")->required();
    leader_cmd->add_option("--broker", leader_args.broker, "broker host:port");
    leader_cmd->add_option("--state-dir", leader_args.state_dir, "durable state directory");
    leader_cmd->add_option("--checkpoint-dir", leader_args.checkpoint_dir, "checkpoint directory");
    leader_cmd->add_option("--metrics", leader_args.metrics_path, "per-round metrics jsonl");
    leader_cmd->add_option("--result", leader_args.result_path, "session result json");
    leader_cmd->add_option("--data-dir", leader_args.data_dir, "leader-side dataset directory");
    leader_cmd->add_option("--log-file", leader_args.log_file, "structured log file");
    leader_cmd->add_flag("--durable", leader_args.durable, "write-through durable state store");
    leader_cmd->add_flag("--resume", leader_args.resume, "resume from durable state or checkpoint");
    leader_cmd->add_option("--min-clients", leader_args.min_clients, "clients to wait for");
    leader_cmd->add_option("--wait-timeout", leader_args.wait_timeout_s, "client wait timeout (s)");

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "one-machine pseudo-distributed session");
    run_cmd->add_option("--session", run_args.session_path, "session yaml")->required();
    run_cmd->add_option("--out", run_args.out_dir, "output directory");
    run_cmd->add_option("--clients", run_args.clients, "number of local clients");
    run_cmd->add_option("--samples", run_args.samples, "synthetic samples");
    run_cmd->add_option("--dim", run_args.dim, "feature dimension");
    run_cmd->add_option("--classes", run_args.classes, "label count");
    run_cmd->add_option("--separation", run_args.separation, "blob separation");
    run_cmd->add_option("--scheme", run_args.scheme, "iid | label_skew | dirichlet");
    run_cmd->add_option("--delta", run_args.delta, "labels per client (label_skew)");
    run_cmd->add_option("--alpha", run_args.alpha, "dirichlet concentration");
    run_cmd->add_option("--seed", run_args.seed, "deployment seed");
    run_cmd->add_flag("--durable", run_args.durable, "durable state store");

    PartitionArgs part_args;
    auto* part_cmd = app.add_subcommand("partition", "partition a dataset across clients");
    part_cmd->add_option("--scheme", part_args.scheme, "iid | label_skew | dirichlet")->required();
    part_cmd->add_option("--clients", part_args.clients, "client count")->required();
    part_cmd->add_option("--delta", part_args.delta, "labels per client");
    part_cmd->add_option("--alpha", part_args.alpha, "dirichlet concentration");
    part_cmd->add_option("--seed", part_args.seed, "seed");
    part_cmd->add_option("--data", part_args.data_dir, "existing dataset dir (train split)");
    part_cmd->add_option("--dataset-name", part_args.dataset_name, "dataset name for output dirs");
    part_cmd->add_option("--samples", part_args.samples, "synthetic samples");
    part_cmd->add_option("--dim", part_args.dim, "synthetic feature dim");
    part_cmd->add_option("--classes", part_args.classes, "synthetic classes");
    part_cmd->add_option("--out", part_args.out_dir, "output directory");

    FaultArgs fault_args;
    auto* fault_cmd = app.add_subcommand("faultlab", "failure experiments");
    fault_cmd->add_option("--session", fault_args.session_path, "session yaml")->required();
    fault_cmd->add_option("--faults", fault_args.faults_path, "fault plan yaml")->required();
    fault_cmd->add_option("--out", fault_args.out_dir, "output directory");
    fault_cmd->add_flag("--baseline", fault_args.baseline, "paired run without fault injection");
    fault_cmd->add_option("--clients", fault_args.clients, "number of local clients");
    fault_cmd->add_option("--samples", fault_args.samples, "synthetic samples");
    fault_cmd->add_option("--dim", fault_args.dim, "feature dimension");
    fault_cmd->add_option("--classes", fault_args.classes, "label count");
    fault_cmd->add_option("--scheme", fault_args.scheme, "partition scheme");
    fault_cmd->add_option("--seed", fault_args.seed, "deployment seed");

    std::string metrics_in, metrics_csv;
    auto* metrics_cmd = app.add_subcommand("metrics", "export metrics jsonl to csv");
    metrics_cmd->add_option("--in", metrics_in, "metrics jsonl")->required();
    metrics_cmd->add_option("--csv", metrics_csv, "output csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*broker_cmd) return run_broker(broker_listen);
        if (*client_cmd) return run_client(client_config);
        if (*leader_cmd) return run_leader(leader_args);
        if (*run_cmd) return run_local(run_args);
        if (*part_cmd) return run_partition(part_args);
        if (*fault_cmd) return run_faultlab(fault_args);
        if (*metrics_cmd) return run_metrics(metrics_in, metrics_csv);
    } catch (const SchemaError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    }
    return 0;
}
