#include "skiff/client_agent.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>

#include <yaml-cpp/yaml.h>

#include "skiff/errors.hpp"
#include "skiff/log.hpp"

namespace skiff {

using nlohmann::json;

ClientConfig ClientConfig::from_yaml_file(const std::filesystem::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw SchemaError("cannot parse client config: " + std::string(e.what()), "", e.mark.line + 1);
    }
    ClientConfig cfg;
    cfg.client_id = root["client_id"].as<std::string>("");
    if (cfg.client_id.empty()) throw SchemaError("client_id is required", "client_id");
    cfg.data_dir = root["data_dir"].as<std::string>("");
    cfg.heartbeat_interval_s = root["heartbeat_interval"].as<double>(5.0);
    if (root["broker"]) cfg.broker = Endpoint::parse(root["broker"].as<std::string>());
    if (root["rpc_listen"]) cfg.rpc_listen = Endpoint::parse(root["rpc_listen"].as<std::string>());
    cfg.wipe_after_round = root["wipe_after_round"].as<bool>(false);
    cfg.cache_dir = root["cache_dir"].as<std::string>((cfg.data_dir / "cache").string());
    if (root["benchmark"] && !root["benchmark"].IsNull())
        cfg.benchmark_preset_s = root["benchmark"].as<double>();
    cfg.compute_delay_factor = root["compute_delay_factor"].as<double>(0.0);

    if (const char* broker_env = std::getenv("SKIFF_BROKER"))
        cfg.broker = Endpoint::parse(broker_env);
    if (const char* listen_env = std::getenv("SKIFF_RPC_LISTEN"))
        cfg.rpc_listen = Endpoint::parse(listen_env);
    return cfg;
}

ClientAgent::ClientAgent(ClientConfig cfg) : cfg_(std::move(cfg)), cache_(cfg_.cache_dir) {
    benchmark_s_ = cfg_.benchmark_preset_s;
}

ClientAgent::~ClientAgent() { stop(); }

void ClientAgent::start() {
    if (running_.exchange(true)) return;
    rpc_endpoint_ = server_.start(cfg_.rpc_listen, [this](const json& h, const std::vector<uint8_t>& p) {
        return dispatch(h, p);
    });
    bus_ = std::make_unique<BrokerClient>(cfg_.broker);
    publish_advert();
    heartbeat_thread_ = std::thread([this] { heartbeat_loop(); });
    log_kv("client", "started", {{"client", cfg_.client_id}, {"rpc", rpc_endpoint_.str()}});
}

void ClientAgent::stop() {
    if (!running_.exchange(false)) return;
    if (heartbeat_thread_.joinable()) heartbeat_thread_.join();
    server_.stop();
    if (bus_) bus_->stop();
}

void ClientAgent::publish_advert() {
    Advertisement ad;
    ad.client_id = cfg_.client_id;
    ad.rpc_endpoint = rpc_endpoint_;
    ad.hardware_information = cfg_.hardware_information;
    ad.heartbeat_interval_s = cfg_.heartbeat_interval_s;
    {
        std::lock_guard lk(bench_mu_);
        ad.benchmark_s = benchmark_s_;
    }
    // advertise whatever local training data exists
    if (!cfg_.data_dir.empty() && std::filesystem::is_directory(cfg_.data_dir)) {
        for (const auto& entry : std::filesystem::directory_iterator(cfg_.data_dir)) {
            if (!entry.is_directory()) continue;
            if (!dataset_exists(entry.path(), "train")) continue;
            ad.dataset = entry.path().filename().string();
            Dataset d = load_dataset(entry.path(), "train");
            for (auto& [label, count] : label_histogram(d)) ad.label_counts[label] = count;
            break;
        }
    }
    std::string text = ad.to_json().dump();
    bus_->publish(topic::kAdvert,
                  std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

void ClientAgent::heartbeat_loop() {
    // first beat goes out immediately after the advert
    while (running_) {
        // re-advertise each cycle: the broker retains nothing, so a leader
        // that subscribes later still discovers the client (and picks up a
        // freshly cached benchmark)
        publish_advert();
        Heartbeat hb{cfg_.client_id, wallclock_s()};
        std::string text = hb.to_json().dump();
        bus_->publish(topic::kHeartbeat,
                      std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
        auto until = std::chrono::steady_clock::now() +
                     std::chrono::milliseconds(static_cast<int>(cfg_.heartbeat_interval_s * 1000));
        while (running_ && std::chrono::steady_clock::now() < until)
            std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
}

Dataset ClientAgent::load_local_dataset(const std::string& dataset, const std::string& split) {
    std::filesystem::path dir = cfg_.data_dir / dataset;
    if (!dataset_exists(dir, split))
        throw NotFound("dataset '" + dataset + "' split '" + split + "' missing");
    return load_dataset(dir, split);
}

ModelPackage ClientAgent::resolve_package(const TrainRequest& req) {
    if (auto cached = cache_.lookup(req.package_sha256)) return *cached;
    if (req.inline_package) {
        if (req.inline_package->sha256() != req.package_sha256)
            throw DigestMismatch("inline package digest mismatch");
        cache_.store(*req.inline_package);
        return *req.inline_package;
    }
    throw NotFound("package " + req.package_sha256 + " not cached");
}

TrainResponse ClientAgent::handle_train(const TrainRequest& req) {
    TrainResponse resp;
    resp.session_id = req.session_id;
    resp.round_number = req.round_number;
    resp.client_id = cfg_.client_id;

    std::unique_lock lk(train_mu_, std::try_to_lock);
    if (!lk.owns_lock()) {
        resp.status = "error";
        resp.error = "Busy";
        return resp;
    }

    ModelPackage pkg;
    PackageManifest manifest;
    try {
        pkg = resolve_package(req);
        manifest = PackageManifest::parse(pkg);
    } catch (const std::exception& e) {
        resp.status = "error";
        resp.error = std::string("PackageMissing: ") + e.what();
        return resp;
    }

    try {
        if (req.validate_only) {
            Dataset val = load_local_dataset(manifest.dataset, "validation");
            resp.validation_metrics = evaluate(req.global_model, val, req.hyperparameters.loss_function);
        } else {
            Dataset train = load_local_dataset(manifest.dataset, "train");
            TrainOutcome outcome = train_local(req.global_model, train, req.hyperparameters);
            if (cfg_.compute_delay_factor > 0) {
                // emulate slower hardware: a fixed cost per trained mini-batch
                double batches = std::ceil(static_cast<double>(train.rows) /
                                           static_cast<double>(req.hyperparameters.batch_size)) *
                                 static_cast<double>(req.hyperparameters.epochs);
                std::this_thread::sleep_for(
                    std::chrono::duration<double>(cfg_.compute_delay_factor * batches));
                outcome.metrics["train_time_s"] =
                    Value(outcome.metrics["train_time_s"].as_float() + cfg_.compute_delay_factor * batches);
            }
            resp.local_model = std::move(outcome.weights);
            resp.training_metrics = std::move(outcome.metrics);
        }
    } catch (const NotFound& e) {
        resp.status = "error";
        resp.error = std::string("DatasetMissing: ") + e.what();
        return resp;
    } catch (const std::exception& e) {
        resp.status = "error";
        resp.error = std::string("TrainerError: ") + e.what();
        return resp;
    }

    if (cfg_.wipe_after_round) cache_.wipe();
    return resp;
}

std::optional<ModelPackage> ClientAgent::cache_lookup(const std::string& sha256) const {
    return cache_.lookup(sha256);
}

double ClientAgent::run_benchmark(const std::string& package_sha256, int minibatches) {
    if (minibatches < 1) throw TrainerError("minibatches must be >= 1");
    auto pkg = cache_.lookup(package_sha256);
    if (!pkg) throw NotFound("package " + package_sha256 + " not cached");
    PackageManifest manifest = PackageManifest::parse(*pkg);
    Dataset train = load_local_dataset(manifest.dataset, "train");

    Hyperparameters hp;
    hp.epochs = 1;
    hp.batch_size = 32;
    hp.learning_rate = 1e-3;
    hp.seed = 1;
    // time `minibatches` mini-batches by training on a slice of that size
    size_t rows = std::min(train.rows, static_cast<size_t>(minibatches) * static_cast<size_t>(hp.batch_size));
    std::vector<uint32_t> idx(rows);
    for (size_t i = 0; i < rows; ++i) idx[i] = static_cast<uint32_t>(i);
    Dataset slice = take_subset(train, idx);

    ModelWeights w = init_model(manifest.spec(), 1);
    double t0 = mono_s();
    train_local(w, slice, hp);
    double seconds = mono_s() - t0;
    if (cfg_.compute_delay_factor > 0) {
        double batches = std::ceil(static_cast<double>(slice.rows) / static_cast<double>(hp.batch_size));
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.compute_delay_factor * batches));
        seconds += cfg_.compute_delay_factor * batches;
    }
    {
        std::lock_guard lk(bench_mu_);
        benchmark_s_ = seconds;
    }
    publish_advert();  // future adverts carry the cached benchmark
    return seconds;
}

RpcServer::Reply ClientAgent::dispatch(const json& header, const std::vector<uint8_t>& payload) {
    RpcServer::Reply reply;
    std::string op = header.value("op", "");
    if (op == "train") {
        TrainRequest req = parse_train_request(header, payload);
        TrainResponse resp = handle_train(req);
        reply.header = train_response_header(resp);
        if (resp.local_model) reply.payload = serialize_weights(*resp.local_model);
        return reply;
    }
    if (op == "package_probe") {
        std::string sha = header.value("sha256", "");
        reply.header = json{{"status", "ok"}, {"cached", cache_.lookup(sha).has_value()}};
        return reply;
    }
    if (op == "package_put") {
        ModelPackage pkg = ModelPackage::from_json(header.value("package", json::object()));
        std::string advertised = header.value("sha256", "");
        if (pkg.sha256() != advertised) {
            log_kv("client", "package_digest_mismatch", {{"client", cfg_.client_id}});
            reply.header = json{{"status", "error"}, {"error", "digest_mismatch"}};
            return reply;
        }
        cache_.store(pkg);
        reply.header = json{{"status", "ok"}, {"cached", true}};
        return reply;
    }
    if (op == "benchmark") {
        try {
            double seconds = run_benchmark(header.value("package_sha256", ""),
                                           header.value("minibatches", 0));
            reply.header = json{{"status", "ok"}, {"seconds", seconds}};
        } catch (const std::exception& e) {
            reply.header = json{{"status", "error"}, {"error", e.what()}};
        }
        return reply;
    }
    reply.header = json{{"status", "error"}, {"error", "unknown op '" + op + "'"}};
    return reply;
}

}  // namespace skiff
