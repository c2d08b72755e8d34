#include <doctest.h>

#include <atomic>
#include <thread>

#include "skiff/client_agent.hpp"
#include "skiff/deployment.hpp"
#include "skiff/discovery.hpp"
#include "skiff/errors.hpp"

#include "../support/test_util.hpp"

using namespace skiff;
using skiff::test::TempDir;
using skiff::test::wait_until;

namespace {

struct AgentFixture {
    TempDir tmp;
    Broker broker;
    Endpoint broker_ep;
    ClientConfig cfg;
    std::unique_ptr<ClientAgent> agent;
    ModelPackage pkg;
    std::string sha;

    AgentFixture(size_t samples = 200, int classes = 4, bool start_agent = true) {
        broker_ep = broker.start(Endpoint{"127.0.0.1", 0});
        Dataset d = make_blobs(samples, 6, classes, 6.0, 3);
        save_dataset(d, tmp / "data" / "blobs", "train");
        size_t val = samples / 4;
        Dataset v = make_blobs(val, 6, classes, 6.0, 4);
        save_dataset(v, tmp / "data" / "blobs", "validation");

        cfg.client_id = "c1";
        cfg.data_dir = tmp / "data";
        cfg.cache_dir = tmp / "cache";
        cfg.broker = broker_ep;
        cfg.rpc_listen = Endpoint{"127.0.0.1", 0};
        cfg.heartbeat_interval_s = 0.5;

        pkg = build_builtin_package("logreg", "logreg", "blobs", 6, classes, 0);
        sha = pkg.sha256();
        agent = std::make_unique<ClientAgent>(cfg);
        if (start_agent) agent->start();
    }
    ~AgentFixture() {
        agent->stop();
        broker.stop();
    }

    TrainRequest request(int64_t epochs, bool validate = false) {
        TrainRequest req;
        req.session_id = "s";
        req.round_number = 1;
        req.package_sha256 = sha;
        req.inline_package = pkg;
        req.global_model = init_model(ModelSpec{"logreg", 6, 4, 0}, 0);
        req.hyperparameters.epochs = epochs;
        req.hyperparameters.batch_size = 32;
        req.hyperparameters.learning_rate = 0.05;
        req.hyperparameters.seed = 11;
        req.deadline_s = 10;
        req.validate_only = validate;
        return req;
    }
};

}  // namespace

TEST_CASE("agent: epochs=0 returns the received global model bit-equal") {
    AgentFixture fx;
    auto resp = fx.agent->handle_train(fx.request(0));
    CHECK(resp.status == "ok");
    REQUIRE(resp.local_model.has_value());
    CHECK(serialize_weights(*resp.local_model) == serialize_weights(fx.request(0).global_model));
}

TEST_CASE("agent: identical request and seed give identical response weights") {
    AgentFixture fx;
    auto a = fx.agent->handle_train(fx.request(3));
    auto b = fx.agent->handle_train(fx.request(3));
    REQUIRE(a.status == "ok");
    REQUIRE(b.status == "ok");
    CHECK(serialize_weights(*a.local_model) == serialize_weights(*b.local_model));
    CHECK(a.training_metrics.at("loss").as_float() ==
          doctest::Approx(b.training_metrics.at("loss").as_float()));
}

TEST_CASE("agent: missing dataset yields a DatasetMissing error response") {
    AgentFixture fx;
    auto pkg = build_builtin_package("logreg", "logreg", "no_such_dataset", 6, 4, 0);
    TrainRequest req = fx.request(1);
    req.package_sha256 = pkg.sha256();
    req.inline_package = pkg;
    auto resp = fx.agent->handle_train(req);
    CHECK(resp.status == "error");
    CHECK(resp.error.find("DatasetMissing") != std::string::npos);
}

TEST_CASE("agent: validate_only returns metrics and no weights") {
    AgentFixture fx;
    auto resp = fx.agent->handle_train(fx.request(1, true));
    CHECK(resp.status == "ok");
    CHECK(!resp.local_model.has_value());
    CHECK(resp.validation_metrics.count("accuracy") == 1);
    CHECK(resp.validation_metrics.count("loss") == 1);
}

TEST_CASE("agent: client-side validation agrees with a direct local evaluation") {
    AgentFixture fx;
    // train a model centrally on the client's own split, then validate via RPC path
    Dataset train = load_dataset(fx.tmp / "data" / "blobs", "train");
    Hyperparameters hp;
    hp.epochs = 30;
    hp.batch_size = 32;
    hp.learning_rate = 0.1;
    auto oracle = train_local(init_model(ModelSpec{"logreg", 6, 4, 0}, 0), train, hp);
    Dataset val = load_dataset(fx.tmp / "data" / "blobs", "validation");
    double direct = evaluate(oracle.weights, val).at("accuracy").as_float();

    TrainRequest req = fx.request(0, true);
    req.global_model = oracle.weights;
    auto resp = fx.agent->handle_train(req);
    REQUIRE(resp.status == "ok");
    CHECK(resp.validation_metrics.at("accuracy").as_float() == doctest::Approx(direct).epsilon(0.01));
}

TEST_CASE("agent: package cache lookup, wipe, and unknown digests") {
    AgentFixture fx;
    CHECK(!fx.agent->cache_lookup(fx.sha).has_value());  // first contact
    auto resp = fx.agent->handle_train(fx.request(0));   // inline package gets cached
    CHECK(resp.status == "ok");
    auto hit = fx.agent->cache_lookup(fx.sha);
    REQUIRE(hit.has_value());
    CHECK(hit->sha256() == fx.sha);
    CHECK(!fx.agent->cache_lookup("0000000000").has_value());
}

TEST_CASE("agent: wipe_after_round clears the cache") {
    AgentFixture fx;
    fx.agent->stop();
    fx.cfg.wipe_after_round = true;
    fx.agent = std::make_unique<ClientAgent>(fx.cfg);
    fx.agent->start();
    auto resp = fx.agent->handle_train(fx.request(1));
    CHECK(resp.status == "ok");
    CHECK(!fx.agent->cache_lookup(fx.sha).has_value());  // wiped after the round
}

TEST_CASE("agent: a second concurrent train request is rejected Busy") {
    AgentFixture fx(3000, 4);
    TrainRequest slow = fx.request(200);  // long enough to overlap
    std::atomic<bool> first_done{false};
    TrainResponse first;
    std::thread t([&] {
        first = fx.agent->handle_train(slow);
        first_done = true;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    auto second = fx.agent->handle_train(fx.request(1));
    CHECK(second.status == "error");
    CHECK(second.error == "Busy");
    t.join();
    CHECK(first.status == "ok");
}

TEST_CASE("agent: heartbeats keep flowing while training") {
    AgentFixture fx(3000, 4);
    // rebuild with an emulated per-batch cost so the trainer stays busy for
    // a few seconds regardless of host speed
    fx.agent->stop();
    fx.cfg.compute_delay_factor = 0.02;  // 94 batches/epoch * 2 epochs ~ 3.8s
    fx.cfg.heartbeat_interval_s = 0.3;
    fx.agent = std::make_unique<ClientAgent>(fx.cfg);
    fx.agent->start();

    auto info_obj = std::make_shared<StateObject>("client_info", make_memory_backend());
    DiscoveryService disc(StateHandle::rw(info_obj), 5);
    BrokerClient leader_bus(fx.broker_ep);
    disc.attach(leader_bus);
    leader_bus.start();
    fx.agent->publish_advert();
    REQUIRE(wait_until([&] { return disc.known_clients() == 1; }, 5.0));

    ClientInfoView info{StateHandle::ro(info_obj)};
    std::atomic<bool> done{false};
    std::thread trainer([&] {
        fx.agent->handle_train(fx.request(2));
        done = true;
    });
    // while training, the heartbeat timestamp must keep advancing
    double t0 = info.heartbeat_timestamp("c1");
    bool advanced = wait_until([&] { return info.heartbeat_timestamp("c1") > t0; }, 5.0);
    CHECK(advanced);
    CHECK(!done.load());  // still busy when the beat arrived
    trainer.join();
    leader_bus.stop();
    disc.stop();
}

TEST_CASE("agent: benchmark measures minibatches and caches the result") {
    AgentFixture fx;
    fx.agent->handle_train(fx.request(0));  // seed the cache
    CHECK_THROWS_AS(fx.agent->run_benchmark(fx.sha, 0), TrainerError);
    double s = fx.agent->run_benchmark(fx.sha, 3);
    CHECK(s > 0);
    CHECK(s < 10);
}

TEST_CASE("agent: throttled client benchmarks about 2x slower") {
    TempDir tmp;
    Broker broker;
    Endpoint broker_ep = broker.start(Endpoint{"127.0.0.1", 0});
    Dataset d = make_blobs(3000, 8, 4, 6.0, 5);
    save_dataset(d, tmp / "data" / "blobs", "train");
    auto pkg = build_builtin_package("logreg", "logreg", "blobs", 8, 4, 0);

    auto bench_with_delay = [&](double delay, const std::string& id) {
        ClientConfig cfg;
        cfg.client_id = id;
        cfg.data_dir = tmp / "data";
        cfg.cache_dir = tmp.path() / ("cache_" + id);
        cfg.broker = broker_ep;
        cfg.rpc_listen = Endpoint{"127.0.0.1", 0};
        cfg.compute_delay_factor = delay;
        ClientAgent agent(cfg);
        agent.start();
        TrainRequest req;
        req.package_sha256 = pkg.sha256();
        req.inline_package = pkg;
        req.global_model = init_model(ModelSpec{"logreg", 8, 4, 0}, 0);
        req.hyperparameters.epochs = 0;
        agent.handle_train(req);  // deliver the package
        double s = agent.run_benchmark(pkg.sha256(), 4);
        agent.stop();
        return s;
    };
    double fast = bench_with_delay(0.05, "fast");
    double slow = bench_with_delay(0.10, "slow");
    double ratio = slow / fast;
    CHECK(ratio > 1.4);  // 2x nominal, +-30%
    CHECK(ratio < 2.6);
    broker.stop();
}
