#include <doctest.h>

#include <atomic>
#include <thread>

#include "skiff/errors.hpp"
#include "skiff/transport.hpp"

#include "../support/test_util.hpp"

using namespace skiff;
using skiff::test::wait_until;

namespace {

ModelWeights tiny_model(float v) {
    ModelWeights w;
    w.set("w", Tensor({2}, {v, v}));
    return w;
}

TrainRequest make_request() {
    TrainRequest req;
    req.session_id = "s";
    req.round_number = 1;
    req.package_sha256 = "deadbeef";
    req.global_model = tiny_model(0.5f);
    req.deadline_s = 5.0;
    return req;
}

}  // namespace

TEST_CASE("rpc framing: request and response headers round-trip with payloads") {
    TrainRequest req = make_request();
    req.hyperparameters.epochs = 3;
    req.hyperparameters.seed = 99;
    auto header = train_request_header(req);
    auto payload = serialize_weights(req.global_model);
    TrainRequest back = parse_train_request(header, payload);
    CHECK(back.session_id == req.session_id);
    CHECK(back.round_number == req.round_number);
    CHECK(back.package_sha256 == req.package_sha256);
    CHECK(back.hyperparameters.epochs == 3);
    CHECK(back.hyperparameters.seed == 99);
    CHECK(back.global_model == req.global_model);

    TrainResponse resp;
    resp.session_id = "s";
    resp.round_number = 1;
    resp.client_id = "c1";
    resp.local_model = tiny_model(1.5f);
    resp.training_metrics["loss"] = Value(0.25);
    resp.status = "ok";
    auto rheader = train_response_header(resp);
    auto rpayload = serialize_weights(*resp.local_model);
    TrainResponse rback = parse_train_response(rheader, rpayload);
    CHECK(rback.client_id == "c1");
    CHECK(rback.local_model.has_value());
    CHECK(*rback.local_model == *resp.local_model);
    CHECK(rback.training_metrics.at("loss").as_float() == doctest::Approx(0.25));
}

TEST_CASE("transport: happy path returns the server's response exactly once") {
    RpcServer server;
    std::atomic<int> served{0};
    Endpoint ep = server.start(Endpoint{"127.0.0.1", 0},
                               [&](const nlohmann::json& h, const std::vector<uint8_t>& p) {
                                   ++served;
                                   TrainRequest req = parse_train_request(h, p);
                                   TrainResponse resp;
                                   resp.session_id = req.session_id;
                                   resp.round_number = req.round_number;
                                   resp.client_id = "c1";
                                   resp.local_model = req.global_model;
                                   resp.status = "ok";
                                   RpcServer::Reply reply;
                                   reply.header = train_response_header(resp);
                                   reply.payload = serialize_weights(*resp.local_model);
                                   return reply;
                               });

    TcpTransport transport;
    std::atomic<int> callbacks{0};
    CompletionEvent got;
    transport.send_train_request(ep, make_request(), [&](CompletionEvent ev) {
        got = std::move(ev);
        ++callbacks;
    });
    REQUIRE(wait_until([&] { return callbacks.load() == 1; }, 5.0));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(callbacks == 1);  // exactly once
    CHECK(got.ok);
    CHECK(got.response.client_id == "c1");
    CHECK(served == 1);
    transport.shutdown();
    server.stop();
}

TEST_CASE("transport: connection refused surfaces as ConnectFailed") {
    TcpTransport transport(200);
    std::atomic<int> callbacks{0};
    CompletionEvent got;
    transport.send_train_request(Endpoint{"127.0.0.1", 1}, make_request(), [&](CompletionEvent ev) {
        got = std::move(ev);
        ++callbacks;
    });
    REQUIRE(wait_until([&] { return callbacks.load() == 1; }, 5.0));
    CHECK(!got.ok);
    CHECK(got.reason == FailureReason::ConnectFailed);
    transport.shutdown();
}

TEST_CASE("transport: server death mid-request surfaces as ConnectionLost") {
    Endpoint ep;
    int listen_fd = tcp_listen(Endpoint{"127.0.0.1", 0}, &ep);
    std::thread killer([&] {
        int fd = tcp_accept(listen_fd, 5000);
        // read a little then drop the connection without answering
        char buf[64];
        (void)read_exact(fd, buf, 16, 1000);
        close_fd(fd);
    });

    TcpTransport transport;
    std::atomic<int> callbacks{0};
    CompletionEvent got;
    TrainRequest req = make_request();
    req.deadline_s = 0;  // no deadline: failure must come from the broken pipe
    transport.send_train_request(ep, req, [&](CompletionEvent ev) {
        got = std::move(ev);
        ++callbacks;
    });
    REQUIRE(wait_until([&] { return callbacks.load() == 1; }, 5.0));
    CHECK(!got.ok);
    CHECK(got.reason == FailureReason::ConnectionLost);
    killer.join();
    close_fd(listen_fd);
    transport.shutdown();
}

TEST_CASE("transport: deadline expiry fires DeadlineExceeded; late response discarded") {
    RpcServer server;
    Endpoint ep = server.start(Endpoint{"127.0.0.1", 0},
                               [&](const nlohmann::json& h, const std::vector<uint8_t>& p) {
                                   std::this_thread::sleep_for(std::chrono::milliseconds(800));
                                   TrainRequest req = parse_train_request(h, p);
                                   TrainResponse resp;
                                   resp.status = "ok";
                                   resp.client_id = "slow";
                                   resp.session_id = req.session_id;
                                   RpcServer::Reply reply;
                                   reply.header = train_response_header(resp);
                                   return reply;
                               });
    TcpTransport transport;
    std::atomic<int> callbacks{0};
    CompletionEvent got;
    TrainRequest req = make_request();
    req.deadline_s = 0.2;
    transport.send_train_request(ep, req, [&](CompletionEvent ev) {
        got = std::move(ev);
        ++callbacks;
    });
    REQUIRE(wait_until([&] { return callbacks.load() == 1; }, 5.0));
    CHECK(!got.ok);
    CHECK(got.reason == FailureReason::DeadlineExceeded);
    // the late response goes nowhere: still exactly one callback
    std::this_thread::sleep_for(std::chrono::milliseconds(900));
    CHECK(callbacks == 1);
    transport.shutdown();
    server.stop();
}

TEST_CASE("transport: exactly-once callbacks under churn (chaos)") {
    // a server that randomly answers, stalls, or dies per request
    RpcServer server;
    std::atomic<int> counter{0};
    Endpoint ep = server.start(Endpoint{"127.0.0.1", 0},
                               [&](const nlohmann::json& h, const std::vector<uint8_t>& p) {
                                   int n = counter.fetch_add(1);
                                   if (n % 3 == 1) std::this_thread::sleep_for(std::chrono::milliseconds(500));
                                   if (n % 3 == 2) throw std::runtime_error("simulated crash");
                                   TrainRequest req = parse_train_request(h, p);
                                   TrainResponse resp;
                                   resp.status = "ok";
                                   resp.session_id = req.session_id;
                                   RpcServer::Reply reply;
                                   reply.header = train_response_header(resp);
                                   return reply;
                               });
    TcpTransport transport;
    constexpr int kRequests = 30;
    std::atomic<int> callbacks{0};
    for (int i = 0; i < kRequests; ++i) {
        TrainRequest req = make_request();
        req.deadline_s = 0.25;
        transport.send_train_request(ep, req, [&](CompletionEvent) { ++callbacks; });
    }
    REQUIRE(wait_until([&] { return callbacks.load() == kRequests; }, 20.0));
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    CHECK(callbacks == kRequests);  // exactly N completions for N dispatches
    transport.shutdown();
    server.stop();
}
