#include <doctest.h>

#include <random>
#include <set>

#include "skiff/errors.hpp"
#include "skiff/state_views.hpp"
#include "skiff/strategies.hpp"

#include "../support/oracles.hpp"

using namespace skiff;

namespace {

ModelWeights scalar_model(float v) {
    ModelWeights w;
    w.set("w", Tensor({1}, {v}));
    return w;
}

ModelWeights random_model(std::mt19937_64& rng, const std::vector<uint32_t>& shape) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = u(rng);
    ModelWeights w;
    w.set("W", std::move(t));
    w.set("b", Tensor::zeros({shape[0]}));
    return w;
}

struct Harness {
    SessionStates states = make_memory_states();
    std::string sid = "s";

    StrategyContext cs_ctx(std::vector<std::string> avail, ValueMap cfg, int64_t round) {
        StrategyContext ctx;
        ctx.session_id = sid;
        ctx.available_clients = std::move(avail);
        ctx.client_sel_state = StateHandle::rw(states.client_selection);
        ctx.agg_state = StateHandle::ro(states.aggregation);
        ctx.client_train_state = StateHandle::ro(states.client_training);
        ctx.client_info_state = StateHandle::ro(states.client_info);
        ctx.train_session_state = StateHandle::ro(states.train_session);
        ctx.user_config = std::move(cfg);
        ctx.user_config[strategy_key::kRound] = Value(round);
        ctx.user_config[strategy_key::kNumRounds] = Value(int64_t{30});
        ctx.user_config[strategy_key::kSeed] = Value(int64_t{7});
        return ctx;
    }
    StrategyContext agg_ctx(ValueMap cfg, int64_t round) {
        StrategyContext ctx;
        ctx.session_id = sid;
        ctx.client_sel_state = StateHandle::ro(states.client_selection);
        ctx.agg_state = StateHandle::rw(states.aggregation);
        ctx.client_train_state = StateHandle::ro(states.client_training);
        ctx.client_info_state = StateHandle::ro(states.client_info);
        ctx.train_session_state = StateHandle::ro(states.train_session);
        ctx.user_config = std::move(cfg);
        ctx.user_config[strategy_key::kRound] = Value(round);
        ctx.user_config[strategy_key::kNumRounds] = Value(int64_t{30});
        ctx.user_config[strategy_key::kSeed] = Value(int64_t{7});
        return ctx;
    }
    void add_client(const std::string& id, double benchmark = 1.0, int64_t samples = 100) {
        ClientInfoView info{StateHandle::rw(states.client_info)};
        info.set_join_timestamp(id, 1.0);
        info.set_active(id, true);
        info.set_training(id, false);
        info.set_rpc_endpoint(id, "127.0.0.1:1");
        info.set_benchmark(id, benchmark);
        ValueMap counts{{"0", Value(samples / 2)}, {"1", Value(samples - samples / 2)}};
        ValueMap details{{"dataset", Value("d")}, {"label_counts", Value(counts)}};
        info.set_dataset_details(id, details);
    }
};

}  // namespace

TEST_CASE("fedavg_aggregate: weighted mean basics") {
    auto out = fedavg_aggregate({{scalar_model(1.0f), 1.0}, {scalar_model(3.0f), 3.0}});
    CHECK(out.at("w").data[0] == doctest::Approx(2.5));
    auto single = fedavg_aggregate({{scalar_model(4.0f), 9.0}});
    CHECK(single.at("w").data[0] == doctest::Approx(4.0));
}

TEST_CASE("fedavg_aggregate: matches the elementwise oracle on 120 random instances") {
    std::mt19937_64 rng(55);
    for (int inst = 0; inst < 120; ++inst) {
        size_t k = 2 + rng() % 4;
        std::vector<uint32_t> shape = {static_cast<uint32_t>(1 + rng() % 4),
                                       static_cast<uint32_t>(1 + rng() % 5)};
        std::vector<std::pair<ModelWeights, double>> models;
        std::vector<std::pair<std::vector<double>, double>> flat;
        for (size_t i = 0; i < k; ++i) {
            auto m = random_model(rng, shape);
            double n = static_cast<double>(1 + rng() % 100);
            flat.emplace_back(skiff::test::flatten(m), n);
            models.emplace_back(std::move(m), n);
        }
        auto got = skiff::test::flatten(fedavg_aggregate(models));
        auto expected = skiff::test::brute_force_weighted_mean(flat);
        for (size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - expected[i]) < 1e-7);
    }
}

TEST_CASE("fedavg_aggregate: permutation invariant and idempotent on identical models") {
    std::mt19937_64 rng(77);
    auto a = random_model(rng, {3, 2});
    auto b = random_model(rng, {3, 2});
    auto c = random_model(rng, {3, 2});
    auto r1 = fedavg_aggregate({{a, 2}, {b, 5}, {c, 1}});
    auto r2 = fedavg_aggregate({{c, 1}, {a, 2}, {b, 5}});
    CHECK(r1 == r2);
    auto same = fedavg_aggregate({{a, 3}, {a, 9}});
    CHECK(skiff::test::flatten(same) == skiff::test::flatten(a));
}

TEST_CASE("fedavg_aggregate: equal weights reduce to the unweighted mean") {
    std::mt19937_64 rng(78);
    auto a = random_model(rng, {2, 2});
    auto b = random_model(rng, {2, 2});
    auto got = skiff::test::flatten(fedavg_aggregate({{a, 7}, {b, 7}}));
    auto fa = skiff::test::flatten(a);
    auto fb = skiff::test::flatten(b);
    for (size_t i = 0; i < got.size(); ++i)
        REQUIRE(std::abs(got[i] - 0.5 * (fa[i] + fb[i])) < 1e-7);
}

TEST_CASE("fedavg_aggregate: shape mismatch and zero weight rejected") {
    std::mt19937_64 rng(79);
    auto a = random_model(rng, {2, 2});
    auto b = random_model(rng, {3, 2});
    CHECK_THROWS_AS(fedavg_aggregate({{a, 1}, {b, 1}}), ShapeMismatch);
    CHECK_THROWS_AS(fedavg_aggregate({}), ShapeMismatch);
    CHECK_THROWS_AS(fedavg_aggregate({{a, 0.0}}), ShapeMismatch);
}

TEST_CASE("fedasync_aggregate: formula, staleness, boundaries") {
    auto g = scalar_model(0.0f);
    auto u = scalar_model(1.0f);
    // tau = t: alpha_t = alpha = 0.9
    auto out = fedasync_aggregate(g, u, 5, 5, 0.9, 0.5);
    CHECK(out.at("w").data[0] == doctest::Approx(0.9));
    // alpha_t shrinks monotonically with staleness for a > 0
    double prev = 1.0;
    for (int64_t stale = 0; stale < 6; ++stale) {
        auto o = fedasync_aggregate(g, u, 0, stale, 0.9, 0.5);
        double v = o.at("w").data[0];
        CHECK(v < prev);
        prev = v;
        CHECK(v == doctest::Approx(skiff::test::fedasync_reference(0.0, 1.0, 0, stale, 0.9, 0.5)));
    }
    // a = 0: staleness ignored
    auto o0 = fedasync_aggregate(g, u, 0, 100, 0.9, 0.0);
    CHECK(o0.at("w").data[0] == doctest::Approx(0.9));
    // alpha_t = 1 returns the update; alpha small approaches the global
    auto all_update = fedasync_aggregate(g, u, 3, 3, 1.0, 0.5);
    CHECK(all_update.at("w").data[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(fedasync_aggregate(g, u, 5, 4, 0.9, 0.5), Error);  // t < tau
    CHECK_THROWS_AS(fedasync_aggregate(g, u, 0, 0, 1.5, 0.5), Error);
}

TEST_CASE("fedasync_aggregate: random instances match the scalar reference") {
    std::mt19937_64 rng(91);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int inst = 0; inst < 100; ++inst) {
        auto g = random_model(rng, {2, 3});
        auto up = random_model(rng, {2, 3});
        int64_t tau = static_cast<int64_t>(rng() % 10);
        int64_t t = tau + static_cast<int64_t>(rng() % 5);
        double alpha = 0.1 + 0.9 * u01(rng);
        double a = u01(rng);
        auto got = skiff::test::flatten(fedasync_aggregate(g, up, tau, t, alpha, a));
        auto fg = skiff::test::flatten(g);
        auto fu = skiff::test::flatten(up);
        for (size_t i = 0; i < got.size(); ++i) {
            double expected = skiff::test::fedasync_reference(fg[i], fu[i], tau, t, alpha, a);
            REQUIRE(std::abs(got[i] - expected) < 1e-7);
        }
    }
}

TEST_CASE("fedavg selector: fraction of active clients, floor, deferral mid-round") {
    Harness h;
    std::vector<std::string> avail;
    for (int i = 0; i < 20; ++i) {
        std::string id = "c" + std::to_string(i);
        h.add_client(id);
        avail.push_back(id);
    }
    auto selector = make_selector("fedavg");
    ValueMap cfg{{"fraction", Value(0.1)}};
    auto ctx = h.cs_ctx(avail, cfg, 0);
    auto sel = selector->select(ctx);
    REQUIRE(sel.train_clients.has_value());
    CHECK(sel.train_clients->size() == 2);  // floor(0.1 * 20)
    // second call in the same round defers
    auto ctx2 = h.cs_ctx(avail, cfg, 0);
    auto sel2 = selector->select(ctx2);
    CHECK(sel2.deferred());
    // after the round advances it selects again
    auto ctx3 = h.cs_ctx(avail, cfg, 1);
    auto sel3 = selector->select(ctx3);
    CHECK(sel3.train_clients.has_value());
}

TEST_CASE("fedavg selector: all clients inactive defers") {
    Harness h;
    auto selector = make_selector("fedavg");
    auto ctx = h.cs_ctx({}, {}, 0);
    CHECK(selector->select(ctx).deferred());
}

TEST_CASE("fedavg aggregator: m-of-n boundary") {
    // n=2 m=2: one failure makes the round unsatisfiable (NULL forever);
    // n=2 m=1: the remaining model is aggregated
    for (int m = 1; m <= 2; ++m) {
        Harness h;
        h.add_client("c0", 1.0, 10);
        h.add_client("c1", 1.0, 30);
        StateHandle::rw(h.states.client_selection)
            .put("selected_clients", Value(ValueList{Value("c0"), Value("c1")}));
        auto agg = make_aggregator("fedavg");
        ValueMap cfg{{strategy_key::kMinClients, Value(int64_t{m})}};

        auto fail_ctx = h.agg_ctx(cfg, 0);
        AggregateInput fail{"c1", std::nullopt, true, 1, 30};
        CHECK(!agg->aggregate(fail_ctx, fail).has_value());

        auto ok_ctx = h.agg_ctx(cfg, 0);
        AggregateInput ok{"c0", scalar_model(2.0f), false, 1, 10};
        auto out = agg->aggregate(ok_ctx, ok);
        if (m == 1) {
            REQUIRE(out.has_value());
            CHECK(out->at("w").data[0] == doctest::Approx(2.0));
            CHECK(h.states.aggregation->keys().empty());  // cleared on emit
        } else {
            CHECK(!out.has_value());
        }
    }
}

TEST_CASE("fedavg aggregator: weighted mean over both selected responses") {
    Harness h;
    h.add_client("c0");
    h.add_client("c1");
    StateHandle::rw(h.states.client_selection)
        .put("selected_clients", Value(ValueList{Value("c0"), Value("c1")}));
    auto agg = make_aggregator("fedavg");
    auto ctx1 = h.agg_ctx({}, 0);
    CHECK(!agg->aggregate(ctx1, {"c0", scalar_model(1.0f), false, 1, 1}).has_value());
    auto ctx2 = h.agg_ctx({}, 0);
    auto out = agg->aggregate(ctx2, {"c1", scalar_model(3.0f), false, 1, 3});
    REQUIRE(out.has_value());
    CHECK(out->at("w").data[0] == doctest::Approx(2.5));
}

TEST_CASE("fedat aggregator: tier-weighted averaging 2:1") {
    Harness h;
    h.add_client("a0");
    h.add_client("a1");
    h.add_client("b0");
    auto cs = StateHandle::rw(h.states.client_selection);
    cs.put("num_tiers", Value(int64_t{2}));
    cs.put("client_to_tier_id_dict", "a0", Value(int64_t{0}));
    cs.put("client_to_tier_id_dict", "a1", Value(int64_t{0}));
    cs.put("client_to_tier_id_dict", "b0", Value(int64_t{1}));
    TrainSessionView session(StateHandle::rw(h.states.train_session), "s");
    session.set_global_model(scalar_model(0.0f));

    auto agg = make_aggregator("fedat");
    // tier 0 completes with model 1.0 (equal counts)
    cs.put("selected_clients_tier_0", Value(ValueList{Value("a0")}));
    auto c1 = h.agg_ctx({}, 0);
    auto g1 = agg->aggregate(c1, {"a0", scalar_model(1.0f), false, 1, 10});
    REQUIRE(g1.has_value());
    CHECK(g1->at("w").data[0] == doctest::Approx(1.0));  // only tier 0 has updates

    // tier 1 completes with model 4.0: counts now 1:1
    cs.put("selected_clients_tier_1", Value(ValueList{Value("b0")}));
    auto c2 = h.agg_ctx({}, 1);
    auto g2 = agg->aggregate(c2, {"b0", scalar_model(4.0f), false, 2, 10});
    REQUIRE(g2.has_value());
    CHECK(g2->at("w").data[0] == doctest::Approx((1.0 + 4.0) / 2.0));

    // tier 0 completes again with model 2.0: counts 2:1 -> (2*2 + 1*4)/3
    cs.put("selected_clients_tier_0", Value(ValueList{Value("a1")}));
    auto c3 = h.agg_ctx({}, 2);
    auto g3 = agg->aggregate(c3, {"a1", scalar_model(2.0f), false, 3, 10});
    REQUIRE(g3.has_value());
    CHECK(g3->at("w").data[0] == doctest::Approx((2.0 * 2.0 + 1.0 * 4.0) / 3.0));
}

TEST_CASE("fedat aggregator: pending tier returns NULL") {
    Harness h;
    h.add_client("a0");
    h.add_client("a1");
    auto cs = StateHandle::rw(h.states.client_selection);
    cs.put("num_tiers", Value(int64_t{1}));
    cs.put("client_to_tier_id_dict", "a0", Value(int64_t{0}));
    cs.put("client_to_tier_id_dict", "a1", Value(int64_t{0}));
    cs.put("selected_clients_tier_0", Value(ValueList{Value("a0"), Value("a1")}));
    TrainSessionView session(StateHandle::rw(h.states.train_session), "s");
    session.set_global_model(scalar_model(0.0f));
    auto agg = make_aggregator("fedat");
    auto c1 = h.agg_ctx({}, 0);
    CHECK(!agg->aggregate(c1, {"a0", scalar_model(1.0f), false, 1, 10}).has_value());
}

TEST_CASE("tifl selector: round 0 tiers by latency with equal probabilities") {
    Harness h;
    std::vector<std::string> avail = {"f0", "f1", "m0", "m1", "s0"};
    h.add_client("f0", 1.0);
    h.add_client("f1", 1.1);
    h.add_client("m0", 5.0);
    h.add_client("m1", 5.2);
    h.add_client("s0", 20.0);
    auto selector = make_selector("tifl");
    ValueMap cfg{{"num_tiers", Value(int64_t{3})}, {"num_clients", Value(int64_t{2})},
                 {"val_round_interval", Value(int64_t{0})}};
    auto ctx = h.cs_ctx(avail, cfg, 0);
    auto sel = selector->select(ctx);
    REQUIRE(sel.train_clients.has_value());
    CHECK(!sel.train_clients->empty());
    // tiers stored: fast pair, medium pair, slow singleton
    auto cs = StateHandle::ro(h.states.client_selection);
    CHECK(cs.get("num_tiers")->as_int() == 3);
    CHECK(cs.get("client_to_tier_id_dict", "f0")->as_int() ==
          cs.get("client_to_tier_id_dict", "f1")->as_int());
    CHECK(cs.get("client_to_tier_id_dict", "m0")->as_int() ==
          cs.get("client_to_tier_id_dict", "m1")->as_int());
    CHECK(cs.get("client_to_tier_id_dict", "s0")->as_int() !=
          cs.get("client_to_tier_id_dict", "f0")->as_int());
    auto probs = cs.get("tier_probs")->as_list();
    for (const auto& p : probs) CHECK(p.as_float() == doctest::Approx(1.0 / 3.0));
    // the selected clients come from a single tier
    std::set<int64_t> tiers_hit;
    for (const auto& c : *sel.train_clients)
        tiers_hit.insert(cs.get("client_to_tier_id_dict", c)->as_int());
    CHECK(tiers_hit.size() == 1);
}

TEST_CASE("tifl selector: validation sweep round returns all available clients") {
    Harness h;
    std::vector<std::string> avail = {"a", "b", "c"};
    for (auto& id : avail) h.add_client(id, 1.0);
    auto selector = make_selector("tifl");
    ValueMap cfg{{"num_tiers", Value(int64_t{2})}, {"num_clients", Value(int64_t{1})},
                 {"val_round_interval", Value(int64_t{10})}};
    // build tiers at round 0
    auto ctx0 = h.cs_ctx(avail, cfg, 0);
    auto sel0 = selector->select(ctx0);
    REQUIRE(sel0.train_clients.has_value());

    // round 10 boundary: first call starts the sweep
    auto ctx10 = h.cs_ctx(avail, cfg, 10);
    auto sel10 = selector->select(ctx10);
    REQUIRE(sel10.validate_clients.has_value());
    CHECK(sel10.validate_clients->size() == avail.size());
    CHECK(!sel10.train_clients.has_value());

    // validation metrics arrive for everyone; next call recomputes and selects
    ClientTrainingView train{StateHandle::rw(h.states.client_training)};
    double loss = 1.0;
    for (auto& id : avail) {
        ValueMap m{{"loss", Value(loss)}, {"round", Value(int64_t{10})}};
        train.set_validation_metrics(id, m);
        loss += 1.0;
    }
    auto ctx10b = h.cs_ctx(avail, cfg, 10);
    auto sel10b = selector->select(ctx10b);
    REQUIRE(sel10b.train_clients.has_value());
    // tier probabilities now proportional to mean validation loss
    auto probs = StateHandle::ro(h.states.client_selection).get("tier_probs")->as_list();
    double total = 0;
    for (const auto& p : probs) total += p.as_float();
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("haccs selector: histogram clustering, fastest-of-cluster, degenerate mixes") {
    Harness h;
    ClientInfoView info{StateHandle::rw(h.states.client_info)};
    auto with_hist = [&](const std::string& id, double bench, int64_t n0, int64_t n1) {
        h.add_client(id, bench);
        ValueMap counts{{"0", Value(n0)}, {"1", Value(n1)}};
        ValueMap details{{"dataset", Value("d")}, {"label_counts", Value(counts)}};
        info.set_dataset_details(id, details);
    };
    // A and B share a histogram (one cluster); C is different
    with_hist("A", 2.0, 90, 10);
    with_hist("B", 5.0, 90, 10);
    with_hist("C", 3.0, 10, 90);
    auto selector = make_selector("haccs");
    ValueMap cfg{{"num_clusters", Value(int64_t{2})}, {"num_clients", Value(int64_t{2})}};
    auto ctx = h.cs_ctx({"A", "B", "C"}, cfg, 0);
    auto sel = selector->select(ctx);
    REQUIRE(sel.train_clients.has_value());
    auto cs = StateHandle::ro(h.states.client_selection);
    CHECK(cs.get("client_to_tier_id_dict", "A")->as_int() ==
          cs.get("client_to_tier_id_dict", "B")->as_int());
    CHECK(cs.get("client_to_tier_id_dict", "C")->as_int() !=
          cs.get("client_to_tier_id_dict", "A")->as_int());
    // losses are all absent (equal), so sampling weight reduces to the latency
    // term: the {A,B} cluster has max latency 5 and gets all samples, and the
    // fastest-of-cluster rule picks A before B
    bool has_a = false, has_c = false;
    for (const auto& c : *sel.train_clients) {
        if (c == "A") has_a = true;
        if (c == "C") has_c = true;
    }
    CHECK(has_a);
    CHECK(!has_c);
}

TEST_CASE("haccs selector: clients without histograms are excluded") {
    Harness h;
    h.add_client("X", 1.0);
    StateHandle::rw(h.states.client_info).put("X", "dataset_details", Value(ValueMap{}));
    auto selector = make_selector("haccs");
    auto ctx = h.cs_ctx({"X"}, {}, 0);
    CHECK(selector->select(ctx).deferred());
}

TEST_CASE("strategy registry: names resolve, unknown rejected, composability") {
    for (const auto& name : {"fedavg", "fedasync", "tifl", "fedat", "haccs"}) {
        CHECK(make_selector(name) != nullptr);
        CHECK(make_aggregator(name) != nullptr);
    }
    CHECK_THROWS_AS(make_selector("fancy"), StrategyNotFound);
    CHECK_THROWS_AS(make_aggregator("fancy"), StrategyNotFound);
}
