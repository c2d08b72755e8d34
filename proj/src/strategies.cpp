#include "skiff/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "skiff/clustering.hpp"
#include "skiff/errors.hpp"
#include "skiff/log.hpp"
#include "skiff/state_views.hpp"

namespace skiff {

namespace {

int64_t cfg_int(const ValueMap& cfg, const std::string& key, int64_t def) {
    auto it = cfg.find(key);
    if (it == cfg.end() || it->second.is_nil()) return def;
    return it->second.kind() == Value::Kind::Float ? static_cast<int64_t>(it->second.as_float())
                                                   : it->second.as_int();
}

double cfg_double(const ValueMap& cfg, const std::string& key, double def) {
    auto it = cfg.find(key);
    if (it == cfg.end() || it->second.is_nil()) return def;
    return it->second.as_float();
}

int64_t current_round(const StrategyContext& ctx) {
    return cfg_int(ctx.user_config, strategy_key::kRound, 0);
}

uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t h = a ^ 0x9E3779B97F4A7C15ull;
    h ^= b + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xFF51AFD7ED558CCDull;
    h ^= h >> 33;
    return h;
}

/// Seeded RNG that differs across select calls: a persistent counter in the
/// selection state feeds the seed, so replays after restore stay
/// deterministic while repeated calls vary.
std::mt19937_64 selection_rng(StrategyContext& ctx, uint64_t salt) {
    uint64_t counter = 0;
    if (auto v = ctx.client_sel_state.get("__sel_counter")) counter = static_cast<uint64_t>(v->as_int());
    ctx.client_sel_state.put("__sel_counter", static_cast<int64_t>(counter + 1));
    uint64_t seed = static_cast<uint64_t>(cfg_int(ctx.user_config, strategy_key::kSeed, 0));
    return std::mt19937_64(mix64(mix64(seed, counter), salt));
}

std::vector<std::string> pick_k(std::mt19937_64& rng, std::vector<std::string> pool, size_t k) {
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > k) pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Active clients not currently dispatched.
std::vector<std::string> selectable_clients(const StrategyContext& ctx) {
    ClientInfoView info(ctx.client_info_state);
    std::vector<std::string> out;
    for (const auto& id : ctx.available_clients)
        if (!info.is_training(id)) out.push_back(id);
    return out;
}

Value str_list(const std::vector<std::string>& v) {
    ValueList l;
    for (const auto& s : v) l.push_back(Value(s));
    return Value(std::move(l));
}

std::vector<std::string> as_str_list(const Value& v) {
    std::vector<std::string> out;
    for (const auto& e : v.as_list()) out.push_back(e.as_str());
    return out;
}

// ---------------------------------------------------------------------------
// FedAvg

class FedAvgSelector final : public ClientSelector {
public:
    SelectionResult select(StrategyContext& ctx) override {
        int64_t round = current_round(ctx);
        // no new global model since the last selection: defer
        if (auto v = ctx.client_sel_state.get("selection_round"); v && v->as_int() == round + 1)
            return {};
        auto pool = selectable_clients(ctx);
        if (pool.empty()) return {};
        size_t k = batch_size(ctx, pool.size());
        auto rng = selection_rng(ctx, 0xFEDA);
        auto picked = pick_k(rng, pool, k);
        ctx.client_sel_state.put("selected_clients", str_list(picked));
        ctx.client_sel_state.put("selection_round", round + 1);
        SelectionResult r;
        r.train_clients = picked;
        return r;
    }

    void on_round_abort(StrategyContext& ctx) override {
        ctx.client_sel_state.erase("selection_round");
        ctx.client_sel_state.erase("selected_clients");
    }
    void on_resume(StrategyContext& ctx) override { on_round_abort(ctx); }

private:
    static size_t batch_size(const StrategyContext& ctx, size_t pool) {
        int64_t num = cfg_int(ctx.user_config, "num_clients", 0);
        if (num > 0) return std::min<size_t>(pool, static_cast<size_t>(num));
        double fraction = cfg_double(ctx.user_config, "fraction", 1.0);
        auto k = static_cast<size_t>(std::floor(fraction * static_cast<double>(pool)));
        return std::clamp<size_t>(k, 1, pool);
    }
};

class FedAvgAggregator final : public Aggregator {
public:
    std::optional<ModelWeights> aggregate(StrategyContext& ctx, const AggregateInput& in) override {
        int64_t round = current_round(ctx);
        int64_t expected = round + 1;
        if (in.update_round != expected) return std::nullopt;  // stale leftover
        std::string stash_key = "clientweights_" + std::to_string(in.update_round);
        std::string count_key = "clientcounts_" + std::to_string(in.update_round);
        std::string failed_key = "clientfailed_" + std::to_string(in.update_round);

        if (in.failure || !in.local_model) {
            ctx.agg_state.put(failed_key, in.client_id, true);
            return std::nullopt;
        }
        ctx.agg_state.put(stash_key, in.client_id, Value(*in.local_model));
        ctx.agg_state.put(count_key, in.client_id, in.data_count);

        std::vector<std::string> selected;
        if (auto v = ctx.client_sel_state.get("selected_clients")) selected = as_str_list(*v);
        if (selected.empty()) return std::nullopt;
        size_t n = selected.size();
        int64_t m_cfg = cfg_int(ctx.user_config, strategy_key::kMinClients, 0);
        size_t m = m_cfg > 0 ? std::min<size_t>(n, static_cast<size_t>(m_cfg)) : n;

        std::vector<std::pair<ModelWeights, double>> models;
        for (const auto& cid : selected) {
            auto w = ctx.agg_state.get(stash_key, cid);
            if (!w) continue;
            auto c = ctx.agg_state.get(count_key, cid);
            double count = c ? static_cast<double>(c->as_int()) : 1.0;
            models.emplace_back(w->as_weights(), count > 0 ? count : 1.0);
        }
        if (models.size() < m) return std::nullopt;
        ModelWeights global = fedavg_aggregate(models);
        ctx.agg_state.clear();  // new round starts with a clean aggregation state
        return global;
    }

    void on_round_abort(StrategyContext& ctx) override { ctx.agg_state.clear(); }
    void on_resume(StrategyContext& ctx) override { ctx.agg_state.clear(); }
};

// ---------------------------------------------------------------------------
// FedAsync

class FedAsyncSelector final : public ClientSelector {
public:
    SelectionResult select(StrategyContext& ctx) override {
        ClientInfoView info(ctx.client_info_state);
        size_t outstanding = 0;
        for (const auto& id : ctx.available_clients)
            if (info.is_training(id)) ++outstanding;

        size_t target;
        if (auto v = ctx.client_sel_state.get("target_concurrency")) {
            target = static_cast<size_t>(v->as_int());
        } else {
            double fraction = cfg_double(ctx.user_config, "fraction", 0.25);
            int64_t num = cfg_int(ctx.user_config, "num_clients", 0);
            size_t pool = ctx.available_clients.size();
            target = num > 0 ? static_cast<size_t>(num)
                             : std::max<size_t>(1, static_cast<size_t>(std::floor(
                                                       fraction * static_cast<double>(pool))));
            ctx.client_sel_state.put("target_concurrency", static_cast<int64_t>(target));
        }
        if (outstanding >= target) return {};
        auto pool = selectable_clients(ctx);
        if (pool.empty()) return {};
        auto rng = selection_rng(ctx, 0xA5C);
        auto picked = pick_k(rng, pool, target - outstanding);
        SelectionResult r;
        r.train_clients = picked;
        return r;
    }

    bool accepts_stale_responses() const override { return true; }
};

class FedAsyncAggregator final : public Aggregator {
public:
    std::optional<ModelWeights> aggregate(StrategyContext& ctx, const AggregateInput& in) override {
        if (in.failure || !in.local_model) return std::nullopt;
        TrainSessionView session(ctx.train_session_state, ctx.session_id);
        auto global = session.global_model();
        if (!global) return std::nullopt;
        int64_t t = current_round(ctx);
        int64_t tau = in.update_round - 1;  // global model version the update trained from
        double alpha = cfg_double(ctx.user_config, "alpha", 0.9);
        double a = cfg_double(ctx.user_config, "staleness_exponent", 0.5);
        return fedasync_aggregate(*global, *in.local_model, tau, t, alpha, a);
    }
};

// ---------------------------------------------------------------------------
// Tier helpers shared by TiFL and FedAT

struct TierTable {
    std::vector<std::vector<std::string>> tiers;
};

/// Clusters clients by benchmark latency into `num_tiers` groups. Clients
/// without a benchmark are left untiered (logged).
TierTable build_latency_tiers(StrategyContext& ctx, int num_tiers) {
    ClientInfoView info(ctx.client_info_state);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> points;
    for (const auto& id : ctx.available_clients) {
        auto b = info.benchmark(id);
        if (!b) {
            log_kv("strategy", "client_without_benchmark_untiered", {{"client", id}});
            continue;
        }
        ids.push_back(id);
        points.push_back({*b});
    }
    TierTable table;
    if (ids.empty()) return table;
    int k = std::min<int>(num_tiers, static_cast<int>(ids.size()));
    auto labels = agglomerative_cluster(points, k);
    // order tiers by mean latency so tier 0 is the fastest
    std::vector<double> sum(k, 0);
    std::vector<int> cnt(k, 0);
    for (size_t i = 0; i < ids.size(); ++i) {
        sum[labels[i]] += points[i][0];
        ++cnt[labels[i]];
    }
    std::vector<int> order(k);
    for (int i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return sum[a] / cnt[a] < sum[b] / cnt[b]; });
    std::vector<int> rank(k);
    for (int i = 0; i < k; ++i) rank[order[i]] = i;
    table.tiers.resize(k);
    for (size_t i = 0; i < ids.size(); ++i) table.tiers[rank[labels[i]]].push_back(ids[i]);
    return table;
}

void store_tiers(StateHandle& state, const TierTable& table) {
    state.put("num_tiers", static_cast<int64_t>(table.tiers.size()));
    for (size_t t = 0; t < table.tiers.size(); ++t) {
        state.put("tier_members", std::to_string(t), str_list(table.tiers[t]));
        for (const auto& cid : table.tiers[t])
            state.put("client_to_tier_id_dict", cid, static_cast<int64_t>(t));
    }
}

std::optional<TierTable> load_tiers(const StateHandle& state) {
    auto n = state.get("num_tiers");
    if (!n) return std::nullopt;
    TierTable table;
    table.tiers.resize(static_cast<size_t>(n->as_int()));
    for (size_t t = 0; t < table.tiers.size(); ++t) {
        auto v = state.get("tier_members", std::to_string(t));
        if (v) table.tiers[t] = as_str_list(*v);
    }
    return table;
}

std::optional<int> tier_of(const StateHandle& state, const std::string& cid) {
    auto v = state.get("client_to_tier_id_dict", cid);
    if (!v) return std::nullopt;
    return static_cast<int>(v->as_int());
}

// ---------------------------------------------------------------------------
// TiFL

class TiflSelector final : public ClientSelector {
public:
    SelectionResult select(StrategyContext& ctx) override {
        int64_t round = current_round(ctx);
        if (!ctx.agg_state.empty()) return {};  // mid-round

        if (!ctx.client_sel_state.get("num_tiers")) {
            auto table = build_latency_tiers(ctx, static_cast<int>(cfg_int(ctx.user_config, "num_tiers", 3)));
            if (table.tiers.empty()) return {};
            store_tiers(ctx.client_sel_state, table);
            size_t k = table.tiers.size();
            ValueList probs(k, Value(1.0 / static_cast<double>(k)));  // equal for all tiers
            ctx.client_sel_state.put("tier_probs", Value(probs));
            int64_t credits = cfg_int(ctx.user_config, "credits_per_tier",
                                      std::max<int64_t>(1, cfg_int(ctx.user_config, strategy_key::kNumRounds, 0) /
                                                               static_cast<int64_t>(k)));
            for (size_t t = 0; t < k; ++t)
                ctx.client_sel_state.put("tier_credits", std::to_string(t), credits);
            ctx.client_sel_state.put("val_ongoing", false);
        }

        // every val_round_interval rounds, sweep client-side validation and
        // refresh tier probabilities from the reported losses
        int64_t vri = cfg_int(ctx.user_config, "val_round_interval", 10);
        bool val_ongoing = ctx.client_sel_state.get("val_ongoing") &&
                           ctx.client_sel_state.get("val_ongoing")->as_bool();
        if (vri > 0 && round > 0 && round % vri == 0) {
            int64_t last_sweep = -1;
            if (auto v = ctx.client_sel_state.get("last_val_round")) last_sweep = v->as_int();
            if (!val_ongoing && last_sweep != round) {
                ctx.client_sel_state.put("val_ongoing", true);
                ctx.client_sel_state.put("last_val_round", round);
                ctx.client_sel_state.put("val_pending", str_list(ctx.available_clients));
                SelectionResult r;
                r.validate_clients = ctx.available_clients;
                return r;
            }
        }
        if (val_ongoing) {
            if (!collect_validation(ctx, round)) return {};  // still waiting
        }

        if (auto v = ctx.client_sel_state.get("selection_round"); v && v->as_int() == round + 1)
            return {};

        auto table = load_tiers(ctx.client_sel_state);
        if (!table) return {};
        std::vector<double> probs = load_probs(ctx, table->tiers.size());
        std::set<std::string> selectable;
        for (const auto& id : selectable_clients(ctx)) selectable.insert(id);

        // a tier is eligible if it has credits and at least one selectable client
        std::vector<size_t> eligible;
        bool any_credit = false;
        for (size_t t = 0; t < table->tiers.size(); ++t) {
            bool members = std::any_of(table->tiers[t].begin(), table->tiers[t].end(),
                                       [&](const std::string& c) { return selectable.count(c) > 0; });
            if (!members) continue;
            int64_t credits = tier_credits(ctx, t);
            if (credits > 0) {
                eligible.push_back(t);
                any_credit = true;
            }
        }
        if (!any_credit) {
            // all tiers exhausted their credits: fall back to every tier with members
            for (size_t t = 0; t < table->tiers.size(); ++t) {
                bool members = std::any_of(table->tiers[t].begin(), table->tiers[t].end(),
                                           [&](const std::string& c) { return selectable.count(c) > 0; });
                if (members) eligible.push_back(t);
            }
            if (!eligible.empty()) log_kv("strategy", "tifl_credits_exhausted");
        }
        if (eligible.empty()) return {};

        auto rng = selection_rng(ctx, 0x71F7);
        double total = 0;
        for (size_t t : eligible) total += probs[t];
        std::uniform_real_distribution<double> u(0.0, total > 0 ? total : 1.0);
        double draw = u(rng);
        size_t chosen = eligible.back();
        double acc = 0;
        for (size_t t : eligible) {
            acc += total > 0 ? probs[t] : 1.0 / static_cast<double>(eligible.size());
            if (draw <= acc) {
                chosen = t;
                break;
            }
        }
        if (any_credit)
            ctx.client_sel_state.put("tier_credits", std::to_string(chosen), tier_credits(ctx, chosen) - 1);
        ctx.client_sel_state.put("charged_tier", static_cast<int64_t>(chosen));

        std::vector<std::string> pool;
        for (const auto& c : table->tiers[chosen])
            if (selectable.count(c) > 0) pool.push_back(c);
        size_t k = static_cast<size_t>(cfg_int(ctx.user_config, "num_clients", 2));
        auto picked = pick_k(rng, pool, std::min(k, pool.size()));
        ctx.client_sel_state.put("selected_clients", str_list(picked));
        ctx.client_sel_state.put("selection_round", round + 1);
        SelectionResult r;
        r.train_clients = picked;
        return r;
    }

    void on_round_abort(StrategyContext& ctx) override {
        if (auto t = ctx.client_sel_state.get("charged_tier")) {  // refund the credit
            ctx.client_sel_state.put("tier_credits", std::to_string(t->as_int()),
                                     tier_credits(ctx, static_cast<size_t>(t->as_int())) + 1);
        }
        ctx.client_sel_state.erase("selection_round");
        ctx.client_sel_state.erase("selected_clients");
        ctx.client_sel_state.erase("charged_tier");
    }

    void on_resume(StrategyContext& ctx) override {
        ctx.client_sel_state.erase("selection_round");
        ctx.client_sel_state.erase("selected_clients");
        ctx.client_sel_state.erase("charged_tier");
        ctx.client_sel_state.put("val_ongoing", false);
        ctx.client_sel_state.erase("val_pending");
        ctx.client_sel_state.erase("last_val_round");
        ctx.client_sel_state.erase_primary("val_loss");
    }

private:
    static int64_t tier_credits(const StrategyContext& ctx, size_t tier) {
        auto v = ctx.client_sel_state.get("tier_credits", std::to_string(tier));
        return v ? v->as_int() : 0;
    }

    std::vector<double> load_probs(const StrategyContext& ctx, size_t k) {
        std::vector<double> probs(k, 1.0 / static_cast<double>(k));
        if (auto v = ctx.client_sel_state.get("tier_probs")) {
            const auto& l = v->as_list();
            for (size_t i = 0; i < std::min(k, l.size()); ++i) probs[i] = l[i].as_float();
        }
        return probs;
    }

    /// Gathers client validation losses for the sweep; returns true once all
    /// pending clients have reported (or can no longer report).
    bool collect_validation(StrategyContext& ctx, int64_t round) {
        ClientTrainingView train(ctx.client_train_state);
        ClientInfoView info(ctx.client_info_state);
        std::vector<std::string> pending;
        if (auto v = ctx.client_sel_state.get("val_pending")) pending = as_str_list(*v);
        std::vector<std::string> still_pending;
        for (const auto& cid : pending) {
            auto metrics = train.validation_metrics(cid);
            bool reported = false;
            if (metrics) {
                auto it = metrics->find("round");
                if (it != metrics->end() && it->second.as_int() == round) {
                    auto lit = metrics->find("loss");
                    if (lit != metrics->end())
                        ctx.client_sel_state.put("val_loss", cid, lit->second.as_float());
                    reported = true;
                }
            }
            bool gone = !info.is_active(cid) || (!info.is_training(cid) && !reported);
            if (!reported && !gone) still_pending.push_back(cid);
        }
        ctx.client_sel_state.put("val_pending", str_list(still_pending));
        if (!still_pending.empty()) return false;

        // all in: tier probability proportional to mean validation loss
        auto table = load_tiers(ctx.client_sel_state);
        if (table) {
            size_t k = table->tiers.size();
            std::vector<double> mean(k, 0);
            for (size_t t = 0; t < k; ++t) {
                double sum = 0;
                int cnt = 0;
                for (const auto& cid : table->tiers[t]) {
                    if (auto v = ctx.client_sel_state.get("val_loss", cid)) {
                        sum += v->as_float();
                        ++cnt;
                    }
                }
                mean[t] = cnt > 0 ? sum / cnt : 0.0;
            }
            double total = 0;
            for (double m : mean) total += m;
            ValueList probs;
            for (size_t t = 0; t < k; ++t)
                probs.push_back(Value(total > 0 ? mean[t] / total : 1.0 / static_cast<double>(k)));
            ctx.client_sel_state.put("tier_probs", Value(std::move(probs)));
        }
        ctx.client_sel_state.put("val_ongoing", false);
        ctx.client_sel_state.erase_primary("val_loss");
        return true;
    }
};

// ---------------------------------------------------------------------------
// HACCS

class HaccsSelector final : public ClientSelector {
public:
    SelectionResult select(StrategyContext& ctx) override {
        int64_t round = current_round(ctx);
        if (auto v = ctx.client_sel_state.get("selection_round"); v && v->as_int() == round + 1)
            return {};

        if (!ctx.client_sel_state.get("num_tiers")) {
            if (!build_histogram_clusters(ctx)) return {};
        }
        auto table = load_tiers(ctx.client_sel_state);
        if (!table || table->tiers.empty()) return {};

        ClientInfoView info(ctx.client_info_state);
        ClientTrainingView train(ctx.client_train_state);
        std::set<std::string> selectable;
        for (const auto& id : selectable_clients(ctx)) selectable.insert(id);

        size_t k = table->tiers.size();
        std::vector<double> loss(k, 0), lat(k, 0);
        for (size_t t = 0; t < k; ++t) {
            double lsum = 0;
            int lcnt = 0;
            double maxlat = 0;
            for (const auto& cid : table->tiers[t]) {
                if (auto m = train.training_metrics(cid)) {
                    auto it = m->find("loss");
                    if (it != m->end()) {
                        lsum += it->second.as_float();
                        ++lcnt;
                    }
                }
                if (auto b = info.benchmark(cid)) maxlat = std::max(maxlat, *b);
            }
            loss[t] = lcnt > 0 ? lsum / lcnt : 0.0;
            lat[t] = maxlat;
        }
        auto minmax_norm = [](std::vector<double>& v) {
            auto [mn, mx] = std::minmax_element(v.begin(), v.end());
            double lo = *mn, hi = *mx;
            for (auto& x : v) x = hi > lo ? (x - lo) / (hi - lo) : 0.0;
        };
        minmax_norm(loss);
        minmax_norm(lat);
        double lambda = cfg_double(ctx.user_config, "lambda", 0.5);
        std::vector<double> weight(k);
        double total = 0;
        for (size_t t = 0; t < k; ++t) {
            weight[t] = lambda * loss[t] + (1.0 - lambda) * lat[t];
            total += weight[t];
        }

        auto rng = selection_rng(ctx, 0x4ACC5);
        size_t slots = static_cast<size_t>(cfg_int(ctx.user_config, "num_clients", 2));
        std::set<std::string> picked_set;
        std::vector<std::string> picked;
        for (size_t s = 0; s < slots; ++s) {
            // sample a cluster with replacement by weight (uniform when degenerate)
            size_t chosen = 0;
            if (total > 0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double draw = u(rng), acc = 0;
                for (size_t t = 0; t < k; ++t) {
                    acc += weight[t];
                    if (draw <= acc) {
                        chosen = t;
                        break;
                    }
                }
            } else {
                chosen = static_cast<size_t>(rng() % k);
            }
            // fastest selectable client of the sampled cluster
            std::string best;
            double best_lat = std::numeric_limits<double>::infinity();
            for (const auto& cid : table->tiers[chosen]) {
                if (selectable.count(cid) == 0 || picked_set.count(cid) > 0) continue;
                double l = info.benchmark(cid).value_or(std::numeric_limits<double>::max());
                if (l < best_lat || (l == best_lat && cid < best)) {
                    best_lat = l;
                    best = cid;
                }
            }
            if (best.empty()) continue;  // cluster exhausted this batch
            picked.push_back(best);
            picked_set.insert(best);
        }
        if (picked.empty()) return {};
        std::sort(picked.begin(), picked.end());
        ctx.client_sel_state.put("selected_clients", str_list(picked));
        ctx.client_sel_state.put("selection_round", round + 1);
        SelectionResult r;
        r.train_clients = picked;
        return r;
    }

    void on_round_abort(StrategyContext& ctx) override {
        ctx.client_sel_state.erase("selection_round");
        ctx.client_sel_state.erase("selected_clients");
    }
    void on_resume(StrategyContext& ctx) override { on_round_abort(ctx); }

private:
    /// Clusters clients by their normalized label histograms.
    bool build_histogram_clusters(StrategyContext& ctx) {
        ClientInfoView info(ctx.client_info_state);
        std::set<std::string> label_space;
        std::map<std::string, std::map<std::string, double>> hist;
        for (const auto& id : ctx.available_clients) {
            auto d = info.dataset_details(id);
            if (!d) {
                log_kv("strategy", "haccs_missing_histogram", {{"client", id}});
                continue;
            }
            auto it = d->find("label_counts");
            if (it == d->end() || it->second.kind() != Value::Kind::Map || it->second.as_map().empty()) {
                log_kv("strategy", "haccs_missing_histogram", {{"client", id}});
                continue;
            }
            for (const auto& [label, count] : it->second.as_map()) {
                hist[id][label] = static_cast<double>(count.as_int());
                label_space.insert(label);
            }
        }
        if (hist.empty()) return false;
        std::vector<std::string> ids;
        std::vector<std::vector<double>> points;
        for (auto& [id, counts] : hist) {
            double total = 0;
            for (auto& [_, c] : counts) total += c;
            std::vector<double> vec;
            vec.reserve(label_space.size());
            for (const auto& label : label_space) {
                auto it = counts.find(label);
                vec.push_back(it == counts.end() ? 0.0 : it->second / total);
            }
            ids.push_back(id);
            points.push_back(std::move(vec));
        }
        int k = std::min<int>(static_cast<int>(cfg_int(ctx.user_config, "num_clusters", 4)),
                              static_cast<int>(ids.size()));
        auto labels = agglomerative_cluster(points, std::max(k, 1));
        TierTable table;
        table.tiers.resize(static_cast<size_t>(*std::max_element(labels.begin(), labels.end())) + 1);
        for (size_t i = 0; i < ids.size(); ++i) table.tiers[labels[i]].push_back(ids[i]);
        store_tiers(ctx.client_sel_state, table);
        return true;
    }
};

// ---------------------------------------------------------------------------
// FedAT

class FedAtSelector final : public ClientSelector {
public:
    SelectionResult select(StrategyContext& ctx) override {
        int64_t round = current_round(ctx);
        auto per_tier = static_cast<size_t>(cfg_int(ctx.user_config, "num_clients_selected_per_tier", 2));

        if (!ctx.client_sel_state.get("num_tiers")) {
            auto table = build_latency_tiers(ctx, static_cast<int>(cfg_int(ctx.user_config, "num_tiers", 3)));
            if (table.tiers.empty()) return {};
            store_tiers(ctx.client_sel_state, table);
            for (size_t t = 0; t < table.tiers.size(); ++t)
                ctx.client_sel_state.put("cs_tier_agg_num", std::to_string(t), int64_t{0});
            return dispatch_tiers(ctx, table, all_tiers(table), per_tier, round);
        }

        auto table = load_tiers(ctx.client_sel_state);
        if (!table) return {};

        if (auto v = ctx.client_sel_state.get("redispatch_all"); v && v->as_bool()) {
            ctx.client_sel_state.erase("redispatch_all");
            sync_counters(ctx, table->tiers.size());
            return dispatch_tiers(ctx, *table, all_tiers(*table), per_tier, round);
        }

        // a tier whose aggregation counter advanced gets a fresh batch
        for (size_t t = 0; t < table->tiers.size(); ++t) {
            int64_t agg_num = 0;
            if (auto v = ctx.agg_state.get("update_count_tier_" + std::to_string(t)))
                agg_num = v->as_int();
            int64_t cs_num = 0;
            if (auto v = ctx.client_sel_state.get("cs_tier_agg_num", std::to_string(t)))
                cs_num = v->as_int();
            if (cs_num < agg_num) {
                ctx.client_sel_state.put("cs_tier_agg_num", std::to_string(t), cs_num + 1);
                return dispatch_tiers(ctx, *table, {t}, per_tier, round);
            }
        }

        // a tier whose whole batch failed is re-dispersed without advancing counters
        ClientInfoView info(ctx.client_info_state);
        for (size_t t = 0; t < table->tiers.size(); ++t) {
            auto sel = ctx.client_sel_state.get("selected_clients_tier_" + std::to_string(t));
            auto rv = ctx.client_sel_state.get("dispatch_round_tier_" + std::to_string(t));
            if (!sel || !rv) continue;
            auto batch = as_str_list(*sel);
            if (batch.empty()) continue;
            int64_t dispatch_round = rv->as_int();
            bool all_failed = true;
            for (const auto& cid : batch) {
                auto failed = info.failed_rounds(cid);
                if (std::find(failed.begin(), failed.end(), dispatch_round) == failed.end()) {
                    all_failed = false;
                    break;
                }
            }
            if (all_failed) {
                log_kv("strategy", "fedat_tier_redispersed", {{"tier", std::to_string(t)}});
                return dispatch_tiers(ctx, *table, {t}, per_tier, round);
            }
        }
        return {};
    }

    bool accepts_stale_responses() const override { return true; }

    void on_resume(StrategyContext& ctx) override {
        ctx.client_sel_state.put("redispatch_all", true);
    }

private:
    static std::vector<size_t> all_tiers(const TierTable& table) {
        std::vector<size_t> v(table.tiers.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = i;
        return v;
    }

    void sync_counters(StrategyContext& ctx, size_t tiers) {
        for (size_t t = 0; t < tiers; ++t) {
            int64_t agg_num = 0;
            if (auto v = ctx.agg_state.get("update_count_tier_" + std::to_string(t)))
                agg_num = v->as_int();
            ctx.client_sel_state.put("cs_tier_agg_num", std::to_string(t), agg_num);
        }
    }

    SelectionResult dispatch_tiers(StrategyContext& ctx, const TierTable& table,
                                   const std::vector<size_t>& tiers, size_t per_tier, int64_t round) {
        std::set<std::string> selectable;
        for (const auto& id : selectable_clients(ctx)) selectable.insert(id);
        auto rng = selection_rng(ctx, 0xFEDA7);
        std::vector<std::string> all;
        for (size_t t : tiers) {
            std::vector<std::string> pool;
            for (const auto& cid : table.tiers[t])
                if (selectable.count(cid) > 0) pool.push_back(cid);
            auto picked = pick_k(rng, pool, std::min(per_tier, pool.size()));
            if (picked.empty()) continue;
            ctx.client_sel_state.put("selected_clients_tier_" + std::to_string(t), str_list(picked));
            ctx.client_sel_state.put("dispatch_round_tier_" + std::to_string(t), round + 1);
            for (const auto& c : picked) all.push_back(c);
        }
        if (all.empty()) return {};
        std::sort(all.begin(), all.end());
        SelectionResult r;
        r.train_clients = all;
        return r;
    }
};

class FedAtAggregator final : public Aggregator {
public:
    std::optional<ModelWeights> aggregate(StrategyContext& ctx, const AggregateInput& in) override {
        TrainSessionView session(ctx.train_session_state, ctx.session_id);
        int64_t num_tiers = 0;
        if (auto v = ctx.client_sel_state.get("num_tiers")) num_tiers = v->as_int();
        if (num_tiers == 0) return std::nullopt;

        if (!ctx.agg_state.get("initialized")) {
            auto global = session.global_model();
            for (int64_t t = 0; t < num_tiers; ++t) {
                ctx.agg_state.put("update_count_tier_" + std::to_string(t), int64_t{0});
                if (global)
                    ctx.agg_state.put("tier_model_tier_" + std::to_string(t), Value(*global));
            }
            ctx.agg_state.put("initialized", true);
        }

        auto tier_opt = tier_of(ctx.client_sel_state, in.client_id);
        if (!tier_opt) {
            log_kv("strategy", "fedat_response_from_untiered_client", {{"client", in.client_id}});
            return std::nullopt;
        }
        std::string t = std::to_string(*tier_opt);

        if (in.failure || !in.local_model) {
            ctx.agg_state.put("clientfailed_" + t, in.client_id, in.update_round);
        } else {
            ctx.agg_state.put("clientweights_" + t, in.client_id, Value(*in.local_model));
            ctx.agg_state.put("clientcounts_" + t, in.client_id, in.data_count);
        }

        std::vector<std::string> selected;
        if (auto v = ctx.client_sel_state.get("selected_clients_tier_" + t)) selected = as_str_list(*v);
        if (selected.empty()) return std::nullopt;

        size_t resolved = 0;
        std::vector<std::pair<ModelWeights, double>> models;
        for (const auto& cid : selected) {
            if (auto w = ctx.agg_state.get("clientweights_" + t, cid)) {
                ++resolved;
                auto c = ctx.agg_state.get("clientcounts_" + t, cid);
                double count = c ? static_cast<double>(c->as_int()) : 1.0;
                models.emplace_back(w->as_weights(), count > 0 ? count : 1.0);
            } else if (ctx.agg_state.get("clientfailed_" + t, cid)) {
                ++resolved;
            }
        }
        if (resolved < selected.size()) return std::nullopt;  // tier still pending

        ctx.agg_state.erase_primary("clientweights_" + t);
        ctx.agg_state.erase_primary("clientcounts_" + t);
        ctx.agg_state.erase_primary("clientfailed_" + t);

        if (models.empty()) return std::nullopt;  // whole batch failed; CS re-disperses

        ModelWeights tier_model = fedavg_aggregate(models);
        int64_t count = 0;
        if (auto v = ctx.agg_state.get("update_count_tier_" + t)) count = v->as_int();
        ctx.agg_state.put("update_count_tier_" + t, count + 1);
        ctx.agg_state.put("tier_model_tier_" + t, Value(tier_model));

        // global model: tier models averaged, weighted by their update counts
        std::vector<std::pair<ModelWeights, double>> tier_models;
        for (int64_t i = 0; i < num_tiers; ++i) {
            auto cnt = ctx.agg_state.get("update_count_tier_" + std::to_string(i));
            auto model = ctx.agg_state.get("tier_model_tier_" + std::to_string(i));
            if (!cnt || !model || cnt->as_int() == 0) continue;
            tier_models.emplace_back(model->as_weights(), static_cast<double>(cnt->as_int()));
        }
        return fedavg_aggregate(tier_models);
    }

    void on_resume(StrategyContext& ctx) override {
        // keep tier models and counters; drop in-flight stashes
        auto keys = ctx.agg_state.keys();
        for (const auto& [primary, secondary] : keys) {
            if (primary.rfind("clientweights_", 0) == 0 || primary.rfind("clientcounts_", 0) == 0 ||
                primary.rfind("clientfailed_", 0) == 0)
                ctx.agg_state.erase(primary, secondary);
        }
    }
};

}  // namespace

ModelWeights fedavg_aggregate(const std::vector<std::pair<ModelWeights, double>>& models) {
    if (models.empty()) throw ShapeMismatch("nothing to aggregate");
    double total = 0;
    for (const auto& [w, n] : models) {
        if (!w.same_shapes(models[0].first)) throw ShapeMismatch("model shapes disagree");
        total += n;
    }
    if (total <= 0) throw ShapeMismatch("total sample weight must be positive");

    ModelWeights out = models[0].first;
    for (auto& [name, tensor] : out) {
        std::vector<double> acc(tensor.data.size(), 0.0);
        for (const auto& [w, n] : models) {
            const auto& src = w.at(name).data;
            for (size_t i = 0; i < src.size(); ++i) acc[i] += n * static_cast<double>(src[i]);
        }
        for (size_t i = 0; i < tensor.data.size(); ++i)
            tensor.data[i] = static_cast<float>(acc[i] / total);
    }
    return out;
}

ModelWeights fedasync_aggregate(const ModelWeights& global, const ModelWeights& update,
                                int64_t update_round, int64_t current_round, double alpha, double a) {
    if (!global.same_shapes(update)) throw ShapeMismatch("global/update shapes disagree");
    if (current_round < update_round) throw Error("update from the future: t < tau");
    if (alpha <= 0 || alpha > 1) throw Error("alpha must be in (0, 1]");
    double staleness = static_cast<double>(current_round - update_round);
    double alpha_t = alpha * std::pow(staleness + 1.0, -a);
    ModelWeights out = global;
    for (auto& [name, tensor] : out) {
        const auto& u = update.at(name).data;
        for (size_t i = 0; i < tensor.data.size(); ++i)
            tensor.data[i] = static_cast<float>((1.0 - alpha_t) * static_cast<double>(tensor.data[i]) +
                                                alpha_t * static_cast<double>(u[i]));
    }
    return out;
}

std::unique_ptr<ClientSelector> make_selector(const std::string& name) {
    if (name == "fedavg") return std::make_unique<FedAvgSelector>();
    if (name == "fedasync") return std::make_unique<FedAsyncSelector>();
    if (name == "tifl") return std::make_unique<TiflSelector>();
    if (name == "fedat") return std::make_unique<FedAtSelector>();
    if (name == "haccs") return std::make_unique<HaccsSelector>();
    throw StrategyNotFound("no client-selection strategy named '" + name + "'");
}

std::unique_ptr<Aggregator> make_aggregator(const std::string& name) {
    // TiFL and HACCS share the FedAvg aggregation logic
    if (name == "fedavg" || name == "tifl" || name == "haccs")
        return std::make_unique<FedAvgAggregator>();
    if (name == "fedasync") return std::make_unique<FedAsyncAggregator>();
    if (name == "fedat") return std::make_unique<FedAtAggregator>();
    throw StrategyNotFound("no aggregation strategy named '" + name + "'");
}

bool selector_exists(const std::string& name) {
    return name == "fedavg" || name == "fedasync" || name == "tifl" || name == "fedat" ||
           name == "haccs";
}

bool aggregator_exists(const std::string& name) {
    return name == "fedavg" || name == "fedasync" || name == "tifl" || name == "fedat" ||
           name == "haccs";
}

}  // namespace skiff
