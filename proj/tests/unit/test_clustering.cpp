#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "skiff/clustering.hpp"
#include "skiff/errors.hpp"

#include "../support/oracles.hpp"

using namespace skiff;

namespace {
/// Same partition up to cluster renaming.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> fwd, rev;
    for (size_t i = 0; i < a.size(); ++i) {
        auto f = fwd.find(a[i]);
        auto r = rev.find(b[i]);
        if (f == fwd.end() && r == rev.end()) {
            fwd[a[i]] = b[i];
            rev[b[i]] = a[i];
        } else if (f == fwd.end() || r == rev.end() || f->second != b[i] || r->second != a[i]) {
            return false;
        }
    }
    return true;
}
}  // namespace

TEST_CASE("clustering: k = n gives singletons, k = 1 one cluster") {
    std::vector<std::vector<double>> pts = {{0.0}, {1.0}, {5.0}, {9.0}};
    auto singletons = agglomerative_cluster(pts, 4);
    std::set<int> ids(singletons.begin(), singletons.end());
    CHECK(ids.size() == 4);
    auto one = agglomerative_cluster(pts, 1);
    for (int l : one) CHECK(l == 0);
}

TEST_CASE("clustering: latency tiers {1, 1.1, 5, 5.2, 20} at k=3") {
    std::vector<std::vector<double>> pts = {{1.0}, {1.1}, {5.0}, {5.2}, {20.0}};
    auto labels = agglomerative_cluster(pts, 3);
    CHECK(labels[0] == labels[1]);
    CHECK(labels[2] == labels[3]);
    CHECK(labels[0] != labels[2]);
    CHECK(labels[4] != labels[0]);
    CHECK(labels[4] != labels[2]);
}

TEST_CASE("clustering: matches the exhaustive reference on random instances") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int inst = 0; inst < 120; ++inst) {
        size_t n = 3 + rng() % 10;  // up to 12 points
        size_t dims = 1 + rng() % 3;
        std::vector<std::vector<double>> pts(n, std::vector<double>(dims));
        for (auto& p : pts)
            for (auto& v : p) v = u(rng);
        int k = 1 + static_cast<int>(rng() % n);
        auto got = agglomerative_cluster(pts, k);
        auto expected = skiff::test::reference_complete_linkage(pts, k);
        REQUIRE(same_partition(got, expected));
    }
}

TEST_CASE("clustering: bad k is rejected") {
    std::vector<std::vector<double>> pts = {{0.0}, {1.0}};
    CHECK_THROWS_AS(agglomerative_cluster(pts, 0), ShapeMismatch);
    CHECK_THROWS_AS(agglomerative_cluster(pts, 3), ShapeMismatch);
}
