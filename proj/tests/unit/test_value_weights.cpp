#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "skiff/codec.hpp"
#include "skiff/errors.hpp"
#include "skiff/value.hpp"
#include "skiff/weights.hpp"

using namespace skiff;

namespace {

ModelWeights random_model(std::mt19937_64& rng, int max_tensors = 4, int max_dim = 6) {
    std::uniform_int_distribution<int> nt(0, max_tensors);
    std::uniform_int_distribution<int> dim(1, max_dim);
    std::uniform_real_distribution<float> val(-2.0f, 2.0f);
    ModelWeights w;
    int tensors = nt(rng);
    for (int t = 0; t < tensors; ++t) {
        int rank = 1 + static_cast<int>(rng() % 3);
        std::vector<uint32_t> shape;
        for (int r = 0; r < rank; ++r) shape.push_back(static_cast<uint32_t>(dim(rng)));
        Tensor tensor = Tensor::zeros(shape);
        for (auto& v : tensor.data) v = val(rng);
        w.set("t" + std::to_string(t), std::move(tensor));
    }
    return w;
}

}  // namespace

TEST_CASE("weight wire: empty model is a bare header") {
    ModelWeights w;
    auto bytes = serialize_weights(w);
    CHECK(bytes.size() == 4);  // count only
    CHECK(bytes[0] == 0);
    CHECK(deserialize_weights(bytes).empty());
}

TEST_CASE("weight wire: one (2,3) tensor has a 24-byte payload") {
    ModelWeights w;
    w.set("W", Tensor::zeros({2, 3}));
    auto bytes = serialize_weights(w);
    // header: count(4) + namelen(4) + name(1) + ndims(4) + dims(8) = 21
    CHECK(bytes.size() == 21 + 24);
}

TEST_CASE("weight wire: random model roundtrip is bitwise identity") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 1000; ++i) {
        ModelWeights w = random_model(rng);
        ModelWeights back = deserialize_weights(serialize_weights(w));
        REQUIRE(back == w);
    }
}

TEST_CASE("weight wire: canonical bytes for equal models") {
    ModelWeights a, b;
    a.set("alpha", Tensor({2}, {1.0f, 2.0f}));
    a.set("beta", Tensor({1}, {3.0f}));
    // insert in the other order
    b.set("beta", Tensor({1}, {3.0f}));
    b.set("alpha", Tensor({2}, {1.0f, 2.0f}));
    CHECK(serialize_weights(a) == serialize_weights(b));
    CHECK(sha256_hex(serialize_weights(a)) == sha256_hex(serialize_weights(b)));
}

TEST_CASE("weight wire: truncated and oversized payloads are rejected") {
    ModelWeights w;
    w.set("W", Tensor({2, 2}, {1, 2, 3, 4}));
    auto bytes = serialize_weights(w);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_weights(truncated), MalformedFrame);
    auto oversized = bytes;
    oversized.push_back(0);
    CHECK_THROWS_AS(deserialize_weights(oversized), MalformedFrame);
}

TEST_CASE("value: scalar/list/map/bytes/weights encode roundtrip") {
    ValueMap m;
    m["int"] = Value(int64_t{-7});
    m["float"] = Value(3.5);
    m["bool"] = Value(true);
    m["str"] = Value("hello");
    m["bytes"] = Value::bytes({0, 1, 255});
    m["list"] = Value(ValueList{Value(1.0), Value("two"), Value()});
    ModelWeights w;
    w.set("W", Tensor({2}, {0.5f, -0.5f}));
    m["weights"] = Value(w);
    Value v(m);

    Value back = Value::decode(v.encode());
    CHECK(back == v);
    CHECK(back.as_map().at("weights").as_weights() == w);

    // json bridge for non-binary values
    Value jback = Value::from_json(v.to_json());
    CHECK(jback == v);
}

TEST_CASE("value: type errors are loud") {
    Value v(int64_t{3});
    CHECK_THROWS_AS(v.as_str(), Error);
    CHECK(v.as_float() == doctest::Approx(3.0));  // int coerces to float
    CHECK_THROWS_AS(Value("x").as_int(), Error);
}

TEST_CASE("base64 roundtrip") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        std::vector<uint8_t> data(rng() % 100);
        for (auto& b : data) b = static_cast<uint8_t>(rng());
        CHECK(base64_decode(base64_encode(data)) == data);
    }
    CHECK_THROWS_AS(base64_decode("a"), MalformedFrame);
}

TEST_CASE("sha256 known vector") {
    std::string s = "abc";
    CHECK(sha256_hex(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), 3)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
