#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skiff/weights.hpp"

namespace skiff {

class Value;
using ValueList = std::vector<Value>;
using ValueMap = std::map<std::string, Value>;

/// Self-describing state value: scalar, string, byte blob, list, nested map,
/// or a full set of model weights. Carries its own tagged binary encoding so
/// state backends and checkpoints can persist entries without schema
/// knowledge; weights embed the canonical wire format to stay bit-exact.
class Value {
public:
    enum class Kind : uint8_t {
        Nil = 0,
        Bool = 1,
        Int = 2,
        Float = 3,
        Str = 4,
        Bytes = 5,
        List = 6,
        Map = 7,
        Weights = 8,
    };

    Value() : v_(std::monostate{}) {}
    Value(bool b) : v_(b) {}
    Value(int v) : v_(static_cast<int64_t>(v)) {}
    Value(int64_t v) : v_(v) {}
    Value(double v) : v_(v) {}
    Value(const char* s) : v_(std::string(s)) {}
    Value(std::string s) : v_(std::move(s)) {}
    Value(ValueList l) : v_(std::move(l)) {}
    Value(ValueMap m) : v_(std::move(m)) {}
    Value(ModelWeights w) : v_(std::move(w)) {}
    static Value bytes(std::vector<uint8_t> b) { return Value(Blob{std::move(b)}); }

    Kind kind() const;
    bool is_nil() const { return kind() == Kind::Nil; }

    bool as_bool() const;
    int64_t as_int() const;
    double as_float() const;  // accepts Int and Float
    const std::string& as_str() const;
    const std::vector<uint8_t>& as_bytes() const;
    const ValueList& as_list() const;
    const ValueMap& as_map() const;
    ValueMap& as_map();
    ValueList& as_list();
    const ModelWeights& as_weights() const;

    void encode(std::vector<uint8_t>& out) const;
    std::vector<uint8_t> encode() const;
    static Value decode(std::span<const uint8_t> bytes, size_t& off);
    static Value decode(std::span<const uint8_t> bytes);

    nlohmann::json to_json() const;
    static Value from_json(const nlohmann::json& j);

    bool operator==(const Value& o) const;

private:
    struct Blob {
        std::vector<uint8_t> data;
        bool operator==(const Blob& o) const { return data == o.data; }
    };
    explicit Value(Blob b) : v_(std::move(b)) {}

    std::variant<std::monostate, bool, int64_t, double, std::string, Blob, ValueList, ValueMap,
                 ModelWeights>
        v_;
};

}  // namespace skiff
