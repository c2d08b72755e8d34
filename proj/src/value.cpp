#include "skiff/value.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "skiff/codec.hpp"
#include "skiff/errors.hpp"

namespace skiff {

namespace {

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t get_u64(std::span<const uint8_t> b, size_t& off) {
    if (off + 8 > b.size()) throw MalformedFrame("value encoding truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[off + i]) << (8 * i);
    off += 8;
    return v;
}

void check_avail(std::span<const uint8_t> b, size_t off, size_t need) {
    if (off + need > b.size()) throw MalformedFrame("value encoding truncated");
}

}  // namespace

Value::Kind Value::kind() const { return static_cast<Kind>(v_.index()); }

bool Value::as_bool() const {
    if (auto* p = std::get_if<bool>(&v_)) return *p;
    throw Error("value is not a bool");
}

int64_t Value::as_int() const {
    if (auto* p = std::get_if<int64_t>(&v_)) return *p;
    throw Error("value is not an int");
}

double Value::as_float() const {
    if (auto* p = std::get_if<double>(&v_)) return *p;
    if (auto* p = std::get_if<int64_t>(&v_)) return static_cast<double>(*p);
    throw Error("value is not a number");
}

const std::string& Value::as_str() const {
    if (auto* p = std::get_if<std::string>(&v_)) return *p;
    throw Error("value is not a string");
}

const std::vector<uint8_t>& Value::as_bytes() const {
    if (auto* p = std::get_if<Blob>(&v_)) return p->data;
    throw Error("value is not a byte blob");
}

const ValueList& Value::as_list() const {
    if (auto* p = std::get_if<ValueList>(&v_)) return *p;
    throw Error("value is not a list");
}

ValueList& Value::as_list() {
    if (auto* p = std::get_if<ValueList>(&v_)) return *p;
    throw Error("value is not a list");
}

const ValueMap& Value::as_map() const {
    if (auto* p = std::get_if<ValueMap>(&v_)) return *p;
    throw Error("value is not a map");
}

ValueMap& Value::as_map() {
    if (auto* p = std::get_if<ValueMap>(&v_)) return *p;
    throw Error("value is not a map");
}

const ModelWeights& Value::as_weights() const {
    if (auto* p = std::get_if<ModelWeights>(&v_)) return *p;
    throw Error("value is not model weights");
}

bool Value::operator==(const Value& o) const { return v_ == o.v_; }

void Value::encode(std::vector<uint8_t>& out) const {
    out.push_back(static_cast<uint8_t>(kind()));
    switch (kind()) {
        case Kind::Nil:
            break;
        case Kind::Bool:
            out.push_back(std::get<bool>(v_) ? 1 : 0);
            break;
        case Kind::Int:
            put_u64(out, static_cast<uint64_t>(std::get<int64_t>(v_)));
            break;
        case Kind::Float: {
            uint64_t bits;
            double d = std::get<double>(v_);
            std::memcpy(&bits, &d, 8);
            put_u64(out, bits);
            break;
        }
        case Kind::Str: {
            const auto& s = std::get<std::string>(v_);
            put_u64(out, s.size());
            out.insert(out.end(), s.begin(), s.end());
            break;
        }
        case Kind::Bytes: {
            const auto& b = std::get<Blob>(v_).data;
            put_u64(out, b.size());
            out.insert(out.end(), b.begin(), b.end());
            break;
        }
        case Kind::List: {
            const auto& l = std::get<ValueList>(v_);
            put_u64(out, l.size());
            for (const auto& v : l) v.encode(out);
            break;
        }
        case Kind::Map: {
            const auto& m = std::get<ValueMap>(v_);
            put_u64(out, m.size());
            for (const auto& [k, v] : m) {
                put_u64(out, k.size());
                out.insert(out.end(), k.begin(), k.end());
                v.encode(out);
            }
            break;
        }
        case Kind::Weights: {
            auto bytes = serialize_weights(std::get<ModelWeights>(v_));
            put_u64(out, bytes.size());
            out.insert(out.end(), bytes.begin(), bytes.end());
            break;
        }
    }
}

std::vector<uint8_t> Value::encode() const {
    std::vector<uint8_t> out;
    encode(out);
    return out;
}

Value Value::decode(std::span<const uint8_t> b, size_t& off) {
    check_avail(b, off, 1);
    auto kind = static_cast<Kind>(b[off++]);
    switch (kind) {
        case Kind::Nil:
            return Value();
        case Kind::Bool:
            check_avail(b, off, 1);
            return Value(b[off++] != 0);
        case Kind::Int:
            return Value(static_cast<int64_t>(get_u64(b, off)));
        case Kind::Float: {
            uint64_t bits = get_u64(b, off);
            double d;
            std::memcpy(&d, &bits, 8);
            return Value(d);
        }
        case Kind::Str: {
            size_t n = get_u64(b, off);
            check_avail(b, off, n);
            std::string s(reinterpret_cast<const char*>(b.data() + off), n);
            off += n;
            return Value(std::move(s));
        }
        case Kind::Bytes: {
            size_t n = get_u64(b, off);
            check_avail(b, off, n);
            std::vector<uint8_t> v(b.begin() + off, b.begin() + off + n);
            off += n;
            return Value::bytes(std::move(v));
        }
        case Kind::List: {
            size_t n = get_u64(b, off);
            ValueList l;
            l.reserve(std::min<size_t>(n, 1 << 20));
            for (size_t i = 0; i < n; ++i) l.push_back(decode(b, off));
            return Value(std::move(l));
        }
        case Kind::Map: {
            size_t n = get_u64(b, off);
            ValueMap m;
            for (size_t i = 0; i < n; ++i) {
                size_t klen = get_u64(b, off);
                check_avail(b, off, klen);
                std::string k(reinterpret_cast<const char*>(b.data() + off), klen);
                off += klen;
                m.emplace(std::move(k), decode(b, off));
            }
            return Value(std::move(m));
        }
        case Kind::Weights: {
            size_t n = get_u64(b, off);
            check_avail(b, off, n);
            auto w = deserialize_weights(b.subspan(off, n));
            off += n;
            return Value(std::move(w));
        }
    }
    throw MalformedFrame("unknown value tag");
}

Value Value::decode(std::span<const uint8_t> b) {
    size_t off = 0;
    Value v = decode(b, off);
    if (off != b.size()) throw MalformedFrame("trailing bytes after value");
    return v;
}

nlohmann::json Value::to_json() const {
    using nlohmann::json;
    switch (kind()) {
        case Kind::Nil:
            return nullptr;
        case Kind::Bool:
            return std::get<bool>(v_);
        case Kind::Int:
            return std::get<int64_t>(v_);
        case Kind::Float:
            return std::get<double>(v_);
        case Kind::Str:
            return std::get<std::string>(v_);
        case Kind::Bytes: {
            // blobs and weights travel in json as tagged base64 objects
            json j;
            j["__bytes__"] = base64_encode(std::get<Blob>(v_).data);
            return j;
        }
        case Kind::List: {
            json a = json::array();
            for (const auto& v : std::get<ValueList>(v_)) a.push_back(v.to_json());
            return a;
        }
        case Kind::Map: {
            json o = json::object();
            for (const auto& [k, v] : std::get<ValueMap>(v_)) o[k] = v.to_json();
            return o;
        }
        case Kind::Weights: {
            json j;
            j["__weights__"] = base64_encode(serialize_weights(std::get<ModelWeights>(v_)));
            return j;
        }
    }
    return nullptr;
}

Value Value::from_json(const nlohmann::json& j) {
    using nlohmann::json;
    if (j.is_null()) return Value();
    if (j.is_boolean()) return Value(j.get<bool>());
    if (j.is_number_integer()) return Value(j.get<int64_t>());
    if (j.is_number_float()) return Value(j.get<double>());
    if (j.is_string()) return Value(j.get<std::string>());
    if (j.is_array()) {
        ValueList l;
        for (const auto& e : j) l.push_back(from_json(e));
        return Value(std::move(l));
    }
    if (j.is_object()) {
        if (j.contains("__bytes__")) {
            return Value::bytes(base64_decode(j.at("__bytes__").get<std::string>()));
        }
        if (j.contains("__weights__")) {
            auto bin = base64_decode(j.at("__weights__").get<std::string>());
            return Value(deserialize_weights(std::span<const uint8_t>(bin.data(), bin.size())));
        }
        ValueMap m;
        for (auto it = j.begin(); it != j.end(); ++it) m.emplace(it.key(), from_json(it.value()));
        return Value(std::move(m));
    }
    throw Error("unsupported json value");
}

}  // namespace skiff
