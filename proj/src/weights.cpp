#include "skiff/weights.hpp"

#include <cstring>
#include <limits>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

constexpr size_t kMaxWireBytes = size_t{1} << 31;  // 2 GiB guard on declared sizes

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

uint32_t get_u32(std::span<const uint8_t> b, size_t& off) {
    if (off + 4 > b.size()) throw MalformedFrame("weight header truncated");
    uint32_t v = static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
                 (static_cast<uint32_t>(b[off + 2]) << 16) |
                 (static_cast<uint32_t>(b[off + 3]) << 24);
    off += 4;
    return v;
}

}  // namespace

Tensor::Tensor(std::vector<uint32_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count())
        throw ShapeMismatch("tensor payload does not match its shape");
}

Tensor Tensor::zeros(std::vector<uint32_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(t.element_count(), 0.0f);
    return t;
}

size_t Tensor::element_count() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

void ModelWeights::set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

const Tensor& ModelWeights::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeMismatch("missing tensor: " + name);
    return it->second;
}

Tensor& ModelWeights::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeMismatch("missing tensor: " + name);
    return it->second;
}

bool ModelWeights::has(const std::string& name) const { return tensors_.count(name) > 0; }

size_t ModelWeights::total_params() const {
    size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.element_count();
    return n;
}

bool ModelWeights::same_shapes(const ModelWeights& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = o.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
        if (a->first != b->first || a->second.shape != b->second.shape) return false;
    }
    return true;
}

std::vector<uint8_t> serialize_weights(const ModelWeights& w) {
    std::vector<uint8_t> out;
    put_u32(out, static_cast<uint32_t>(w.tensor_count()));
    size_t payload_floats = 0;
    for (const auto& [name, t] : w) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (uint32_t d : t.shape) put_u32(out, d);
        payload_floats += t.data.size();
    }
    out.reserve(out.size() + payload_floats * 4);
    for (const auto& [name, t] : w) {
        for (float f : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    return out;
}

ModelWeights deserialize_weights(std::span<const uint8_t> bytes) {
    size_t off = 0;
    uint32_t count = get_u32(bytes, off);
    struct Entry {
        std::string name;
        std::vector<uint32_t> shape;
        size_t elements;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    size_t payload_floats = 0;
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        uint32_t name_len = get_u32(bytes, off);
        if (off + name_len > bytes.size()) throw MalformedFrame("tensor name truncated");
        e.name.assign(reinterpret_cast<const char*>(bytes.data() + off), name_len);
        off += name_len;
        uint32_t dims = get_u32(bytes, off);
        if (dims > 16) throw MalformedFrame("implausible tensor rank");
        e.shape.resize(dims);
        size_t n = dims == 0 ? 0 : 1;
        for (uint32_t d = 0; d < dims; ++d) {
            e.shape[d] = get_u32(bytes, off);
            n *= e.shape[d];
        }
        e.elements = n;
        payload_floats += n;
        if (payload_floats * 4 > kMaxWireBytes) throw MalformedFrame("declared payload too large");
        entries.push_back(std::move(e));
    }
    if (bytes.size() - off != payload_floats * 4)
        throw MalformedFrame("weight payload size mismatch: expected " +
                             std::to_string(payload_floats * 4) + " bytes, got " +
                             std::to_string(bytes.size() - off));
    ModelWeights w;
    for (auto& e : entries) {
        Tensor t;
        t.shape = std::move(e.shape);
        t.data.resize(e.elements);
        for (size_t i = 0; i < e.elements; ++i) {
            uint32_t bits = get_u32(bytes, off);
            float f;
            std::memcpy(&f, &bits, 4);
            t.data[i] = f;
        }
        w.set(e.name, std::move(t));
    }
    return w;
}

}  // namespace skiff
