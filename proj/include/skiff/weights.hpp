#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace skiff {

/// One named tensor: shape plus a flat row-major float32 payload.
struct Tensor {
    std::vector<uint32_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<uint32_t> s, std::vector<float> d);
    static Tensor zeros(std::vector<uint32_t> s);

    size_t element_count() const;
    bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

/// A model as a name -> tensor map. The map is ordered so that iteration
/// (and therefore the wire encoding) is canonical: lexicographic by name.
class ModelWeights {
public:
    ModelWeights() = default;

    void set(const std::string& name, Tensor t);
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool has(const std::string& name) const;

    bool empty() const { return tensors_.empty(); }
    size_t tensor_count() const { return tensors_.size(); }
    size_t total_params() const;
    bool same_shapes(const ModelWeights& o) const;

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }

    bool operator==(const ModelWeights& o) const { return tensors_ == o.tensors_; }

private:
    std::map<std::string, Tensor> tensors_;
};

// Wire layout, all integers little-endian:
//   u32 tensor count
//   per tensor: u32 name length, name bytes (UTF-8), u32 dim count, u32 dims[]
//   payload: concatenated row-major float32 values in tensor order
// Canonical: tensors ordered lexicographically by name, so two equal models
// always produce identical bytes. Throws MalformedFrame on truncated or
// oversized input.
std::vector<uint8_t> serialize_weights(const ModelWeights& w);
ModelWeights deserialize_weights(std::span<const uint8_t> bytes);

}  // namespace skiff
