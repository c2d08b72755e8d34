#pragma once

#include <cstdint>
#include <string>

#include "skiff/dataset.hpp"
#include "skiff/value.hpp"
#include "skiff/weights.hpp"

namespace skiff {

struct Hyperparameters {
    int64_t epochs = 1;
    int64_t batch_size = 32;
    double learning_rate = 0.01;
    std::string optimizer = "sgd";
    std::string loss_function = "crossentropy";
    uint64_t seed = 0;
};

/// The two built-in model families. A model's family and dimensions are
/// carried by its tensor names/shapes, so weights alone are enough to train
/// or evaluate:
///   logreg: W (classes x dim), b (classes)
///   mlp:    W1 (hidden x dim), b1 (hidden), W2 (classes x hidden), b2 (classes)
struct ModelSpec {
    std::string family;  // "logreg" | "mlp"
    size_t input_dim = 0;
    int32_t num_classes = 0;
    size_t hidden = 0;  // mlp only
};

ModelSpec infer_model_spec(const ModelWeights& w);  // throws ShapeMismatch
ModelWeights init_model(const ModelSpec& spec, uint64_t seed);

struct TrainOutcome {
    ModelWeights weights;
    ValueMap metrics;  // loss, accuracy, train_time_s, epochs
};

/// Mini-batch SGD on the dataset. Deterministic for a given seed: batch
/// order comes from a seeded shuffle and gradient sums are accumulated in
/// double. epochs = 0 returns the input weights untouched.
TrainOutcome train_local(const ModelWeights& w, const Dataset& d, const Hyperparameters& h);

/// Loss and argmax accuracy over the dataset.
ValueMap evaluate(const ModelWeights& w, const Dataset& d, const std::string& loss_function = "crossentropy");

}  // namespace skiff
