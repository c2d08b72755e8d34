#include "skiff/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

struct Forward {
    std::vector<double> logits;   // classes
    std::vector<double> hidden;   // mlp: relu(z1)
    std::vector<double> pre_act;  // mlp: z1
};

void check_compat(const ModelSpec& spec, const Dataset& d) {
    if (spec.input_dim != d.cols)
        throw ShapeMismatch("model expects " + std::to_string(spec.input_dim) + " features, dataset has " +
                            std::to_string(d.cols));
    if (spec.num_classes != d.num_labels)
        throw ShapeMismatch("model expects " + std::to_string(spec.num_classes) + " classes, dataset has " +
                            std::to_string(d.num_labels));
}

void forward(const ModelSpec& spec, const ModelWeights& w, std::span<const float> x, Forward& f) {
    size_t l = static_cast<size_t>(spec.num_classes);
    f.logits.assign(l, 0.0);
    if (spec.family == "logreg") {
        const Tensor& W = w.at("W");
        const Tensor& b = w.at("b");
        for (size_t j = 0; j < l; ++j) {
            double z = b.data[j];
            const float* row = W.data.data() + j * spec.input_dim;
            for (size_t k = 0; k < spec.input_dim; ++k) z += static_cast<double>(row[k]) * x[k];
            f.logits[j] = z;
        }
    } else {
        const Tensor& W1 = w.at("W1");
        const Tensor& b1 = w.at("b1");
        const Tensor& W2 = w.at("W2");
        const Tensor& b2 = w.at("b2");
        size_t h = spec.hidden;
        f.pre_act.assign(h, 0.0);
        f.hidden.assign(h, 0.0);
        for (size_t j = 0; j < h; ++j) {
            double z = b1.data[j];
            const float* row = W1.data.data() + j * spec.input_dim;
            for (size_t k = 0; k < spec.input_dim; ++k) z += static_cast<double>(row[k]) * x[k];
            f.pre_act[j] = z;
            f.hidden[j] = z > 0 ? z : 0.0;
        }
        for (size_t j = 0; j < l; ++j) {
            double z = b2.data[j];
            const float* row = W2.data.data() + j * h;
            for (size_t k = 0; k < h; ++k) z += static_cast<double>(row[k]) * f.hidden[k];
            f.logits[j] = z;
        }
    }
}

/// Loss of one sample plus d(loss)/d(logits), written into dz.
double loss_and_dz(const std::vector<double>& logits, int32_t y, const std::string& loss_fn,
                   std::vector<double>& dz) {
    size_t l = logits.size();
    dz.assign(l, 0.0);
    if (loss_fn == "mse") {
        double loss = 0;
        for (size_t j = 0; j < l; ++j) {
            double t = (static_cast<int32_t>(j) == y) ? 1.0 : 0.0;
            double e = logits[j] - t;
            loss += e * e;
            dz[j] = 2.0 * e / static_cast<double>(l);
        }
        return loss / static_cast<double>(l);
    }
    // softmax cross-entropy
    double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double z : logits) denom += std::exp(z - zmax);
    double logp_y = logits[y] - zmax - std::log(denom);
    for (size_t j = 0; j < l; ++j) {
        double p = std::exp(logits[j] - zmax) / denom;
        dz[j] = p - ((static_cast<int32_t>(j) == y) ? 1.0 : 0.0);
    }
    return -logp_y;
}

struct GradBuffers {
    std::vector<double> gW, gb;          // logreg
    std::vector<double> gW1, gb1, gW2, gb2;  // mlp

    void reset(const ModelSpec& spec) {
        if (spec.family == "logreg") {
            gW.assign(static_cast<size_t>(spec.num_classes) * spec.input_dim, 0.0);
            gb.assign(static_cast<size_t>(spec.num_classes), 0.0);
        } else {
            gW1.assign(spec.hidden * spec.input_dim, 0.0);
            gb1.assign(spec.hidden, 0.0);
            gW2.assign(static_cast<size_t>(spec.num_classes) * spec.hidden, 0.0);
            gb2.assign(static_cast<size_t>(spec.num_classes), 0.0);
        }
    }
};

void backward(const ModelSpec& spec, const ModelWeights& w, std::span<const float> x,
              const Forward& f, const std::vector<double>& dz, GradBuffers& g) {
    size_t l = static_cast<size_t>(spec.num_classes);
    if (spec.family == "logreg") {
        for (size_t j = 0; j < l; ++j) {
            g.gb[j] += dz[j];
            double* grow = g.gW.data() + j * spec.input_dim;
            for (size_t k = 0; k < spec.input_dim; ++k) grow[k] += dz[j] * x[k];
        }
        return;
    }
    const Tensor& W2 = w.at("W2");
    size_t h = spec.hidden;
    for (size_t j = 0; j < l; ++j) {
        g.gb2[j] += dz[j];
        double* grow = g.gW2.data() + j * h;
        for (size_t k = 0; k < h; ++k) grow[k] += dz[j] * f.hidden[k];
    }
    std::vector<double> dz1(h, 0.0);
    for (size_t k = 0; k < h; ++k) {
        if (f.pre_act[k] <= 0) continue;
        double da = 0;
        for (size_t j = 0; j < l; ++j) da += static_cast<double>(W2.data[j * h + k]) * dz[j];
        dz1[k] = da;
    }
    for (size_t j = 0; j < h; ++j) {
        g.gb1[j] += dz1[j];
        double* grow = g.gW1.data() + j * spec.input_dim;
        for (size_t k = 0; k < spec.input_dim; ++k) grow[k] += dz1[j] * x[k];
    }
}

void apply_step(ModelWeights& w, const ModelSpec& spec, const GradBuffers& g, double scale) {
    auto step = [&](const char* name, const std::vector<double>& grad) {
        Tensor& t = w.at(name);
        for (size_t i = 0; i < t.data.size(); ++i)
            t.data[i] = static_cast<float>(static_cast<double>(t.data[i]) - scale * grad[i]);
    };
    if (spec.family == "logreg") {
        step("W", g.gW);
        step("b", g.gb);
    } else {
        step("W1", g.gW1);
        step("b1", g.gb1);
        step("W2", g.gW2);
        step("b2", g.gb2);
    }
}

}  // namespace

ModelSpec infer_model_spec(const ModelWeights& w) {
    ModelSpec spec;
    if (w.has("W") && w.has("b")) {
        const Tensor& W = w.at("W");
        if (W.shape.size() != 2) throw ShapeMismatch("logreg W must be rank 2");
        spec.family = "logreg";
        spec.num_classes = static_cast<int32_t>(W.shape[0]);
        spec.input_dim = W.shape[1];
        if (w.at("b").element_count() != static_cast<size_t>(spec.num_classes))
            throw ShapeMismatch("logreg b shape mismatch");
        return spec;
    }
    if (w.has("W1") && w.has("b1") && w.has("W2") && w.has("b2")) {
        const Tensor& W1 = w.at("W1");
        const Tensor& W2 = w.at("W2");
        if (W1.shape.size() != 2 || W2.shape.size() != 2) throw ShapeMismatch("mlp weights must be rank 2");
        spec.family = "mlp";
        spec.hidden = W1.shape[0];
        spec.input_dim = W1.shape[1];
        spec.num_classes = static_cast<int32_t>(W2.shape[0]);
        if (W2.shape[1] != spec.hidden) throw ShapeMismatch("mlp layer shapes disagree");
        return spec;
    }
    throw ShapeMismatch("weights do not form a known model family");
}

ModelWeights init_model(const ModelSpec& spec, uint64_t seed) {
    ModelWeights w;
    std::mt19937_64 rng(seed);
    auto uniform_tensor = [&](std::vector<uint32_t> shape, double limit) {
        Tensor t = Tensor::zeros(std::move(shape));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (auto& v : t.data) v = static_cast<float>(u(rng));
        return t;
    };
    if (spec.family == "logreg") {
        w.set("W", Tensor::zeros({static_cast<uint32_t>(spec.num_classes),
                                  static_cast<uint32_t>(spec.input_dim)}));
        w.set("b", Tensor::zeros({static_cast<uint32_t>(spec.num_classes)}));
        return w;
    }
    if (spec.family == "mlp") {
        if (spec.hidden == 0) throw ShapeMismatch("mlp needs a hidden width");
        double l1 = std::sqrt(6.0 / static_cast<double>(spec.input_dim + spec.hidden));
        double l2 = std::sqrt(6.0 / static_cast<double>(spec.hidden + spec.num_classes));
        w.set("W1", uniform_tensor({static_cast<uint32_t>(spec.hidden),
                                    static_cast<uint32_t>(spec.input_dim)}, l1));
        w.set("b1", Tensor::zeros({static_cast<uint32_t>(spec.hidden)}));
        w.set("W2", uniform_tensor({static_cast<uint32_t>(spec.num_classes),
                                    static_cast<uint32_t>(spec.hidden)}, l2));
        w.set("b2", Tensor::zeros({static_cast<uint32_t>(spec.num_classes)}));
        return w;
    }
    throw ShapeMismatch("unknown model family: " + spec.family);
}

TrainOutcome train_local(const ModelWeights& w, const Dataset& d, const Hyperparameters& h) {
    auto t0 = std::chrono::steady_clock::now();
    d.validate();
    ModelSpec spec = infer_model_spec(w);
    check_compat(spec, d);
    if (h.optimizer != "sgd") throw TrainerError("optimizer not available: " + h.optimizer);
    if (h.loss_function != "crossentropy" && h.loss_function != "mse")
        throw TrainerError("loss function not available: " + h.loss_function);
    if (h.batch_size < 1) throw TrainerError("batch_size must be >= 1");
    if (h.learning_rate <= 0) throw TrainerError("learning_rate must be > 0");
    if (h.epochs < 0) throw TrainerError("epochs must be >= 0");

    TrainOutcome out;
    out.weights = w;
    double final_epoch_loss = 0.0;

    std::vector<uint32_t> order(d.rows);
    std::iota(order.begin(), order.end(), 0);
    Forward f;
    GradBuffers g;
    std::vector<double> dz;

    for (int64_t epoch = 0; epoch < h.epochs; ++epoch) {
        std::mt19937_64 rng(h.seed + static_cast<uint64_t>(epoch) * 0x9E3779B97F4A7C15ull);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < d.rows; start += static_cast<size_t>(h.batch_size)) {
            size_t end = std::min(d.rows, start + static_cast<size_t>(h.batch_size));
            g.reset(spec);
            double batch_loss = 0;
            for (size_t i = start; i < end; ++i) {
                auto x = d.row(order[i]);
                forward(spec, out.weights, x, f);
                batch_loss += loss_and_dz(f.logits, d.labels[order[i]], h.loss_function, dz);
                backward(spec, out.weights, x, f, dz, g);
            }
            size_t bs = end - start;
            apply_step(out.weights, spec, g, h.learning_rate / static_cast<double>(bs));
            epoch_loss += batch_loss;
        }
        final_epoch_loss = epoch_loss / static_cast<double>(d.rows);
    }

    ValueMap eval = evaluate(out.weights, d, h.loss_function);
    double train_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics["loss"] = h.epochs > 0 ? Value(final_epoch_loss) : eval["loss"];
    out.metrics["accuracy"] = eval["accuracy"];
    out.metrics["train_time_s"] = Value(train_time);
    out.metrics["epochs"] = Value(h.epochs);
    out.metrics["num_samples"] = Value(static_cast<int64_t>(d.rows));
    return out;
}

ValueMap evaluate(const ModelWeights& w, const Dataset& d, const std::string& loss_function) {
    d.validate();
    ModelSpec spec = infer_model_spec(w);
    check_compat(spec, d);
    Forward f;
    std::vector<double> dz;
    double loss = 0;
    size_t correct = 0;
    for (size_t i = 0; i < d.rows; ++i) {
        forward(spec, w, d.row(i), f);
        loss += loss_and_dz(f.logits, d.labels[i], loss_function, dz);
        size_t argmax =
            std::distance(f.logits.begin(), std::max_element(f.logits.begin(), f.logits.end()));
        if (static_cast<int32_t>(argmax) == d.labels[i]) ++correct;
    }
    ValueMap m;
    m["loss"] = Value(loss / static_cast<double>(d.rows));
    m["accuracy"] = Value(static_cast<double>(correct) / static_cast<double>(d.rows));
    m["num_samples"] = Value(static_cast<int64_t>(d.rows));
    return m;
}

}  // namespace skiff
