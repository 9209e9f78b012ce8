#pragma once

#include <string>
#include <vector>

#include "fedossl/matrix.hpp"
#include "fedossl/rng.hpp"

namespace fedossl {

struct Layer {
    Matrix W; // in x out
    Matrix b; // 1 x out
};

// Two-part network: an MLP feature extractor (tanh after every layer, so
// features live in a bounded cube) followed by a linear classification head.
// Inputs are row vectors; a batch is one row per example.
struct Model {
    std::vector<Layer> extractor;
    Layer head;

    int input_dim() const { return extractor.empty() ? head.W.rows() : extractor.front().W.rows(); }
    int feature_dim() const { return head.W.rows(); }
    int num_classes() const { return head.W.cols(); }

    bool same_shape(const Model& o) const;
    bool operator==(const Model& o) const;
};

// Per-parameter reals with the same shape structure as the Model they were
// computed for; also reused for momentum buffers.
using Gradient = Model;

struct OptimizerState {
    Model velocity; // zero, shape-congruent with the trained model
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // Extractor layers below this index are held fixed: no gradient step,
    // no weight decay (mirrors the frozen lift in the autodiff bridge).
    int frozen_extractor_layers = 0;
};

// Mutable views over every parameter matrix, in a fixed traversal order
// (extractor layers front to back: W then b; finally head W, head b).
std::vector<Matrix*> param_list(Model& m);
std::vector<const Matrix*> param_list(const Model& m);

size_t param_count(const Model& m);

Model zeros_like(const Model& m);

// Widths = {input, hidden..., feature}; weights ~ N(0, 1/sqrt(fan_in)),
// biases zero. Head maps feature -> num_classes.
Model init_model(const std::vector<int>& widths, int num_classes, Rng& rng);

// features = g(x): tanh((...tanh(x W1 + b1)...) Wk + bk); logits = z W + b.
struct ForwardResult {
    Matrix features;
    Matrix logits;
};
ForwardResult forward(const Model& m, const Matrix& batch);

OptimizerState make_optimizer(const Model& m, double lr, double momentum, double weight_decay);

// v <- mu v + (grad + lambda theta); theta <- theta - eta v. Mutates both.
void sgd_step(Model& m, const Gradient& grad, OptimizerState& state);

// Versioned text checkpoint; hexadecimal float literals so values round-trip
// bitwise. Written atomically (temp file + rename).
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

} // namespace fedossl
