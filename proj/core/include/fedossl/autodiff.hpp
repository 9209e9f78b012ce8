#pragma once

//
// Bridge between the Model parameter container and the autodiff tape:
// lift parameters onto a tape as leaves, run the network symbolically,
// pull leaf adjoints back out as a Gradient, and cross-check any scalar
// loss against central finite differences.
//

#include <functional>

#include "fedossl/model.hpp"
#include "fedossl/tape.hpp"

namespace fedossl {

struct ModelVars {
    std::vector<std::pair<Node, Node>> extractor; // (W, b) per layer
    std::pair<Node, Node> head;
};

// Extractor layers with index < freeze_extractor_below are lifted as
// constants: they join the forward pass but receive zero gradient.
ModelVars lift_model(Tape& tape, const Model& m, int freeze_extractor_below = 0);

struct ForwardNodes {
    Node features;
    Node logits;
};
ForwardNodes forward_on_tape(Tape& tape, const ModelVars& vars, Node batch);

// Leaf adjoints of `loss` with respect to every lifted parameter. Runs the
// reverse pass; the shape skeleton comes from `shape`.
Gradient backward(Tape& tape, const ModelVars& vars, Node loss, const Model& shape);

// Builds a scalar loss for the given (tape, lifted model). Used both to get
// analytic gradients and to re-evaluate the loss at perturbed parameters.
using LossBuilder = std::function<Node(Tape&, const ModelVars&)>;

// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// where numeric is the central difference (f(θ+h) - f(θ-h)) / 2h.
double finite_difference_check(const Model& m, const LossBuilder& build, double step);

} // namespace fedossl
