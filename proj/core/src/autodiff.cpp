#include "fedossl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fedossl/error.hpp"

namespace fedossl {

ModelVars lift_model(Tape& tape, const Model& m, int freeze_extractor_below) {
    if (freeze_extractor_below < 0 ||
        freeze_extractor_below > static_cast<int>(m.extractor.size()))
        throw ConfigError("lift_model: freeze index out of range");
    ModelVars v;
    v.extractor.reserve(m.extractor.size());
    for (size_t k = 0; k < m.extractor.size(); ++k) {
        const Layer& l = m.extractor[k];
        if (static_cast<int>(k) < freeze_extractor_below)
            v.extractor.emplace_back(tape.constant(l.W), tape.constant(l.b));
        else
            v.extractor.emplace_back(tape.leaf(l.W), tape.leaf(l.b));
    }
    v.head = {tape.leaf(m.head.W), tape.leaf(m.head.b)};
    return v;
}

ForwardNodes forward_on_tape(Tape& tape, const ModelVars& vars, Node batch) {
    Node h = batch;
    for (const auto& [W, b] : vars.extractor)
        h = tape.tanh(tape.add_rowvec(tape.matmul(h, W), b));
    Node logits = tape.add_rowvec(tape.matmul(h, vars.head.first), vars.head.second);
    return {h, logits};
}

Gradient backward(Tape& tape, const ModelVars& vars, Node loss, const Model& shape) {
    tape.backward(loss);
    Gradient g = zeros_like(shape);
    for (size_t k = 0; k < vars.extractor.size(); ++k) {
        g.extractor[k].W = tape.grad(vars.extractor[k].first);
        g.extractor[k].b = tape.grad(vars.extractor[k].second);
    }
    g.head.W = tape.grad(vars.head.first);
    g.head.b = tape.grad(vars.head.second);
    return g;
}

double finite_difference_check(const Model& m, const LossBuilder& build, double step) {
    if (step <= 0.0) throw ConfigError("finite_difference_check: step must be positive");

    Gradient analytic = zeros_like(m);
    {
        Tape tape;
        ModelVars vars = lift_model(tape, m);
        Node loss = build(tape, vars);
        analytic = backward(tape, vars, loss, m);
    }

    auto evaluate = [&build](const Model& candidate) {
        Tape tape;
        ModelVars vars = lift_model(tape, candidate);
        return tape.scalar(build(tape, vars));
    };

    Model probe = m;
    auto probe_params = param_list(probe);
    auto grad_params = param_list(analytic);

    double worst = 0.0;
    for (size_t p = 0; p < probe_params.size(); ++p) {
        double* data = probe_params[p]->data();
        const double* g = grad_params[p]->data();
        const size_t n = probe_params[p]->size();
        for (size_t i = 0; i < n; ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double hi = evaluate(probe);
            data[i] = saved - step;
            const double lo = evaluate(probe);
            data[i] = saved;
            const double numeric = (hi - lo) / (2.0 * step);
            const double denom = std::max({std::fabs(g[i]), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(g[i] - numeric) / denom);
        }
    }
    return worst;
}

} // namespace fedossl
