#include "fedossl/model.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "fedossl/error.hpp"
#include "fedossl/io.hpp"

namespace fedossl {

bool Model::same_shape(const Model& o) const {
    if (extractor.size() != o.extractor.size()) return false;
    for (size_t i = 0; i < extractor.size(); ++i) {
        if (!extractor[i].W.same_shape(o.extractor[i].W)) return false;
        if (!extractor[i].b.same_shape(o.extractor[i].b)) return false;
    }
    return head.W.same_shape(o.head.W) && head.b.same_shape(o.head.b);
}

bool Model::operator==(const Model& o) const {
    if (extractor.size() != o.extractor.size()) return false;
    for (size_t i = 0; i < extractor.size(); ++i)
        if (!(extractor[i].W == o.extractor[i].W) || !(extractor[i].b == o.extractor[i].b))
            return false;
    return head.W == o.head.W && head.b == o.head.b;
}

std::vector<Matrix*> param_list(Model& m) {
    std::vector<Matrix*> out;
    for (Layer& l : m.extractor) {
        out.push_back(&l.W);
        out.push_back(&l.b);
    }
    out.push_back(&m.head.W);
    out.push_back(&m.head.b);
    return out;
}

std::vector<const Matrix*> param_list(const Model& m) {
    std::vector<const Matrix*> out;
    for (const Layer& l : m.extractor) {
        out.push_back(&l.W);
        out.push_back(&l.b);
    }
    out.push_back(&m.head.W);
    out.push_back(&m.head.b);
    return out;
}

size_t param_count(const Model& m) {
    size_t n = 0;
    for (const Matrix* p : param_list(m)) n += p->size();
    return n;
}

Model zeros_like(const Model& m) {
    Model z;
    z.extractor.reserve(m.extractor.size());
    for (const Layer& l : m.extractor)
        z.extractor.push_back({Matrix(l.W.rows(), l.W.cols()), Matrix(1, l.b.cols())});
    z.head = {Matrix(m.head.W.rows(), m.head.W.cols()), Matrix(1, m.head.b.cols())};
    return z;
}

Model init_model(const std::vector<int>& widths, int num_classes, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("init_model: need at least input and feature widths");
    if (num_classes < 2) throw ConfigError("init_model: need at least 2 classes");
    Model m;
    for (size_t k = 0; k + 1 < widths.size(); ++k) {
        const int in = widths[k], out = widths[k + 1];
        if (in <= 0 || out <= 0) throw ConfigError("init_model: widths must be positive");
        Layer l{Matrix(in, out), Matrix(1, out)};
        const double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (size_t i = 0; i < l.W.size(); ++i) l.W.data()[i] = s * rng.normal();
        m.extractor.push_back(std::move(l));
    }
    const int d = widths.back();
    m.head = {Matrix(d, num_classes), Matrix(1, num_classes)};
    // The head starts wide (scale 4/sqrt(d) instead of the extractor's 1/sqrt(in)) so that
    // freshly initialized models already carry confident, cluster-coherent class preferences.
    // Without a pretrained backbone those initial preferences are what the pairwise
    // agreement term amplifies into unseen-class columns; with a timid head the supervised
    // gradients capture every column before agreement can lock in.
    const double s = 4.0 / std::sqrt(static_cast<double>(d));
    for (size_t i = 0; i < m.head.W.size(); ++i) m.head.W.data()[i] = s * rng.normal();
    return m;
}

ForwardResult forward(const Model& m, const Matrix& batch) {
    if (batch.cols() != m.input_dim())
        throw ConfigError("forward: batch width does not match model input");
    Matrix h = batch;
    for (const Layer& l : m.extractor) {
        h = matmul(h, l.W);
        for (int i = 0; i < h.rows(); ++i) {
            double* row = h.row(i);
            for (int j = 0; j < h.cols(); ++j) row[j] = std::tanh(row[j] + l.b(0, j));
        }
    }
    Matrix logits = matmul(h, m.head.W);
    for (int i = 0; i < logits.rows(); ++i) {
        double* row = logits.row(i);
        for (int j = 0; j < logits.cols(); ++j) row[j] += m.head.b(0, j);
    }
    return {std::move(h), std::move(logits)};
}

OptimizerState make_optimizer(const Model& m, double lr, double momentum, double weight_decay) {
    if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
        throw ConfigError("make_optimizer: invalid hyperparameters");
    return {zeros_like(m), lr, momentum, weight_decay};
}

void sgd_step(Model& m, const Gradient& grad, OptimizerState& state) {
    if (!m.same_shape(grad) || !m.same_shape(state.velocity))
        throw ConfigError("sgd_step: shape mismatch");
    auto theta = param_list(m);
    auto g = param_list(grad);
    auto v = param_list(state.velocity);
    if (state.frozen_extractor_layers < 0 ||
        state.frozen_extractor_layers > static_cast<int>(m.extractor.size()))
        throw ConfigError("sgd_step: frozen layer count out of range");
    // Two parameter matrices (W, b) per frozen extractor layer.
    const size_t first = 2 * static_cast<size_t>(state.frozen_extractor_layers);
    for (size_t p = first; p < theta.size(); ++p) {
        double* tp = theta[p]->data();
        const double* gp = g[p]->data();
        double* vp = v[p]->data();
        const size_t n = theta[p]->size();
        for (size_t i = 0; i < n; ++i) {
            vp[i] = state.momentum * vp[i] + (gp[i] + state.weight_decay * tp[i]);
            tp[i] -= state.learning_rate * vp[i];
        }
    }
}

namespace {

constexpr const char* kCheckpointTag = "fedossl-model v1";

void emit_matrix(std::ostringstream& out, const Matrix& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << format_hex(m(i, j));
        }
        out << '\n';
    }
}

Matrix parse_matrix(std::istringstream& in) {
    int rows = -1, cols = -1;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
        throw IoError("model checkpoint: bad matrix header");
    Matrix m(rows, cols);
    std::string tok;
    for (size_t i = 0; i < m.size(); ++i) {
        if (!(in >> tok)) throw IoError("model checkpoint: truncated matrix data");
        char* end = nullptr;
        m.data()[i] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0')
            throw IoError("model checkpoint: unparsable value '" + tok + "'");
    }
    return m;
}

} // namespace

void save_model(const std::string& path, const Model& m) {
    std::ostringstream out;
    out << kCheckpointTag << '\n';
    out << m.extractor.size() << '\n';
    for (const Layer& l : m.extractor) {
        emit_matrix(out, l.W);
        emit_matrix(out, l.b);
    }
    emit_matrix(out, m.head.W);
    emit_matrix(out, m.head.b);
    write_text_atomic(path, out.str());
}

Model load_model(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointTag)
        throw IoError("model checkpoint: unrecognized header in " + path);
    size_t layers = 0;
    if (!(in >> layers)) throw IoError("model checkpoint: missing layer count");
    Model m;
    m.extractor.reserve(layers);
    for (size_t k = 0; k < layers; ++k) {
        Layer l;
        l.W = parse_matrix(in);
        l.b = parse_matrix(in);
        m.extractor.push_back(std::move(l));
    }
    m.head.W = parse_matrix(in);
    m.head.b = parse_matrix(in);
    return m;
}

} // namespace fedossl
