#include "fedossl/tape.hpp"

#include <cmath>

#include "fedossl/error.hpp"
#include "fedossl/numerics.hpp"

namespace fedossl {

Node Tape::push(Rec rec) {
    nodes_.push_back(std::move(rec));
    return Node{static_cast<int>(nodes_.size()) - 1};
}

Tape::Rec& Tape::at(Node n) {
    if (!n.valid() || n.id >= static_cast<int>(nodes_.size()))
        throw ConfigError("Tape: invalid node handle");
    return nodes_[static_cast<size_t>(n.id)];
}

const Tape::Rec& Tape::at(Node n) const {
    if (!n.valid() || n.id >= static_cast<int>(nodes_.size()))
        throw ConfigError("Tape: invalid node handle");
    return nodes_[static_cast<size_t>(n.id)];
}

Node Tape::leaf(Matrix value) {
    Rec r;
    r.op = Op::kLeaf;
    r.value = std::move(value);
    r.needs_grad = true;
    return push(std::move(r));
}

Node Tape::constant(Matrix value) {
    Rec r;
    r.op = Op::kConstant;
    r.value = std::move(value);
    return push(std::move(r));
}

Node Tape::matmul(Node a, Node b) {
    Rec r;
    r.op = Op::kMatMul;
    r.a = a.id;
    r.b = b.id;
    r.value = fedossl::matmul(at(a).value, at(b).value);
    r.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(r));
}

Node Tape::add(Node a, Node b) {
    Rec r;
    r.op = Op::kAdd;
    r.a = a.id;
    r.b = b.id;
    r.value = fedossl::add(at(a).value, at(b).value);
    r.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(r));
}

Node Tape::add_rowvec(Node a, Node bias) {
    const Matrix& av = at(a).value;
    const Matrix& bv = at(bias).value;
    if (bv.rows() != 1 || bv.cols() != av.cols())
        throw ConfigError("add_rowvec: bias must be 1 x cols");
    Rec r;
    r.op = Op::kAddRowVec;
    r.a = a.id;
    r.b = bias.id;
    r.value = av;
    for (int i = 0; i < av.rows(); ++i) {
        double* row = r.value.row(i);
        for (int j = 0; j < av.cols(); ++j) row[j] += bv(0, j);
    }
    r.needs_grad = at(a).needs_grad || at(bias).needs_grad;
    return push(std::move(r));
}

Node Tape::scale(Node a, double k) {
    Rec r;
    r.op = Op::kScale;
    r.a = a.id;
    r.k = k;
    r.value = fedossl::scale(at(a).value, k);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::mul(Node a, Node b) {
    Rec r;
    r.op = Op::kMul;
    r.a = a.id;
    r.b = b.id;
    r.value = hadamard(at(a).value, at(b).value);
    r.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(r));
}

Node Tape::tanh(Node a) {
    Rec r;
    r.op = Op::kTanh;
    r.a = a.id;
    r.value = at(a).value;
    for (size_t i = 0; i < r.value.size(); ++i) r.value.data()[i] = std::tanh(r.value.data()[i]);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::softmax_rows(Node a) {
    Rec r;
    r.op = Op::kSoftmaxRows;
    r.a = a.id;
    r.value = fedossl::softmax_rows(at(a).value);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::log_clamped(Node a) {
    Rec r;
    r.op = Op::kLogClamped;
    r.a = a.id;
    r.value = at(a).value;
    for (size_t i = 0; i < r.value.size(); ++i)
        r.value.data()[i] = fedossl::log_clamped(r.value.data()[i]);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::row_max(Node a) {
    const Matrix& av = at(a).value;
    Rec r;
    r.op = Op::kRowMax;
    r.a = a.id;
    r.value = Matrix(av.rows(), 1);
    r.idx.resize(static_cast<size_t>(av.rows()));
    for (int i = 0; i < av.rows(); ++i) {
        const int j = argmax_row(av, i);
        r.idx[static_cast<size_t>(i)] = j;
        r.value(i, 0) = av(i, j);
    }
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::sum(Node a) {
    const Matrix& av = at(a).value;
    Rec r;
    r.op = Op::kSum;
    r.a = a.id;
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    r.value = Matrix(1, 1);
    r.value(0, 0) = s;
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::gather_rows(Node a, std::vector<int> idx) {
    Rec r;
    r.op = Op::kGatherRows;
    r.a = a.id;
    r.value = fedossl::gather_rows(at(a).value, idx);
    r.idx = std::move(idx);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::normalize_rows(Node a) {
    Rec r;
    r.op = Op::kNormalizeRows;
    r.a = a.id;
    r.value = fedossl::normalize_rows(at(a).value);
    r.needs_grad = at(a).needs_grad;
    return push(std::move(r));
}

Node Tape::detach(Node a) {
    Rec r;
    r.op = Op::kDetach;
    r.a = a.id;
    r.value = at(a).value;
    r.needs_grad = false;
    return push(std::move(r));
}

const Matrix& Tape::value(Node n) const { return at(n).value; }

double Tape::scalar(Node n) const {
    const Matrix& v = at(n).value;
    if (v.rows() != 1 || v.cols() != 1) throw ConfigError("Tape::scalar: node is not 1x1");
    return v(0, 0);
}

void Tape::accumulate(int id, const Matrix& delta) {
    Rec& r = nodes_[static_cast<size_t>(id)];
    if (!r.needs_grad) return;
    if (!r.has_adjoint) {
        r.adjoint = delta;
        r.has_adjoint = true;
    } else {
        axpy(1.0, delta, r.adjoint);
    }
}

void Tape::backward(Node loss) {
    Rec& top = at(loss);
    if (top.value.rows() != 1 || top.value.cols() != 1)
        throw ConfigError("Tape::backward: loss must be 1x1");

    for (Rec& r : nodes_) {
        r.has_adjoint = false;
        r.adjoint = Matrix();
    }
    if (!top.needs_grad) return; // constant loss: all gradients are zero

    Matrix seed(1, 1);
    seed(0, 0) = 1.0;
    accumulate(loss.id, seed);

    for (int id = loss.id; id >= 0; --id) {
        Rec& r = nodes_[static_cast<size_t>(id)];
        if (!r.has_adjoint || !r.needs_grad) continue;
        const Matrix& dy = r.adjoint;
        switch (r.op) {
        case Op::kLeaf:
        case Op::kConstant:
        case Op::kDetach:
            break;
        case Op::kMatMul: {
            const Rec& a = nodes_[static_cast<size_t>(r.a)];
            const Rec& b = nodes_[static_cast<size_t>(r.b)];
            if (a.needs_grad) accumulate(r.a, matmul_transb(dy, b.value));
            if (b.needs_grad) accumulate(r.b, matmul_transa(a.value, dy));
            break;
        }
        case Op::kAdd:
            accumulate(r.a, dy);
            accumulate(r.b, dy);
            break;
        case Op::kAddRowVec:
            accumulate(r.a, dy);
            accumulate(r.b, col_sums(dy));
            break;
        case Op::kScale:
            accumulate(r.a, fedossl::scale(dy, r.k));
            break;
        case Op::kMul: {
            const Rec& a = nodes_[static_cast<size_t>(r.a)];
            const Rec& b = nodes_[static_cast<size_t>(r.b)];
            if (a.needs_grad) accumulate(r.a, hadamard(dy, b.value));
            if (b.needs_grad) accumulate(r.b, hadamard(dy, a.value));
            break;
        }
        case Op::kTanh: {
            Matrix dx = dy;
            for (size_t i = 0; i < dx.size(); ++i) {
                const double y = r.value.data()[i];
                dx.data()[i] *= 1.0 - y * y;
            }
            accumulate(r.a, dx);
            break;
        }
        case Op::kSoftmaxRows: {
            // dx_i = y_i * (dy_i - sum_j dy_j y_j), per row
            Matrix dx(r.value.rows(), r.value.cols());
            for (int i = 0; i < r.value.rows(); ++i) {
                const double* y = r.value.row(i);
                const double* g = dy.row(i);
                double dot = 0.0;
                for (int j = 0; j < r.value.cols(); ++j) dot += g[j] * y[j];
                double* o = dx.row(i);
                for (int j = 0; j < r.value.cols(); ++j) o[j] = y[j] * (g[j] - dot);
            }
            accumulate(r.a, dx);
            break;
        }
        case Op::kLogClamped: {
            // Derivative 1/x where the clamp is inactive, 0 where it bites:
            // a clamped entry is locally constant, so no gradient flows.
            const Matrix& x = nodes_[static_cast<size_t>(r.a)].value;
            Matrix dx = dy;
            for (size_t i = 0; i < dx.size(); ++i) {
                const double xv = x.data()[i];
                dx.data()[i] = xv >= kLogEps ? dx.data()[i] / xv : 0.0;
            }
            accumulate(r.a, dx);
            break;
        }
        case Op::kRowMax: {
            const Matrix& x = nodes_[static_cast<size_t>(r.a)].value;
            Matrix dx(x.rows(), x.cols());
            for (int i = 0; i < x.rows(); ++i) dx(i, r.idx[static_cast<size_t>(i)]) = dy(i, 0);
            accumulate(r.a, dx);
            break;
        }
        case Op::kSum: {
            const Matrix& x = nodes_[static_cast<size_t>(r.a)].value;
            accumulate(r.a, Matrix(x.rows(), x.cols(), dy(0, 0)));
            break;
        }
        case Op::kGatherRows: {
            const Matrix& x = nodes_[static_cast<size_t>(r.a)].value;
            Matrix dx(x.rows(), x.cols());
            for (int i = 0; i < dy.rows(); ++i) {
                const int dst = r.idx[static_cast<size_t>(i)];
                double* drow = dx.row(dst);
                const double* grow = dy.row(i);
                for (int j = 0; j < dy.cols(); ++j) drow[j] += grow[j];
            }
            accumulate(r.a, dx);
            break;
        }
        case Op::kNormalizeRows: {
            // y = x / ||x||;  dx = (dy - (dy . y) y) / ||x||
            const Matrix& x = nodes_[static_cast<size_t>(r.a)].value;
            Matrix dx(x.rows(), x.cols());
            for (int i = 0; i < x.rows(); ++i) {
                const double n = row_norm(x, i);
                if (n == 0.0) continue;
                const double* y = r.value.row(i);
                const double* g = dy.row(i);
                double dot = 0.0;
                for (int j = 0; j < x.cols(); ++j) dot += g[j] * y[j];
                double* o = dx.row(i);
                for (int j = 0; j < x.cols(); ++j) o[j] = (g[j] - dot * y[j]) / n;
            }
            accumulate(r.a, dx);
            break;
        }
        }
    }
}

Matrix Tape::grad(Node n) const {
    const Rec& r = at(n);
    if (r.has_adjoint) return r.adjoint;
    return Matrix(r.value.rows(), r.value.cols());
}

} // namespace fedossl
