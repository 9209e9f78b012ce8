#pragma once

//
// Reverse-mode automatic differentiation on a flat tape.
//
// Values are computed eagerly as nodes are appended, so a node's value can
// be inspected (e.g. to derive constant targets) while the graph is still
// being built. backward() walks the tape in reverse creation order and
// accumulates adjoints into every gradient-tracked node. The op set is
// deliberately small: exactly what the composite training objective needs,
// not a general graph compiler.
//

#include <vector>

#include "fedossl/matrix.hpp"

namespace fedossl {

struct Node {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    // Gradient-tracked input (model parameter).
    Node leaf(Matrix value);
    // Fixed value; never receives gradient.
    Node constant(Matrix value);

    Node matmul(Node a, Node b);
    Node add(Node a, Node b);
    // a: n x c plus a 1 x c row vector broadcast over rows (bias add).
    Node add_rowvec(Node a, Node bias);
    Node scale(Node a, double k);
    Node mul(Node a, Node b); // elementwise
    Node tanh(Node a);
    Node softmax_rows(Node a);
    Node log_clamped(Node a); // log(max(x, kLogEps)) elementwise
    // n x c -> n x 1 row maxima; gradient routes to the first argmax.
    Node row_max(Node a);
    // Full reduction to a 1 x 1 scalar.
    Node sum(Node a);
    Node gather_rows(Node a, std::vector<int> idx);
    // Rows rescaled to unit Euclidean norm (zero rows pass through).
    Node normalize_rows(Node a);
    // Same value, gradient flow cut.
    Node detach(Node a);

    const Matrix& value(Node n) const;
    double scalar(Node n) const; // value of a 1 x 1 node

    // Reverse pass seeded with d(loss)/d(loss) = 1. loss must be 1 x 1.
    // Clears adjoints from any previous backward() on this tape.
    void backward(Node loss);

    // Adjoint accumulated by the last backward(); zeros if none reached n.
    Matrix grad(Node n) const;

    size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        kLeaf,
        kConstant,
        kMatMul,
        kAdd,
        kAddRowVec,
        kScale,
        kMul,
        kTanh,
        kSoftmaxRows,
        kLogClamped,
        kRowMax,
        kSum,
        kGatherRows,
        kNormalizeRows,
        kDetach,
    };

    struct Rec {
        Op op;
        int a = -1;
        int b = -1;
        double k = 0.0;
        std::vector<int> idx; // gather indices or row-max argmaxes
        Matrix value;
        Matrix adjoint;
        bool needs_grad = false;
        bool has_adjoint = false;
    };

    Node push(Rec rec);
    Rec& at(Node n);
    const Rec& at(Node n) const;
    void accumulate(int id, const Matrix& delta);

    std::vector<Rec> nodes_;
};

} // namespace fedossl
