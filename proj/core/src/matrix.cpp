#include "fedossl/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace fedossl {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) throw ConfigError(std::string(op) + ": shape mismatch");
}

} // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
    Matrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c)
            throw ConfigError("Matrix::from_rows: ragged rows");
        int j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_transb(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ConfigError("matmul_transb: inner dimension mismatch");
    Matrix out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        for (int j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
            out(i, j) = s;
        }
    }
    return out;
}

Matrix matmul_transa(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ConfigError("matmul_transa: inner dimension mismatch");
    Matrix out(a.cols(), b.cols());
    for (int k = 0; k < a.rows(); ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (int i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (int j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix scale(const Matrix& a, double k) {
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= k;
    return out;
}

void axpy(double k, const Matrix& x, Matrix& y) {
    require_same_shape(x, y, "axpy");
    for (size_t i = 0; i < y.size(); ++i) y.data()[i] += k * x.data()[i];
}

Matrix col_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        for (int j = 0; j < a.cols(); ++j) out(0, j) += arow[j];
    }
    return out;
}

Matrix row_sums(const Matrix& a) {
    Matrix out(a.rows(), 1);
    for (int i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        const double* arow = a.row(i);
        for (int j = 0; j < a.cols(); ++j) s += arow[j];
        out(i, 0) = s;
    }
    return out;
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_distance");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

int argmax_row(const Matrix& a, int r) {
    const double* arow = a.row(r);
    int best = 0;
    for (int j = 1; j < a.cols(); ++j)
        if (arow[j] > arow[best]) best = j;
    return best;
}

double row_norm(const Matrix& a, int r) {
    const double* arow = a.row(r);
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += arow[j] * arow[j];
    return std::sqrt(s);
}

double sq_distance(const Matrix& a, int ra, const Matrix& b, int rb) {
    if (a.cols() != b.cols()) throw ConfigError("sq_distance: dimension mismatch");
    const double* x = a.row(ra);
    const double* y = b.row(rb);
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) {
        const double d = x[j] - y[j];
        s += d * d;
    }
    return s;
}

double cosine_similarity(const Matrix& a, int ra, const Matrix& b, int rb) {
    if (a.cols() != b.cols()) throw ConfigError("cosine_similarity: dimension mismatch");
    const double* x = a.row(ra);
    const double* y = b.row(rb);
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (int j = 0; j < a.cols(); ++j) {
        dot += x[j] * y[j];
        nx += x[j] * x[j];
        ny += y[j] * y[j];
    }
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return dot / (std::sqrt(nx) * std::sqrt(ny));
}

Matrix normalize_rows(const Matrix& a) {
    Matrix out = a;
    for (int i = 0; i < a.rows(); ++i) {
        const double n = row_norm(a, i);
        if (n == 0.0) continue;
        double* orow = out.row(i);
        for (int j = 0; j < a.cols(); ++j) orow[j] /= n;
    }
    return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    if (top.cols() != bottom.cols()) throw ConfigError("vstack: column mismatch");
    Matrix out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.data(), top.data() + top.size(), out.data());
    std::copy(bottom.data(), bottom.data() + bottom.size(), out.data() + top.size());
    return out;
}

Matrix gather_rows(const Matrix& a, const std::vector<int>& idx) {
    Matrix out(static_cast<int>(idx.size()), a.cols());
    for (int i = 0; i < out.rows(); ++i) {
        const int src = idx[static_cast<size_t>(i)];
        if (src < 0 || src >= a.rows()) throw ConfigError("gather_rows: index out of range");
        std::copy(a.row(src), a.row(src) + a.cols(), out.row(i));
    }
    return out;
}

} // namespace fedossl
