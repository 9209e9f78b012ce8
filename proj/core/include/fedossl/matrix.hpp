#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "fedossl/error.hpp"

namespace fedossl {

// Dense row-major matrix of 64-bit reals. All simulator arithmetic runs on
// this type; there is no expression-template machinery, shapes stay small.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw ConfigError("Matrix: negative dimension");
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * transpose(b); avoids materializing temporaries in backward passes.
Matrix matmul_transb(const Matrix& a, const Matrix& b);
// transpose(a) * b
Matrix matmul_transa(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double k);

// y += k * x, shapes must match.
void axpy(double k, const Matrix& x, Matrix& y);

// Row vector (1 x cols) of column sums.
Matrix col_sums(const Matrix& a);
// Column vector (rows x 1) of row sums.
Matrix row_sums(const Matrix& a);

double frobenius_distance(const Matrix& a, const Matrix& b);

// Index of the largest entry in row r, lowest index on ties.
int argmax_row(const Matrix& a, int r);

// Euclidean norm of row r.
double row_norm(const Matrix& a, int r);

// Squared Euclidean distance between row ra of a and row rb of b.
double sq_distance(const Matrix& a, int ra, const Matrix& b, int rb);

// Cosine similarity between two rows; zero-norm rows compare as 0.
double cosine_similarity(const Matrix& a, int ra, const Matrix& b, int rb);

// Rows rescaled to unit Euclidean norm; zero rows stay zero.
Matrix normalize_rows(const Matrix& a);

// Stack matrices vertically; all must share the column count.
Matrix vstack(const Matrix& top, const Matrix& bottom);

Matrix gather_rows(const Matrix& a, const std::vector<int>& idx);

} // namespace fedossl
