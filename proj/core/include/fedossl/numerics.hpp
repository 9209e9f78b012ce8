#pragma once

#include <vector>

#include "fedossl/matrix.hpp"

namespace fedossl {

// Floor applied inside every log() that touches a probability. Keeps
// cross-entropy finite when a softmax output underflows to zero.
inline constexpr double kLogEps = 1e-12;

double log_clamped(double p);

// Numerically-stable softmax of one logit row (max subtraction).
std::vector<double> softmax(const std::vector<double>& logits);

// Row-wise softmax of a logits matrix.
Matrix softmax_rows(const Matrix& logits);

// H(target, pred) = -sum_i target_i * log(pred_i), with clamped logs.
double cross_entropy(const std::vector<double>& target, const std::vector<double>& pred);

// log(sum(exp(x))) with max subtraction.
double log_sum_exp(const std::vector<double>& x);

double median(std::vector<double> v);

} // namespace fedossl
