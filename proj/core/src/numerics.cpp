#include "fedossl/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fedossl/error.hpp"

namespace fedossl {

double log_clamped(double p) { return std::log(std::max(p, kLogEps)); }

std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw ConfigError("softmax: empty input");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        const double* in = logits.row(i);
        double* o = out.row(i);
        double m = in[0];
        for (int j = 1; j < logits.cols(); ++j) m = std::max(m, in[j]);
        double z = 0.0;
        for (int j = 0; j < logits.cols(); ++j) {
            o[j] = std::exp(in[j] - m);
            z += o[j];
        }
        for (int j = 0; j < logits.cols(); ++j) o[j] /= z;
    }
    return out;
}

double cross_entropy(const std::vector<double>& target, const std::vector<double>& pred) {
    if (target.size() != pred.size()) throw ConfigError("cross_entropy: size mismatch");
    double h = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        if (target[i] == 0.0) continue;
        h -= target[i] * log_clamped(pred[i]);
    }
    return h;
}

double log_sum_exp(const std::vector<double>& x) {
    if (x.empty()) throw ConfigError("log_sum_exp: empty input");
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median: empty input");
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double hi = v[mid];
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

} // namespace fedossl
