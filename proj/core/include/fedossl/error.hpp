#pragma once

#include <stdexcept>

namespace fedossl {

// Invalid configuration: bad shapes, infeasible class arithmetic, out-of-range
// hyperparameters. Maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input data: labels out of range, ragged CSV rows.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Broken simulation protocol: mismatched uploads, aggregation over
// incongruent models.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fedossl
