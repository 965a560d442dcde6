#pragma once

#include <stdexcept>
#include <string>

namespace cmrm {

// Tensor shape disagreement; message carries both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (dims not divisible, unknown mode, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API contract violation: reused tape, non-scalar loss, double LoRA attach, ...
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range index (token id outside the vocabulary, ...).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a forward op. Never stored silently.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File I/O or parse failure; message carries the path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid data request (bad label character, malformed labels.tsv row, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace cmrm
