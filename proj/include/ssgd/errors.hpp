#pragma once

#include <stdexcept>
#include <string>

namespace ssgd {

/// Operand shapes are incompatible (message names both shapes).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A library-produced value is NaN or Inf.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A request that is structurally invalid (empty draw, p >= 1, bad range, ...).
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A mathematically degenerate configuration (zero-norm group under
/// fixed-magnitude noise, collinear plane anchors, ...).
struct DegenerateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed external input (IDX / CIFAR / checkpoint / config parsing).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (missing file, short read, write failure).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ssgd
