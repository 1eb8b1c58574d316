#pragma once

#include <stdexcept>
#include <string>

namespace dada {

// Exception families map one-to-one onto the C API status codes and the
// CLI exit codes (config 2, data 3, numeric 4).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when training code touches target-domain annotations.
struct GuardViolation : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace dada
