#pragma once

#include <stdexcept>
#include <string>

namespace felab {

// Error taxonomy, one class per failure domain so callers (and the CLI exit
// code mapping) can tell them apart without string matching.

// Bad user-facing configuration: CLI flags, config files, schema violations.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and serialization failures: missing files, bad magic, truncation.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or numerically invalid operation in checked paths.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API precondition: shape mismatch, index out of range.
struct ValueError : std::logic_error {
    explicit ValueError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace felab
