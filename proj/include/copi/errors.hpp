#pragma once

#include <stdexcept>
#include <string>

namespace copi {

/// Violated call contract: bad dimensions, bad bounds, out-of-range arguments.
class ContractError : public std::invalid_argument {
public:
    explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed external data: bad magic numbers, truncated files, CRC mismatch.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Inconsistent run configuration (e.g. feedback-alignment without feedback weights).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training diverged: a parameter became non-finite.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace copi
