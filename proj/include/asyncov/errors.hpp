#pragma once

#include <stdexcept>
#include <string>

namespace asyncov {

// Bad user input: flags, config files, impossible requests.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data: CSV cells, masks, missing columns.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: indefinite matrices, degenerate expansions, bad init.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace asyncov
