#pragma once

#include <stdexcept>
#include <string>

namespace linkfed {

// Invalid experiment configuration (unknown strategy, bad flag combination).
// The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent input data. The CLI maps this to exit code 3.
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace linkfed
