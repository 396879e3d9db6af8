#pragma once

#include <stdexcept>
#include <string>

namespace dysm {

// Errors raised on user input. The CLI maps each kind to its own exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Contract check for preconditions a caller is responsible for.
inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail
}  // namespace dysm
