#pragma once

#include <stdexcept>
#include <string>

namespace pulsesync {

struct MonotonicityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShiftUnderflowError : std::domain_error {
  using std::domain_error::domain_error;
};

// Bad scenario/config input. The CLI maps this to exit code 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Counter link or TCP peer unreachable.
struct ConnectivityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodeError : std::length_error {
  using std::length_error::length_error;
};

struct StorageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace pulsesync
