#pragma once

#include <stdexcept>
#include <string>

namespace splat {

// Error kinds used across the library. All derive from Error so callers can
// catch coarsely or by contract class.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error { using Error::Error; };   // shape/channel mismatch
struct NumericError   : Error { using Error::Error; };   // non-finite data
struct ConfigError    : Error { using Error::Error; };   // invalid configuration
struct ContractError  : Error { using Error::Error; };   // violated precondition
struct StateError     : Error { using Error::Error; };   // bad object state (tape reuse, missing grads)
struct FormatError    : Error { using Error::Error; };   // malformed file
struct DataError      : Error { using Error::Error; };   // file parses but content is invalid
struct RangeError     : Error { using Error::Error; };   // argument out of range

}  // namespace splat
