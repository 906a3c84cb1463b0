#pragma once

#include <stdexcept>
#include <string>

namespace auf {

// Error taxonomy mirrored by the C API status codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace auf
