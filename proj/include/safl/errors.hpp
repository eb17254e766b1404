#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace safl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent violation; the message names the offending axis.
struct DimError : Error {
  using Error::Error;
};

struct BoundsError : Error {
  using Error::Error;
};

struct InvalidDepthError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct CapacityError : Error {
  using Error::Error;
};

struct NoCandidateError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Malformed binary payload; carries the byte offset of the fault.
struct FormatError : Error {
  size_t offset = 0;
  FormatError(const std::string& msg, size_t off)
      : Error(msg + " at byte " + std::to_string(off)), offset(off) {}
};

}  // namespace safl
