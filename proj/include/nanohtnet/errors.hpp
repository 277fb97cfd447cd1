#pragma once

#include <stdexcept>
#include <string>

namespace nht {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / extent mismatch between tensors handed to an op.
struct DimError : Error {
  using Error::Error;
};

// A precondition of an operation was violated (bad argument value,
// non-scalar loss, malformed topology, ...).
struct ContractError : Error {
  using Error::Error;
};

// Invalid or inconsistent run configuration (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// A dataset or checkpoint file failed validation (CLI exit code 3).
struct CorruptFileError : Error {
  using Error::Error;
};

// Filesystem-level failure while reading or writing (CLI exit code 3).
struct IoError : Error {
  using Error::Error;
};

}  // namespace nht
