#ifndef MMFUSE_ERROR_HPP_
#define MMFUSE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace mmfuse {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not admit the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

// Sequence exceeds a configured capacity (max_seq_len, table bounds).
struct CapacityError : Error {
  using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Invalid run configuration (maps to CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// Corpus / checkpoint file problems.
struct IoError : Error {
  using Error::Error;
};

// Checkpoint was trained against a different vocabulary (exit code 4).
struct VocabMismatchError : Error {
  using Error::Error;
};

// Instance id not present in the corpus (exit code 5).
struct UnknownIdError : Error {
  using Error::Error;
};

}  // namespace mmfuse

#endif  // MMFUSE_ERROR_HPP_
