#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace volformer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition (non-scalar loss, oversized volume, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Object used in a state that does not support the request.
class StateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Missing or inconsistent input data (absent modality, bad manifest row).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Cross-validation fold planning failed.
class PlanningError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace volformer
