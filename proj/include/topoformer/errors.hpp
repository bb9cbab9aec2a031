#pragma once

#include <stdexcept>
#include <string>

namespace topoformer {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape or axis mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer/model/run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stated precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file structure (missing columns, bad header).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Value outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated binary artifact (checksum failure).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid file whose contents do not match expectations
/// (version or config mismatch).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset too small for the requested operation.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergedError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace topoformer
