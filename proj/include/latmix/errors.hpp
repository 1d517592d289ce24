#pragma once

#include <stdexcept>
#include <string>

namespace latmix {

/// Base class for all latmix failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Distribution or model parameters outside their domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (dimension mismatch, bad schedule, flag conflicts).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents (model JSON, spec JSON, report).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion problems; the message names the offending row/column.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Training aborted (non-finite loss or gradient); message carries diagnostics.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace latmix
