#pragma once

#include <stdexcept>
#include <string>

namespace cmgeval {

/// Base of every error thrown by the toolkit. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad flags or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or invariant-violating input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Correlation requested over a constant sequence.
class UndefinedCorrelation : public DataError {
 public:
  using DataError::DataError;
};

/// An external service (LLM, embedding provider) failed (exit code 3).
class UpstreamError : public Error {
 public:
  using Error::Error;
};

class MetricUnavailable : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};

}  // namespace cmgeval
