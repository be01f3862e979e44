#pragma once

#include <stdexcept>
#include <string>

namespace dfedpgp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad degree, unknown key, infeasible partition, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A mixing scheme was requested on a graph that cannot support it.
class SchemeError : public Error {
 public:
  using Error::Error;
};

/// Push-sum weight fell below the configured floor.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Local training produced non-finite parameters.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient from the model.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Evaluation requested on an empty shard.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfedpgp
