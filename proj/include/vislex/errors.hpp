#pragma once

#include <stdexcept>
#include <string>

namespace vislex {

/// Bad dimensions or an inconsistent model/run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf produced where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A token sequence would exceed the decoder's context window.
class ContextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frozen-parameter or pipeline-provenance contract was broken. Always fatal.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or unrecognised persisted artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline artifact is missing or belongs to a different run configuration.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vislex
