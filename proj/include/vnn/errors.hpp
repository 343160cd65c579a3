#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vnn {

// Shape or size disagreement between tensors.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse: missing gradient buffers, index/architecture mismatch, etc.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid user-facing configuration (CLI flags, config files, layer configs).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf escaped a numeric operation, or a factorization failed.
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed binary or text input.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Training diverged; carries the per-epoch loss trace observed so far.
struct TrainingError : std::runtime_error {
  std::vector<double> trace;
  TrainingError(const std::string& msg, std::vector<double> t)
      : std::runtime_error(msg), trace(std::move(t)) {}
};

}  // namespace vnn
