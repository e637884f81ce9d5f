#pragma once

#include <stdexcept>
#include <string>

namespace lrclr {

// Operand shapes disagree (matmul inner dims, elementwise shapes, ...).
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Bad user input (unknown token id, malformed corpus line, ...).
class InputError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf where a finite value is required.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Checkpoint file has a different magic or format version.
class IncompatibleCheckpoint : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Metric has no defined value on the given data (e.g. AUROC with one class).
class UndefinedMetric : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

}  // namespace lrclr
