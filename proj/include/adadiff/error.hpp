#pragma once

#include <stdexcept>
#include <string>

namespace adadiff {

// Error categories map one-to-one onto CLI exit codes.

/// Invalid parameters or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Caller violated a documented precondition (shape, index range, sign).
class ContractError : public std::logic_error {
public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Missing, corrupt or unreadable on-disk data.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Optimization produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& phase, long step)
      : std::runtime_error(phase + " diverged (non-finite loss) at step " + std::to_string(step)),
        step_(step) {}
  long step() const { return step_; }

private:
  long step_;
};

/// Metric evaluation on degenerate input.
class EvaluationError : public std::runtime_error {
public:
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace adadiff
