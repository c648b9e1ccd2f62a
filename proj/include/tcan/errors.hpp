#pragma once

#include <stdexcept>
#include <string>

namespace tcan {

/// Tensor dimensions disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An integer id or target lies outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A caller broke an API precondition (non-scalar loss, missing gradient, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A configuration record failed validation. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Corpus or token-stream problems (empty corpus, unknown token, too short).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward op produced NaN/Inf, or the training loss diverged.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tcan
