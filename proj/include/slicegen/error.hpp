#pragma once

#include <stdexcept>
#include <string>

namespace slicegen {

/// Shapes that do not conform for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Values outside an operation's domain, including NaN/Inf at op boundaries.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller broke an operation's contract (non-scalar loss, missing gradient, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Checkpoint or data file that cannot be read or does not match the expected layout.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file that cannot be opened, read or written.
class IoError : public LoadError {
 public:
  using LoadError::LoadError;
};

/// Checkpoint bytes that do not decode, or weights that do not fit the model.
class CheckpointError : public LoadError {
 public:
  using LoadError::LoadError;
};

/// Input too degenerate for the requested clustering / selection.
class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// PSNR of identical images; reported separately instead of returning infinity.
class InfinitePsnrError : public std::domain_error {
 public:
  InfinitePsnrError() : std::domain_error("infinite PSNR: images are identical (MSE = 0)") {}
};

/// A loss term became non-finite during training.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(std::string term, const std::string& detail)
      : std::runtime_error("non-finite loss in " + term + ": " + detail), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace slicegen
