#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgn {

/// Base of every error raised by the library. `code()` is a short stable
/// token used by the CLI to print `code: message` lines.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Invalid argument or configuration supplied by the caller.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

/// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

/// NaN or infinity produced inside a forward pass.
class NumericError : public Error {
 public:
  NumericError(std::size_t layer, const std::string& message)
      : Error("numeric", "layer " + std::to_string(layer) + ": " + message), layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}

 protected:
  FormatError(std::string code, const std::string& message) : Error(std::move(code), message) {}
};

class UnsupportedVersionError : public FormatError {
 public:
  explicit UnsupportedVersionError(const std::string& message)
      : FormatError("unsupported-version", message) {}
};

/// Input ended before the declared payload.
class LengthError : public Error {
 public:
  explicit LengthError(const std::string& message) : Error("length", message) {}
};

/// Parts of a file or dataset disagree with each other.
class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& message) : Error("consistency", message) {}
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& message)
      : Error("training", "epoch " + std::to_string(epoch) + ": " + message), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& message)
      : Error("io", path + ": " + message) {}
};

}  // namespace pgn
