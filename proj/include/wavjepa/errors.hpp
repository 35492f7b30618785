#pragma once

#include <stdexcept>
#include <string>

namespace wavjepa {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& m) : Error("decode_error", m) {}
};

class UnsupportedFormat : public Error {
 public:
  explicit UnsupportedFormat(const std::string& m) : Error("unsupported_format", m) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& m) : Error("invalid_argument", m) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("shape_mismatch", m) {}
};

class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& m) : Error("sampling_error", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& m) : Error("numerical_error", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace wavjepa
