#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace naptune {

// Base of every error raised by the library. `kind()` is a stable token used
// by the CLI when it prints machine-parsable failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract_error", m) {}
};

class InputTooShortError : public Error {
 public:
  explicit InputTooShortError(const std::string& m) : Error("input_too_short", m) {}
};

class NonFiniteLossError : public Error {
 public:
  explicit NonFiniteLossError(const std::string& m) : Error("non_finite_loss", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace naptune
