#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace abnet {

// Violated precondition or API misuse (mismatched shapes, stale caches, bad arguments).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Tensor extents do not match a layer's input contract.
class DimensionError : public ContractError {
 public:
  DimensionError(std::size_t layer, const std::string& what)
      : ContractError("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

// Numerical failure during optimization (non-finite gradients or losses).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class StratificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration failed validation; maps to CLI exit status 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace abnet
