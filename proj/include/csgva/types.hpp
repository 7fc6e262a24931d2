#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace csgva {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Shape of a model with global parameters and n local blocks of size L.
/// Local blocks more than `ell` apart are conditionally independent.
struct ModelDims {
  Index G = 0;
  Index n = 0;
  Index L = 0;
  Index ell = 0;

  Index local_dim() const { return n * L; }
  Index total_dim() const { return G + n * L; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A triangular factor with a nonpositive or non-finite diagonal entry.
class SingularFactor : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteParameter : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data. `line` is 1-based, 0 when not tied to a line.
class InvalidData : public std::runtime_error {
 public:
  explicit InvalidData(const std::string& what, std::size_t line = 0,
                       std::size_t column = 0)
      : std::runtime_error(what), line_(line), column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace csgva
