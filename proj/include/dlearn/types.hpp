#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlearn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised for malformed or out-of-range caller input.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a requested construction cannot be realized (for example a
/// max-entry cap below what unit-norm columns allow).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sparse coefficient vector: sorted support plus one value per support index.
struct SparseCode {
  std::vector<Index> support;
  std::vector<double> values;

  std::size_t size() const { return support.size(); }
  bool empty() const { return support.empty(); }

  Vector dense(Index r) const;
  static SparseCode from_dense(const Vector& w);

  friend bool operator==(const SparseCode&, const SparseCode&) = default;
};

double inf_norm(const Matrix& m);

}  // namespace dlearn
