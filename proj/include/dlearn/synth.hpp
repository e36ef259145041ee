#pragma once

#include "dlearn/rng.hpp"
#include "dlearn/types.hpp"

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dlearn {

/// Largest absolute inner product between two distinct columns.
double coherence(const Matrix& A);

/// d x r matrix with unit-norm columns and cached diagnostics.
class Dictionary {
 public:
  Dictionary() = default;
  /// Takes the matrix as is; throws InputError unless every column has unit norm within 1e-12.
  explicit Dictionary(Matrix entries);

  const Matrix& entries() const { return entries_; }
  Index d() const { return entries_.rows(); }
  Index r() const { return entries_.cols(); }
  double coherence() const { return coherence_; }
  double max_entry() const { return max_entry_; }

 private:
  Matrix entries_;
  double coherence_ = 0.0;
  double max_entry_ = 0.0;
};

enum class DictMode { gaussian_normalized, orthonormal, rademacher };
enum class PerturbMode { uniform, boundary };
enum class ValueLaw { uniform_magnitude, two_point };

std::string to_string(DictMode m);
std::string to_string(PerturbMode m);
std::string to_string(ValueLaw v);
DictMode parse_dict_mode(const std::string& s);
PerturbMode parse_perturb_mode(const std::string& s);
ValueLaw parse_value_law(const std::string& s);

inline constexpr std::size_t kRejectionBudget = 10000;

/// Random dictionary. `rademacher` has entries +-1/sqrt(d).
/// With a cap, columns (or the whole matrix in orthonormal mode) are
/// redrawn until ||A||_inf <= cap; throws InfeasibleError when the cap is
/// below 1/sqrt(d) or the redraw budget runs out.
Dictionary gen_dictionary(Index d, Index r, DictMode mode, std::optional<double> maxnorm_cap,
                          std::uint64_t seed);

/// A_star + E with ||E||_inf <= R0; columns are not renormalized.
Matrix perturb_dictionary(const Dictionary& A_star, double R0, PerturbMode mode, std::uint64_t seed);

/// Law of the s-sparse codes: uniform support, Rademacher signs, magnitude
/// uniform on [m, M] (or identically 1 for the two-point law).
struct CodeDistribution {
  static double default_upper() { return (-0.5 + std::sqrt(11.25)) / 2.0; }

  Index r = 0;
  Index s = 2;
  double m = 0.5;
  double M = default_upper();
  ValueLaw law = ValueLaw::uniform_magnitude;

  /// Throws InputError when the law is malformed; strict also requires M > 1.
  void validate(bool strict = false) const;
  /// E[x_i^2 | x_i != 0].
  double second_moment() const;
};

SparseCode draw_code(const CodeDistribution& dist, CounterRng& rng);

struct Batch {
  std::vector<SparseCode> codes;
  std::vector<Vector> samples;

  std::size_t size() const { return samples.size(); }
};

/// y = A x exactly as the batch generator computes it.
Vector synthesize(const Matrix& A, const SparseCode& x);

/// Sample k uses its own stream derived from (seed, k).
Batch gen_batch(const Dictionary& A_star, const CodeDistribution& dist, std::size_t n, std::uint64_t seed);

struct AssumptionOptions {
  bool strict_cb = false;
  double cb = 0.5;
  /// Constant C in s <= C sqrt(d) / mu.
  double c2_constant = 1.0;
  /// Incoherence target mu for ||<A_i, A_j>|| <= mu / sqrt(d); unset means mu < sqrt(d).
  std::optional<double> mu_target;
};

struct AssumptionReport {
  bool coherence_ok = false;
  bool maxnorm_ok = false;
  bool separation_ok = false;
  bool sparsity_ok = false;
  bool init_radius_ok = false;
  bool d5_ok = false;
  bool magnitude_ok = false;
  double mu_over_sqrt_d = 0.0;
  double cb_bound = 0.0;
  double zeta = 0.0;
  double separation = 0.0;
  double sparsity_limit = 0.0;
  std::string sparsity_binding;
  double magnitude_floor = 0.0;
  std::vector<std::string> messages;

  bool ok() const;
};

AssumptionReport validate_assumptions(const Dictionary& A_star, const CodeDistribution& dist, double R0,
                                      double lambda, double nu, double gamma,
                                      const AssumptionOptions& opts = {});

/// zeta = gamma (1 + nu + 2 lambda / sqrt(s)) / lambda + R^2 (1 + lambda) / nu.
double zeta(double gamma, double lambda, double nu, double R, Index s);

void write_report(std::ostream& os, const AssumptionReport& rep);

}  // namespace dlearn
