#pragma once

#include "dlearn/types.hpp"

#include <cstdint>
#include <vector>

namespace dlearn {

/// Largest entrywise absolute difference.
double inf_dist(const Matrix& A, const Matrix& B);

struct MatchResult {
  double distance = 0.0;
  /// Column i of A is matched to column permutation[i] of B.
  std::vector<Index> permutation;
  /// Sign applied to that column of B, +1 or -1.
  std::vector<int> signs;

  /// B with columns reordered and signed to line up with A.
  Matrix apply(const Matrix& B) const;
};

/// min over column permutations P and signs S of inf_dist(A, B P S).
/// Solved as a bottleneck assignment; among optimal matchings the
/// lexicographically smallest permutation is returned.
MatchResult inf_dist_equiv(const Matrix& A, const Matrix& B);

/// Fraction of samples whose full sign pattern matches.
double sign_recovery_rate(const std::vector<SparseCode>& estimates, const std::vector<SparseCode>& truths);

/// Upper estimate of the l_inf sensitivity kappa_inf(s, u): minimum of
/// gram_scale ||A^T A D||_inf over sampled supports J, |J| = s, and sampled
/// directions D in the cone C_J(u) with ||D||_inf = 1, each refined by
/// coordinate descent. Trial k only depends on (seed, k).
double kappa_inf_estimate(const Matrix& A, Index s, double u, std::size_t trials, std::uint64_t seed,
                          double gram_scale);

struct CondMoment {
  double mean_square = 0.0;
  double sample_variance = 0.0;  // of x_j^2 over the qualifying samples
  std::size_t count = 0;
};

/// E[x_j^2 | x*_j != 0] over the samples whose truth has j in its support.
double empirical_cond_variance(const std::vector<SparseCode>& estimates, const std::vector<SparseCode>& truths,
                               Index j);

/// All coordinates at once; coordinates without qualifying samples get count 0.
std::vector<CondMoment> cond_second_moments(const std::vector<SparseCode>& estimates,
                                            const std::vector<SparseCode>& truths, Index r);

}  // namespace dlearn
