#include "dlearn/metrics.hpp"

#include "dlearn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace dlearn {

namespace {

void require_same_shape(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw InputError("shape mismatch: " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) + " vs " +
                     std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
  }
}

// Kuhn's augmenting paths on the graph {cost <= limit}.
class ThresholdMatcher {
 public:
  ThresholdMatcher(const Matrix& cost, double limit) : cost_(cost), limit_(limit), n_(cost.rows()) {
    row_.assign(static_cast<std::size_t>(n_), -1);
    col_.assign(static_cast<std::size_t>(n_), -1);
  }

  bool perfect() {
    for (Index i = 0; i < n_; ++i) {
      seen_.assign(static_cast<std::size_t>(n_), 0);
      if (!augment(i)) return false;
    }
    return true;
  }

  // Forces row i onto column j while keeping the matching perfect over the
  // rows not yet fixed; rows < i are fixed.
  bool force(Index i, Index j) {
    if (row_[i] == j) return true;
    if (col_[j] >= 0 && col_[j] < i) return false;
    const Index displaced = col_[j];
    const Index freed = row_[i];
    const auto saved_row = row_;
    const auto saved_col = col_;
    row_[i] = j;
    col_[j] = i;
    row_[displaced] = -1;
    col_[freed] = -1;
    seen_.assign(static_cast<std::size_t>(n_), 0);
    fixed_upto_ = i;
    if (augment(displaced)) return true;
    row_ = saved_row;
    col_ = saved_col;
    return false;
  }

  bool allowed(Index i, Index j) const { return cost_(i, j) <= limit_; }
  Index match(Index i) const { return row_[i]; }

 private:
  bool augment(Index i) {
    for (Index j = 0; j < n_; ++j) {
      if (seen_[j] || !allowed(i, j)) continue;
      if (col_[j] >= 0 && col_[j] <= fixed_upto_) continue;
      seen_[j] = 1;
      if (col_[j] < 0 || augment(col_[j])) {
        row_[i] = j;
        col_[j] = i;
        return true;
      }
    }
    return false;
  }

  const Matrix& cost_;
  double limit_;
  Index n_;
  Index fixed_upto_ = -1;
  std::vector<Index> row_, col_;
  std::vector<char> seen_;
};

}  // namespace

double inf_dist(const Matrix& A, const Matrix& B) {
  require_same_shape(A, B);
  return inf_norm(A - B);
}

Matrix MatchResult::apply(const Matrix& B) const {
  Matrix out(B.rows(), B.cols());
  for (Index i = 0; i < B.cols(); ++i) out.col(i) = static_cast<double>(signs[i]) * B.col(permutation[i]);
  return out;
}

MatchResult inf_dist_equiv(const Matrix& A, const Matrix& B) {
  require_same_shape(A, B);
  const Index r = A.cols();
  MatchResult res;
  if (r == 0 || A.rows() == 0) {
    res.permutation.resize(static_cast<std::size_t>(r));
    std::iota(res.permutation.begin(), res.permutation.end(), Index{0});
    res.signs.assign(static_cast<std::size_t>(r), 1);
    return res;
  }

  Matrix cost(r, r);
  Eigen::MatrixXi sign(r, r);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < r; ++j) {
      const double plus = (A.col(i) - B.col(j)).cwiseAbs().maxCoeff();
      const double minus = (A.col(i) + B.col(j)).cwiseAbs().maxCoeff();
      cost(i, j) = std::min(plus, minus);
      sign(i, j) = minus < plus ? -1 : 1;
    }
  }

  std::vector<double> levels(cost.data(), cost.data() + cost.size());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::size_t lo = 0, hi = levels.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    ThresholdMatcher m(cost, levels[mid]);
    if (m.perfect()) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  const double limit = levels[lo];

  ThresholdMatcher m(cost, limit);
  m.perfect();
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < r; ++j) {
      if (!m.allowed(i, j)) continue;
      if (m.force(i, j)) break;
    }
  }

  res.permutation.resize(static_cast<std::size_t>(r));
  res.signs.resize(static_cast<std::size_t>(r));
  res.distance = 0.0;
  for (Index i = 0; i < r; ++i) {
    const Index j = m.match(i);
    res.permutation[i] = j;
    res.signs[i] = sign(i, j);
    res.distance = std::max(res.distance, cost(i, j));
  }
  return res;
}

double sign_recovery_rate(const std::vector<SparseCode>& estimates, const std::vector<SparseCode>& truths) {
  if (estimates.size() != truths.size()) {
    throw InputError("sign_recovery_rate: " + std::to_string(estimates.size()) + " estimates vs " +
                     std::to_string(truths.size()) + " truths");
  }
  if (truths.empty()) return 1.0;
  auto pattern = [](const SparseCode& c) {
    std::vector<std::pair<Index, int>> p;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (c.values[k] != 0.0) p.emplace_back(c.support[k], c.values[k] > 0.0 ? 1 : -1);
    }
    std::sort(p.begin(), p.end());
    return p;
  };
  std::size_t hits = 0;
  for (std::size_t k = 0; k < truths.size(); ++k) hits += pattern(estimates[k]) == pattern(truths[k]);
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

double kappa_inf_estimate(const Matrix& A, Index s, double u, std::size_t trials, std::uint64_t seed,
                          double gram_scale) {
  const Index r = A.cols();
  if (s < 1 || s > r) throw InputError("kappa_inf_estimate: need 1 <= s <= r");
  if (!(u > 0.0)) throw InputError("kappa_inf_estimate: u must be > 0");
  if (trials < 1) throw InputError("kappa_inf_estimate: trials must be >= 1");
  if (!(gram_scale > 0.0)) throw InputError("kappa_inf_estimate: gram_scale must be > 0");

  const Matrix G = gram_scale * (A.transpose() * A);
  std::vector<Index> all(static_cast<std::size_t>(r));
  std::iota(all.begin(), all.end(), Index{0});
  std::normal_distribution<double> normal;

  auto in_cone = [&](const Vector& D, const std::vector<char>& on) {
    double in = 0.0, out = 0.0;
    for (Index i = 0; i < r; ++i) (on[i] ? in : out) += std::abs(D[i]);
    return out <= u * in;
  };
  auto value = [&](Vector& D) {
    const double n = D.cwiseAbs().maxCoeff();
    if (n == 0.0) return std::numeric_limits<double>::infinity();
    D /= n;
    return (G * D).cwiseAbs().maxCoeff();
  };

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < trials; ++k) {
    CounterRng rng = CounterRng::stream(seed, streams::kKappa, k);
    std::vector<Index> J;
    std::sample(all.begin(), all.end(), std::back_inserter(J), s, rng);
    std::vector<char> on(static_cast<std::size_t>(r), 0);
    for (Index j : J) on[j] = 1;

    Vector D = Vector::Zero(r);
    for (Index j : J) D[j] = normal(rng);
    const double mass_in = D.lpNorm<1>();
    if (r > s) {
      Vector off = Vector::Zero(r);
      for (Index i = 0; i < r; ++i) {
        if (!on[i]) off[i] = normal(rng);
      }
      const double mass_off = off.lpNorm<1>();
      if (mass_off > 0.0) D += off * (rng.uniform() * u * mass_in / mass_off);
    }
    double v = value(D);

    // Coordinate descent on multiplicative moves that keep D in the cone.
    for (double step : {0.5, 0.25, 0.1, 0.05}) {
      bool improved = true;
      for (int pass = 0; pass < 4 && improved; ++pass) {
        improved = false;
        for (Index i = 0; i < r; ++i) {
          for (double f : {1.0 - step, 1.0 + step, -1.0}) {
            Vector trial = D;
            trial[i] *= f;
            if (!in_cone(trial, on)) continue;
            const double tv = value(trial);
            if (tv < v) {
              v = tv;
              D = trial;
              improved = true;
            }
          }
        }
      }
    }
    best = std::min(best, v);
  }
  return best;
}

std::vector<CondMoment> cond_second_moments(const std::vector<SparseCode>& estimates,
                                            const std::vector<SparseCode>& truths, Index r) {
  if (estimates.size() != truths.size()) throw InputError("cond_second_moments: length mismatch");
  std::vector<double> sum(static_cast<std::size_t>(r), 0.0), sum_sq(static_cast<std::size_t>(r), 0.0);
  std::vector<CondMoment> out(static_cast<std::size_t>(r));
  Vector est = Vector::Zero(r);
  for (std::size_t k = 0; k < truths.size(); ++k) {
    for (std::size_t q = 0; q < estimates[k].size(); ++q) {
      const Index j = estimates[k].support[q];
      if (j < 0 || j >= r) throw InputError("cond_second_moments: index out of range");
      est[j] = estimates[k].values[q];
    }
    for (std::size_t q = 0; q < truths[k].size(); ++q) {
      const Index j = truths[k].support[q];
      if (j < 0 || j >= r) throw InputError("cond_second_moments: index out of range");
      if (truths[k].values[q] == 0.0) continue;
      const double x2 = est[j] * est[j];
      sum[j] += x2;
      sum_sq[j] += x2 * x2;
      ++out[j].count;
    }
    for (std::size_t q = 0; q < estimates[k].size(); ++q) est[estimates[k].support[q]] = 0.0;
  }
  for (Index j = 0; j < r; ++j) {
    auto& c = out[j];
    if (c.count == 0) continue;
    const double n = static_cast<double>(c.count);
    c.mean_square = sum[j] / n;
    c.sample_variance = c.count > 1 ? std::max(0.0, (sum_sq[j] - n * c.mean_square * c.mean_square) / (n - 1.0)) : 0.0;
  }
  return out;
}

double empirical_cond_variance(const std::vector<SparseCode>& estimates, const std::vector<SparseCode>& truths,
                               Index j) {
  if (estimates.size() != truths.size()) throw InputError("empirical_cond_variance: length mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    const auto& t = truths[k];
    const auto it = std::find(t.support.begin(), t.support.end(), j);
    if (it == t.support.end() || t.values[static_cast<std::size_t>(it - t.support.begin())] == 0.0) continue;
    const auto& e = estimates[k];
    const auto jt = std::find(e.support.begin(), e.support.end(), j);
    const double x = jt == e.support.end() ? 0.0 : e.values[static_cast<std::size_t>(jt - e.support.begin())];
    sum += x * x;
    ++count;
  }
  if (count == 0) {
    throw InputError("empirical_cond_variance: no sample has coordinate " + std::to_string(j) + " in its support");
  }
  return sum / static_cast<double>(count);
}

}  // namespace dlearn
