#pragma once

#include "dlearn/types.hpp"

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace dlearn {

/// Tuning of the robust selector
///
///   min ||theta||_1 + lambda t + nu u
///   s.t. gram_scale * ||A^T (y - A theta)||_inf <= gamma t + R^2 u,
///        ||theta||_2 <= t,  ||theta||_inf <= u.
///
/// A gram_scale of zero or less means "use 1/d".
struct MusParams {
  double gamma = 0.0;
  double lambda = 1.0;
  double nu = 1.0;
  double R = 0.0;
  double gram_scale = 0.0;

  void validate() const;
  double resolved_gram_scale(Index d) const { return gram_scale > 0.0 ? gram_scale : 1.0 / static_cast<double>(d); }
};

enum class StepPolicy { fixed, adaptive };

struct SolverConfig {
  std::size_t max_iters = 200000;
  double feas_tol = 1e-8;
  double obj_tol = 1e-9;
  std::size_t window = 100;
  StepPolicy step_policy = StepPolicy::fixed;
  /// Record a trace point every this many iterations (0 disables tracing).
  std::size_t trace_every = 0;
  /// Keep only the largest entries of the least-squares warm start (0 keeps all).
  std::size_t warm_start_sparsity = 0;

  void validate() const;
};

enum class SolveStatus { converged, max_iters, infeasible_detected };

std::string to_string(SolveStatus s);
std::string to_string(StepPolicy p);
StepPolicy parse_step_policy(const std::string& s);

struct TracePoint {
  std::size_t iter = 0;
  double objective = 0.0;
  double feas_residual = 0.0;
};

struct MusSolution {
  Vector theta;
  double t = 0.0;
  double u = 0.0;
  double objective = 0.0;
  double feas_residual = 0.0;
  /// Certified gap between `objective` and the best dual bound seen.
  double gap = 0.0;
  std::size_t iterations = 0;
  SolveStatus status = SolveStatus::max_iters;
  std::vector<TracePoint> trace;
};

/// Signed constraint residuals; a value <= 0 means the constraint holds.
struct FeasibilityResiduals {
  double gram = 0.0;
  double l2 = 0.0;
  double linf = 0.0;

  double max() const;
};

/// Restarted Halpern primal-dual hybrid gradient solver for the selector.
///
/// The problem is split as f(x) + g(Kx) with x = (theta, t, u):
///   f     = ||theta||_1 + lambda t + nu u + [||theta||_inf <= u]
///   K x   = ((gamma t + R^2 u, G theta), (t, theta)),  G = gram_scale A^T A
///   g     = [||b - G theta||_inf <= gamma t + R^2 u] + [(t, theta) in SOC]
/// Primal steps are diagonally preconditioned by the absolute row sums of G,
/// dual steps by the absolute row sums of K, and both are rescaled from a
/// power-iteration estimate of the preconditioned operator norm. One
/// iteration runs, in order: primal prox, Gram product of the new primal,
/// dual prox of the residual cone, dual prox of the second-order cone,
/// Gram product of the new dual, then the Halpern anchor averaging.
///
/// The solver holds everything that depends only on (A, params, config), so
/// it can be shared read-only across threads solving for different samples.
class MusSolver {
 public:
  MusSolver(const Matrix& A, const MusParams& params, const SolverConfig& config);

  MusSolution solve(const Vector& y) const;

  Index rows() const { return d_; }
  Index cols() const { return r_; }
  double gram_scale() const { return gram_scale_; }
  const MusParams& params() const { return params_; }
  const SolverConfig& config() const { return config_; }

  /// Objective of the cheapest (t, u) that makes theta feasible, and that (t, u).
  struct Completion {
    double t = 0.0;
    double u = 0.0;
    double objective = 0.0;
    double residual = 0.0;
  };
  Completion complete(const Vector& theta, const Vector& gram_theta, const Vector& b) const;

 private:
  Vector warm_start(const Vector& y) const;
  void project_onto_normal_equations(Vector& theta, const Vector& b) const;

  Matrix A_;
  Matrix gram_;
  MusParams params_;
  SolverConfig config_;
  Index d_ = 0;
  Index r_ = 0;
  double gram_scale_ = 1.0;

  Vector tau_theta_;
  double tau_t_ = 1.0;
  double tau_u_ = 1.0;
  double sigma_alpha_ = 1.0;
  Vector sigma_w_;
  double sigma_soc_ = 1.0;

  Matrix pinv_;        // least-squares warm start
  Matrix normal_pinv_;  // pseudo-inverse of G, only when gamma = R = 0
  bool normal_unique_ = false;
};

MusSolution solve_mus(const Vector& y, const Matrix& A, const MusParams& params,
                      const SolverConfig& config);

/// Keeps exactly the entries with |w_i| > tau.
SparseCode threshold(const Vector& w, double tau);

/// 16 (gamma ||theta*||_2 + R^2 ||theta*||_inf).
double theorem_bound(double gamma, double R, double theta_l2, double theta_linf);

FeasibilityResiduals check_feasibility(const Vector& theta, double t, double u, const Vector& y,
                                       const Matrix& A, const MusParams& params);

/// Writes "iter,objective,feas_residual" rows.
void write_trace_csv(std::ostream& os, const std::vector<TracePoint>& trace);

namespace detail {
// Exposed for unit testing of the proximal building blocks.

/// Projection of (a, z) onto {(a, z) : ||z||_inf <= a} in the metric with
/// weight `wa` on a and `wz[i]` on z_i.
void project_linf_cone(double& a, Eigen::Ref<Vector> z, double wa, const Vector& wz);

/// Projection of (a, w) onto {(a, w) : ||w||_1 <= -a} in the metric with
/// weight 1/sa on a and 1/sw[i] on w_i.
void project_neg_l1_cone(double& a, Eigen::Ref<Vector> w, double sa, const Vector& sw);

/// Euclidean projection of (s, v) onto {||v||_2 <= s}.
void project_soc(double& s, Eigen::Ref<Vector> v);
}  // namespace detail

}  // namespace dlearn
