#include "dlearn/musolver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace dlearn {

namespace {

bool all_finite(const Vector& v) { return v.allFinite(); }

/// out = G v, skipping zero entries of v when it is sparse.
void gram_product(const Matrix& gram, const Vector& v, Vector& out) {
  const Index r = v.size();
  Index nnz = 0;
  for (Index j = 0; j < r; ++j) nnz += (v[j] != 0.0);
  if (4 * nnz >= r) {
    out.noalias() = gram * v;
    return;
  }
  out.setZero();
  for (Index j = 0; j < r; ++j) {
    if (v[j] != 0.0) out.noalias() += v[j] * gram.col(j);
  }
}

double soft(double x, double k) {
  if (x > k) return x - k;
  if (x < -k) return x + k;
  return 0.0;
}

// Restart thresholds on the fixed-point residual of the Halpern iteration.
constexpr double kRestartSufficient = 0.2;
constexpr double kRestartNecessary = 0.8;
constexpr double kRestartArtificial = 0.36;
constexpr double kReflection = 1.0;
constexpr double kPrimalWeightSmoothing = 0.2;
constexpr double kStepSafety = 0.9;
constexpr int kPowerIterations = 100;
constexpr double kDualDivergence = 1e12;

}  // namespace

void MusParams::validate() const {
  if (!std::isfinite(gamma) || !std::isfinite(lambda) || !std::isfinite(nu) || !std::isfinite(R) ||
      !std::isfinite(gram_scale)) {
    throw InputError("selector parameters must be finite");
  }
  if (gamma < 0.0) throw InputError("gamma must be >= 0");
  if (R < 0.0) throw InputError("R must be >= 0");
  if (lambda <= 0.0) throw InputError("lambda must be > 0");
  if (nu <= 0.0) throw InputError("nu must be > 0");
}

void SolverConfig::validate() const {
  if (max_iters < 1) throw InputError("max_iters must be >= 1");
  if (!(feas_tol > 0.0) || !(obj_tol > 0.0)) throw InputError("solver tolerances must be > 0");
  if (window < 1) throw InputError("window must be >= 1");
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iters: return "max-iters";
    case SolveStatus::infeasible_detected: return "infeasible-detected";
  }
  return "unknown";
}

std::string to_string(StepPolicy p) { return p == StepPolicy::fixed ? "fixed" : "adaptive"; }

StepPolicy parse_step_policy(const std::string& s) {
  if (s == "fixed") return StepPolicy::fixed;
  if (s == "adaptive") return StepPolicy::adaptive;
  throw InputError("unknown step policy '" + s + "' (expected fixed or adaptive)");
}

double FeasibilityResiduals::max() const { return std::max({gram, l2, linf}); }

namespace detail {

void project_linf_cone(double& a, Eigen::Ref<Vector> z, double wa, const Vector& wz) {
  const Index n = z.size();
  double zmax = 0.0;
  for (Index i = 0; i < n; ++i) zmax = std::max(zmax, std::abs(z[i]));
  if (a >= zmax) return;

  thread_local std::vector<Index> order;
  order.clear();
  for (Index i = 0; i < n; ++i) {
    if (z[i] != 0.0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](Index i, Index j) {
    const double ai = std::abs(z[i]), aj = std::abs(z[j]);
    return ai > aj || (ai == aj && i < j);
  });

  double num = wa * a;
  double den = wa;
  double level = 0.0;
  bool found = false;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index i = order[k];
    num += wz[i] * std::abs(z[i]);
    den += wz[i];
    const double cand = num / den;
    const double next = k + 1 < order.size() ? std::abs(z[order[k + 1]]) : 0.0;
    if (cand >= next) {
      level = cand;
      found = true;
      break;
    }
  }
  if (!found) level = num / den;
  level = std::max(level, 0.0);
  a = level;
  for (Index i = 0; i < n; ++i) z[i] = std::clamp(z[i], -level, level);
}

void project_neg_l1_cone(double& a, Eigen::Ref<Vector> w, double sa, const Vector& sw) {
  const Index n = w.size();
  const double l1 = w.lpNorm<1>();
  if (l1 + a <= 0.0) return;

  thread_local std::vector<Index> order;
  order.clear();
  for (Index i = 0; i < n; ++i) {
    if (w[i] != 0.0) order.push_back(i);
  }
  auto brk = [&](Index i) { return std::abs(w[i]) / sw[i]; };
  std::sort(order.begin(), order.end(), [&](Index i, Index j) {
    const double bi = brk(i), bj = brk(j);
    return bi > bj || (bi == bj && i < j);
  });

  // phi(k) = sum_i (|w_i| - k sw_i)_+ + a - k sa is decreasing; find its root.
  double sum_abs = 0.0;
  double sum_sw = 0.0;
  double kappa = -1.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double b = brk(order[k]);
    const double phi = sum_abs - b * sum_sw + a - b * sa;
    if (phi >= 0.0) {
      kappa = (sum_abs + a) / (sum_sw + sa);
      break;
    }
    sum_abs += std::abs(w[order[k]]);
    sum_sw += sw[order[k]];
  }
  if (kappa < 0.0) kappa = (sum_abs + a) / (sum_sw + sa);

  for (Index i = 0; i < n; ++i) w[i] = soft(w[i], kappa * sw[i]);
  a -= kappa * sa;
}

void project_soc(double& s, Eigen::Ref<Vector> v) {
  const double nv = v.norm();
  if (nv <= s) return;
  if (nv <= -s) {
    s = 0.0;
    v.setZero();
    return;
  }
  const double c = 0.5 * (s + nv);
  v *= c / nv;
  s = c;
}

}  // namespace detail

MusSolver::MusSolver(const Matrix& A, const MusParams& params, const SolverConfig& config)
    : A_(A), params_(params), config_(config), d_(A.rows()), r_(A.cols()) {
  params_.validate();
  config_.validate();
  if (d_ < 1 || r_ < 1) throw InputError("dictionary must have at least one row and one column");
  if (!A_.allFinite()) throw InputError("dictionary contains NaN or Inf");

  gram_scale_ = params_.resolved_gram_scale(d_);
  gram_ = gram_scale_ * (A_.transpose() * A_);

  const double gamma = params_.gamma;
  const double r2 = params_.R * params_.R;

  // Diagonal preconditioning from absolute row/column sums of K.
  const Vector gram_abs = gram_.cwiseAbs().colwise().sum().transpose();
  tau_theta_.resize(r_);
  sigma_w_.resize(r_);
  for (Index j = 0; j < r_; ++j) {
    tau_theta_[j] = 1.0 / (gram_abs[j] + 1.0);
    sigma_w_[j] = gram_abs[j] > 0.0 ? 1.0 / gram_abs[j] : 1.0;
  }
  tau_t_ = 1.0 / (gamma + 1.0);
  tau_u_ = r2 > 0.0 ? 1.0 / r2 : 1.0;
  sigma_alpha_ = gamma + r2 > 0.0 ? 1.0 / (gamma + r2) : 1.0;
  sigma_soc_ = 1.0;

  // Power iteration on (T^1/2 K^T S K T^1/2) for the preconditioned norm.
  Vector vth = Vector::Ones(r_);
  double vt = 1.0, vu = r2 > 0.0 ? 1.0 : 0.0;
  Vector gx(r_), tmp(r_);
  double norm_sq = 0.0;
  for (int it = 0; it < kPowerIterations; ++it) {
    const double nrm = std::sqrt(vth.squaredNorm() + vt * vt + vu * vu);
    if (nrm == 0.0) break;
    vth /= nrm;
    vt /= nrm;
    vu /= nrm;
    // x = T^1/2 v
    const Vector xth = tau_theta_.cwiseSqrt().cwiseProduct(vth);
    const double xt = std::sqrt(tau_t_) * vt;
    const double xu = std::sqrt(tau_u_) * vu;
    // y = S K x
    gx.noalias() = gram_ * xth;
    const double ya = sigma_alpha_ * (gamma * xt + r2 * xu);
    const Vector yw = sigma_w_.cwiseProduct(gx);
    const double yb = sigma_soc_ * xt;
    const Vector yp = sigma_soc_ * xth;
    // K^T y
    tmp.noalias() = gram_ * yw;
    Vector kth = tmp + yp;
    const double kt = gamma * ya + yb;
    const double ku = r2 * ya;
    // T^1/2 K^T y
    vth = tau_theta_.cwiseSqrt().cwiseProduct(kth);
    vt = std::sqrt(tau_t_) * kt;
    vu = std::sqrt(tau_u_) * ku;
    norm_sq = std::sqrt(vth.squaredNorm() + vt * vt + vu * vu);
  }
  const double op_norm = std::sqrt(std::max(norm_sq, 1e-300));
  const double scale = kStepSafety / std::max(op_norm, 1e-12);
  tau_theta_ *= scale;
  tau_t_ *= scale;
  tau_u_ *= scale;
  sigma_alpha_ *= scale;
  sigma_w_ *= scale;
  sigma_soc_ *= scale;

  pinv_ = A_.completeOrthogonalDecomposition().pseudoInverse();
  if (gamma == 0.0 && r2 == 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram_);
    const Vector& ev = eig.eigenvalues();
    const double cutoff = std::max(ev.cwiseAbs().maxCoeff(), 1e-300) * 1e-12 * static_cast<double>(r_);
    Vector inv = Vector::Zero(r_);
    normal_unique_ = true;
    for (Index i = 0; i < r_; ++i) {
      if (ev[i] > cutoff) {
        inv[i] = 1.0 / ev[i];
      } else {
        normal_unique_ = false;
      }
    }
    normal_pinv_ = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  }
}

Vector MusSolver::warm_start(const Vector& y) const {
  Vector theta = pinv_ * y;
  const std::size_t keep = config_.warm_start_sparsity;
  if (keep > 0 && keep < static_cast<std::size_t>(r_)) {
    std::vector<Index> order(static_cast<std::size_t>(r_));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index i, Index j) { return std::abs(theta[i]) > std::abs(theta[j]); });
    for (std::size_t k = keep; k < order.size(); ++k) theta[order[k]] = 0.0;
  }
  return theta;
}

void MusSolver::project_onto_normal_equations(Vector& theta, const Vector& b) const {
  const Vector resid = gram_ * theta - b;
  theta.noalias() -= normal_pinv_ * resid;
}

MusSolver::Completion MusSolver::complete(const Vector& theta, const Vector& gram_theta,
                                          const Vector& b) const {
  const double gamma = params_.gamma;
  const double r2 = params_.R * params_.R;
  Completion c;
  c.t = theta.norm();
  c.u = theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0;
  const double h = (b - gram_theta).cwiseAbs().maxCoeff();
  const double deficit = h - gamma * c.t - r2 * c.u;
  if (deficit > 0.0) {
    const double via_t = gamma > 0.0 ? params_.lambda / gamma : HUGE_VAL;
    const double via_u = r2 > 0.0 ? params_.nu / r2 : HUGE_VAL;
    if (via_t <= via_u && gamma > 0.0) {
      c.t += deficit / gamma;
    } else if (r2 > 0.0) {
      c.u += deficit / r2;
    }
  }
  c.residual = std::max(0.0, h - gamma * c.t - r2 * c.u);
  c.objective = theta.lpNorm<1>() + params_.lambda * c.t + params_.nu * c.u;
  return c;
}

MusSolution MusSolver::solve(const Vector& y) const {
  if (y.size() != d_) {
    throw InputError("sample has " + std::to_string(y.size()) + " entries, dictionary has " +
                     std::to_string(d_) + " rows");
  }
  if (!all_finite(y)) throw InputError("sample contains NaN or Inf");

  const double gamma = params_.gamma;
  const double lambda = params_.lambda;
  const double nu = params_.nu;
  const double r2 = params_.R * params_.R;
  const bool exact_constraint = (gamma == 0.0 && r2 == 0.0);
  const bool adaptive = config_.step_policy == StepPolicy::adaptive;

  const Vector b = gram_scale_ * (A_.transpose() * y);

  MusSolution best;
  best.theta = Vector::Zero(r_);
  best.objective = HUGE_VAL;
  best.feas_residual = HUGE_VAL;

  // G nonsingular and no slack: the normal equations pin theta.
  if (exact_constraint && normal_unique_) {
    best.theta = normal_pinv_ * b;
    Vector g(r_);
    gram_product(gram_, best.theta, g);
    const Completion c = complete(best.theta, g, b);
    best.t = best.theta.norm();
    best.u = best.theta.size() ? best.theta.cwiseAbs().maxCoeff() : 0.0;
    best.objective = best.theta.lpNorm<1>() + lambda * best.t + nu * best.u;
    best.feas_residual = c.residual;
    best.gap = 0.0;
    best.status = c.residual <= config_.feas_tol ? SolveStatus::converged : SolveStatus::max_iters;
    return best;
  }

  // Primal (theta, t, u), dual (alpha, w) for the residual cone, (beta, p) for the SOC.
  Vector th = warm_start(y);
  double t = th.norm();
  double u = th.size() ? th.cwiseAbs().maxCoeff() : 0.0;
  double alpha = 0.0, beta = 0.0;
  Vector w = Vector::Zero(r_), p = Vector::Zero(r_);

  Vector g_th(r_), g_w(r_);  // G theta, G w for the current iterate
  gram_product(gram_, th, g_th);
  g_w.setZero();

  // Anchor for the Halpern iteration.
  Vector th0 = th, w0 = w, p0 = p, g_th0 = g_th, g_w0 = g_w;
  double t0 = t, u0 = u, alpha0 = alpha, beta0 = beta;

  Vector thp(r_), wp(r_), pp(r_), g_thp(r_), g_wp(r_), thbar(r_), g_thbar(r_);
  double tp = 0.0, up = 0.0, alphap = 0.0, betap = 0.0;

  double omega = 1.0;
  std::size_t k_epoch = 0;
  double res_epoch_start = -1.0;
  double res_prev = HUGE_VAL;
  std::size_t epoch_begin = 0;
  double best_dual = 0.0;

  Vector step_th(r_), wz(r_), sw(r_);

  std::size_t iter = 0;
  for (; iter < config_.max_iters; ++iter) {
    const double inv_omega = 1.0 / omega;
    step_th = tau_theta_ * inv_omega;

    // Primal proximal step.
    for (Index j = 0; j < r_; ++j) {
      thp[j] = soft(th[j] - step_th[j] * (g_w[j] + p[j]), step_th[j]);
      wz[j] = 1.0 / step_th[j];
    }
    tp = t - tau_t_ * inv_omega * (gamma * alpha + beta + lambda);
    up = u - tau_u_ * inv_omega * (r2 * alpha + nu);
    detail::project_linf_cone(up, thp, omega / tau_u_, wz);
    gram_product(gram_, thp, g_thp);

    // Dual step on the extrapolated primal.
    thbar = 2.0 * thp - th;
    g_thbar = 2.0 * g_thp - g_th;
    const double tbar = 2.0 * tp - t;
    const double ubar = 2.0 * up - u;

    const double sa = sigma_alpha_ * omega;
    sw = sigma_w_ * omega;
    alphap = alpha + sa * (gamma * tbar + r2 * ubar);
    wp = w + sw.cwiseProduct(g_thbar - b);
    detail::project_neg_l1_cone(alphap, wp, sa, sw);

    const double ss = sigma_soc_ * omega;
    betap = -(beta + ss * tbar);
    pp = -(p + ss * thbar);
    detail::project_soc(betap, pp);
    betap = -betap;
    pp = -pp;
    gram_product(gram_, wp, g_wp);

    // Fixed-point residual ||z - T z|| in the PDHG metric.
    const double dt = t - tp, du = u - up, da = alpha - alphap, db = beta - betap;
    double res_sq = omega * ((th - thp).cwiseAbs2().cwiseQuotient(tau_theta_).sum() + dt * dt / tau_t_ +
                             du * du / tau_u_);
    res_sq += inv_omega * (da * da / sigma_alpha_ + (w - wp).cwiseAbs2().cwiseQuotient(sigma_w_).sum() +
                           (db * db + (p - pp).squaredNorm()) / sigma_soc_);
    const double cross = da * (gamma * dt + r2 * du) + (w - wp).dot(g_th - g_thp) + db * dt +
                         (p - pp).dot(th - thp);
    res_sq -= 2.0 * cross;
    const double res = std::sqrt(std::max(res_sq, 0.0));
    if (res_epoch_start < 0.0) res_epoch_start = res;

    const std::size_t done = iter + 1;
    const bool check = (done % config_.window == 0) || done == config_.max_iters;
    const bool trace = config_.trace_every > 0 && done % config_.trace_every == 0;

    if (check || trace) {
      Vector cand = thp;
      Vector g_cand = g_thp;
      if (exact_constraint) {
        project_onto_normal_equations(cand, b);
        g_cand.noalias() = gram_ * cand;
      }
      const Completion c = complete(cand, g_cand, b);
      if (trace) {
        const double raw = std::max({(b - g_thp).cwiseAbs().maxCoeff() - gamma * tp - r2 * up,
                                     thp.norm() - tp, thp.cwiseAbs().maxCoeff() - up, 0.0});
        best.trace.push_back({done, thp.lpNorm<1>() + lambda * tp + nu * up, raw});
      }
      if (c.objective < best.objective || (best.feas_residual > config_.feas_tol && c.residual < best.feas_residual)) {
        if (c.residual <= best.feas_residual || c.residual <= config_.feas_tol) {
          best.theta = cand;
          best.t = c.t;
          best.u = c.u;
          best.objective = c.objective;
          best.feas_residual = c.residual;
        }
      }
      // Dual lower bound from (w+, p+) scaled into the dual feasible set:
      //   gamma ||w||_1 + ||p||_2 <= lambda,  R^2 ||w||_1 + sum (|Gw + p| - 1)_+ <= nu.
      const double objd = -b.dot(wp);
      if (objd > 0.0) {
        const Vector v = g_wp + pp;
        const double w1 = wp.lpNorm<1>();
        const double lin = gamma * w1 + pp.norm();
        double cmax = lin > 0.0 ? std::min(1.0, lambda / lin) : 1.0;
        auto excess = [&](double c) {
          double e = r2 * c * w1;
          for (Index i = 0; i < r_; ++i) e += std::max(0.0, c * std::abs(v[i]) - 1.0);
          return e;
        };
        if (excess(cmax) > nu) {
          double lo = 0.0, hi = cmax;
          for (int k = 0; k < 60; ++k) {
            const double mid = 0.5 * (lo + hi);
            (excess(mid) <= nu ? lo : hi) = mid;
          }
          cmax = lo;
        }
        best_dual = std::max(best_dual, cmax * objd);
      }
      if (check && best.feas_residual <= config_.feas_tol) {
        const double gap = std::max(0.0, best.objective - best_dual);
        if (gap <= config_.obj_tol * (1.0 + std::abs(best.objective))) {
          best.gap = gap;
          best.iterations = done;
          best.status = SolveStatus::converged;
          return best;
        }
      }
    }

    if (std::max(std::abs(alphap), wp.cwiseAbs().maxCoeff()) > kDualDivergence) {
      best.gap = std::max(0.0, best.objective - best_dual);
      best.iterations = done;
      best.status = SolveStatus::infeasible_detected;
      return best;
    }

    // Restart test on the fixed-point residual.
    const std::size_t epoch_len = done - epoch_begin;
    const bool restart = res <= kRestartSufficient * res_epoch_start ||
                         (res <= kRestartNecessary * res_epoch_start && res > res_prev) ||
                         epoch_len >= static_cast<std::size_t>(kRestartArtificial * static_cast<double>(done));
    res_prev = res;
    if (restart && epoch_len > 1) {
      if (adaptive) {
        const double dx = std::sqrt((thp - th0).squaredNorm() + (tp - t0) * (tp - t0) + (up - u0) * (up - u0));
        const double dy = std::sqrt((wp - w0).squaredNorm() + (pp - p0).squaredNorm() +
                                    (alphap - alpha0) * (alphap - alpha0) + (betap - beta0) * (betap - beta0));
        if (dx > 1e-10 && dy > 1e-10) {
          omega = std::exp(kPrimalWeightSmoothing * std::log(dy / dx) +
                           (1.0 - kPrimalWeightSmoothing) * std::log(omega));
        }
      }
      th = thp;
      t = tp;
      u = up;
      alpha = alphap;
      w = wp;
      beta = betap;
      p = pp;
      gram_product(gram_, th, g_th);
      gram_product(gram_, w, g_w);
      th0 = th; t0 = t; u0 = u; alpha0 = alpha; w0 = w; beta0 = beta; p0 = p;
      g_th0 = g_th; g_w0 = g_w;
      k_epoch = 0;
      epoch_begin = done;
      res_epoch_start = -1.0;
      res_prev = HUGE_VAL;
      continue;
    }

    // Reflected Halpern step toward the anchor.
    const double kk = static_cast<double>(k_epoch);
    const double cz = (kk + 1.0) / (kk + 2.0);
    const double c0 = 1.0 / (kk + 2.0);
    const double cp = cz * (1.0 + kReflection);
    const double cc = -cz * kReflection;
    th = cp * thp + cc * th + c0 * th0;
    g_th = cp * g_thp + cc * g_th + c0 * g_th0;
    t = cp * tp + cc * t + c0 * t0;
    u = cp * up + cc * u + c0 * u0;
    alpha = cp * alphap + cc * alpha + c0 * alpha0;
    w = cp * wp + cc * w + c0 * w0;
    g_w = cp * g_wp + cc * g_w + c0 * g_w0;
    beta = cp * betap + cc * beta + c0 * beta0;
    p = cp * pp + cc * p + c0 * p0;
    ++k_epoch;
  }

  best.gap = std::max(0.0, best.objective - best_dual);
  best.iterations = iter;
  best.status = SolveStatus::max_iters;
  return best;
}

MusSolution solve_mus(const Vector& y, const Matrix& A, const MusParams& params,
                      const SolverConfig& config) {
  if (y.size() != A.rows()) {
    throw InputError("sample has " + std::to_string(y.size()) + " entries, dictionary has " +
                     std::to_string(A.rows()) + " rows");
  }
  return MusSolver(A, params, config).solve(y);
}

SparseCode threshold(const Vector& w, double tau) {
  if (!(tau >= 0.0)) throw InputError("threshold must be >= 0");
  SparseCode code;
  for (Index i = 0; i < w.size(); ++i) {
    if (std::abs(w[i]) > tau) {
      code.support.push_back(i);
      code.values.push_back(w[i]);
    }
  }
  return code;
}

double theorem_bound(double gamma, double R, double theta_l2, double theta_linf) {
  if (gamma < 0.0 || R < 0.0 || theta_l2 < 0.0 || theta_linf < 0.0) {
    throw InputError("theorem_bound inputs must be >= 0");
  }
  return 16.0 * (gamma * theta_l2 + R * R * theta_linf);
}

FeasibilityResiduals check_feasibility(const Vector& theta, double t, double u, const Vector& y,
                                       const Matrix& A, const MusParams& params) {
  if (A.rows() != y.size() || A.cols() != theta.size()) {
    throw InputError("check_feasibility: dimension mismatch");
  }
  const double gs = params.resolved_gram_scale(A.rows());
  const Vector resid = y - A * theta;
  FeasibilityResiduals out;
  out.gram = gs * (A.transpose() * resid).cwiseAbs().maxCoeff() - (params.gamma * t + params.R * params.R * u);
  out.l2 = theta.norm() - t;
  out.linf = (theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0) - u;
  return out;
}

void write_trace_csv(std::ostream& os, const std::vector<TracePoint>& trace) {
  os << "iter,objective,feas_residual\n";
  os.precision(17);
  for (const auto& tp : trace) os << tp.iter << ',' << tp.objective << ',' << tp.feas_residual << '\n';
}

}  // namespace dlearn
