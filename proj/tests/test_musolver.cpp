#include "dlearn/musolver.hpp"
#include "dlearn/rng.hpp"
#include "dlearn/synth.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dlearn;

namespace {

Vector random_vector(Index n, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = lo + (hi - lo) * rng.uniform();
  return v;
}

Matrix random_matrix(Index d, Index r, CounterRng& rng) {
  Matrix A(d, r);
  for (Index j = 0; j < r; ++j) {
    for (Index i = 0; i < d; ++i) A(i, j) = rng.uniform() - 0.5;
    A.col(j).normalize();
  }
  return A;
}

SolverConfig tight() {
  SolverConfig c;
  c.max_iters = 400000;
  return c;
}

}  // namespace

TEST_CASE("linf cone projection satisfies the obtuse-angle condition") {
  CounterRng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 6);
    double a = 2.0 * rng.uniform() - 1.0;
    Vector z = random_vector(n, rng, -2.0, 2.0);
    const double wa = 0.1 + rng.uniform();
    const Vector wz = random_vector(n, rng, 0.1, 1.1);
    const double a0 = a;
    const Vector z0 = z;
    detail::project_linf_cone(a, z, wa, wz);
    CHECK(z.cwiseAbs().maxCoeff() <= a + 1e-12);
    // <x0 - p, q - p>_W <= 0 for feasible q
    for (int k = 0; k < 50; ++k) {
      Vector q = random_vector(n, rng, -2.0, 2.0);
      const double qa = q.cwiseAbs().maxCoeff() + rng.uniform();
      double ip = wa * (a0 - a) * (qa - a);
      for (Index i = 0; i < n; ++i) ip += wz[i] * (z0[i] - z[i]) * (q[i] - z[i]);
      CHECK(ip <= 1e-10);
    }
  }
}

TEST_CASE("negative l1 cone projection satisfies the obtuse-angle condition") {
  CounterRng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 6);
    double a = 2.0 * rng.uniform() - 1.0;
    Vector w = random_vector(n, rng, -2.0, 2.0);
    const double sa = 0.1 + rng.uniform();
    const Vector sw = random_vector(n, rng, 0.1, 1.1);
    const double a0 = a;
    const Vector w0 = w;
    detail::project_neg_l1_cone(a, w, sa, sw);
    CHECK(w.lpNorm<1>() <= -a + 1e-12);
    for (int k = 0; k < 50; ++k) {
      Vector q = random_vector(n, rng, -2.0, 2.0);
      const double qa = -q.lpNorm<1>() - rng.uniform();
      double ip = (a0 - a) * (qa - a) / sa;
      for (Index i = 0; i < n; ++i) ip += (w0[i] - w[i]) * (q[i] - w[i]) / sw[i];
      CHECK(ip <= 1e-10);
    }
  }
}

TEST_CASE("second-order cone projection") {
  CounterRng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 5);
    double s = 2.0 * rng.uniform() - 1.0;
    Vector v = random_vector(n, rng, -2.0, 2.0);
    const double s0 = s;
    const Vector v0 = v;
    detail::project_soc(s, v);
    CHECK(v.norm() <= s + 1e-12);
    for (int k = 0; k < 50; ++k) {
      Vector q = random_vector(n, rng, -2.0, 2.0);
      const double qs = q.norm() + rng.uniform();
      const double ip = (s0 - s) * (qs - s) + (v0 - v).dot(q - v);
      CHECK(ip <= 1e-10);
    }
  }
}

TEST_CASE("zero sample gives the zero solution") {
  CounterRng rng(3);
  const Matrix A = random_matrix(8, 12, rng);
  MusParams p{0.01, 1.0, 1.0, 0.1, 0.0};
  const MusSolution sol = solve_mus(Vector::Zero(8), A, p, SolverConfig{});
  CHECK(sol.status == SolveStatus::converged);
  CHECK(sol.theta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sol.t == 0.0);
  CHECK(sol.u == 0.0);
  CHECK(sol.objective == 0.0);
}

TEST_CASE("noiseless injective instance is recovered") {
  CounterRng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = random_matrix(8, 4, rng);
    const Vector theta = random_vector(4, rng, -1.5, 1.5);
    const Vector y = A * theta;
    const MusSolution sol = solve_mus(y, A, MusParams{0.0, 1.0, 1.0, 0.0, 0.0}, SolverConfig{});
    CHECK(sol.status == SolveStatus::converged);
    CHECK((sol.theta - theta).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("objective matches the grid oracle on r=2, d=4") {
  CounterRng rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    const Matrix A = random_matrix(4, 2, rng);
    const Vector y = random_vector(4, rng);
    const MusParams p{0.05 + 0.2 * rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.3 * rng.uniform(), 0.25};
    const MusSolution sol = solve_mus(y, A, p, tight());
    REQUIRE(sol.status == SolveStatus::converged);
    const double grid = oracle::grid_minimum(oracle::TinySelector(A, y, p.gamma, p.lambda, p.nu, p.R, 0.25), 4e-3);
    CHECK(std::abs(sol.objective - grid) <= 1e-3);
  }
}

TEST_CASE("solution invariants") {
  CounterRng rng(41);
  const SolverConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = random_matrix(10, 20, rng);
    const Vector y = random_vector(10, rng);
    const MusParams p{0.02, 1.0, 2.0, 0.2, 0.0};
    const MusSolution sol = solve_mus(y, A, p, cfg);
    CHECK(sol.status == SolveStatus::converged);
    CHECK(sol.theta.norm() <= sol.t + cfg.feas_tol);
    CHECK(sol.theta.cwiseAbs().maxCoeff() <= sol.u + cfg.feas_tol);
    CHECK(std::abs(sol.objective - (sol.theta.lpNorm<1>() + p.lambda * sol.t + p.nu * sol.u)) <= 1e-10);
    const FeasibilityResiduals res = check_feasibility(sol.theta, sol.t, sol.u, y, A, p);
    CHECK(res.max() <= cfg.feas_tol);
  }
}

TEST_CASE("objective never exceeds a feasible truth") {
  CounterRng rng(51);
  const Index d = 16, r = 24, s = 2;
  const double R = 0.05;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix As = random_matrix(d, r, rng);
    Matrix E(d, r);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < r; ++j) E(i, j) = R * (2.0 * rng.uniform() - 1.0);
    const Matrix A = As + E;
    Vector theta = Vector::Zero(r);
    theta[static_cast<Index>(rng() % 12)] = 1.2;
    theta[12 + static_cast<Index>(rng() % 12)] = -0.8;
    const Vector y = As * theta;
    const double gamma = std::sqrt(double(s)) * R * R + std::sqrt(double(s) / d) * R;
    // gram_scale 1/d with gamma sized for the 1/d constraint
    const MusParams p{gamma, 1.0, 1.0, R, 0.0};
    const FeasibilityResiduals truth = check_feasibility(theta, theta.norm(), theta.cwiseAbs().maxCoeff(), y, A, p);
    if (truth.max() > 0.0) continue;
    const MusSolution sol = solve_mus(y, A, p, SolverConfig{});
    const double f_star = theta.lpNorm<1>() + p.lambda * theta.norm() + p.nu * theta.cwiseAbs().maxCoeff();
    CHECK(sol.objective <= f_star + SolverConfig{}.obj_tol * (1.0 + std::abs(sol.objective)));
  }
}

TEST_CASE("adaptive and fixed policies agree") {
  CounterRng rng(61);
  const Matrix A = random_matrix(12, 24, rng);
  const Vector y = random_vector(12, rng);
  const MusParams p{0.05, 0.5, 0.5, 0.1, 1.0};
  SolverConfig a;
  a.step_policy = StepPolicy::adaptive;
  const MusSolution fixed = solve_mus(y, A, p, SolverConfig{});
  const MusSolution adapt = solve_mus(y, A, p, a);
  CHECK(fixed.status == SolveStatus::converged);
  CHECK(adapt.status == SolveStatus::converged);
  CHECK(std::abs(fixed.objective - adapt.objective) <= 1e-7 * (1.0 + fixed.objective));
}

TEST_CASE("max-iters is reported with the best iterate") {
  CounterRng rng(71);
  const Matrix A = random_matrix(12, 24, rng);
  const Vector y = random_vector(12, rng);
  SolverConfig c;
  c.max_iters = 5;
  const MusSolution sol = solve_mus(y, A, MusParams{0.05, 1.0, 1.0, 0.1, 0.0}, c);
  CHECK(sol.status == SolveStatus::max_iters);
  CHECK(sol.theta.size() == 24);
  CHECK(std::isfinite(sol.objective));
}

TEST_CASE("noiseless sample outside the range solves the normal equations") {
  Matrix A = Matrix::Zero(3, 2);
  A(0, 0) = 1.0;
  A(1, 1) = 1.0;
  Vector y(3);
  y << 0.5, -0.25, 7.0;
  const MusSolution sol = solve_mus(y, A, MusParams{0.0, 1.0, 1.0, 0.0, 1.0}, SolverConfig{});
  CHECK(sol.status == SolveStatus::converged);
  CHECK(std::abs(sol.theta[0] - 0.5) <= 1e-8);
  CHECK(std::abs(sol.theta[1] + 0.25) <= 1e-8);
}

TEST_CASE("input validation") {
  const Matrix A = Matrix::Identity(3, 3);
  Vector y = Vector::Ones(3);
  CHECK_THROWS_AS(solve_mus(y, A, MusParams{-1.0, 1.0, 1.0, 0.0, 0.0}, SolverConfig{}), InputError);
  CHECK_THROWS_AS(solve_mus(y, A, MusParams{0.0, 0.0, 1.0, 0.0, 0.0}, SolverConfig{}), InputError);
  CHECK_THROWS_AS(solve_mus(Vector::Ones(2), A, MusParams{}, SolverConfig{}), InputError);
  y[1] = std::nan("");
  CHECK_THROWS_AS(solve_mus(y, A, MusParams{}, SolverConfig{}), InputError);
  SolverConfig bad;
  bad.feas_tol = 0.0;
  CHECK_THROWS_AS(solve_mus(Vector::Ones(3), A, MusParams{}, bad), InputError);
}

TEST_CASE("threshold examples") {
  Vector w(4);
  w << 1.2, -0.3, 0.0, 0.95;
  const SparseCode c = threshold(w, 0.9);
  CHECK(c.support == std::vector<Index>{0, 3});
  CHECK(c.values == std::vector<double>{1.2, 0.95});
  CHECK(threshold(w, 2.0).empty());
  const SparseCode z = threshold(w, 0.0);
  CHECK(z.support == std::vector<Index>{0, 1, 3});
  CHECK(z.values == std::vector<double>{1.2, -0.3, 0.95});
  CHECK(threshold(w, 0.95).support == std::vector<Index>{0});
  CHECK_THROWS_AS(threshold(w, -0.1), InputError);
}

TEST_CASE("threshold is idempotent") {
  CounterRng rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector w = random_vector(10, rng, -2.0, 2.0);
    const double tau = rng.uniform();
    const SparseCode once = threshold(w, tau);
    CHECK(threshold(once.dense(10), tau) == once);
  }
}

TEST_CASE("theorem bound arithmetic") {
  CHECK(theorem_bound(0.0175, 0.05, 2.0, 1.4) == doctest::Approx(0.616).epsilon(1e-12));
  CHECK(theorem_bound(0.0, 0.0, 3.0, 1.0) == 0.0);
  const double s = 4, d = 64, R = 0.05;
  CHECK(std::sqrt(s) * R * R + std::sqrt(s / d) * R == doctest::Approx(0.0175).epsilon(1e-12));
}

TEST_CASE("feasibility residuals") {
  CounterRng rng(91);
  const Matrix A = random_matrix(6, 4, rng);
  Vector theta(4);
  theta << 1.0, -0.5, 0.0, 0.25;
  const Vector y = A * theta;
  const MusParams p{0.0, 1.0, 1.0, 0.0, 0.0};
  const FeasibilityResiduals ok = check_feasibility(theta, theta.norm(), theta.cwiseAbs().maxCoeff(), y, A, p);
  CHECK(ok.max() <= 1e-15);
  const FeasibilityResiduals bad = check_feasibility(2.0 * theta, theta.norm(), theta.cwiseAbs().maxCoeff(), y, A, p);
  CHECK(bad.l2 > 0.0);
  CHECK(bad.linf > 0.0);
}

TEST_CASE("trace csv") {
  CounterRng rng(101);
  const Matrix A = random_matrix(6, 10, rng);
  SolverConfig c;
  c.trace_every = 50;
  const MusSolution sol = solve_mus(random_vector(6, rng), A, MusParams{0.05, 1.0, 1.0, 0.1, 0.0}, c);
  REQUIRE(!sol.trace.empty());
  std::ostringstream os;
  write_trace_csv(os, sol.trace);
  const std::string text = os.str();
  CHECK(text.rfind("iter,objective,feas_residual\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == sol.trace.size() + 1);
}

TEST_CASE("shared solver gives the same answer as a fresh one") {
  CounterRng rng(111);
  const Matrix A = random_matrix(10, 20, rng);
  const MusParams p{0.03, 1.0, 1.0, 0.1, 0.0};
  const MusSolver solver(A, p, SolverConfig{});
  for (int k = 0; k < 3; ++k) {
    const Vector y = random_vector(10, rng);
    const MusSolution a = solver.solve(y);
    const MusSolution b = solve_mus(y, A, p, SolverConfig{});
    CHECK(a.theta == b.theta);
    CHECK(a.iterations == b.iterations);
  }
}
