#include "dlearn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace dlearn {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void check_cap(Index d, std::optional<double> cap) {
  if (!cap) return;
  if (!(*cap > 0.0) || !std::isfinite(*cap)) throw InputError("maxnorm_cap must be a positive number");
  const double floor = 1.0 / std::sqrt(static_cast<double>(d));
  if (*cap < floor) {
    throw InfeasibleError("maxnorm_cap " + fmt(*cap) + " is below 1/sqrt(d) = " + fmt(floor) +
                          ", the smallest possible max entry of a unit-norm column");
  }
}

[[noreturn]] void budget_exhausted(double cap, Index d) {
  throw InfeasibleError("no draw met maxnorm_cap " + fmt(cap) + " within " + std::to_string(kRejectionBudget) +
                        " resamples (unit-norm floor 1/sqrt(d) = " + fmt(1.0 / std::sqrt(static_cast<double>(d))) +
                        ")");
}

}  // namespace

double coherence(const Matrix& A) {
  if (A.cols() < 2) return 0.0;
  Matrix g = A.transpose() * A;
  g.diagonal().setZero();
  return g.cwiseAbs().maxCoeff();
}

Dictionary::Dictionary(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() < 1 || entries_.cols() < 1) throw InputError("dictionary must be at least 1 x 1");
  if (!entries_.allFinite()) throw InputError("dictionary contains NaN or Inf");
  for (Index j = 0; j < entries_.cols(); ++j) {
    const double n = entries_.col(j).norm();
    if (std::abs(n - 1.0) > 1e-12) {
      throw InputError("dictionary column " + std::to_string(j) + " has norm " + fmt(n) + ", expected 1");
    }
  }
  coherence_ = dlearn::coherence(entries_);
  max_entry_ = inf_norm(entries_);
}

std::string to_string(DictMode m) {
  switch (m) {
    case DictMode::gaussian_normalized: return "gaussian-normalized";
    case DictMode::orthonormal: return "orthonormal";
    case DictMode::rademacher: return "rademacher";
  }
  return "unknown";
}

std::string to_string(PerturbMode m) { return m == PerturbMode::uniform ? "uniform" : "boundary"; }

std::string to_string(ValueLaw v) {
  return v == ValueLaw::uniform_magnitude ? "uniform-magnitude" : "two-point";
}

DictMode parse_dict_mode(const std::string& s) {
  if (s == "gaussian-normalized" || s == "gaussian") return DictMode::gaussian_normalized;
  if (s == "orthonormal") return DictMode::orthonormal;
  if (s == "rademacher") return DictMode::rademacher;
  throw InputError("unknown dictionary mode '" + s + "'");
}

PerturbMode parse_perturb_mode(const std::string& s) {
  if (s == "uniform") return PerturbMode::uniform;
  if (s == "boundary") return PerturbMode::boundary;
  throw InputError("unknown perturbation mode '" + s + "'");
}

ValueLaw parse_value_law(const std::string& s) {
  if (s == "uniform-magnitude") return ValueLaw::uniform_magnitude;
  if (s == "two-point") return ValueLaw::two_point;
  throw InputError("unknown value law '" + s + "'");
}

Dictionary gen_dictionary(Index d, Index r, DictMode mode, std::optional<double> maxnorm_cap,
                          std::uint64_t seed) {
  if (d < 1 || r < 1) throw InputError("d and r must be >= 1");
  if (mode == DictMode::orthonormal && r > d) throw InputError("orthonormal mode requires r <= d");
  check_cap(d, maxnorm_cap);
  const double cap = maxnorm_cap.value_or(std::numeric_limits<double>::infinity());

  Matrix A(d, r);
  std::normal_distribution<double> normal;

  if (mode == DictMode::orthonormal) {
    CounterRng rng = CounterRng::stream(seed, streams::kDictionary);
    for (std::size_t attempt = 0; attempt < kRejectionBudget; ++attempt) {
      Matrix g(d, d);
      for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i) g(i, j) = normal(rng);
      Eigen::HouseholderQR<Matrix> qr(g);
      Matrix q = qr.householderQ() * Matrix::Identity(d, r);
      const Matrix rr = qr.matrixQR().topLeftCorner(r, r);
      for (Index j = 0; j < r; ++j) {
        if (rr(j, j) < 0.0) q.col(j) = -q.col(j);
        q.col(j).normalize();
      }
      if (inf_norm(q) <= cap) return Dictionary(std::move(q));
    }
    budget_exhausted(cap, d);
  }

  const double level = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index j = 0; j < r; ++j) {
    CounterRng rng = CounterRng::stream(seed, streams::kDictionary, static_cast<std::uint64_t>(j));
    bool done = false;
    for (std::size_t attempt = 0; attempt < kRejectionBudget && !done; ++attempt) {
      if (mode == DictMode::rademacher) {
        for (Index i = 0; i < d; ++i) A(i, j) = (rng() & 1u) ? level : -level;
      } else {
        for (Index i = 0; i < d; ++i) A(i, j) = normal(rng);
        const double n = A.col(j).norm();
        if (n == 0.0) continue;
        A.col(j) /= n;
      }
      done = A.col(j).cwiseAbs().maxCoeff() <= cap;
    }
    if (!done) budget_exhausted(cap, d);
  }
  return Dictionary(std::move(A));
}

Matrix perturb_dictionary(const Dictionary& A_star, double R0, PerturbMode mode, std::uint64_t seed) {
  if (!(R0 >= 0.0) || !std::isfinite(R0)) throw InputError("R0 must be a finite number >= 0");
  const Matrix& a = A_star.entries();
  Matrix out(a.rows(), a.cols());
  CounterRng rng = CounterRng::stream(seed, streams::kPerturb);
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      const double e = mode == PerturbMode::uniform ? R0 * (2.0 * rng.uniform() - 1.0)
                                                    : ((rng() & 1u) ? R0 : -R0);
      double b = a(i, j) + e;
      while (std::abs(b - a(i, j)) > R0) b = std::nextafter(b, a(i, j));
      out(i, j) = b;
    }
  }
  return out;
}

void CodeDistribution::validate(bool strict) const {
  if (s < 2) throw InputError("sparsity s = " + std::to_string(s) + " violates 2 <= s");
  if (s > r) throw InputError("sparsity s = " + std::to_string(s) + " exceeds r = " + std::to_string(r));
  if (!(m > 0.0) || !(m <= M) || !std::isfinite(M)) throw InputError("magnitude bounds need 0 < m <= M");
  if (strict && !(M > 1.0)) throw InputError("strict mode requires M > 1");
  if (law == ValueLaw::two_point && !(m <= 1.0 && 1.0 <= M)) {
    throw InputError("two-point law takes values +-1, which must lie in [m, M]");
  }
}

double CodeDistribution::second_moment() const {
  if (law == ValueLaw::two_point) return 1.0;
  return (m * m + m * M + M * M) / 3.0;
}

SparseCode draw_code(const CodeDistribution& dist, CounterRng& rng) {
  SparseCode code;
  code.support.reserve(static_cast<std::size_t>(dist.s));
  std::vector<Index> all(static_cast<std::size_t>(dist.r));
  std::iota(all.begin(), all.end(), Index{0});
  std::sample(all.begin(), all.end(), std::back_inserter(code.support), dist.s, rng);
  code.values.reserve(code.support.size());
  for (std::size_t k = 0; k < code.support.size(); ++k) {
    const double sign = (rng() & 1u) ? 1.0 : -1.0;
    const double mag = dist.law == ValueLaw::two_point ? 1.0 : dist.m + (dist.M - dist.m) * rng.uniform();
    code.values.push_back(sign * mag);
  }
  return code;
}

Vector synthesize(const Matrix& A, const SparseCode& x) { return A * x.dense(A.cols()); }

Batch gen_batch(const Dictionary& A_star, const CodeDistribution& dist, std::size_t n, std::uint64_t seed) {
  if (dist.r != A_star.r()) {
    throw InputError("code dimension r = " + std::to_string(dist.r) + " does not match dictionary r = " +
                     std::to_string(A_star.r()));
  }
  dist.validate();
  Batch batch;
  batch.codes.reserve(n);
  batch.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    CounterRng rng = CounterRng::stream(seed, streams::kBatch, k);
    batch.codes.push_back(draw_code(dist, rng));
    batch.samples.push_back(synthesize(A_star.entries(), batch.codes.back()));
  }
  return batch;
}

double zeta(double gamma, double lambda, double nu, double R, Index s) {
  const double rs = std::sqrt(static_cast<double>(s));
  return gamma * (1.0 + nu + 2.0 * lambda / rs) / lambda + R * R * (1.0 + lambda) / nu;
}

bool AssumptionReport::ok() const {
  return coherence_ok && maxnorm_ok && separation_ok && sparsity_ok && init_radius_ok && d5_ok && magnitude_ok;
}

AssumptionReport validate_assumptions(const Dictionary& A_star, const CodeDistribution& dist, double R0,
                                      double lambda, double nu, double gamma, const AssumptionOptions& opts) {
  AssumptionReport rep;
  const Matrix& A = A_star.entries();
  const double d = static_cast<double>(A_star.d());
  const double sd = std::sqrt(d);
  const double s = static_cast<double>(dist.s);
  const double M = dist.M;
  const double cb = opts.strict_cb ? 1.0 / (2000.0 * M * M) : opts.cb;
  auto note = [&](bool ok, const std::string& name, const std::string& detail) {
    rep.messages.push_back(std::string(ok ? "pass " : "FAIL ") + name + ": " + detail);
  };

  // A1
  rep.mu_over_sqrt_d = A_star.coherence();
  const double mu = rep.mu_over_sqrt_d * sd;
  if (opts.mu_target) {
    rep.coherence_ok = rep.mu_over_sqrt_d <= *opts.mu_target / sd + 1e-12;
    note(rep.coherence_ok, "A1 coherence",
         "mu/sqrt(d) = " + fmt(rep.mu_over_sqrt_d) + " vs target " + fmt(*opts.mu_target / sd));
  } else {
    rep.coherence_ok = rep.mu_over_sqrt_d < 1.0;
    note(rep.coherence_ok, "A1 coherence", "mu/sqrt(d) = " + fmt(rep.mu_over_sqrt_d) + " (no target; needs < 1)");
  }

  // A3
  rep.cb_bound = cb / s;
  rep.maxnorm_ok = A_star.max_entry() <= rep.cb_bound;
  note(rep.maxnorm_ok, "A3 max entry",
       "||A||_inf = " + fmt(A_star.max_entry()) + " vs C_b/s = " + fmt(rep.cb_bound) + " (C_b = " + fmt(cb) + ")");

  // A4
  const double col_floor = 3.0 * cb / (4.0 * s);
  const double pair_floor = 3.0 * cb / (2.0 * s);
  double min_col = std::numeric_limits<double>::infinity();
  double min_pair = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < A.cols(); ++i) {
    min_col = std::min(min_col, A.col(i).cwiseAbs().maxCoeff());
    for (Index j = i + 1; j < A.cols(); ++j) {
      const double dm = (A.col(i) - A.col(j)).cwiseAbs().maxCoeff();
      const double dp = (A.col(i) + A.col(j)).cwiseAbs().maxCoeff();
      min_pair = std::min(min_pair, std::min(dm, dp));
    }
  }
  rep.separation = min_pair;
  rep.separation_ok = min_col > col_floor && min_pair >= pair_floor;
  note(rep.separation_ok, "A4 separation",
       "min ||A_i||_inf = " + fmt(min_col) + " vs 3C_b/4s = " + fmt(col_floor) + ", min pair distance = " +
           fmt(min_pair) + " vs 3C_b/2s = " + fmt(pair_floor));

  // C2
  const double mu_used = opts.mu_target ? *opts.mu_target : mu;
  const double lim_a = 2.0 * sd;
  const double lim_b = cb * sd;
  const double lim_c = mu_used > 0.0 ? opts.c2_constant * sd / mu_used : std::numeric_limits<double>::infinity();
  rep.sparsity_limit = std::min({lim_a, lim_b, lim_c});
  rep.sparsity_binding = rep.sparsity_limit == lim_a ? "2sqrt(d)" : rep.sparsity_limit == lim_b ? "C_b sqrt(d)"
                                                                                               : "C sqrt(d)/mu";
  rep.sparsity_ok = dist.s >= 2 && s <= rep.sparsity_limit;
  note(rep.sparsity_ok, "C2 sparsity",
       "need 2 <= s = " + std::to_string(dist.s) + " <= " + fmt(rep.sparsity_limit) + " (binding " +
           rep.sparsity_binding + ")");

  // B1
  rep.init_radius_ok = R0 <= cb / (2.0 * s);
  note(rep.init_radius_ok, "B1 initial radius", "R0 = " + fmt(R0) + " vs C_b/2s = " + fmt(cb / (2.0 * s)));

  // C3
  rep.magnitude_floor = 32.0 * R0 * M * (R0 * (s + 1.0) + s / sd);
  rep.magnitude_ok = rep.magnitude_floor < dist.m && dist.m <= M && M > 1.0;
  note(rep.magnitude_ok, "C3 magnitude",
       "m = " + fmt(dist.m) + " vs floor 32 R0 M (R0 (s+1) + s/sqrt(d)) = " + fmt(rep.magnitude_floor) +
           ", M = " + fmt(M) + " (needs M > 1)");

  // D5
  rep.zeta = zeta(gamma, lambda, nu, R0, dist.s);
  rep.d5_ok = 8.0 * s * rep.zeta <= 0.5;
  note(rep.d5_ok, "D5 tuning", "8 s zeta = " + fmt(8.0 * s * rep.zeta) + " vs 1/2");
  return rep;
}

void write_report(std::ostream& os, const AssumptionReport& rep) {
  os << std::boolalpha;
  os << "overall = " << (rep.ok() ? "pass" : "fail") << '\n';
  os << "coherence_ok = " << rep.coherence_ok << '\n';
  os << "maxnorm_ok = " << rep.maxnorm_ok << '\n';
  os << "separation_ok = " << rep.separation_ok << '\n';
  os << "sparsity_ok = " << rep.sparsity_ok << '\n';
  os << "init_radius_ok = " << rep.init_radius_ok << '\n';
  os << "magnitude_ok = " << rep.magnitude_ok << '\n';
  os << "d5_ok = " << rep.d5_ok << '\n';
  os.precision(17);
  os << "mu_over_sqrt_d = " << rep.mu_over_sqrt_d << '\n';
  os << "cb_bound = " << rep.cb_bound << '\n';
  os << "zeta = " << rep.zeta << '\n';
  os << "separation = " << rep.separation << '\n';
  os << "sparsity_limit = " << rep.sparsity_limit << " (" << rep.sparsity_binding << ")\n";
  os << "magnitude_floor = " << rep.magnitude_floor << '\n';
  for (const auto& m : rep.messages) os << "# " << m << '\n';
}

}  // namespace dlearn
