#include "dlearn/altmin.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <thread>

#include "dlearn/io.hpp"

namespace dlearn {

namespace {

constexpr std::size_t kLeafBlock = 16;

void accumulate_leaf(const Matrix& A, const Batch& batch, const std::vector<SparseCode>& codes, std::size_t begin,
                     std::size_t end, Matrix& out) {
  out.setZero(A.rows(), A.cols());
  Vector resid(A.rows());
  for (std::size_t k = begin; k < end; ++k) {
    const SparseCode& x = codes[k];
    resid = -batch.samples[k];
    for (std::size_t q = 0; q < x.size(); ++q) resid.noalias() += x.values[q] * A.col(x.support[q]);
    for (std::size_t q = 0; q < x.size(); ++q) out.col(x.support[q]).noalias() += x.values[q] * resid;
  }
}

Matrix reduce_range(const std::vector<Matrix>& leaves, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return leaves[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  Matrix left = reduce_range(leaves, lo, mid);
  left += reduce_range(leaves, mid, hi);
  return left;
}

void check_codes(const Matrix& A, const Batch& batch, const std::vector<SparseCode>& codes) {
  if (batch.samples.empty()) throw InputError("empty batch");
  if (codes.size() != batch.samples.size()) {
    throw InputError("have " + std::to_string(codes.size()) + " codes for " + std::to_string(batch.samples.size()) +
                     " samples");
  }
  for (std::size_t k = 0; k < codes.size(); ++k) {
    if (batch.samples[k].size() != A.rows()) throw InputError("sample " + std::to_string(k) + " has wrong length");
    if (codes[k].values.size() != codes[k].support.size()) throw InputError("malformed sparse code");
    for (Index j : codes[k].support) {
      if (j < 0 || j >= A.cols()) throw InputError("code index " + std::to_string(j) + " out of range");
    }
  }
}

}  // namespace

void Schedule::validate() const {
  if (!(R0 > 0.0) || !std::isfinite(R0)) throw InputError("R0 must be > 0");
  if (T < 1) throw InputError("T must be >= 1");
  if (!(contraction > 0.0 && contraction < 1.0)) throw InputError("contraction must lie in (0, 1)");
  if (eta_policy == EtaPolicy::explicit_value && !(eta > 0.0)) throw InputError("explicit eta must be > 0");
  if (lambda_nu_policy == LambdaNuPolicy::explicit_value && (!(lambda > 0.0) || !(nu > 0.0))) {
    throw InputError("explicit lambda and nu must be > 0");
  }
  if (!(threshold_scale >= 0.0) || !std::isfinite(threshold_scale)) throw InputError("threshold_scale must be >= 0");
  if (!std::isfinite(gram_scale)) throw InputError("gram_scale must be finite");
}

StepParams step_params(double R_prev, Index s, Index d, Index r, double M, const Schedule& schedule) {
  if (s < 2) throw InputError("sparsity s = " + std::to_string(s) + " violates 2 <= s");
  if (!(R_prev > 0.0)) throw InputError("R_prev must be > 0");
  if (d < 1 || r < 1) throw InputError("d and r must be >= 1");
  const double sd = static_cast<double>(s);
  const double dd = static_cast<double>(d);
  const double rd = static_cast<double>(r);
  const double R = R_prev;

  StepParams p;
  p.R_prev = R;
  p.R_next = schedule.contraction * R;
  p.eta = schedule.eta_policy == EtaPolicy::midpoint ? 7.0 * rd / (8.0 * sd) : schedule.eta;
  p.tau = schedule.threshold_scale * (16.0 * R * M * (R * (sd + 1.0) + sd / std::sqrt(dd)));
  p.gamma = std::sqrt(sd) * R * R + std::sqrt(sd / dd) * R;

  const double s32 = std::pow(sd, 1.5);
  p.lambda_lower = 32.0 * (s32 * R * R + s32 * R / std::sqrt(dd)) * (4.0 + 6.0 / std::sqrt(sd));
  p.nu_lower = 128.0 * sd * R * R;
  p.infeasible = p.lambda_lower > kTuningUpper || p.nu_lower > kTuningUpper;
  if (schedule.lambda_nu_policy == LambdaNuPolicy::lower_feasible) {
    p.lambda = std::min(p.lambda_lower, kTuningUpper);
    p.nu = std::min(p.nu_lower, kTuningUpper);
  } else {
    p.lambda = schedule.lambda;
    p.nu = schedule.nu;
  }
  return p;
}

double StageResult::mean_feas_residual() const {
  if (feas_residual.empty()) return 0.0;
  double s = 0.0;
  for (double v : feas_residual) s += v;
  return s / static_cast<double>(feas_residual.size());
}

StageResult sparse_stage(const Matrix& A_prev, const Batch& batch, const StepParams& p, const SolverConfig& solver,
                         double gram_scale, std::size_t jobs) {
  const std::size_t n = batch.samples.size();
  for (const auto& y : batch.samples) {
    if (y.size() != A_prev.rows()) throw InputError("sample length does not match dictionary rows");
  }
  MusParams mp;
  mp.gamma = p.gamma;
  mp.lambda = p.lambda;
  mp.nu = p.nu;
  mp.R = p.R_prev;
  mp.gram_scale = gram_scale;
  const MusSolver mus(A_prev, mp, solver);

  StageResult out;
  out.codes.resize(n);
  out.status.resize(n);
  out.feas_residual.resize(n);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const MusSolution sol = mus.solve(batch.samples[k]);
      out.codes[k] = threshold(sol.theta, p.tau);
      out.status[k] = sol.status;
      out.feas_residual[k] = sol.feas_residual;
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      const std::size_t begin = n * w / jobs, end = n * (w + 1) / jobs;
      pool.emplace_back([&, w, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (SolveStatus s : out.status) out.nonconverged += (s != SolveStatus::converged);
  return out;
}

Matrix gradient(const Matrix& A_prev, const Batch& batch, const std::vector<SparseCode>& codes) {
  check_codes(A_prev, batch, codes);
  const std::size_t n = codes.size();
  const std::size_t leaves = (n + kLeafBlock - 1) / kLeafBlock;
  std::vector<Matrix> parts(leaves);
  for (std::size_t b = 0; b < leaves; ++b) {
    accumulate_leaf(A_prev, batch, codes, b * kLeafBlock, std::min(n, (b + 1) * kLeafBlock), parts[b]);
  }
  Matrix g = reduce_range(parts, 0, leaves);
  g /= static_cast<double>(n);
  return g;
}

double sample_loss(const Matrix& A, const Batch& batch, const std::vector<SparseCode>& codes) {
  check_codes(A, batch, codes);
  double total = 0.0;
  for (std::size_t k = 0; k < codes.size(); ++k) {
    total += (batch.samples[k] - A * codes[k].dense(A.cols())).squaredNorm();
  }
  return total / (2.0 * static_cast<double>(codes.size()));
}

GenerativeSource::GenerativeSource(Dictionary A_star, CodeDistribution dist, std::size_t n, std::uint64_t seed,
                                   bool reuse)
    : A_star_(std::move(A_star)), dist_(dist), n_(n), seed_(seed), reuse_(reuse) {
  if (n_ < 1) throw InputError("samples per iteration must be >= 1");
  if (dist_.r != A_star_.r()) throw InputError("code dimension does not match dictionary");
}

std::uint64_t GenerativeSource::stream_id(std::size_t t) const {
  return CounterRng::derive(seed_, streams::kBatch, reuse_ ? 1 : t);
}

Batch GenerativeSource::next(std::size_t t) { return gen_batch(A_star_, dist_, n_, stream_id(t)); }

Batch FixedSource::next(std::size_t t) {
  if (t < 1 || t > batches_.size()) {
    throw InputError("sample source exhausted at iteration " + std::to_string(t));
  }
  return batches_[t - 1];
}

void RunReport::write_csv(std::ostream& os) const {
  os << "t,R_t,inf_error,sign_rate,mean_feas_residual,eta,tau,gamma,lambda,nu,nonconverged,wall_ms\n";
  for (const auto& r : records) {
    os << r.t << ',' << format_double(r.R_t) << ',' << format_double(r.inf_error) << ','
       << format_double(r.sign_rate) << ',' << format_double(r.mean_feas_residual) << ','
       << format_double(r.params.eta) << ',' << format_double(r.params.tau) << ',' << format_double(r.params.gamma)
       << ',' << format_double(r.params.lambda) << ',' << format_double(r.params.nu) << ',' << r.nonconverged
       << ',' << format_double(r.wall_ms) << '\n';
  }
}

RunReport run(const Matrix& A0, const std::optional<Dictionary>& oracle, SampleSource& source,
              const Schedule& schedule, const CodeDistribution& dist, const SolverConfig& solver,
              const RunOptions& options) {
  schedule.validate();
  solver.validate();
  if (A0.cols() != dist.r) throw InputError("dictionary has " + std::to_string(A0.cols()) + " columns, codes have r = " +
                                            std::to_string(dist.r));
  if (!A0.allFinite()) throw InputError("initial dictionary contains NaN or Inf");
  if (oracle) {
    if (oracle->d() != A0.rows() || oracle->r() != A0.cols()) throw InputError("oracle shape differs from A0");
    const double e0 = inf_dist(A0, oracle->entries());
    if (e0 > schedule.R0) {
      throw InputError("||A0 - A*||_inf = " + format_double(e0) + " exceeds R0 = " + format_double(schedule.R0));
    }
  }

  SolverConfig cfg = solver;
  if (cfg.warm_start_sparsity == 0) cfg.warm_start_sparsity = static_cast<std::size_t>(dist.s);
  const double gram_scale = schedule.gram_scale > 0.0 ? schedule.gram_scale : 1.0 / static_cast<double>(A0.rows());

  RunReport rep;
  Matrix A = A0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.initial_inf_error = oracle ? inf_dist(A, oracle->entries()) : nan;
  rep.initial_aligned_error = oracle ? inf_dist_equiv(oracle->entries(), A).distance : nan;

  double R = schedule.R0;
  for (std::size_t t = 1; t <= schedule.T; ++t) {
    const auto start = std::chrono::steady_clock::now();
    IterationRecord rec;
    rec.t = t;
    rec.params = step_params(R, dist.s, A.rows(), A.cols(), dist.M, schedule);
    rec.stream_id = source.stream_id(t);
    const Batch batch = source.next(t);
    if (batch.samples.empty()) throw InputError("sample source returned an empty batch");

    StageResult stage = sparse_stage(A, batch, rec.params, cfg, gram_scale, options.jobs);
    const Matrix g = gradient(A, batch, stage.codes);
    A.noalias() -= rec.params.eta * g;
    R = rec.params.R_next;

    rec.R_t = R;
    rec.nonconverged = stage.nonconverged;
    rec.mean_feas_residual = stage.mean_feas_residual();
    const bool have_truth = batch.codes.size() == batch.samples.size();
    rec.sign_rate = have_truth ? sign_recovery_rate(stage.codes, batch.codes) : nan;
    if (have_truth && options.collect_moments) rec.moments = cond_second_moments(stage.codes, batch.codes, A.cols());
    rec.inf_error = oracle ? inf_dist(A, oracle->entries()) : nan;
    rec.aligned_error = oracle ? inf_dist_equiv(oracle->entries(), A).distance : nan;
    if (options.record_wall_time) rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    rep.records.push_back(std::move(rec));
  }
  rep.final_dictionary = A;
  return rep;
}

}  // namespace dlearn
