#pragma once

#include "dlearn/metrics.hpp"
#include "dlearn/musolver.hpp"
#include "dlearn/synth.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace dlearn {

enum class EtaPolicy { midpoint, explicit_value };
enum class LambdaNuPolicy { lower_feasible, explicit_value };

struct Schedule {
  double R0 = 0.1;
  std::size_t T = 10;
  double contraction = 7.0 / 8.0;
  EtaPolicy eta_policy = EtaPolicy::midpoint;
  double eta = 0.0;  // used with EtaPolicy::explicit_value
  LambdaNuPolicy lambda_nu_policy = LambdaNuPolicy::lower_feasible;
  double lambda = 3.0;  // used with LambdaNuPolicy::explicit_value
  double nu = 3.0;
  /// Multiplies the threshold rule 16 R M (R (s+1) + s/sqrt(d)); 1 is the literal rule.
  double threshold_scale = 1.0;
  /// Passed to the selector; zero or less means 1/d.
  double gram_scale = 0.0;

  void validate() const;
};

struct StepParams {
  double eta = 0.0;
  double tau = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
  double nu = 0.0;
  double R_prev = 0.0;
  double R_next = 0.0;
  double lambda_lower = 0.0;
  double nu_lower = 0.0;
  /// Set when a lower bound on lambda or nu exceeds the upper bound 3.
  bool infeasible = false;
};

inline constexpr double kTuningUpper = 3.0;

StepParams step_params(double R_prev, Index s, Index d, Index r, double M, const Schedule& schedule);

struct StageResult {
  std::vector<SparseCode> codes;
  std::vector<SolveStatus> status;
  std::vector<double> feas_residual;
  std::size_t nonconverged = 0;

  double mean_feas_residual() const;
};

/// Selector then threshold for every sample; `jobs` threads share the work
/// and results do not depend on the split.
StageResult sparse_stage(const Matrix& A_prev, const Batch& batch, const StepParams& p, const SolverConfig& solver,
                         double gram_scale, std::size_t jobs = 1);

/// (1/n) sum_k (A x_k - y_k) x_k^T, summed over fixed blocks of samples
/// combined by a pairwise tree.
Matrix gradient(const Matrix& A_prev, const Batch& batch, const std::vector<SparseCode>& codes);

/// L_n(A) = (1/2n) sum_k ||y_k - A x_k||^2.
double sample_loss(const Matrix& A, const Batch& batch, const std::vector<SparseCode>& codes);

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// Batch for outer iteration t (1-based).
  virtual Batch next(std::size_t t) = 0;
  /// Key of the random stream batch t was drawn from.
  virtual std::uint64_t stream_id(std::size_t t) const = 0;
};

/// Draws from the generative model; fresh samples each iteration unless
/// `reuse` is set, in which case every iteration sees the batch of t = 1.
class GenerativeSource : public SampleSource {
 public:
  GenerativeSource(Dictionary A_star, CodeDistribution dist, std::size_t n, std::uint64_t seed, bool reuse = false);
  Batch next(std::size_t t) override;
  std::uint64_t stream_id(std::size_t t) const override;

 private:
  Dictionary A_star_;
  CodeDistribution dist_;
  std::size_t n_;
  std::uint64_t seed_;
  bool reuse_;
};

/// Hands out a fixed list of batches, one per iteration.
class FixedSource : public SampleSource {
 public:
  explicit FixedSource(std::vector<Batch> batches) : batches_(std::move(batches)) {}
  Batch next(std::size_t t) override;
  std::uint64_t stream_id(std::size_t t) const override { return t; }

 private:
  std::vector<Batch> batches_;
};

struct IterationRecord {
  std::size_t t = 0;
  double R_t = 0.0;
  double inf_error = 0.0;
  double aligned_error = 0.0;
  double sign_rate = 0.0;
  double mean_feas_residual = 0.0;
  StepParams params;
  std::size_t nonconverged = 0;
  double wall_ms = 0.0;
  std::uint64_t stream_id = 0;
  std::vector<CondMoment> moments;
};

struct RunReport {
  double initial_inf_error = 0.0;
  double initial_aligned_error = 0.0;
  std::vector<IterationRecord> records;
  Matrix final_dictionary;

  void write_csv(std::ostream& os) const;
};

struct RunOptions {
  std::size_t jobs = 1;
  /// Record E[x_j^2 | x*_j != 0] per coordinate each iteration.
  bool collect_moments = false;
  /// When false, wall_ms is logged as 0 so that reruns give identical logs.
  bool record_wall_time = true;
};

RunReport run(const Matrix& A0, const std::optional<Dictionary>& oracle, SampleSource& source,
              const Schedule& schedule, const CodeDistribution& dist, const SolverConfig& solver,
              const RunOptions& options = {});

}  // namespace dlearn
