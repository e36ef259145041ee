#pragma once

#include "dlearn/altmin.hpp"
#include "dlearn/musolver.hpp"
#include "dlearn/synth.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dlearn {

/// Every knob of an experiment; missing keys keep these defaults.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "dlearn_out";

  Index d = 64;
  Index r = 128;
  Index s = 3;
  DictMode dict_mode = DictMode::gaussian_normalized;
  std::optional<double> maxnorm_cap;
  PerturbMode perturb_mode = PerturbMode::uniform;
  double m = 0.5;
  double M = CodeDistribution::default_upper();
  ValueLaw value_law = ValueLaw::uniform_magnitude;

  std::size_t n = 2000;
  bool reuse_samples = false;
  Schedule schedule;

  SolverConfig solver;

  bool strict_cb = false;
  double cb = 0.5;
  double c2_constant = 1.0;
  std::optional<double> mu_target;

  std::size_t jobs = 1;
  std::size_t sweep_seeds = 1;
  /// Log per-iteration wall time; off makes run.csv reproducible byte for byte.
  bool wall_clock = true;

  CodeDistribution distribution() const;
  AssumptionOptions assumption_options() const;
  /// Throws InputError naming the offending key.
  void validate() const;
};

/// Sets one key from its text value; throws InputError on unknown keys or bad values.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat "key = value" lines, '#' starts a comment.
ExperimentConfig parse_config(std::istream& is);

/// Every resolved value, in a form parse_config reads back.
void write_config(std::ostream& os, const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitConfigUnreadable = 3,
  kExitInvalidConfig = 4,
  kExitWriteFailure = 5,
  kExitParseFailure = 6,
  kExitRuntime = 7,
};

/// Thrown by the command layer with the exit code to report.
class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

ExperimentConfig load_config(const std::string& path);

struct RunOutcome {
  RunReport report;
  AssumptionReport assumptions;
};

/// Generate, validate, run; write config.txt, assumptions.txt, run.csv and
/// final_dictionary.txt into cfg.out.
RunOutcome cmd_run(const ExperimentConfig& cfg, std::ostream& log);

struct SweepRow {
  double value = 0.0;
  double final_inf_error = 0.0;
  double final_sign_rate = 0.0;
  double iters_to_half_error = 0.0;
};

/// One run per value (and per replicate seed); writes sweep.csv into cfg.out
/// with medians over replicates. A failed cell contributes NaN.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& key,
                                const std::vector<std::string>& values, std::ostream& log);

struct SolveRequest {
  std::string y_path;
  std::string A_path;
  MusParams params;
  SolverConfig solver;
  std::string trace_path;
};

void cmd_solve(const SolveRequest& req, std::ostream& out);

/// Assumption report for a dictionary file under the config's code law,
/// radius and tuning; gamma and lambda/nu follow the schedule rules at R0.
void cmd_validate(const ExperimentConfig& cfg, const std::string& dict_path, std::ostream& out);

}  // namespace dlearn
