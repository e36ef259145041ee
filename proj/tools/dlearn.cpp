#include "dlearn/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace dlearn;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Flat key = value config file");
    app->add_option("--seed", seed, "Overrides the config seed");
    app->add_option("--out", out, "Output directory (overrides config)");
    app->add_option("--jobs", jobs, "Worker threads");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_config(config);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (jobs) cfg.jobs = *jobs;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dictionary learning by alternating minimization with a robust sparse coder"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, validate_opts;
  auto* run = app.add_subcommand("run", "Generate data, validate assumptions and run the learner");
  run_opts.attach(run);

  auto* sweep = app.add_subcommand("sweep", "Repeat the run over values of one numeric config key");
  sweep_opts.attach(sweep);
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  sweep->add_option("--key", sweep_key, "Config key to vary")->required();
  sweep->add_option("--values", sweep_values, "Values, comma separated")->delimiter(',')->required();

  auto* solve = app.add_subcommand("solve", "Solve one robust sparse coding problem");
  SolveRequest req;
  solve->add_option("--y", req.y_path, "Sample vector file")->required();
  solve->add_option("--A", req.A_path, "Dictionary matrix file")->required();
  solve->add_option("--gamma", req.params.gamma, "gamma");
  solve->add_option("--lambda", req.params.lambda, "lambda");
  solve->add_option("--nu", req.params.nu, "nu");
  solve->add_option("--R", req.params.R, "Corruption bound R");
  solve->add_option("--gram-scale", req.params.gram_scale, "Constraint scale (0 means 1/d)");
  solve->add_option("--max-iters", req.solver.max_iters, "Iteration cap");
  solve->add_option("--feas-tol", req.solver.feas_tol, "Feasibility tolerance");
  solve->add_option("--obj-tol", req.solver.obj_tol, "Relative gap tolerance");
  std::string step_policy = "fixed";
  solve->add_option("--step-policy", step_policy, "fixed or adaptive");
  solve->add_option("--trace", req.trace_path, "Write an iteration trace CSV here");
  solve->add_option("--trace-every", req.solver.trace_every, "Trace interval in iterations");

  auto* validate = app.add_subcommand("validate", "Check a dictionary file against the model assumptions");
  validate_opts.attach(validate);
  std::string dict_path;
  validate->add_option("--dict", dict_path, "Dictionary matrix file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) {
      cmd_run(run_opts.resolve(), std::cerr);
    } else if (*sweep) {
      cmd_sweep(sweep_opts.resolve(), sweep_key, sweep_values, std::cerr);
    } else if (*solve) {
      try {
        req.solver.step_policy = parse_step_policy(step_policy);
      } catch (const InputError& e) {
        throw CommandError(kExitInvalidConfig, e.what());
      }
      cmd_solve(req, std::cout);
    } else if (*validate) {
      cmd_validate(validate_opts.resolve(), dict_path, std::cout);
    }
  } catch (const CommandError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  std::cout.flush();
  if (!std::cout) return kExitWriteFailure;
  return kExitOk;
}
