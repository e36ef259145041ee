#include "dlearn/cli.hpp"

#include "dlearn/io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace dlearn {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw InputError("config key '" + key + "': '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, v, "a non-negative integer");
  return out;
}

Index to_index(const std::string& key, const std::string& v) {
  const std::uint64_t u = to_uint(key, v);
  if (u > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) bad_value(key, v, "a dimension that fits");
  return static_cast<Index>(u);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::optional<double> to_optional(const std::string& key, const std::string& v) {
  if (v == "none") return std::nullopt;
  return to_double(key, v);
}

template <class F>
auto keyed(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const InputError& e) {
    throw InputError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = to_uint(k, v); }},
      {"out", [](auto& c, auto&, auto& v) { c.out = v; }},
      {"d", [](auto& c, auto& k, auto& v) { c.d = to_index(k, v); }},
      {"r", [](auto& c, auto& k, auto& v) { c.r = to_index(k, v); }},
      {"s", [](auto& c, auto& k, auto& v) { c.s = to_index(k, v); }},
      {"dict_mode", [](auto& c, auto& k, auto& v) { c.dict_mode = keyed(k, v, parse_dict_mode); }},
      {"maxnorm_cap", [](auto& c, auto& k, auto& v) { c.maxnorm_cap = to_optional(k, v); }},
      {"perturb_mode", [](auto& c, auto& k, auto& v) { c.perturb_mode = keyed(k, v, parse_perturb_mode); }},
      {"m", [](auto& c, auto& k, auto& v) { c.m = to_double(k, v); }},
      {"M", [](auto& c, auto& k, auto& v) { c.M = to_double(k, v); }},
      {"value_law", [](auto& c, auto& k, auto& v) { c.value_law = keyed(k, v, parse_value_law); }},
      {"n", [](auto& c, auto& k, auto& v) { c.n = to_uint(k, v); }},
      {"reuse_samples", [](auto& c, auto& k, auto& v) { c.reuse_samples = to_bool(k, v); }},
      {"R0", [](auto& c, auto& k, auto& v) { c.schedule.R0 = to_double(k, v); }},
      {"T", [](auto& c, auto& k, auto& v) { c.schedule.T = to_uint(k, v); }},
      {"contraction", [](auto& c, auto& k, auto& v) { c.schedule.contraction = to_double(k, v); }},
      {"eta_policy",
       [](auto& c, auto& k, auto& v) {
         if (v == "midpoint") {
           c.schedule.eta_policy = EtaPolicy::midpoint;
         } else if (v == "explicit") {
           c.schedule.eta_policy = EtaPolicy::explicit_value;
         } else {
           bad_value(k, v, "midpoint or explicit");
         }
       }},
      {"eta", [](auto& c, auto& k, auto& v) { c.schedule.eta = to_double(k, v); }},
      {"lambda_nu_policy",
       [](auto& c, auto& k, auto& v) {
         if (v == "lower-feasible") {
           c.schedule.lambda_nu_policy = LambdaNuPolicy::lower_feasible;
         } else if (v == "explicit") {
           c.schedule.lambda_nu_policy = LambdaNuPolicy::explicit_value;
         } else {
           bad_value(k, v, "lower-feasible or explicit");
         }
       }},
      {"lambda", [](auto& c, auto& k, auto& v) { c.schedule.lambda = to_double(k, v); }},
      {"nu", [](auto& c, auto& k, auto& v) { c.schedule.nu = to_double(k, v); }},
      {"threshold_scale", [](auto& c, auto& k, auto& v) { c.schedule.threshold_scale = to_double(k, v); }},
      {"gram_scale", [](auto& c, auto& k, auto& v) { c.schedule.gram_scale = to_double(k, v); }},
      {"max_iters", [](auto& c, auto& k, auto& v) { c.solver.max_iters = to_uint(k, v); }},
      {"feas_tol", [](auto& c, auto& k, auto& v) { c.solver.feas_tol = to_double(k, v); }},
      {"obj_tol", [](auto& c, auto& k, auto& v) { c.solver.obj_tol = to_double(k, v); }},
      {"window", [](auto& c, auto& k, auto& v) { c.solver.window = to_uint(k, v); }},
      {"step_policy", [](auto& c, auto& k, auto& v) { c.solver.step_policy = keyed(k, v, parse_step_policy); }},
      {"warm_start_sparsity", [](auto& c, auto& k, auto& v) { c.solver.warm_start_sparsity = to_uint(k, v); }},
      {"strict_cb", [](auto& c, auto& k, auto& v) { c.strict_cb = to_bool(k, v); }},
      {"cb", [](auto& c, auto& k, auto& v) { c.cb = to_double(k, v); }},
      {"c2_constant", [](auto& c, auto& k, auto& v) { c.c2_constant = to_double(k, v); }},
      {"mu_target", [](auto& c, auto& k, auto& v) { c.mu_target = to_optional(k, v); }},
      {"jobs", [](auto& c, auto& k, auto& v) { c.jobs = to_uint(k, v); }},
      {"sweep_seeds", [](auto& c, auto& k, auto& v) { c.sweep_seeds = to_uint(k, v); }},
      {"wall_clock", [](auto& c, auto& k, auto& v) { c.wall_clock = to_bool(k, v); }},
  };
  return table;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "none"; }

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path);
  if (!os) throw CommandError(kExitWriteFailure, "cannot open '" + path.string() + "' for writing");
  body(os);
  os.flush();
  if (!os) throw CommandError(kExitWriteFailure, "write to '" + path.string() + "' failed");
}

double median(std::vector<double> v) {
  for (double& x : v) {
    if (std::isnan(x)) x = std::numeric_limits<double>::infinity();
  }
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return std::isinf(med) ? std::numeric_limits<double>::quiet_NaN() : med;
}

}  // namespace

CodeDistribution ExperimentConfig::distribution() const {
  CodeDistribution dist;
  dist.r = r;
  dist.s = s;
  dist.m = m;
  dist.M = M;
  dist.law = value_law;
  return dist;
}

AssumptionOptions ExperimentConfig::assumption_options() const {
  AssumptionOptions o;
  o.strict_cb = strict_cb;
  o.cb = cb;
  o.c2_constant = c2_constant;
  o.mu_target = mu_target;
  return o;
}

void ExperimentConfig::validate() const {
  if (d < 1) throw InputError("d must be >= 1");
  if (r < 1) throw InputError("r must be >= 1");
  if (s < 2) throw InputError("s = " + std::to_string(s) + " violates the sparsity range (C2: 2 <= s)");
  if (s > r) throw InputError("s = " + std::to_string(s) + " exceeds r = " + std::to_string(r));
  if (dict_mode == DictMode::orthonormal && r > d) throw InputError("dict_mode = orthonormal needs r <= d");
  if (n < 1) throw InputError("n must be >= 1");
  if (jobs < 1) throw InputError("jobs must be >= 1");
  if (sweep_seeds < 1) throw InputError("sweep_seeds must be >= 1");
  if (!(cb > 0.0)) throw InputError("cb must be > 0");
  if (!(c2_constant > 0.0)) throw InputError("c2_constant must be > 0");
  if (mu_target && !(*mu_target >= 0.0)) throw InputError("mu_target must be >= 0");
  if (out.empty()) throw InputError("out must not be empty");
  distribution().validate(strict_cb);
  schedule.validate();
  solver.validate();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, set] : setters()) {
    if (k == key) {
      set(cfg, key, value);
      return;
    }
  }
  throw InputError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (seen.count(key)) {
      throw InputError("config line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                       std::to_string(seen[key]));
    }
    seen[key] = lineno;
    try {
      apply_config_value(cfg, key, value);
    } catch (const InputError& e) {
      throw InputError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void write_config(std::ostream& os, const ExperimentConfig& c) {
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  auto num = [](double v) { return format_double(v); };
  kv("seed", std::to_string(c.seed));
  kv("out", c.out);
  kv("d", std::to_string(c.d));
  kv("r", std::to_string(c.r));
  kv("s", std::to_string(c.s));
  kv("dict_mode", to_string(c.dict_mode));
  kv("maxnorm_cap", opt_text(c.maxnorm_cap));
  kv("perturb_mode", to_string(c.perturb_mode));
  kv("m", num(c.m));
  kv("M", num(c.M));
  kv("value_law", to_string(c.value_law));
  kv("n", std::to_string(c.n));
  kv("reuse_samples", c.reuse_samples ? "true" : "false");
  kv("R0", num(c.schedule.R0));
  kv("T", std::to_string(c.schedule.T));
  kv("contraction", num(c.schedule.contraction));
  kv("eta_policy", c.schedule.eta_policy == EtaPolicy::midpoint ? "midpoint" : "explicit");
  kv("eta", num(c.schedule.eta));
  kv("lambda_nu_policy",
     c.schedule.lambda_nu_policy == LambdaNuPolicy::lower_feasible ? "lower-feasible" : "explicit");
  kv("lambda", num(c.schedule.lambda));
  kv("nu", num(c.schedule.nu));
  kv("threshold_scale", num(c.schedule.threshold_scale));
  kv("gram_scale", num(c.schedule.gram_scale));
  kv("max_iters", std::to_string(c.solver.max_iters));
  kv("feas_tol", num(c.solver.feas_tol));
  kv("obj_tol", num(c.solver.obj_tol));
  kv("window", std::to_string(c.solver.window));
  kv("step_policy", to_string(c.solver.step_policy));
  kv("warm_start_sparsity", std::to_string(c.solver.warm_start_sparsity));
  kv("strict_cb", c.strict_cb ? "true" : "false");
  kv("cb", num(c.cb));
  kv("c2_constant", num(c.c2_constant));
  kv("mu_target", opt_text(c.mu_target));
  kv("jobs", std::to_string(c.jobs));
  kv("sweep_seeds", std::to_string(c.sweep_seeds));
  kv("wall_clock", c.wall_clock ? "true" : "false");
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CommandError(kExitConfigUnreadable, "cannot read config '" + path + "'");
  try {
    return parse_config(is);
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, path + ": " + e.what());
  }
}

RunOutcome cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  RunOutcome outcome;
  Dictionary A_star;
  Matrix A0;
  try {
    cfg.validate();
    A_star = gen_dictionary(cfg.d, cfg.r, cfg.dict_mode, cfg.maxnorm_cap, cfg.seed);
    A0 = perturb_dictionary(A_star, cfg.schedule.R0, cfg.perturb_mode, cfg.seed);
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  } catch (const InfeasibleError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  }

  const CodeDistribution dist = cfg.distribution();
  const StepParams first = step_params(cfg.schedule.R0, cfg.s, cfg.d, cfg.r, cfg.M, cfg.schedule);
  outcome.assumptions = validate_assumptions(A_star, dist, cfg.schedule.R0, first.lambda, first.nu, first.gamma,
                                             cfg.assumption_options());

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw CommandError(kExitWriteFailure, "cannot create output directory '" + cfg.out + "': " + ec.message());
  const fs::path dir(cfg.out);
  write_file(dir / "config.txt", [&](std::ostream& os) { write_config(os, cfg); });
  write_file(dir / "assumptions.txt", [&](std::ostream& os) { write_report(os, outcome.assumptions); });
  log << "assumptions: " << (outcome.assumptions.ok() ? "all hold" : "some fail (see assumptions.txt)") << '\n';

  GenerativeSource source(A_star, dist, cfg.n, cfg.seed, cfg.reuse_samples);
  RunOptions opts;
  opts.jobs = cfg.jobs;
  opts.record_wall_time = cfg.wall_clock;
  try {
    outcome.report = run(A0, A_star, source, cfg.schedule, dist, cfg.solver, opts);
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  }
  for (const auto& rec : outcome.report.records) {
    log << "t=" << rec.t << " inf_error=" << format_double(rec.inf_error) << " sign_rate=" << rec.sign_rate
        << " nonconverged=" << rec.nonconverged << '\n';
  }

  write_file(dir / "run.csv", [&](std::ostream& os) { outcome.report.write_csv(os); });
  write_file(dir / "final_dictionary.txt", [&](std::ostream& os) { write_matrix(os, outcome.report.final_dictionary); });
  return outcome;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& key,
                                const std::vector<std::string>& values, std::ostream& log) {
  if (values.empty()) throw CommandError(kExitInvalidConfig, "sweep needs at least one value");
  const auto keys = config_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    throw CommandError(kExitInvalidConfig, "unknown sweep key '" + key + "'");
  }
  std::vector<double> numeric;
  for (const auto& v : values) {
    try {
      numeric.push_back(to_double(key, v));
    } catch (const InputError& e) {
      throw CommandError(kExitInvalidConfig, std::string("sweep needs a numeric key: ") + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  }

  struct Cell {
    std::size_t value_index = 0;
    std::size_t replicate = 0;
    double final_inf_error = std::numeric_limits<double>::quiet_NaN();
    double final_sign_rate = std::numeric_limits<double>::quiet_NaN();
    double iters_to_half = std::numeric_limits<double>::quiet_NaN();
    std::string error;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t k = 0; k < cfg.sweep_seeds; ++k) {
      Cell cell;
      cell.value_index = i;
      cell.replicate = k;
      cells.push_back(cell);
    }
  }

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw CommandError(kExitWriteFailure, "cannot create output directory '" + cfg.out + "': " + ec.message());

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      Cell& cell = cells[c];
      ExperimentConfig sub = cfg;
      sub.jobs = 1;
      sub.seed = cfg.seed + cell.replicate;
      sub.out = (fs::path(cfg.out) / (key + "_" + values[cell.value_index] + "_seed" + std::to_string(sub.seed))).string();
      try {
        apply_config_value(sub, key, values[cell.value_index]);
        std::ostringstream quiet;
        const RunOutcome res = cmd_run(sub, quiet);
        const auto& recs = res.report.records;
        cell.final_inf_error = recs.back().inf_error;
        cell.final_sign_rate = recs.back().sign_rate;
        for (const auto& rec : recs) {
          if (rec.inf_error <= 0.5 * res.report.initial_inf_error) {
            cell.iters_to_half = static_cast<double>(rec.t);
            break;
          }
        }
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mutex);
      log << key << "=" << values[cell.value_index] << " seed=" << sub.seed << ": "
          << (cell.error.empty() ? "final_inf_error=" + format_double(cell.final_inf_error) : "failed: " + cell.error)
          << '\n';
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<double> err, sign, half;
    for (const auto& c : cells) {
      if (c.value_index != i) continue;
      err.push_back(c.final_inf_error);
      sign.push_back(c.final_sign_rate);
      half.push_back(c.iters_to_half);
    }
    rows.push_back({numeric[i], median(err), median(sign), median(half)});
  }
  write_file(fs::path(cfg.out) / "sweep.csv", [&](std::ostream& os) {
    os << "sweep_value,final_inf_error,final_sign_rate,iters_to_half_error\n";
    for (const auto& r : rows) {
      os << format_double(r.value) << ',' << format_double(r.final_inf_error) << ','
         << format_double(r.final_sign_rate) << ',' << format_double(r.iters_to_half_error) << '\n';
    }
  });
  return rows;
}

void cmd_solve(const SolveRequest& req, std::ostream& out) {
  Matrix A;
  Vector y;
  try {
    A = load_matrix(req.A_path);
    y = load_vector(req.y_path);
  } catch (const ParseError& e) {
    throw CommandError(kExitParseFailure, e.what());
  }
  if (y.size() != A.rows()) {
    throw CommandError(kExitInvalidConfig, "y has " + std::to_string(y.size()) + " entries but A has " +
                                               std::to_string(A.rows()) + " rows");
  }
  SolverConfig solver = req.solver;
  if (!req.trace_path.empty() && solver.trace_every == 0) solver.trace_every = 1;
  MusSolution sol;
  try {
    sol = solve_mus(y, A, req.params, solver);
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  }
  const FeasibilityResiduals res = check_feasibility(sol.theta, sol.t, sol.u, y, A, req.params);
  out << "theta =";
  for (Index i = 0; i < sol.theta.size(); ++i) out << ' ' << i << ':' << format_double(sol.theta[i]);
  out << '\n';
  out << "t = " << format_double(sol.t) << '\n';
  out << "u = " << format_double(sol.u) << '\n';
  out << "objective = " << format_double(sol.objective) << '\n';
  out << "residual_gram = " << format_double(res.gram) << '\n';
  out << "residual_l2 = " << format_double(res.l2) << '\n';
  out << "residual_linf = " << format_double(res.linf) << '\n';
  out << "gap = " << format_double(sol.gap) << '\n';
  out << "iterations = " << sol.iterations << '\n';
  out << "status = " << to_string(sol.status) << '\n';
  if (!req.trace_path.empty()) write_file(req.trace_path, [&](std::ostream& os) { write_trace_csv(os, sol.trace); });
}

void cmd_validate(const ExperimentConfig& cfg, const std::string& dict_path, std::ostream& out) {
  Matrix A;
  try {
    A = load_matrix(dict_path);
  } catch (const ParseError& e) {
    throw CommandError(kExitParseFailure, e.what());
  }
  try {
    ExperimentConfig c = cfg;
    c.d = A.rows();
    c.r = A.cols();
    c.validate();
    const Dictionary dict(A);
    const StepParams p = step_params(c.schedule.R0, c.s, c.d, c.r, c.M, c.schedule);
    const AssumptionReport rep =
        validate_assumptions(dict, c.distribution(), c.schedule.R0, p.lambda, p.nu, p.gamma, c.assumption_options());
    write_report(out, rep);
  } catch (const InputError& e) {
    throw CommandError(kExitInvalidConfig, e.what());
  }
}

}  // namespace dlearn
