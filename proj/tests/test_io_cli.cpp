#include "dlearn/cli.hpp"
#include "dlearn/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dlearn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dlearn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.out = out.string();
  c.d = 8;
  c.r = 10;
  c.s = 2;
  c.n = 20;
  c.schedule.R0 = 0.01;
  c.schedule.T = 2;
  c.schedule.gram_scale = 1.0;
  c.schedule.lambda_nu_policy = LambdaNuPolicy::explicit_value;
  c.schedule.lambda = c.schedule.nu = 0.5;
  c.dict_mode = DictMode::rademacher;
  c.wall_clock = false;
  return c;
}

}  // namespace

TEST_CASE("matrix text round-trips exactly") {
  Matrix m(2, 3);
  m << 0.1, -1e-300, 1.0 / 3.0, 5e20, -0.0, 2.0;
  std::stringstream ss;
  write_matrix(ss, m);
  CHECK(ss.str().rfind("2 3\n", 0) == 0);
  const Matrix back = read_matrix(ss);
  CHECK(back == m);
}

TEST_CASE("matrix parse errors") {
  std::istringstream wrong_cols("2 2\n1 2\n3\n");
  CHECK_THROWS_AS(read_matrix(wrong_cols), ParseError);
  std::istringstream extra("1 1\n1\n2\n");
  CHECK_THROWS_AS(read_matrix(extra), ParseError);
  std::istringstream junk("1 2\n1 x\n");
  CHECK_THROWS_AS(read_matrix(junk), ParseError);
  std::istringstream header("a b\n");
  CHECK_THROWS_AS(read_matrix(header), ParseError);
}

TEST_CASE("codes round-trip") {
  std::vector<SparseCode> codes{SparseCode{{0, 4}, {1.5, -0.25}}, SparseCode{}, SparseCode{{2}, {0.1}}};
  std::stringstream ss;
  write_codes(ss, codes);
  CHECK(read_codes(ss) == codes);
  std::istringstream bad("3:1 1:2\n");
  CHECK_THROWS_AS(read_codes(bad), ParseError);
}

TEST_CASE("config parsing") {
  std::istringstream is("# comment\nseed = 5\n  d=16 # trailing\n\ndict_mode = orthonormal\n");
  const ExperimentConfig c = parse_config(is);
  CHECK(c.seed == 5);
  CHECK(c.d == 16);
  CHECK(c.dict_mode == DictMode::orthonormal);
  CHECK(c.r == ExperimentConfig{}.r);

  std::istringstream unknown("nope = 1\n");
  CHECK_THROWS_AS(parse_config(unknown), InputError);
  std::istringstream dup("d = 1\nd = 2\n");
  CHECK_THROWS_AS(parse_config(dup), InputError);
  std::istringstream bad("d = 1.5\n");
  CHECK_THROWS_AS(parse_config(bad), InputError);
  std::istringstream noeq("d 4\n");
  CHECK_THROWS_AS(parse_config(noeq), InputError);
}

TEST_CASE("written config reads back to the same config") {
  ExperimentConfig c;
  c.seed = 99;
  c.maxnorm_cap = 0.4;
  c.schedule.threshold_scale = 0.15;
  c.solver.step_policy = StepPolicy::adaptive;
  c.mu_target = 2.5;
  std::stringstream ss;
  write_config(ss, c);
  const std::string first = ss.str();
  const ExperimentConfig back = parse_config(ss);
  std::ostringstream again;
  write_config(again, back);
  CHECK(again.str() == first);
  for (const std::string& k : config_keys()) CHECK(first.find(k + " = ") != std::string::npos);
}

TEST_CASE("s = 1 is rejected citing the sparsity range") {
  ExperimentConfig c = small_config(scratch("s1"));
  c.s = 1;
  try {
    std::ostringstream log;
    cmd_run(c, log);
    FAIL("expected an error");
  } catch (const CommandError& e) {
    CHECK(e.code() == kExitInvalidConfig);
    CHECK(std::string(e.what()).find("2 <= s") != std::string::npos);
  }
}

TEST_CASE("run writes its outputs and is deterministic") {
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  std::ostringstream log;
  cmd_run(small_config(a), log);
  cmd_run(small_config(b), log);
  for (const char* f : {"config.txt", "assumptions.txt", "run.csv", "final_dictionary.txt"}) CHECK(fs::exists(a / f));
  const std::string csv = slurp(a / "run.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv == slurp(b / "run.csv"));
  CHECK(slurp(a / "final_dictionary.txt") == slurp(b / "final_dictionary.txt"));
}

TEST_CASE("config echo reproduces the run") {
  const fs::path a = scratch("echo_a");
  std::ostringstream log;
  cmd_run(small_config(a), log);
  ExperimentConfig c = load_config((a / "config.txt").string());
  const fs::path b = scratch("echo_b");
  c.out = b.string();
  cmd_run(c, log);
  CHECK(slurp(a / "run.csv") == slurp(b / "run.csv"));
}

TEST_CASE("sweep writes one row per value") {
  const fs::path out = scratch("sweep");
  ExperimentConfig c = small_config(out);
  std::ostringstream log;
  const auto rows = cmd_sweep(c, "n", {"5", "10", "15", "20", "25"}, log);
  CHECK(rows.size() == 5);
  const std::string csv = slurp(out / "sweep.csv");
  CHECK(csv.rfind("sweep_value,final_inf_error,final_sign_rate,iters_to_half_error\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK_THROWS_AS(cmd_sweep(c, "n", {}, log), CommandError);
  CHECK_THROWS_AS(cmd_sweep(c, "dict_mode", {"orthonormal"}, log), CommandError);
}

TEST_CASE("sweep records a failed cell as NaN") {
  const fs::path out = scratch("sweep_fail");
  ExperimentConfig c = small_config(out);
  std::ostringstream log;
  // s = 12 exceeds r = 10
  const auto rows = cmd_sweep(c, "s", {"2", "12"}, log);
  CHECK(std::isfinite(rows[0].final_inf_error));
  CHECK(std::isnan(rows[1].final_inf_error));
}

TEST_CASE("solve command") {
  const fs::path dir = scratch("solve");
  Matrix A(8, 4);
  CounterRng rng(3);
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 4; ++j) A(i, j) = rng.uniform() - 0.5;
  Vector theta(4);
  theta << 0.7, -1.1, 0.0, 0.3;
  save_matrix((dir / "A.txt").string(), A);
  save_matrix((dir / "y.txt").string(), A * theta);
  save_matrix((dir / "zero.txt").string(), Vector::Zero(8));

  SolveRequest req;
  req.A_path = (dir / "A.txt").string();
  req.y_path = (dir / "y.txt").string();
  req.params = MusParams{0.0, 1.0, 1.0, 0.0, 0.0};
  std::ostringstream out;
  cmd_solve(req, out);
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  REQUIRE(line.rfind("theta = ", 0) == 0);
  std::istringstream code(line.substr(8) + "\n");
  const SparseCode got = read_codes(code).at(0);
  const Vector est = got.dense(4);
  CHECK((est - theta).cwiseAbs().maxCoeff() <= 1e-6);

  req.y_path = (dir / "zero.txt").string();
  std::ostringstream zero;
  cmd_solve(req, zero);
  CHECK(zero.str().rfind("theta = 0:0 1:0 2:0 3:0\n", 0) == 0);

  std::ofstream((dir / "bad.txt").string()) << "8 4\n1 2 3\n";
  req.A_path = (dir / "bad.txt").string();
  try {
    cmd_solve(req, zero);
    FAIL("expected a parse error");
  } catch (const CommandError& e) {
    CHECK(e.code() == kExitParseFailure);
  }
}

TEST_CASE("validate command reports on a dictionary file") {
  const fs::path dir = scratch("validate");
  const Dictionary Q = gen_dictionary(8, 8, DictMode::orthonormal, std::nullopt, 1);
  save_matrix((dir / "Q.txt").string(), Q.entries());
  ExperimentConfig c;
  c.s = 2;
  std::ostringstream out;
  cmd_validate(c, (dir / "Q.txt").string(), out);
  CHECK(out.str().find("coherence_ok = true") != std::string::npos);
}

TEST_CASE("unreadable config") {
  try {
    load_config("/nonexistent/dlearn.cfg");
    FAIL("expected an error");
  } catch (const CommandError& e) {
    CHECK(e.code() == kExitConfigUnreadable);
  }
}
