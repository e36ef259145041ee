#include "dlearn/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dlearn;

TEST_CASE("orthonormal dictionary has zero coherence") {
  const Dictionary A = gen_dictionary(8, 8, DictMode::orthonormal, std::nullopt, 1);
  CHECK(A.coherence() <= 1e-12);
  CHECK((A.entries().transpose() * A.entries() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(gen_dictionary(4, 8, DictMode::orthonormal, std::nullopt, 1), InputError);
}

TEST_CASE("generated columns have unit norm") {
  for (DictMode mode : {DictMode::gaussian_normalized, DictMode::rademacher}) {
    const Dictionary A = gen_dictionary(64, 128, mode, std::nullopt, 7);
    for (Index j = 0; j < A.r(); ++j) CHECK(std::abs(A.entries().col(j).norm() - 1.0) <= 1e-12);
    CHECK(A.coherence() == doctest::Approx(coherence(A.entries())).epsilon(1e-12));
  }
}

TEST_CASE("cap below 1/sqrt(d) is infeasible") {
  CHECK_THROWS_AS(gen_dictionary(64, 128, DictMode::gaussian_normalized, 0.12, 1), InfeasibleError);
  try {
    gen_dictionary(64, 128, DictMode::gaussian_normalized, 0.12, 1);
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("0.125") != std::string::npos);
  }
}

TEST_CASE("cap is honoured") {
  const Dictionary A = gen_dictionary(16, 20, DictMode::gaussian_normalized, 0.6, 5);
  CHECK(A.max_entry() <= 0.6);
}

TEST_CASE("generation is deterministic") {
  const Dictionary a = gen_dictionary(10, 12, DictMode::gaussian_normalized, std::nullopt, 3);
  const Dictionary b = gen_dictionary(10, 12, DictMode::gaussian_normalized, std::nullopt, 3);
  const Dictionary c = gen_dictionary(10, 12, DictMode::gaussian_normalized, std::nullopt, 4);
  CHECK(a.entries() == b.entries());
  CHECK(a.entries() != c.entries());
}

TEST_CASE("Dictionary rejects non-unit columns") {
  CHECK_THROWS_AS(Dictionary(Matrix::Constant(3, 2, 1.0)), InputError);
}

TEST_CASE("perturbation examples") {
  const Dictionary A = gen_dictionary(12, 16, DictMode::gaussian_normalized, std::nullopt, 2);
  CHECK(perturb_dictionary(A, 0.0, PerturbMode::uniform, 1) == A.entries());
  const Matrix B = perturb_dictionary(A, 0.05, PerturbMode::boundary, 1);
  CHECK((B - A.entries()).cwiseAbs().maxCoeff() == 0.05);
  CHECK(perturb_dictionary(A, 0.05, PerturbMode::uniform, 9) == perturb_dictionary(A, 0.05, PerturbMode::uniform, 9));
  CHECK_THROWS_AS(perturb_dictionary(A, -1.0, PerturbMode::uniform, 1), InputError);
}

TEST_CASE("perturbation stays within the radius") {
  const Dictionary A = gen_dictionary(6, 9, DictMode::gaussian_normalized, std::nullopt, 8);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const double R0 = 0.001 + 0.3 * CounterRng(seed).uniform();
    const PerturbMode mode = seed % 2 ? PerturbMode::boundary : PerturbMode::uniform;
    CHECK((perturb_dictionary(A, R0, mode, seed) - A.entries()).cwiseAbs().maxCoeff() <= R0);
  }
}

TEST_CASE("default law has unit second moment") {
  const CodeDistribution d;
  CHECK((d.m * d.m + d.m * d.M + d.M * d.M) / 3.0 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d.second_moment() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("code distribution validation") {
  CodeDistribution d;
  d.r = 10;
  d.s = 1;
  CHECK_THROWS_AS(d.validate(), InputError);
  d.s = 11;
  CHECK_THROWS_AS(d.validate(), InputError);
  d.s = 3;
  d.m = 0.0;
  CHECK_THROWS_AS(d.validate(), InputError);
  d.m = 0.5;
  d.M = 0.9;
  CHECK_NOTHROW(d.validate());
  CHECK_THROWS_AS(d.validate(true), InputError);
}

TEST_CASE("single sample equals the direct product") {
  const Dictionary A = gen_dictionary(9, 14, DictMode::gaussian_normalized, std::nullopt, 4);
  CodeDistribution dist;
  dist.r = 14;
  dist.s = 3;
  const Batch b = gen_batch(A, dist, 1, 10);
  REQUIRE(b.size() == 1);
  CHECK(b.samples[0] == A.entries() * b.codes[0].dense(14));
}

TEST_CASE("batch invariants") {
  const Dictionary A = gen_dictionary(9, 14, DictMode::gaussian_normalized, std::nullopt, 4);
  CodeDistribution dist;
  dist.r = 14;
  dist.s = 4;
  const Batch b = gen_batch(A, dist, 200, 3);
  CHECK(b.codes.size() == b.samples.size());
  for (std::size_t k = 0; k < b.size(); ++k) {
    const SparseCode& x = b.codes[k];
    CHECK(x.size() == 4);
    CHECK(std::is_sorted(x.support.begin(), x.support.end()));
    for (double v : x.values) {
      CHECK(std::abs(v) >= dist.m);
      CHECK(std::abs(v) <= dist.M);
    }
    CHECK((b.samples[k] - synthesize(A.entries(), x)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("support frequencies match s/r") {
  const Dictionary A = gen_dictionary(4, 50, DictMode::gaussian_normalized, std::nullopt, 1);
  CodeDistribution dist;
  dist.r = 50;
  dist.s = 5;
  const std::size_t n = 100000;
  const Batch b = gen_batch(A, dist, n, 77);
  std::vector<double> count(50, 0.0);
  double sum = 0.0, sum2 = 0.0, nz = 0.0;
  for (const SparseCode& x : b.codes) {
    for (Index j : x.support) count[j] += 1.0;
    for (double v : x.values) {
      sum += v;
      sum2 += v * v;
      nz += 1.0;
    }
  }
  const double p = 0.1;
  const double sd = std::sqrt(n * p * (1 - p));
  for (double c : count) CHECK(std::abs(c - n * p) <= 3.0 * sd);
  CHECK(std::abs(sum / nz) <= 0.02);
  CHECK(std::abs(sum2 / nz - 1.0) <= 0.02);
}

TEST_CASE("two-point law") {
  const Dictionary A = gen_dictionary(4, 10, DictMode::gaussian_normalized, std::nullopt, 1);
  CodeDistribution dist;
  dist.r = 10;
  dist.s = 2;
  dist.law = ValueLaw::two_point;
  const Batch b = gen_batch(A, dist, 500, 2);
  for (const SparseCode& x : b.codes)
    for (double v : x.values) CHECK(std::abs(v) == 1.0);
  CHECK(dist.second_moment() == 1.0);
}

TEST_CASE("batches are independent of generation order") {
  const Dictionary A = gen_dictionary(5, 8, DictMode::gaussian_normalized, std::nullopt, 1);
  CodeDistribution dist;
  dist.r = 8;
  const Batch big = gen_batch(A, dist, 20, 5);
  const Batch small = gen_batch(A, dist, 7, 5);
  for (std::size_t k = 0; k < 7; ++k) CHECK(big.codes[k] == small.codes[k]);
}

TEST_CASE("assumption report examples") {
  const Dictionary Q = gen_dictionary(8, 8, DictMode::orthonormal, std::nullopt, 1);
  CodeDistribution dist;
  dist.r = 8;
  dist.s = 2;
  AssumptionOptions opt;
  opt.cb = 0.5;
  const AssumptionReport rep = validate_assumptions(Q, dist, 0.01, 1.0, 1.0, 0.0, opt);
  CHECK(rep.coherence_ok);
  CHECK(rep.mu_over_sqrt_d <= 1e-12);

  Matrix dup = Q.entries();
  dup.col(1) = dup.col(0);
  const AssumptionReport rd = validate_assumptions(Dictionary(dup), dist, 0.01, 1.0, 1.0, 0.0, opt);
  CHECK_FALSE(rd.separation_ok);
  CHECK_FALSE(rd.ok());

  const Dictionary G = gen_dictionary(64, 128, DictMode::gaussian_normalized, std::nullopt, 3);
  CodeDistribution d4;
  d4.r = 128;
  d4.s = 4;
  d4.M = 1.5;
  AssumptionOptions strict;
  strict.strict_cb = true;
  const AssumptionReport rs = validate_assumptions(G, d4, 0.01, 1.0, 1.0, 0.0, strict);
  CHECK_FALSE(rs.maxnorm_ok);
  CHECK(rs.cb_bound == doctest::Approx(1.0 / (2000.0 * 2.25 * 4.0)).epsilon(1e-12));
}

TEST_CASE("assumption report is pure and ok iff all checks pass") {
  const Dictionary A = gen_dictionary(64, 64, DictMode::rademacher, std::nullopt, 2);
  CodeDistribution dist;
  dist.r = 64;
  dist.s = 2;
  const AssumptionReport a = validate_assumptions(A, dist, 0.01, 1.0, 1.0, 0.001);
  const AssumptionReport b = validate_assumptions(A, dist, 0.01, 1.0, 1.0, 0.001);
  std::ostringstream sa, sb;
  write_report(sa, a);
  write_report(sb, b);
  CHECK(sa.str() == sb.str());
  const bool all = a.coherence_ok && a.maxnorm_ok && a.separation_ok && a.sparsity_ok && a.init_radius_ok &&
                   a.d5_ok && a.magnitude_ok;
  CHECK(a.ok() == all);
}

TEST_CASE("zeta arithmetic") {
  const double g = 0.01, l = 1.0, n = 2.0, R = 0.1;
  const Index s = 4;
  CHECK(zeta(g, l, n, R, s) == doctest::Approx(g * (1 + n + 2 * l / 2.0) / l + R * R * (1 + l) / n).epsilon(1e-14));
}

TEST_CASE("mode names round-trip") {
  for (DictMode m : {DictMode::gaussian_normalized, DictMode::orthonormal, DictMode::rademacher})
    CHECK(parse_dict_mode(to_string(m)) == m);
  for (PerturbMode m : {PerturbMode::uniform, PerturbMode::boundary}) CHECK(parse_perturb_mode(to_string(m)) == m);
  for (ValueLaw v : {ValueLaw::uniform_magnitude, ValueLaw::two_point}) CHECK(parse_value_law(to_string(v)) == v);
  CHECK_THROWS_AS(parse_dict_mode("nope"), InputError);
}
