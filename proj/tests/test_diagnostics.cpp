#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "balm/diagnostics.hpp"
#include "balm/sampler.hpp"
#include "test_util.hpp"

using namespace balm;

namespace {

Matrix iid_normal(int chains, int S, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return test_util::random_matrix(chains, S, rng);
}

Matrix ar1(int chains, int S, double rho, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(chains, S);
  for (int c = 0; c < chains; ++c) {
    m(c, 0) = nd(rng);
    for (int s = 1; s < S; ++s)
      m(c, s) = rho * m(c, s - 1) + std::sqrt(1 - rho * rho) * nd(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("rank_normalize") {
  SUBCASE("monotone on sorted distinct values") {
    Matrix x(1, 6);
    x << -3.0, -1.0, 0.0, 0.5, 2.0, 9.0;
    const Matrix z = rank_normalize(x);
    for (int i = 1; i < 6; ++i) CHECK(z(0, i) > z(0, i - 1));
  }
  SUBCASE("constant input maps to zero") {
    const Matrix z = rank_normalize(Matrix::Constant(2, 5, 3.3));
    for (int i = 0; i < z.size(); ++i)
      CHECK(z.data()[i] == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("hand-evaluated quantiles for N = 4") {
    Matrix x(1, 4);
    x << 1.0, 2.0, 3.0, 4.0;
    const Matrix z = rank_normalize(x);
    CHECK(z(0, 0) == doctest::Approx(-1.0491313979639707).epsilon(1e-12));
    CHECK(z(0, 1) == doctest::Approx(-0.2993069104656671).epsilon(1e-12));
    CHECK(z(0, 2) == doctest::Approx(0.2993069104656671).epsilon(1e-12));
    CHECK(z(0, 3) == doctest::Approx(1.0491313979639707).epsilon(1e-12));
  }
}

TEST_CASE("split_rhat") {
  SUBCASE("iid chains are near one") {
    const RhatResult r = split_rhat(iid_normal(4, 2000, 1));
    CHECK(!r.degenerate);
    CHECK(r.value < 1.02);
    // raw estimator may dip below 1 by O(1/S)
    CHECK(r.value > 0.99);
  }
  SUBCASE("constant distinct chains blow up with a flag") {
    Matrix x(2, 8);
    x.row(0).setConstant(1.0);
    x.row(1).setConstant(2.0);
    const RhatResult r = split_rhat(x);
    CHECK(r.degenerate);
    CHECK(std::isinf(r.value));
  }
  SUBCASE("duplicated chain reduces to within-chain mixing") {
    const Matrix one = ar1(1, 4000, 0.6, 2);
    Matrix two(2, 4000);
    two.row(0) = one.row(0);
    two.row(1) = one.row(0);
    const double r1 = split_rhat(one).value;
    const double r2 = split_rhat(two).value;
    CHECK(std::abs(r1 - r2) < 0.01);
  }
  SUBCASE("needs at least four draws") {
    CHECK_THROWS_AS(split_rhat(Matrix::Zero(2, 3)), dim_error);
  }
}

TEST_CASE("effective sample sizes") {
  SUBCASE("iid draws keep at least half the nominal size") {
    const Matrix x = iid_normal(4, 2000, 3);
    const EssResult r = ess_bulk(x);
    CHECK(!r.degenerate);
    CHECK(r.value >= 0.5 * 8000);
  }
  SUBCASE("AR(1) at rho = 0.9 lands within a factor two of theory") {
    const Matrix x = ar1(4, 5000, 0.9, 4);
    const double theory = 4 * 5000 * (1 - 0.9) / (1 + 0.9);
    const EssResult r = ess_bulk(x);
    CHECK(r.value > theory / 2);
    CHECK(r.value < theory * 2);
  }
  SUBCASE("constant input is flagged with zero") {
    const EssResult b = ess_bulk(Matrix::Constant(2, 16, 1.0));
    CHECK(b.degenerate);
    CHECK(b.value == 0.0);
    const EssResult t = ess_tail(Matrix::Constant(2, 16, 1.0));
    CHECK(t.degenerate);
    CHECK(t.value == 0.0);
  }
  SUBCASE("tail ESS is positive and bounded for healthy chains") {
    const Matrix x = iid_normal(4, 2000, 5);
    const EssResult r = ess_tail(x);
    CHECK(!r.degenerate);
    CHECK(r.value > 0.0);
    CHECK(r.value <= 2.0 * 8000);
  }
}

TEST_CASE("rank-based diagnostics are invariant to monotone transforms") {
  const Matrix x = ar1(4, 500, 0.5, 6);
  Matrix cubed = x;
  for (int i = 0; i < cubed.size(); ++i)
    cubed.data()[i] = std::pow(cubed.data()[i], 3);
  CHECK(split_rhat(x).value ==
        doctest::Approx(split_rhat(cubed).value).epsilon(1e-10));
  CHECK(ess_bulk(x).value ==
        doctest::Approx(ess_bulk(cubed).value).epsilon(1e-10));
  CHECK(ess_tail(x).value ==
        doctest::Approx(ess_tail(cubed).value).epsilon(1e-10));
}

TEST_CASE("diagnostics are invariant to chain relabeling") {
  const Matrix x = ar1(4, 400, 0.3, 7);
  Matrix shuffled(4, 400);
  shuffled.row(0) = x.row(2);
  shuffled.row(1) = x.row(0);
  shuffled.row(2) = x.row(3);
  shuffled.row(3) = x.row(1);
  CHECK(split_rhat(x).value ==
        doctest::Approx(split_rhat(shuffled).value).epsilon(1e-12));
  CHECK(ess_bulk(x).value ==
        doctest::Approx(ess_bulk(shuffled).value).epsilon(1e-12));
}

TEST_CASE("model-run report carries derived quantities") {
  auto inst = test_util::make_instance(70, 5, 3, 2, 2);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 150;
  cfg.sampling_iters = 40;
  cfg.seed = 71;
  const PosteriorDraws draws = adapt_and_sample(inst.data, inst.spec, cfg);
  const DiagnosticsReport rep =
      diagnose_model_run(draws, inst.data, inst.spec, {{0, 1}});
  auto has = [&](const std::string& name) {
    for (const auto& q : rep.quantities)
      if (q.name == name) return true;
    return false;
  };
  CHECK(has("tau"));
  CHECK(has("sigma2"));
  CHECK(has("a0"));
  CHECK(has("a1"));
  CHECK(has("template_norm[0]"));
  CHECK(has("template_norm[1]"));
  CHECK(has("mu[0,1]"));
  CHECK(rep.chains == 2);
  CHECK(rep.draws_per_chain == 40);
  for (const auto& q : rep.quantities) {
    CHECK(q.rhat >= 1.0 - 1e-6);
    CHECK(q.ess_bulk > 0.0);
    CHECK(q.ess_bulk <= 2.0 * 80);
  }
}

TEST_CASE("diagnose_raw on a healthy pseudo-run converges") {
  GaussianTarget target(Matrix::Identity(3, 3));
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup_iters = 500;
  cfg.sampling_iters = 1500;
  cfg.seed = 8;
  ChainInit init = [&](int, Rng&) { return Vector::Zero(3); };
  const PosteriorDraws draws = run_chains(target, cfg, init, "phi:0:3");
  const DiagnosticsReport rep = diagnose_raw(draws);
  CHECK(rep.worst_rhat() < 1.01);
  CHECK(rep.min_ess_bulk() > 100.0 * 4);
  CHECK(rep.converged());
}
