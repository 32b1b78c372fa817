#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "balm/model.hpp"
#include "balm/reference.hpp"
#include "test_util.hpp"

using namespace balm;

namespace {

ParamsConstrained tiny_params(int n, int M, int K, std::uint64_t seed,
                              int L = 1) {
  Rng rng = make_rng(seed);
  ParamsConstrained par;
  par.W = Matrix::Zero(L, M);
  for (int l = 0; l < L; ++l) {
    double s = 0.0;
    for (int m = 0; m < M; ++m) {
      par.W(l, m) = 0.2 + uniform01(rng);
      s += par.W(l, m);
    }
    par.W.row(l) /= s;
  }
  par.X.resize(M);
  for (int m = 0; m < M; ++m) par.X[m] = test_util::random_matrix(n, K, rng);
  par.gamma = test_util::random_matrix(M, K, rng);
  par.tau = 1.5;
  par.a0 = -0.4;
  par.a1 = 0.9;
  par.sigma2 = 0.49;
  return par;
}

}  // namespace

TEST_CASE("build_templates") {
  SUBCASE("diagonal score matrix has zero off-diagonal") {
    const int n = 5;
    ParamsConstrained par;
    par.W = Matrix::Ones(1, 1);
    par.X = {Matrix::Identity(n, n)};
    Rng grng = make_rng(2);
    par.gamma = test_util::random_matrix(1, n, grng);
    par.tau = 1.0;
    ModelSpec spec;
    spec.M = 1;
    spec.K = n;
    const TemplateSet ts = build_templates(par, spec);
    CHECK(ts.Q.row(0).lpNorm<Eigen::Infinity>() < 1e-14);
  }
  SUBCASE("zero scale gives zero templates") {
    ParamsConstrained par = tiny_params(5, 2, 2, 3);
    par.tau = 0.0;
    ModelSpec spec;
    spec.M = 2;
    spec.K = 2;
    const TemplateSet ts = build_templates(par, spec);
    CHECK(ts.Q.lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("matches the naive dense oracle") {
    ParamsConstrained par = tiny_params(4, 2, 2, 4);
    ModelSpec spec;
    spec.M = 2;
    spec.K = 2;
    const TemplateSet ts = build_templates(par, spec);
    const TemplateSet ref = reference::build_templates(par, spec);
    CHECK((ts.Q - ref.Q).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(ts.P() == 6);
  }
  SUBCASE("rank-deficient pre-image surfaces the QR error") {
    ParamsConstrained par = tiny_params(4, 1, 2, 5);
    par.X[0].col(1) = 2.0 * par.X[0].col(0);
    ModelSpec spec;
    spec.M = 1;
    spec.K = 2;
    CHECK_THROWS_AS(build_templates(par, spec), numeric_error);
  }
}

TEST_CASE("layer_means") {
  Rng rng = make_rng(6);
  TemplateSet ts;
  ts.n = 5;
  ts.Q = test_util::random_matrix(3, 10, rng);
  SUBCASE("single template forces the mean onto it") {
    const Matrix W = Matrix::Ones(4, 1);
    TemplateSet one;
    one.n = 5;
    one.Q = ts.Q.topRows(1);
    const LayerMatrix mu = layer_means(W, one);
    for (int l = 0; l < 4; ++l)
      CHECK((mu.row(l) - one.Q.row(0)).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("simplex vertex picks one template") {
    Matrix W = Matrix::Zero(1, 3);
    W(0, 0) = 1.0;
    const LayerMatrix mu = layer_means(W, ts);
    CHECK((mu.row(0) - ts.Q.row(0)).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("weighted sum matches the loop oracle") {
    Matrix W(2, 3);
    W << 0.2, 0.3, 0.5, 0.6, 0.1, 0.3;
    const LayerMatrix mu = layer_means(W, ts);
    const LayerMatrix ref = reference::layer_means(W, ts);
    CHECK((mu - ref).lpNorm<Eigen::Infinity>() < 1e-14);
  }
  SUBCASE("dimension mismatch is an error") {
    const Matrix W = Matrix::Ones(2, 2) * 0.5;
    CHECK_THROWS_AS(layer_means(W, ts), dim_error);
  }
}

TEST_CASE("edge_probabilities") {
  Rng mrng = make_rng(8);
  LayerMatrix mu = test_util::random_matrix(2, 5, mrng);
  SUBCASE("zero intercept and coupling give one half") {
    const LayerMatrix pi = edge_probabilities(0.0, 0.0, mu);
    for (int i = 0; i < pi.size(); ++i)
      CHECK(pi.data()[i] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("decoupled intercept -2.5") {
    const LayerMatrix pi = edge_probabilities(-2.5, 0.0, mu);
    for (int i = 0; i < pi.size(); ++i)
      CHECK(pi.data()[i] ==
            doctest::Approx(0.075858180021243546).epsilon(1e-10));
  }
  SUBCASE("coupling cancels the intercept at mu = 0.5") {
    LayerMatrix half = LayerMatrix::Constant(1, 3, 0.5);
    const LayerMatrix pi = edge_probabilities(-2.5, 5.0, half);
    for (int i = 0; i < pi.size(); ++i)
      CHECK(pi.data()[i] == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("open interval for arguments up to 700") {
    LayerMatrix big(1, 2);
    big << 700.0, -700.0;
    const LayerMatrix pi = edge_probabilities(0.0, 1.0, big);
    CHECK(pi(0, 0) < 1.0);
    CHECK(pi(0, 0) > 0.0);
    CHECK(pi(0, 1) > 0.0);
    CHECK(pi(0, 1) < 1.0);
  }
}

TEST_CASE("log_likelihood") {
  SUBCASE("vanishing presence probability gives ~zero log-likelihood") {
    auto inst = test_util::make_instance(10, 5, 3, 2, 2, false, false, false,
                                         0.0);
    LayerDataset data = inst.data;
    data.Z.setZero();
    data.Y.setZero();
    ParamsConstrained par = tiny_params(5, 2, 2, 11, 3);
    par.a0 = -30.0;
    par.a1 = 0.0;
    ModelSpec spec = inst.spec;
    const double ll = log_likelihood(data, par, spec);
    CHECK(std::abs(ll) < 1e-8);
  }
  SUBCASE("single present edge at the mean, Gaussian") {
    const int n = 2;
    ParamsConstrained par = tiny_params(n, 1, 1, 12);
    ModelSpec spec;
    spec.M = 1;
    spec.K = 1;
    const TemplateSet ts = build_templates(par, spec);
    const double mu = ts.Q(0, 0);
    LayerDataset data;
    data.n = n;
    data.L = 1;
    data.Z = ByteMatrix::Ones(1, 1);
    data.Y = LayerMatrix::Constant(1, 1, mu);
    const double expected =
        test_util::oracle_log_sigmoid(par.a0 + par.a1 * mu) -
        0.5 * std::log(2.0 * M_PI * par.sigma2);
    CHECK(log_likelihood(data, par, spec) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("matches the per-edge enumeration oracle") {
    for (bool student : {false, true}) {
      auto inst = test_util::make_instance(13 + student, 3, 2, 2, 2, student);
      ParamsConstrained par = tiny_params(3, 2, 2, 14, 2);
      const double ll = log_likelihood(inst.data, par, inst.spec);
      const double ref = reference::log_likelihood(inst.data, par, inst.spec);
      CHECK(ll == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  SUBCASE("non-finite weight at an unmasked present edge is an error") {
    auto inst = test_util::make_instance(15, 4, 2, 2, 2, false, false, false,
                                         0.0);
    LayerDataset data = inst.data;
    int l = -1, e = -1;
    for (int ll = 0; ll < data.L && l < 0; ++ll)
      for (int ee = 0; ee < data.P(); ++ee)
        if (data.Z(ll, ee)) {
          l = ll;
          e = ee;
          break;
        }
    REQUIRE(l >= 0);
    data.Y(l, e) = std::numeric_limits<double>::quiet_NaN();
    ParamsConstrained par = tiny_params(4, 2, 2, 16, 2);
    CHECK_THROWS_AS(log_likelihood(data, par, inst.spec), data_error);
    // masking the offending entry removes it from the sum
    data.set_mask({{l, e}});
    CHECK_NOTHROW(log_likelihood(data, par, inst.spec));
  }
}

TEST_CASE("pointwise_loglik") {
  auto inst = test_util::make_instance(21, 3, 1, 2, 2, false, false, false,
                                       0.0);
  // two hand-packed draws
  PosteriorDraws draws;
  draws.chains.resize(1);
  const Vector phi1 = test_util::random_phi(inst, 1);
  const Vector phi2 = test_util::random_phi(inst, 2);
  draws.dim = static_cast<int>(phi1.size());
  draws.chains[0].draws.resize(2, draws.dim);
  draws.chains[0].draws.row(0) = phi1.transpose();
  draws.chains[0].draws.row(1) = phi2.transpose();
  const Matrix pw = pointwise_loglik(inst.data, draws, inst.spec);
  CHECK(pw.rows() == 2);
  CHECK(pw.cols() == inst.data.unmasked_count());

  SUBCASE("row sums reproduce log_likelihood") {
    for (int s = 0; s < 2; ++s) {
      const UnpackResult u = unpack(draws.draw(s).transpose(), inst.spec,
                                    inst.data);
      const double ll = log_likelihood(inst.data, u.params, inst.spec);
      CHECK(pw.row(s).sum() == doctest::Approx(ll).epsilon(1e-10));
    }
  }
  SUBCASE("absent edge contributes the binary channel only") {
    int col = 0;
    bool checked = false;
    const UnpackResult u = unpack(phi1, inst.spec, inst.data);
    const TemplateSet ts = build_templates(u.params, inst.spec);
    const LayerMatrix mu = layer_means(u.params.W, ts);
    for (int l = 0; l < inst.data.L && !checked; ++l)
      for (int e = 0; e < inst.data.P(); ++e) {
        if (inst.data.masked(l, e)) continue;
        if (!inst.data.Z(l, e)) {
          const double eta = u.params.a0 + u.params.a1 * mu(l, e);
          CHECK(pw(0, col) ==
                doctest::Approx(test_util::oracle_log_sigmoid(-eta))
                    .epsilon(1e-12));
          checked = true;
          break;
        }
        ++col;
      }
    CHECK(checked);
  }
  SUBCASE("matches the enumeration oracle") {
    const Matrix ref = reference::pointwise_loglik(inst.data, draws, inst.spec);
    CHECK((pw - ref).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("log_prior") {
  auto inst = test_util::make_instance(30, 4, 3, 3, 2, false, false, false,
                                       0.0);
  ModelSpec spec = inst.spec;
  spec.alpha = 0.7;
  spec.sigma_gamma = 1.3;
  spec.sigma_tau = 0.8;
  spec.sigma_a0 = 2.0;
  spec.sigma_a1 = 3.0;
  spec.a_sigma = 2.5;
  spec.b_sigma = 1.5;
  Rng rng = make_rng(31);
  const ParamsConstrained par = draw_prior_params(spec, inst.data, rng);

  SUBCASE("matches a sum of scalar density oracles") {
    double expected = 0.0;
    const double a = spec.alpha / spec.M;
    for (int l = 0; l < par.W.rows(); ++l) {
      expected += std::lgamma(spec.alpha) - spec.M * std::lgamma(a);
      for (int m = 0; m < spec.M; ++m)
        expected += (a - 1.0) * std::log(par.W(l, m));
    }
    for (const auto& X : par.X)
      for (int i = 0; i < X.size(); ++i)
        expected += test_util::oracle_normal_logpdf(X.data()[i], 0.0, 1.0);
    for (int i = 0; i < par.gamma.size(); ++i)
      expected += test_util::oracle_normal_logpdf(par.gamma.data()[i], 0.0,
                                                  spec.sigma_gamma *
                                                      spec.sigma_gamma);
    expected += 0.5 * std::log(2.0 / M_PI) - std::log(spec.sigma_tau) -
                par.tau * par.tau / (2.0 * spec.sigma_tau * spec.sigma_tau);
    expected += test_util::oracle_normal_logpdf(par.a0, 0.0,
                                                spec.sigma_a0 * spec.sigma_a0);
    expected += test_util::oracle_normal_logpdf(par.a1, 0.0,
                                                spec.sigma_a1 * spec.sigma_a1);
    expected += spec.a_sigma * std::log(spec.b_sigma) -
                std::lgamma(spec.a_sigma) -
                (spec.a_sigma + 1.0) * std::log(par.sigma2) -
                spec.b_sigma / par.sigma2;
    CHECK(log_prior(par, spec, inst.data) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("flat Dirichlet contributes log Gamma(M) per layer") {
    ModelSpec flat = spec;
    flat.alpha = static_cast<double>(spec.M);
    ParamsConstrained p2 = par;
    const double base = log_prior(p2, flat, inst.data);
    // moving W changes nothing under the flat Dirichlet
    p2.W.setConstant(1.0 / spec.M);
    CHECK(log_prior(p2, flat, inst.data) ==
          doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("half-normal density stays finite at the origin") {
    ParamsConstrained p2 = par;
    p2.tau = 1e-300;
    const double with_small_tau = log_prior(p2, spec, inst.data);
    CHECK(std::isfinite(with_small_tau));
    // the tau term approaches its mode value log(sqrt(2/pi)/sigma_tau)
    p2.tau = par.tau;
    const double tau_term_small = -0.22579135264472741 - std::log(spec.sigma_tau);
    const double diff = with_small_tau - log_prior(p2, spec, inst.data);
    const double tau_term_par =
        0.5 * std::log(2.0 / M_PI) - std::log(spec.sigma_tau) -
        par.tau * par.tau / (2.0 * spec.sigma_tau * spec.sigma_tau);
    CHECK(diff == doctest::Approx(tau_term_small - tau_term_par).epsilon(1e-9));
  }
  SUBCASE("non-positive scales rejected") {
    ParamsConstrained p2 = par;
    p2.tau = 0.0;
    CHECK_THROWS_AS(log_prior(p2, spec, inst.data), numeric_error);
    p2.tau = 1.0;
    p2.sigma2 = -1.0;
    CHECK_THROWS_AS(log_prior(p2, spec, inst.data), numeric_error);
  }
  SUBCASE("covariate mode swaps the W prior for beta/eps Gaussians") {
    auto cinst = test_util::make_instance(32, 4, 3, 3, 2, false, false, true,
                                          0.0);
    cinst.spec.sigma_gamma = 1.0;
    Rng crng = make_rng(33);
    const ParamsConstrained cpar =
        draw_prior_params(cinst.spec, cinst.data, crng);
    double expected = 0.0;
    for (int i = 0; i < cpar.beta->size(); ++i)
      expected += test_util::oracle_normal_logpdf(cpar.beta->data()[i], 0, 1);
    for (int i = 0; i < cpar.eps->size(); ++i)
      expected += test_util::oracle_normal_logpdf(cpar.eps->data()[i], 0, 1);
    for (const auto& X : cpar.X)
      for (int i = 0; i < X.size(); ++i)
        expected += test_util::oracle_normal_logpdf(X.data()[i], 0, 1);
    for (int i = 0; i < cpar.gamma.size(); ++i)
      expected += test_util::oracle_normal_logpdf(cpar.gamma.data()[i], 0, 1);
    expected += 0.5 * std::log(2.0 / M_PI) - cpar.tau * cpar.tau / 2.0;
    expected += test_util::oracle_normal_logpdf(cpar.a0, 0, 25.0);
    expected += test_util::oracle_normal_logpdf(cpar.a1, 0, 25.0);
    expected += 2.0 * std::log(1.0) - std::lgamma(2.0) -
                3.0 * std::log(cpar.sigma2) - 1.0 / cpar.sigma2;
    CHECK(log_prior(cpar, cinst.spec, cinst.data) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("log_posterior_unconstrained") {
  auto inst = test_util::make_instance(40, 3, 2, 2, 2, false, false, false,
                                       0.0);
  const Vector phi = test_util::random_phi(inst, 41);

  SUBCASE("assembles likelihood, prior, and Jacobians") {
    const UnpackResult u = unpack(phi, inst.spec, inst.data);
    const double expected = log_likelihood(inst.data, u.params, inst.spec) +
                            log_prior(u.params, inst.spec, inst.data) +
                            u.log_jacobian;
    CHECK(log_posterior_unconstrained(phi, inst.data, inst.spec) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("length mismatch throws") {
    CHECK_THROWS_AS(
        log_posterior_unconstrained(phi.head(3), inst.data, inst.spec),
        dim_error);
  }
  SUBCASE("positive column scaling of X leaves the likelihood part unchanged") {
    const UnpackResult u = unpack(phi, inst.spec, inst.data);
    ParamsConstrained scaled = u.params;
    scaled.X[0].col(1) *= 2.5;
    CHECK(log_likelihood(inst.data, scaled, inst.spec) ==
          doctest::Approx(log_likelihood(inst.data, u.params, inst.spec))
              .epsilon(1e-12));
  }
}

TEST_CASE("model invariants") {
  SUBCASE("template permutation leaves the posterior unchanged") {
    auto inst = test_util::make_instance(50, 5, 3, 3, 2, false, false, false,
                                         0.05);
    Rng rng = make_rng(51);
    ParamsConstrained par = draw_prior_params(inst.spec, inst.data, rng);
    const Vector phi = pack(par, inst.spec, inst.data);
    // permute template indices (3 -> 1 -> 2 -> 3)
    ParamsConstrained perm = par;
    const std::array<int, 3> p{2, 0, 1};
    for (int m = 0; m < 3; ++m) {
      perm.W.col(m) = par.W.col(p[m]);
      perm.X[m] = par.X[p[m]];
      perm.gamma.row(m) = par.gamma.row(p[m]);
    }
    const Vector phi_perm = pack(perm, inst.spec, inst.data);
    const double a = log_posterior_unconstrained(phi, inst.data, inst.spec);
    const double b =
        log_posterior_unconstrained(phi_perm, inst.data, inst.spec);
    CHECK(b == doctest::Approx(a).epsilon(1e-10));
  }
  SUBCASE("hurdle decomposition") {
    for (bool student : {false, true}) {
      auto inst = test_util::make_instance(52 + student, 4, 3, 2, 2, student,
                                           false, false, 0.1);
      ParamsConstrained par = tiny_params(4, 2, 2, 53, 3);
      const TemplateSet ts = build_templates(par, inst.spec);
      const LayerMatrix mu = layer_means(par.W, ts);
      double binary = 0.0, continuous = 0.0;
      for (int l = 0; l < inst.data.L; ++l)
        for (int e = 0; e < inst.data.P(); ++e) {
          if (inst.data.masked(l, e)) continue;
          const double eta = par.a0 + par.a1 * mu(l, e);
          if (inst.data.Z(l, e)) {
            binary += test_util::oracle_log_sigmoid(eta);
            continuous +=
                student
                    ? test_util::oracle_student_t_logpdf(
                          inst.data.Y(l, e), mu(l, e),
                          std::sqrt(par.sigma2), inst.spec.nu)
                    : test_util::oracle_normal_logpdf(inst.data.Y(l, e),
                                                      mu(l, e), par.sigma2);
          } else {
            binary += test_util::oracle_log_sigmoid(-eta);
          }
        }
      CHECK(log_likelihood(inst.data, par, inst.spec) ==
            doctest::Approx(binary + continuous).epsilon(1e-12));
    }
  }
  SUBCASE("masking removes exactly the pointwise contribution") {
    auto inst = test_util::make_instance(54, 4, 2, 2, 2, false, false, false,
                                         0.0);
    ParamsConstrained par = tiny_params(4, 2, 2, 55, 2);
    const TemplateSet ts = build_templates(par, inst.spec);
    const LayerMatrix mu = layer_means(par.W, ts);
    const double base = log_likelihood(inst.data, par, inst.spec);
    const int l = 1, e = 2;
    const double eta = par.a0 + par.a1 * mu(l, e);
    const double entry =
        inst.data.Z(l, e)
            ? test_util::oracle_log_sigmoid(eta) +
                  test_util::oracle_normal_logpdf(inst.data.Y(l, e), mu(l, e),
                                                  par.sigma2)
            : test_util::oracle_log_sigmoid(-eta);
    LayerDataset masked = inst.data;
    masked.set_mask({{l, e}});
    CHECK(log_likelihood(masked, par, inst.spec) ==
          doctest::Approx(base - entry).epsilon(1e-12));
  }
  SUBCASE("decoupled mode has a flat binary channel") {
    Rng mrng = make_rng(56);
    LayerMatrix mu = test_util::random_matrix(3, 6, mrng, 2.0);
    const LayerMatrix pi = edge_probabilities(-1.3, 0.0, mu);
    const double first = pi(0, 0);
    for (int i = 0; i < pi.size(); ++i) CHECK(pi.data()[i] == first);
  }
}
