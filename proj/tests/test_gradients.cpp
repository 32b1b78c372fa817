#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "balm/gradients.hpp"
#include "test_util.hpp"

using namespace balm;

namespace {

// central finite differences with the per-component step 1e-5 * (1 + |phi_i|)
Vector fd_gradient(const Vector& phi, const LayerDataset& data,
                   const ModelSpec& spec) {
  Vector g(phi.size());
  for (int i = 0; i < phi.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(phi[i]));
    Vector p = phi, m = phi;
    p[i] += h;
    m[i] -= h;
    g[i] = (log_posterior_unconstrained(p, data, spec) -
            log_posterior_unconstrained(m, data, spec)) /
           (2.0 * h);
  }
  return g;
}

double max_rel_error(const Vector& analytic, const Vector& fd) {
  double worst = 0.0;
  for (int i = 0; i < analytic.size(); ++i) {
    const double mag = std::max(std::abs(analytic[i]), std::abs(fd[i]));
    if (mag <= 1e-8) continue;
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / mag);
  }
  return worst;
}

}  // namespace

TEST_CASE("gradient matches finite differences across modes (property)") {
  // >= 20 seeded instances covering likelihood x coupling x covariate modes
  int count = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const bool student = seed % 2;
    const bool decoupled = (seed / 2) % 2;
    const bool covariate = (seed / 4) % 2;
    const int n = 3 + static_cast<int>(seed % 5);       // 3..7
    const int L = 1 + static_cast<int>(seed % 3);       // 1..3
    const int M = 2 + static_cast<int>(seed % 2);       // 2..3
    const int K = 1 + static_cast<int>(seed % 2);       // 1..2
    auto inst = test_util::make_instance(900 + seed, n, L, M, K, student,
                                         decoupled, covariate, 0.1);
    const Vector phi = test_util::random_phi(inst, 7000 + seed);
    Vector grad;
    const double value =
        log_posterior_with_grad(phi, inst.data, inst.spec, grad);
    CHECK(std::isfinite(value));
    CHECK(value ==
          doctest::Approx(log_posterior_unconstrained(phi, inst.data,
                                                      inst.spec))
              .epsilon(1e-12));
    const Vector fd = fd_gradient(phi, inst.data, inst.spec);
    const double err = max_rel_error(grad, fd);
    CAPTURE(seed);
    CHECK(err < 1e-5);
    ++count;
  }
  CHECK(count >= 20);
}

TEST_CASE("gradient vanishes along a numerically located 1-D optimum") {
  auto inst = test_util::make_instance(77, 4, 2, 2, 2);
  Vector phi = test_util::random_phi(inst, 78);
  const int coord = 0;
  // golden-section search on the slice phi[coord]
  auto f = [&](double x) {
    Vector p = phi;
    p[coord] = x;
    return -log_posterior_unconstrained(p, inst.data, inst.spec);
  };
  double a = phi[coord] - 20.0, b = phi[coord] + 20.0;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  phi[coord] = 0.5 * (a + b);
  const Vector grad = grad_log_posterior(phi, inst.data, inst.spec);
  CHECK(std::abs(grad[coord]) < 1e-6);
}

TEST_CASE("decoupled mode has no coupling coordinate") {
  auto inst = test_util::make_instance(80, 4, 2, 2, 2, false, true);
  const PhiLayout ly = PhiLayout::make(inst.spec, inst.data);
  CHECK(ly.a1_offset == -1);
  const Vector phi = test_util::random_phi(inst, 81);
  const Vector grad = grad_log_posterior(phi, inst.data, inst.spec);
  CHECK(grad.size() == ly.dim);
}

TEST_CASE("qr_backward") {
  Rng rng = make_rng(90);
  SUBCASE("zero cotangent gives zero gradient") {
    const Matrix X = test_util::random_matrix(6, 3, rng);
    const QrFactors f = stiefel_qr_factors(X);
    const Matrix Xbar = qr_backward(X, f.U, f.R, Matrix::Zero(6, 3));
    CHECK(Xbar.lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("K = 1 matches the normalization gradient in closed form") {
    const Matrix X = test_util::random_matrix(5, 1, rng);
    const QrFactors f = stiefel_qr_factors(X);
    const Matrix Ubar = test_util::random_matrix(5, 1, rng);
    const Matrix Xbar = qr_backward(X, f.U, f.R, Ubar);
    const double norm = X.col(0).norm();
    const Matrix expected =
        (Matrix::Identity(5, 5) - f.U * f.U.transpose()) * Ubar / norm;
    CHECK((Xbar - expected).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  SUBCASE("directional derivative matches finite differences") {
    const Matrix X = test_util::random_matrix(6, 3, rng);
    const Matrix Ubar = test_util::random_matrix(6, 3, rng);
    const QrFactors f = stiefel_qr_factors(X);
    const Matrix Xbar = qr_backward(X, f.U, f.R, Ubar);
    for (int rep = 0; rep < 5; ++rep) {
      const Matrix dX = test_util::random_matrix(6, 3, rng);
      const double h = 1e-6;
      const double fp =
          (Ubar.array() * stiefel_qr(X + h * dX).array()).sum();
      const double fm =
          (Ubar.array() * stiefel_qr(X - h * dX).array()).sum();
      const double fd = (fp - fm) / (2.0 * h);
      const double an = (Xbar.array() * dX.array()).sum();
      CHECK(an == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  SUBCASE("singular R rejected") {
    const Matrix X = test_util::random_matrix(4, 2, rng);
    const QrFactors f = stiefel_qr_factors(X);
    Matrix Rbad = f.R;
    Rbad(1, 1) = 0.0;
    CHECK_THROWS_AS(qr_backward(X, f.U, Rbad, Matrix::Ones(4, 2)),
                    numeric_error);
  }
}

TEST_CASE("gradient is permutation equivariant over template blocks") {
  // permutation fixing the ALR base category (last template)
  auto inst = test_util::make_instance(95, 5, 3, 3, 2);
  Rng rng = make_rng(96);
  ParamsConstrained par = draw_prior_params(inst.spec, inst.data, rng);
  const Vector phi = pack(par, inst.spec, inst.data);
  ParamsConstrained perm = par;
  perm.W.col(0) = par.W.col(1);
  perm.W.col(1) = par.W.col(0);
  std::swap(perm.X[0], perm.X[1]);
  perm.gamma.row(0) = par.gamma.row(1);
  perm.gamma.row(1) = par.gamma.row(0);
  const Vector phi_p = pack(perm, inst.spec, inst.data);
  const Vector g = grad_log_posterior(phi, inst.data, inst.spec);
  const Vector g_p = grad_log_posterior(phi_p, inst.data, inst.spec);
  const PhiLayout ly = PhiLayout::make(inst.spec, inst.data);
  // v blocks: swapping templates 1,2 swaps the first two ALR coordinates
  for (int l = 0; l < inst.data.L; ++l) {
    CHECK(g_p[ly.w_offset + l * 2 + 0] ==
          doctest::Approx(g[ly.w_offset + l * 2 + 1]).epsilon(1e-9));
    CHECK(g_p[ly.w_offset + l * 2 + 1] ==
          doctest::Approx(g[ly.w_offset + l * 2 + 0]).epsilon(1e-9));
  }
  for (int i = 0; i < ly.n * ly.K; ++i) {
    CHECK(g_p[ly.x_block(0) + i] ==
          doctest::Approx(g[ly.x_block(1) + i]).epsilon(1e-9));
    CHECK(g_p[ly.x_block(1) + i] ==
          doctest::Approx(g[ly.x_block(0) + i]).epsilon(1e-9));
  }
  for (int k = 0; k < ly.K; ++k) {
    CHECK(g_p[ly.gamma_block(0) + k] ==
          doctest::Approx(g[ly.gamma_block(1) + k]).epsilon(1e-9));
  }
  CHECK(g_p[ly.log_tau_offset] ==
        doctest::Approx(g[ly.log_tau_offset]).epsilon(1e-9));
}

TEST_CASE("gradient never mutates inputs and is deterministic") {
  auto inst = test_util::make_instance(97, 5, 3, 2, 2);
  const Vector phi = test_util::random_phi(inst, 98);
  const Vector phi_copy = phi;
  const LayerMatrix y_copy = inst.data.Y;
  const Vector g1 = grad_log_posterior(phi, inst.data, inst.spec);
  const Vector g2 = grad_log_posterior(phi, inst.data, inst.spec);
  CHECK((phi - phi_copy).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((inst.data.Y - y_copy).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((g1 - g2).lpNorm<Eigen::Infinity>() == 0.0);  // bitwise
}
