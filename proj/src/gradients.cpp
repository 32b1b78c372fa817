#include "balm/gradients.hpp"

#include <cmath>

#include "kernels.hpp"

namespace balm {

namespace {

// copyltu: lower triangle (diagonal included) mirrored onto the upper part.
Matrix copyltu(const Matrix& A) {
  const int K = static_cast<int>(A.rows());
  Matrix out(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) out(i, j) = (i >= j) ? A(i, j) : A(j, i);
  return out;
}

}  // namespace

Matrix qr_backward(const Matrix& X, const Matrix& U, const Matrix& R,
                   const Matrix& Ubar) {
  if (X.rows() < X.cols()) throw dim_error("qr_backward: requires n >= K");
  for (int k = 0; k < R.cols(); ++k)
    if (!(R(k, k) > 0.0)) throw numeric_error("qr_backward: singular R");
  // Thin-QR adjoint with zero R cotangent:
  //   Xbar = (Ubar - U copyltu(Ubar^T U)) R^{-T}
  const Matrix M = copyltu(Ubar.transpose() * U);
  const Matrix A = Ubar - U * M;
  // B = A R^{-T}  <=>  R B^T = A^T
  return R.triangularView<Eigen::Upper>()
      .solve(A.transpose())
      .transpose();
}

double log_posterior_with_grad(const Vector& phi, const LayerDataset& data,
                               const ModelSpec& spec, Vector& grad) {
  const PhiLayout ly = PhiLayout::make(spec, data);
  const UnpackResult u = unpack(phi, spec, data);
  const ParamsConstrained& par = u.params;
  const int L = ly.L, M = ly.M, K = ly.K, n = ly.n;
  const int P = edge_count(n);

  // forward: templates and layer means
  std::vector<QrFactors> qr(M);
  TemplateSet ts;
  ts.n = n;
  ts.Q.resize(M, P);
  int qr_failed = 0;
  #pragma omp parallel for schedule(static) reduction(| : qr_failed)
  for (int m = 0; m < M; ++m) {
    try {
      qr[m] = stiefel_qr_factors(par.X[m]);
      const Matrix S = par.tau * qr[m].U * par.gamma.row(m).asDiagonal() *
                       qr[m].U.transpose();
      double* q = ts.Q.data() + static_cast<std::ptrdiff_t>(m) * P;
      int e = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) q[e++] = S(i, j);
    } catch (const numeric_error&) {
      qr_failed = 1;
    }
  }
  if (qr_failed)
    throw numeric_error("grad_log_posterior: rank-deficient pre-image");
  const LayerMatrix mu = par.W * ts.Q;

  // per-layer channel sums and mean cotangents (exclusive writes per layer)
  const auto cont = detail::ContChannel::make(spec, par.sigma2);
  LayerMatrix mu_bar(L, P);
  std::vector<detail::LayerSums> sums(L);
  int bad = 0;
  #pragma omp parallel for schedule(static) reduction(| : bad)
  for (int l = 0; l < L; ++l) {
    sums[l] = detail::layer_channel<true>(
        P, data.Z.data() + static_cast<std::ptrdiff_t>(l) * P,
        data.Y.data() + static_cast<std::ptrdiff_t>(l) * P,
        data.mask.size() ? data.mask.data() + static_cast<std::ptrdiff_t>(l) * P
                         : nullptr,
        par.a0, par.a1, mu.data() + static_cast<std::ptrdiff_t>(l) * P, cont,
        mu_bar.data() + static_cast<std::ptrdiff_t>(l) * P);
    bad |= sums[l].bad_weight ? 1 : 0;
  }
  if (bad)
    throw data_error(
        "grad_log_posterior: non-finite weight at unmasked present edge");

  double loglik = 0.0, d_a0 = 0.0, d_a1 = 0.0, d_sigma2 = 0.0;
  for (int l = 0; l < L; ++l) {  // fixed order
    loglik += sums[l].loglik;
    d_a0 += sums[l].d_a0;
    d_a1 += sums[l].d_a1;
    d_sigma2 += sums[l].d_sigma2;
  }

  const double value = loglik + log_prior(par, spec, data) + u.log_jacobian;

  // backward
  grad.setZero(ly.dim);
  const Matrix W_bar = mu_bar * ts.Q.transpose();  // L x M
  const LayerMatrix Q_bar = par.W.transpose() * mu_bar;  // M x P

  // template blocks: gamma, tau, X through the QR pullback
  const double sigma_gamma = spec.resolved_sigma_gamma(n);
  std::vector<double> tau_partial(M, 0.0);
  #pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    Matrix G_sym = Matrix::Zero(n, n);  // G + G^T for upper-triangular G
    {
      const double* qb = Q_bar.data() + static_cast<std::ptrdiff_t>(m) * P;
      int e = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          G_sym(i, j) = qb[e];
          G_sym(j, i) = qb[e];
          ++e;
        }
    }
    const Matrix GU = G_sym * qr[m].U;  // n x K
    double tp = 0.0;
    for (int k = 0; k < K; ++k) {
      // u_k^T G u_k = (u_k . (G_sym u_k)) / 2
      const double ugu = 0.5 * qr[m].U.col(k).dot(GU.col(k));
      grad[ly.gamma_block(m) + k] =
          par.tau * ugu - par.gamma(m, k) / (sigma_gamma * sigma_gamma);
      tp += par.gamma(m, k) * ugu;
    }
    tau_partial[m] = tp;
    const Matrix U_bar =
        par.tau * GU * par.gamma.row(m).asDiagonal();
    const Matrix X_bar = qr_backward(par.X[m], qr[m].U, qr[m].R, U_bar);
    Eigen::Map<Vector>(grad.data() + ly.x_block(m), n * K) =
        Eigen::Map<const Vector>(X_bar.data(), n * K) -
        phi.segment(ly.x_block(m), n * K);  // standard-normal prior on X
  }

  // mixing-weight blocks
  if (ly.covariate) {
    const CovariatePrior& cp = *spec.covariate_prior;
    const Matrix& xcov = *data.covariates;
    Matrix psi_bar(L, M - 1);
    for (int l = 0; l < L; ++l) {
      const double dot = W_bar.row(l).dot(par.W.row(l));
      for (int m = 1; m < M; ++m)
        psi_bar(l, m - 1) = par.W(l, m) * (W_bar(l, m) - dot);
    }
    for (int l = 0; l < L; ++l)
      for (int m = 0; m < M - 1; ++m)
        grad[ly.w_offset + l * (M - 1) + m] =
            psi_bar(l, m) -
            (*par.eps)(l, m) / (cp.sigma_eps * cp.sigma_eps);
    const Matrix beta_bar = psi_bar.transpose() * xcov;  // (M-1) x p
    for (int m = 0; m < M - 1; ++m)
      for (int j = 0; j < ly.p; ++j)
        grad[ly.beta_offset + m * ly.p + j] =
            beta_bar(m, j) -
            (*par.beta)(m, j) / (cp.sigma_beta * cp.sigma_beta);
  } else {
    const double a = spec.alpha / M;
    for (int l = 0; l < L; ++l) {
      // Dirichlet prior and ALR Jacobian fold into (alpha/M) / w
      Eigen::RowVectorXd w_bar =
          W_bar.row(l) + a * par.W.row(l).cwiseInverse();
      const double dot = w_bar.dot(par.W.row(l));
      for (int m = 0; m < M - 1; ++m)
        grad[ly.w_offset + l * (M - 1) + m] =
            par.W(l, m) * (w_bar[m] - dot);
    }
  }

  // scalars
  double tau_bar = -par.tau / (spec.sigma_tau * spec.sigma_tau);
  for (int m = 0; m < M; ++m) tau_bar += tau_partial[m];
  grad[ly.log_tau_offset] = tau_bar * par.tau + 1.0;

  grad[ly.a0_offset] = d_a0 - par.a0 / (spec.sigma_a0 * spec.sigma_a0);
  if (ly.coupled)
    grad[ly.a1_offset] = d_a1 - par.a1 / (spec.sigma_a1 * spec.sigma_a1);

  const double s2 = par.sigma2;
  const double s2_bar =
      d_sigma2 - (spec.a_sigma + 1.0) / s2 + spec.b_sigma / (s2 * s2);
  grad[ly.log_sigma2_offset] = s2_bar * s2 + 1.0;

  if (std::isnan(value)) return kNegInf;
  return value;
}

Vector grad_log_posterior(const Vector& phi, const LayerDataset& data,
                          const ModelSpec& spec) {
  Vector grad;
  log_posterior_with_grad(phi, data, spec, grad);
  return grad;
}

}  // namespace balm
