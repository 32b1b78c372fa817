#include "balm/transforms.hpp"

#include <Eigen/QR>
#include <cmath>
#include <sstream>

namespace balm {

Vector alr_forward(const Vector& w) {
  const int M = static_cast<int>(w.size());
  if (M < 1) throw dim_error("alr_forward: empty weight vector");
  for (int m = 0; m < M; ++m)
    if (!(w[m] > 0.0))
      throw numeric_error("alr_forward: boundary simplex point (w_" +
                          std::to_string(m + 1) + " <= 0)");
  Vector v(M - 1);
  const double log_base = std::log(w[M - 1]);
  for (int m = 0; m < M - 1; ++m) v[m] = std::log(w[m]) - log_base;
  return v;
}

AlrInverse alr_inverse(const Vector& v) {
  const int M = static_cast<int>(v.size()) + 1;
  Vector z(M);
  z.head(M - 1) = v;
  z[M - 1] = 0.0;
  const double zmax = z.maxCoeff();
  Vector e = (z.array() - zmax).exp();
  const double denom = e.sum();
  Vector w = e / denom;
  double log_jac = 0.0;
  // log w_m computed in shifted coordinates to avoid log(0) underflow bias
  const double log_denom = std::log(denom);
  for (int m = 0; m < M; ++m) log_jac += (z[m] - zmax) - log_denom;
  return {std::move(w), log_jac};
}

Matrix softmax_weights(const Matrix& psi) {
  const int L = static_cast<int>(psi.rows());
  const int M = static_cast<int>(psi.cols());
  for (int l = 0; l < L; ++l)
    if (psi(l, 0) != 0.0)
      throw dim_error("softmax_weights: first column must be zero");
  Matrix W(L, M);
  for (int l = 0; l < L; ++l) {
    const double m = psi.row(l).maxCoeff();
    Eigen::RowVectorXd e = (psi.row(l).array() - m).exp();
    W.row(l) = e / e.sum();
  }
  return W;
}

QrFactors stiefel_qr_factors(const Matrix& X) {
  const int n = static_cast<int>(X.rows());
  const int K = static_cast<int>(X.cols());
  if (n < K) throw dim_error("stiefel_qr: requires n >= K");
  Eigen::HouseholderQR<Matrix> qr(X);
  Matrix U = qr.householderQ() * Matrix::Identity(n, K);
  Matrix R = qr.matrixQR().topRows(K).triangularView<Eigen::Upper>();
  for (int k = 0; k < K; ++k) {
    if (R(k, k) < 0.0) {
      U.col(k) = -U.col(k);
      R.row(k) = -R.row(k);
    }
  }
  double dmin = std::abs(R(0, 0)), dmax = dmin;
  for (int k = 1; k < K; ++k) {
    dmin = std::min(dmin, std::abs(R(k, k)));
    dmax = std::max(dmax, std::abs(R(k, k)));
  }
  if (!(dmin > 1e-10 * dmax) || !std::isfinite(dmax))
    throw numeric_error("stiefel_qr: rank-deficient pre-image");
  return {std::move(U), std::move(R)};
}

PhiLayout PhiLayout::make(const ModelSpec& spec, const LayerDataset& data) {
  PhiLayout ly;
  ly.n = data.n;
  ly.L = data.L;
  ly.M = spec.M;
  ly.K = spec.K;
  ly.covariate = spec.covariate_mode();
  ly.coupled = spec.coupled();
  if (ly.covariate) {
    if (!data.covariates)
      throw data_error("covariate-mode spec requires dataset covariates");
    ly.p = static_cast<int>(data.covariates->cols());
  }
  int off = 0;
  ly.w_offset = off;
  off += ly.L * (ly.M - 1);
  if (ly.covariate) {
    ly.beta_offset = off;
    off += (ly.M - 1) * ly.p;
  }
  ly.x_offset = off;
  off += ly.M * ly.n * ly.K;
  ly.gamma_offset = off;
  off += ly.M * ly.K;
  ly.log_tau_offset = off++;
  ly.a0_offset = off++;
  if (ly.coupled) ly.a1_offset = off++;
  ly.log_sigma2_offset = off++;
  ly.dim = off;
  return ly;
}

std::string PhiLayout::descriptor() const {
  std::ostringstream os;
  auto block = [&os](const char* name, int off, int count,
                     const std::string& shape) {
    os << name << ":" << off << ":" << count;
    if (!shape.empty()) os << ":" << shape;
    os << ";";
  };
  const std::string lxm1 =
      std::to_string(L) + "x" + std::to_string(M - 1);
  block(covariate ? "eps" : "w_alr", w_offset, L * (M - 1), lxm1);
  if (covariate)
    block("beta", beta_offset, (M - 1) * p,
          std::to_string(M - 1) + "x" + std::to_string(p));
  block("x", x_offset, M * n * K,
        std::to_string(M) + "x" + std::to_string(n) + "x" +
            std::to_string(K) + "colmajor");
  block("gamma", gamma_offset, M * K,
        std::to_string(M) + "x" + std::to_string(K));
  block("log_tau", log_tau_offset, 1, "");
  block("a0", a0_offset, 1, "");
  if (coupled) block("a1", a1_offset, 1, "");
  block("log_sigma2", log_sigma2_offset, 1, "");
  return os.str();
}

Vector pack(const ParamsConstrained& params, const ModelSpec& spec,
            const LayerDataset& data) {
  const PhiLayout ly = PhiLayout::make(spec, data);
  Vector phi(ly.dim);
  if (ly.covariate) {
    const Matrix& eps = *params.eps;
    const Matrix& beta = *params.beta;
    if (eps.rows() != ly.L || eps.cols() != ly.M - 1)
      throw dim_error("pack: eps must be L x (M-1)");
    if (beta.rows() != ly.M - 1 || beta.cols() != ly.p)
      throw dim_error("pack: beta must be (M-1) x p");
    for (int l = 0; l < ly.L; ++l)
      for (int m = 0; m < ly.M - 1; ++m)
        phi[ly.w_offset + l * (ly.M - 1) + m] = eps(l, m);
    for (int m = 0; m < ly.M - 1; ++m)
      for (int j = 0; j < ly.p; ++j)
        phi[ly.beta_offset + m * ly.p + j] = beta(m, j);
  } else {
    if (params.W.rows() != ly.L || params.W.cols() != ly.M)
      throw dim_error("pack: W must be L x M");
    for (int l = 0; l < ly.L; ++l) {
      Vector v = alr_forward(params.W.row(l).transpose());
      for (int m = 0; m < ly.M - 1; ++m)
        phi[ly.w_offset + l * (ly.M - 1) + m] = v[m];
    }
  }
  if (static_cast<int>(params.X.size()) != ly.M)
    throw dim_error("pack: X must hold M matrices");
  for (int m = 0; m < ly.M; ++m) {
    const Matrix& Xm = params.X[m];
    if (Xm.rows() != ly.n || Xm.cols() != ly.K)
      throw dim_error("pack: X_m must be n x K");
    Eigen::Map<Vector>(phi.data() + ly.x_block(m), ly.n * ly.K) =
        Eigen::Map<const Vector>(Xm.data(), ly.n * ly.K);
  }
  if (params.gamma.rows() != ly.M || params.gamma.cols() != ly.K)
    throw dim_error("pack: gamma must be M x K");
  for (int m = 0; m < ly.M; ++m)
    for (int k = 0; k < ly.K; ++k)
      phi[ly.gamma_block(m) + k] = params.gamma(m, k);
  phi[ly.log_tau_offset] = log_forward(params.tau);
  phi[ly.a0_offset] = params.a0;
  if (ly.coupled)
    phi[ly.a1_offset] = params.a1;
  else if (params.a1 != 0.0)
    throw dim_error("pack: decoupled mode requires a1 = 0");
  phi[ly.log_sigma2_offset] = log_forward(params.sigma2);
  return phi;
}

UnpackResult unpack(const Vector& phi, const ModelSpec& spec,
                    const LayerDataset& data) {
  const PhiLayout ly = PhiLayout::make(spec, data);
  if (phi.size() != ly.dim)
    throw dim_error("unpack: phi has length " + std::to_string(phi.size()) +
                    ", layout requires " + std::to_string(ly.dim));
  ParamsConstrained params;
  double log_jac = 0.0;
  if (ly.covariate) {
    Matrix eps(ly.L, ly.M - 1);
    for (int l = 0; l < ly.L; ++l)
      for (int m = 0; m < ly.M - 1; ++m)
        eps(l, m) = phi[ly.w_offset + l * (ly.M - 1) + m];
    Matrix beta(ly.M - 1, ly.p);
    for (int m = 0; m < ly.M - 1; ++m)
      for (int j = 0; j < ly.p; ++j)
        beta(m, j) = phi[ly.beta_offset + m * ly.p + j];
    Matrix psi = Matrix::Zero(ly.L, ly.M);
    psi.rightCols(ly.M - 1) =
        (*data.covariates) * beta.transpose() + eps;
    params.W = softmax_weights(psi);
    params.eps = std::move(eps);
    params.beta = std::move(beta);
  } else {
    params.W.resize(ly.L, ly.M);
    for (int l = 0; l < ly.L; ++l) {
      Vector v(ly.M - 1);
      for (int m = 0; m < ly.M - 1; ++m)
        v[m] = phi[ly.w_offset + l * (ly.M - 1) + m];
      AlrInverse inv = alr_inverse(v);
      params.W.row(l) = inv.w.transpose();
      log_jac += inv.log_jacobian;
    }
  }
  params.X.resize(ly.M);
  for (int m = 0; m < ly.M; ++m) {
    params.X[m].resize(ly.n, ly.K);
    Eigen::Map<Vector>(params.X[m].data(), ly.n * ly.K) =
        phi.segment(ly.x_block(m), ly.n * ly.K);
  }
  params.gamma.resize(ly.M, ly.K);
  for (int m = 0; m < ly.M; ++m)
    for (int k = 0; k < ly.K; ++k)
      params.gamma(m, k) = phi[ly.gamma_block(m) + k];
  const LogInverse tau_inv = log_inverse(phi[ly.log_tau_offset]);
  params.tau = tau_inv.x;
  log_jac += tau_inv.log_jacobian;
  params.a0 = phi[ly.a0_offset];
  params.a1 = ly.coupled ? phi[ly.a1_offset] : 0.0;
  const LogInverse s2_inv = log_inverse(phi[ly.log_sigma2_offset]);
  params.sigma2 = s2_inv.x;
  log_jac += s2_inv.log_jacobian;
  return {std::move(params), log_jac};
}

}  // namespace balm
