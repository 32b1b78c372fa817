#include "balm/model.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace balm {

TemplateSet build_templates(const ParamsConstrained& params,
                            const ModelSpec& spec) {
  const int M = spec.M;
  if (static_cast<int>(params.X.size()) != M)
    throw dim_error("build_templates: X must hold M matrices");
  const int n = static_cast<int>(params.X[0].rows());
  const int P = edge_count(n);
  TemplateSet ts;
  ts.n = n;
  ts.Q.resize(M, P);
  int failed = 0;
  #pragma omp parallel for schedule(static) reduction(| : failed)
  for (int m = 0; m < M; ++m) {
    try {
      const Matrix U = stiefel_qr(params.X[m]);
      const Matrix S =
          params.tau * U * params.gamma.row(m).asDiagonal() * U.transpose();
      double* q = ts.Q.data() + static_cast<std::ptrdiff_t>(m) * P;
      int e = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) q[e++] = S(i, j);
    } catch (const numeric_error&) {
      failed = 1;
    }
  }
  if (failed) throw numeric_error("build_templates: rank-deficient pre-image");
  return ts;
}

LayerMatrix layer_means(const Matrix& W, const TemplateSet& templates) {
  if (W.cols() != templates.M())
    throw dim_error("layer_means: W columns must match template count");
  return W * templates.Q;
}

LayerMatrix edge_probabilities(double a0, double a1, const LayerMatrix& mu) {
  LayerMatrix pi(mu.rows(), mu.cols());
  const std::ptrdiff_t N = mu.size();
  const double* in = mu.data();
  double* out = pi.data();
  // clamp into the open interval: sigmoid(x) rounds to 1.0 beyond ~x = 37
  const double hi = std::nextafter(1.0, 0.0);
  const double lo = std::numeric_limits<double>::denorm_min();
  for (std::ptrdiff_t i = 0; i < N; ++i)
    out[i] = std::clamp(sigmoid(a0 + a1 * in[i]), lo, hi);
  return pi;
}

namespace {

double likelihood_from_means(const LayerDataset& data, const LayerMatrix& mu,
                             double a0, double a1,
                             const detail::ContChannel& cont) {
  const int L = data.L;
  const int P = data.P();
  std::vector<double> per_layer(L);
  int bad = 0;
  #pragma omp parallel for schedule(static) reduction(| : bad)
  for (int l = 0; l < L; ++l) {
    const auto s = detail::layer_channel<false>(
        P, data.Z.data() + static_cast<std::ptrdiff_t>(l) * P,
        data.Y.data() + static_cast<std::ptrdiff_t>(l) * P,
        data.mask.size() ? data.mask.data() + static_cast<std::ptrdiff_t>(l) * P
                         : nullptr,
        a0, a1, mu.data() + static_cast<std::ptrdiff_t>(l) * P, cont, nullptr);
    per_layer[l] = s.loglik;
    bad |= s.bad_weight ? 1 : 0;
  }
  if (bad)
    throw data_error("log_likelihood: non-finite weight at unmasked present edge");
  double total = 0.0;
  for (int l = 0; l < L; ++l) total += per_layer[l];  // fixed order
  return total;
}

}  // namespace

double log_likelihood(const LayerDataset& data, const ParamsConstrained& params,
                      const ModelSpec& spec) {
  const TemplateSet ts = build_templates(params, spec);
  const LayerMatrix mu = layer_means(params.W, ts);
  const auto cont = detail::ContChannel::make(spec, params.sigma2);
  return likelihood_from_means(data, mu, params.a0, params.a1, cont);
}

Matrix pointwise_loglik(const LayerDataset& data, const PosteriorDraws& draws,
                        const ModelSpec& spec) {
  const int S = draws.total_draws();
  if (S < 1) throw dim_error("pointwise_loglik: no draws");
  const int P = data.P();
  const int N = data.unmasked_count();
  Matrix out(S, N);
  int failed = 0;
  #pragma omp parallel for schedule(static) reduction(| : failed)
  for (int s = 0; s < S; ++s) {
    try {
      const UnpackResult u =
          unpack(draws.draw(s).transpose(), spec, data);
      const TemplateSet ts = build_templates(u.params, spec);
      const LayerMatrix mu = layer_means(u.params.W, ts);
      const auto cont = detail::ContChannel::make(spec, u.params.sigma2);
      int col = 0;
      for (int l = 0; l < data.L; ++l) {
        for (int e = 0; e < P; ++e) {
          if (data.masked(l, e)) continue;
          const double eta = u.params.a0 + u.params.a1 * mu(l, e);
          double ll;
          if (data.Z(l, e)) {
            if (!std::isfinite(data.Y(l, e)))
              throw data_error("pointwise_loglik: non-finite weight");
            ll = log_sigmoid(eta) + cont.logpdf(data.Y(l, e), mu(l, e));
          } else {
            ll = log_sigmoid(-eta);
          }
          out(s, col++) = ll;
        }
      }
    } catch (const std::exception&) {
      failed = 1;
    }
  }
  if (failed)
    throw data_error("pointwise_loglik: draw evaluation failed");
  return out;
}

double log_prior(const ParamsConstrained& params, const ModelSpec& spec,
                 const LayerDataset& data) {
  if (!(params.tau > 0.0)) throw numeric_error("log_prior: tau <= 0");
  if (!(params.sigma2 > 0.0)) throw numeric_error("log_prior: sigma2 <= 0");
  const int M = spec.M;
  double lp = 0.0;
  if (spec.covariate_mode()) {
    const CovariatePrior& cp = *spec.covariate_prior;
    const Matrix& beta = *params.beta;
    const Matrix& eps = *params.eps;
    for (int i = 0; i < beta.size(); ++i)
      lp += normal0_logpdf(beta.data()[i], cp.sigma_beta);
    for (int i = 0; i < eps.size(); ++i)
      lp += normal0_logpdf(eps.data()[i], cp.sigma_eps);
  } else {
    const double a = spec.alpha / M;
    const double log_norm = std::lgamma(spec.alpha) - M * std::lgamma(a);
    for (int l = 0; l < params.W.rows(); ++l) {
      double s = log_norm;
      for (int m = 0; m < M; ++m) s += (a - 1.0) * std::log(params.W(l, m));
      lp += s;
    }
  }
  for (const Matrix& Xm : params.X)
    for (int i = 0; i < Xm.size(); ++i) lp += normal0_logpdf(Xm.data()[i], 1.0);
  const double sg = spec.resolved_sigma_gamma(data.n);
  for (int i = 0; i < params.gamma.size(); ++i)
    lp += normal0_logpdf(params.gamma.data()[i], sg);
  lp += halfnormal_logpdf(params.tau, spec.sigma_tau);
  lp += normal0_logpdf(params.a0, spec.sigma_a0);
  if (spec.coupled()) lp += normal0_logpdf(params.a1, spec.sigma_a1);
  lp += invgamma_logpdf(params.sigma2, spec.a_sigma, spec.b_sigma);
  (void)data;
  return lp;
}

double log_posterior_unconstrained(const Vector& phi, const LayerDataset& data,
                                   const ModelSpec& spec) {
  const UnpackResult u = unpack(phi, spec, data);
  const double ll = log_likelihood(data, u.params, spec);
  const double lp = log_prior(u.params, spec, data);
  const double total = ll + lp + u.log_jacobian;
  if (std::isnan(total)) return kNegInf;
  return total;
}

}  // namespace balm
