#include "balm/reference.hpp"

#include <cmath>

#include "balm/transforms.hpp"

namespace balm::reference {

namespace {

double weight_logpdf(double y, double mu, double sigma2, const ModelSpec& spec) {
  if (spec.likelihood == Likelihood::Gaussian)
    return normal_logpdf(y, mu, sigma2);
  return student_t_logpdf(y, mu, sigma2, spec.nu);
}

double edge_term(const LayerDataset& data, int l, int e, double mu, double a0,
                 double a1, double sigma2, const ModelSpec& spec) {
  const double eta = a0 + a1 * mu;
  if (data.Z(l, e)) {
    if (!std::isfinite(data.Y(l, e)))
      throw data_error("reference log_likelihood: non-finite weight present");
    return log_sigmoid(eta) + weight_logpdf(data.Y(l, e), mu, sigma2, spec);
  }
  return log_sigmoid(-eta);
}

}  // namespace

TemplateSet build_templates(const ParamsConstrained& params,
                            const ModelSpec& spec) {
  const int M = spec.M;
  const int n = static_cast<int>(params.X[0].rows());
  const int K = static_cast<int>(params.X[0].cols());
  TemplateSet ts;
  ts.n = n;
  ts.Q.resize(M, edge_count(n));
  for (int m = 0; m < M; ++m) {
    const Matrix U = stiefel_qr(params.X[m]);
    int e = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < K; ++k)
          s += params.gamma(m, k) * U(i, k) * U(j, k);
        ts.Q(m, e++) = params.tau * s;
      }
  }
  return ts;
}

LayerMatrix layer_means(const Matrix& W, const TemplateSet& templates) {
  const int L = static_cast<int>(W.rows());
  const int M = static_cast<int>(W.cols());
  const int P = templates.P();
  LayerMatrix mu = LayerMatrix::Zero(L, P);
  for (int l = 0; l < L; ++l)
    for (int m = 0; m < M; ++m)
      for (int e = 0; e < P; ++e) mu(l, e) += W(l, m) * templates.Q(m, e);
  return mu;
}

LayerMatrix edge_probabilities(double a0, double a1, const LayerMatrix& mu) {
  LayerMatrix pi(mu.rows(), mu.cols());
  for (int l = 0; l < mu.rows(); ++l)
    for (int e = 0; e < mu.cols(); ++e)
      pi(l, e) = 1.0 / (1.0 + std::exp(-(a0 + a1 * mu(l, e))));
  return pi;
}

double log_likelihood(const LayerDataset& data, const ParamsConstrained& params,
                      const ModelSpec& spec) {
  const TemplateSet ts = build_templates(params, spec);
  const LayerMatrix mu = layer_means(params.W, ts);
  double total = 0.0;
  for (int l = 0; l < data.L; ++l)
    for (int e = 0; e < data.P(); ++e) {
      if (data.masked(l, e)) continue;
      total += edge_term(data, l, e, mu(l, e), params.a0, params.a1,
                         params.sigma2, spec);
    }
  return total;
}

Matrix pointwise_loglik(const LayerDataset& data, const PosteriorDraws& draws,
                        const ModelSpec& spec) {
  const int S = draws.total_draws();
  Matrix out(S, data.unmasked_count());
  for (int s = 0; s < S; ++s) {
    const UnpackResult u = unpack(draws.draw(s).transpose(), spec, data);
    const TemplateSet ts = build_templates(u.params, spec);
    const LayerMatrix mu = layer_means(u.params.W, ts);
    int col = 0;
    for (int l = 0; l < data.L; ++l)
      for (int e = 0; e < data.P(); ++e) {
        if (data.masked(l, e)) continue;
        out(s, col++) = edge_term(data, l, e, mu(l, e), u.params.a0,
                                  u.params.a1, u.params.sigma2, spec);
      }
  }
  return out;
}

}  // namespace balm::reference
