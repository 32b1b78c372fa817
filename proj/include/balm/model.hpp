#ifndef BALM_MODEL_HPP
#define BALM_MODEL_HPP

#include "balm/transforms.hpp"
#include "balm/types.hpp"

namespace balm {

// q_m = vech(offdiag(tau * U(X_m) diag(gamma_m) U(X_m)^T)). The diagonal of
// the score matrix never enters the likelihood and is discarded here.
TemplateSet build_templates(const ParamsConstrained& params,
                            const ModelSpec& spec);

// mu_l = sum_m W_lm q_m for every layer; W rows on the simplex.
LayerMatrix layer_means(const Matrix& W, const TemplateSet& templates);

// Elementwise logit^{-1}(a0 + a1 mu); stable for |a0 + a1 mu| <= 700.
LayerMatrix edge_probabilities(double a0, double a1, const LayerMatrix& mu);

// Hurdle log-likelihood over all unmasked (layer, edge) entries: Bernoulli
// presence channel plus the conditional weight density where Z = 1. Masked
// entries contribute exactly zero.
double log_likelihood(const LayerDataset& data, const ParamsConstrained& params,
                      const ModelSpec& spec);

// Pointwise hurdle log-likelihood, one row per pooled draw (chain-major,
// then iteration order) and one column per unmasked entry in layer-major
// (l ascending, then e ascending) order.
Matrix pointwise_loglik(const LayerDataset& data, const PosteriorDraws& draws,
                        const ModelSpec& spec);

// Joint log-prior density, normalizing constants included.
double log_prior(const ParamsConstrained& params, const ModelSpec& spec,
                 const LayerDataset& data);

// log_likelihood + log_prior at unpack(phi) plus the transform log-Jacobian.
// Length mismatches throw dim_error; a non-finite evaluation returns -inf
// instead (the sampler treats it as a divergence).
double log_posterior_unconstrained(const Vector& phi, const LayerDataset& data,
                                   const ModelSpec& spec);

}  // namespace balm

#endif  // BALM_MODEL_HPP
