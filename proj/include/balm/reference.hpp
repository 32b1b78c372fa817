#ifndef BALM_REFERENCE_HPP
#define BALM_REFERENCE_HPP

#include "balm/types.hpp"

namespace balm::reference {

// Plain single-threaded scalar-loop implementations of the likelihood-side
// kernels. They share no code with the OpenMP paths and exist as the slow,
// obviously-correct twins for tests and the kernel benchmark.

// Entrywise tau * U diag(gamma) U^T via explicit scalar sums.
TemplateSet build_templates(const ParamsConstrained& params,
                            const ModelSpec& spec);

LayerMatrix layer_means(const Matrix& W, const TemplateSet& templates);

LayerMatrix edge_probabilities(double a0, double a1, const LayerMatrix& mu);

double log_likelihood(const LayerDataset& data, const ParamsConstrained& params,
                      const ModelSpec& spec);

Matrix pointwise_loglik(const LayerDataset& data, const PosteriorDraws& draws,
                        const ModelSpec& spec);

}  // namespace balm::reference

#endif  // BALM_REFERENCE_HPP
