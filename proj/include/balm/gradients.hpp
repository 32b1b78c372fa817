#ifndef BALM_GRADIENTS_HPP
#define BALM_GRADIENTS_HPP

#include "balm/model.hpp"

namespace balm {

// Adjoint of X -> Q(X) for the sign-fixed thin QR, applied to the cotangent
// Ubar. Requires diag(R) > 0 (as produced by stiefel_qr_factors).
Matrix qr_backward(const Matrix& X, const Matrix& U, const Matrix& R,
                   const Matrix& Ubar);

// Value and exact gradient of log_posterior_unconstrained in one pass.
// Reverse-mode accumulation with a fixed reduction order: the returned
// vector is bitwise-identical for a fixed input regardless of thread count.
double log_posterior_with_grad(const Vector& phi, const LayerDataset& data,
                               const ModelSpec& spec, Vector& grad);

Vector grad_log_posterior(const Vector& phi, const LayerDataset& data,
                          const ModelSpec& spec);

}  // namespace balm

#endif  // BALM_GRADIENTS_HPP
