#ifndef BALM_TRANSFORMS_HPP
#define BALM_TRANSFORMS_HPP

#include <string>
#include <utility>

#include "balm/types.hpp"

namespace balm {

// --- simplex / positivity bijections ------------------------------------

// Additive log-ratio coordinates with the last component as base category:
// v_m = log(w_m / w_M), m = 1..M-1. Forward requires a strictly interior w.
Vector alr_forward(const Vector& w);

struct AlrInverse {
  Vector w;
  double log_jacobian;  // sum_m log w_m over all M components
};
AlrInverse alr_inverse(const Vector& v);

inline double log_forward(double x) {
  if (!(x > 0.0)) throw numeric_error("log_forward requires x > 0");
  return std::log(x);
}
struct LogInverse {
  double x;
  double log_jacobian;  // equals u for x = exp(u)
};
inline LogInverse log_inverse(double u) { return {std::exp(u), u}; }

// Row-wise stable softmax for the covariate mode; psi's first column must be
// identically zero (baseline category).
Matrix softmax_weights(const Matrix& psi);

// --- QR-Stiefel map ------------------------------------------------------

struct QrFactors {
  Matrix U;  // n x K, orthonormal columns
  Matrix R;  // K x K, upper triangular, positive diagonal
};

// Thin Householder QR with the column signs fixed so diag(R) > 0. Throws
// numeric_error when X is numerically rank deficient (the relative
// R-diagonal falls below 1e-10); the sampler treats that as a divergence.
QrFactors stiefel_qr_factors(const Matrix& X);
inline Matrix stiefel_qr(const Matrix& X) { return stiefel_qr_factors(X).U; }

// --- flat coordinate layout ----------------------------------------------

// Block layout of the unconstrained vector phi. Baseline mode:
//   [ALR(W) by layer | X_1..X_M column-major | gamma by template |
//    log tau | a0 | a1 (coupled only) | log sigma2]
// Covariate mode replaces the ALR block with [eps by layer | beta by
// template row], W being deterministic from psi.
struct PhiLayout {
  int n = 0, L = 0, M = 1, K = 1, p = 0;
  bool covariate = false;
  bool coupled = true;

  int w_offset = 0;       // ALR(W) or eps block
  int beta_offset = -1;   // covariate mode only
  int x_offset = 0;
  int gamma_offset = 0;
  int log_tau_offset = 0;
  int a0_offset = 0;
  int a1_offset = -1;     // -1 when decoupled
  int log_sigma2_offset = 0;
  int dim = 0;

  static PhiLayout make(const ModelSpec& spec, const LayerDataset& data);

  int x_block(int m) const { return x_offset + m * n * K; }
  int gamma_block(int m) const { return gamma_offset + m * K; }

  // Compact field-by-field descriptor, e.g.
  // "w_alr:0:8:4x2;x:8:48:2x10x2;...". Stable: part of the draws format.
  std::string descriptor() const;
};

Vector pack(const ParamsConstrained& params, const ModelSpec& spec,
            const LayerDataset& data);

struct UnpackResult {
  ParamsConstrained params;
  double log_jacobian;  // per-layer ALR terms + log tau + log sigma2
};
UnpackResult unpack(const Vector& phi, const ModelSpec& spec,
                    const LayerDataset& data);

}  // namespace balm

#endif  // BALM_TRANSFORMS_HPP
