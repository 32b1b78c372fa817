// Internal per-edge hurdle kernels shared by the likelihood and gradient
// paths. Not installed; include only from src/.
#ifndef BALM_SRC_KERNELS_HPP
#define BALM_SRC_KERNELS_HPP

#include <cmath>

#include "balm/types.hpp"

namespace balm::detail {

// Precomputed constants of the conditional weight channel.
struct ContChannel {
  Likelihood family;
  double nu = 5.0;
  double sigma2 = 1.0;
  double sigma = 1.0;
  double inv_sigma2 = 1.0;
  double log_const = 0.0;  // mu- and y-independent part of the log-density

  static ContChannel make(const ModelSpec& spec, double sigma2) {
    ContChannel c;
    c.family = spec.likelihood;
    c.nu = spec.nu;
    c.sigma2 = sigma2;
    c.sigma = std::sqrt(sigma2);
    c.inv_sigma2 = 1.0 / sigma2;
    if (spec.likelihood == Likelihood::Gaussian) {
      c.log_const = -0.5 * (kLog2Pi + std::log(sigma2));
    } else {
      c.log_const = std::lgamma(0.5 * (c.nu + 1.0)) -
                    std::lgamma(0.5 * c.nu) - 0.5 * std::log(c.nu * M_PI) -
                    0.5 * std::log(sigma2);
    }
    return c;
  }

  double logpdf(double y, double mu) const {
    if (family == Likelihood::Gaussian) {
      const double r = y - mu;
      return log_const - 0.5 * r * r * inv_sigma2;
    }
    const double z = (y - mu) / sigma;
    return log_const - 0.5 * (nu + 1.0) * std::log1p(z * z / nu);
  }

  // d logpdf / d mu and d logpdf / d sigma2 at (y, mu).
  void score(double y, double mu, double& d_mu, double& d_sigma2) const {
    if (family == Likelihood::Gaussian) {
      const double r = y - mu;
      d_mu = r * inv_sigma2;
      d_sigma2 = 0.5 * inv_sigma2 * (r * r * inv_sigma2 - 1.0);
      return;
    }
    double z = (y - mu) / sigma;
    // clamp the standardized residual so extreme states cannot emit NaN
    if (z > 1e8) z = 1e8;
    if (z < -1e8) z = -1e8;
    const double wgt = (nu + 1.0) / (nu + z * z);
    d_mu = wgt * z / sigma;
    d_sigma2 = 0.5 * inv_sigma2 * (wgt * z * z - 1.0);
  }
};

struct LayerSums {
  double loglik = 0.0;
  double d_a0 = 0.0;     // sum of (Z - pi)
  double d_a1 = 0.0;     // sum of (Z - pi) * mu
  double d_sigma2 = 0.0; // continuous-channel scale score
  bool bad_weight = false;
};

// One layer of the hurdle likelihood. When mu_bar is non-null also fills the
// per-edge mean cotangent and the scalar partials. Never throws (OpenMP
// callers check bad_weight after the parallel region).
template <bool WithGrad>
inline LayerSums layer_channel(int P, const std::uint8_t* z, const double* y,
                               const std::uint8_t* mask, double a0, double a1,
                               const double* mu, const ContChannel& cont,
                               double* mu_bar) {
  LayerSums s;
  for (int e = 0; e < P; ++e) {
    if (mask && mask[e]) {
      if constexpr (WithGrad) mu_bar[e] = 0.0;
      continue;
    }
    const double eta = a0 + a1 * mu[e];
    const bool present = z[e] != 0;
    s.loglik += present ? log_sigmoid(eta) : log_sigmoid(-eta);
    double g_mu = 0.0;
    if constexpr (WithGrad) {
      const double zmpi = (present ? 1.0 : 0.0) - sigmoid(eta);
      s.d_a0 += zmpi;
      s.d_a1 += zmpi * mu[e];
      g_mu = a1 * zmpi;
    }
    if (present) {
      if (!std::isfinite(y[e])) {
        s.bad_weight = true;
        if constexpr (WithGrad) mu_bar[e] = 0.0;
        continue;
      }
      s.loglik += cont.logpdf(y[e], mu[e]);
      if constexpr (WithGrad) {
        double d_mu, d_s2;
        cont.score(y[e], mu[e], d_mu, d_s2);
        g_mu += d_mu;
        s.d_sigma2 += d_s2;
      }
    }
    if constexpr (WithGrad) mu_bar[e] = g_mu;
  }
  return s;
}

}  // namespace balm::detail

#endif  // BALM_SRC_KERNELS_HPP
