// Shared helpers for the unit tests: small random instances and naive
// scalar-density oracles kept independent of the library kernels.
#ifndef BALM_TESTS_TEST_UTIL_HPP
#define BALM_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <random>

#include "balm/sampler.hpp"
#include "balm/simgen.hpp"
#include "balm/transforms.hpp"
#include "balm/types.hpp"

namespace test_util {

inline balm::Matrix random_matrix(int rows, int cols, balm::Rng& rng,
                                  double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  balm::Matrix m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

struct Instance {
  balm::LayerDataset data;
  balm::GroundTruth truth;
  balm::ModelSpec spec;
};

// Small randomized hurdle instance; mode flags select likelihood family,
// coupling, and the covariate extension.
inline Instance make_instance(std::uint64_t seed, int n = 6, int L = 3,
                              int M = 2, int K = 2, bool student_t = false,
                              bool decoupled = false, bool covariate = false,
                              double mask_fraction = 0.1) {
  balm::SimConfig cfg;
  cfg.n = n;
  cfg.L = L;
  cfg.M = M;
  cfg.K = K;
  cfg.alpha = 1.0;
  cfg.sigma_star = 0.6;
  cfg.a0_star = -0.5;
  cfg.a1_star = decoupled ? 0.0 : 1.2;
  cfg.mask_fraction = mask_fraction;
  cfg.seed = seed;
  if (student_t) {
    cfg.likelihood = balm::Likelihood::StudentT;
    cfg.nu = 5.0;
  }
  Instance inst;
  auto [data, truth] = balm::generate(cfg);
  inst.data = std::move(data);
  inst.truth = std::move(truth);
  inst.spec.M = M;
  inst.spec.K = K;
  inst.spec.likelihood = cfg.likelihood;
  inst.spec.nu = cfg.nu;
  inst.spec.coupling =
      decoupled ? balm::Coupling::Decoupled : balm::Coupling::Coupled;
  if (covariate) {
    inst.spec.covariate_prior = balm::CovariatePrior{1.0, 1.0};
    balm::Rng rng = balm::make_rng(seed, 0xc0766172ULL);
    inst.data.covariates = random_matrix(L, 2, rng);
  }
  return inst;
}

inline balm::Vector random_phi(const Instance& inst, std::uint64_t seed) {
  balm::Rng rng = balm::make_rng(seed, 0x706869ULL);
  balm::ParamsConstrained par =
      balm::draw_prior_params(inst.spec, inst.data, rng);
  return balm::pack(par, inst.spec, inst.data);
}

// --- independent scalar oracles -------------------------------------------

inline double oracle_log_sigmoid(double x) {
  // direct form; the library uses the branch-free variant
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double oracle_normal_logpdf(double y, double mu, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) -
         (y - mu) * (y - mu) / (2.0 * var);
}

inline double oracle_student_t_logpdf(double y, double mu, double sigma,
                                      double nu) {
  const double z = (y - mu) / sigma;
  return std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
         0.5 * std::log(nu * M_PI) - std::log(sigma) -
         (nu + 1.0) / 2.0 * std::log(1.0 + z * z / nu);
}

}  // namespace test_util

#endif
