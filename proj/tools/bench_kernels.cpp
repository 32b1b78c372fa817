// Times the OpenMP likelihood/gradient kernels against the serial reference
// on a dense synthetic instance across thread counts.
#include <chrono>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "balm/gradients.hpp"
#include "balm/reference.hpp"
#include "balm/sampler.hpp"
#include "balm/simgen.hpp"
#include "balm/transforms.hpp"

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void set_threads(int t) {
#ifdef _OPENMP
  omp_set_num_threads(t);
#else
  (void)t;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  balm::SimConfig cfg;
  cfg.n = 68;
  cfg.L = 100;
  cfg.M = 3;
  cfg.K = 4;
  cfg.sigma_star = 1.0;
  cfg.a0_star = -1.0;
  cfg.a1_star = 3.0;
  cfg.seed = 7;
  if (argc > 1) cfg.n = std::atoi(argv[1]);
  if (argc > 2) cfg.L = std::atoi(argv[2]);
  auto [data, truth] = balm::generate(cfg);

  balm::ModelSpec spec;
  spec.M = cfg.M;
  spec.K = cfg.K;
  balm::Rng rng = balm::make_rng(11);
  const balm::ParamsConstrained params =
      balm::draw_prior_params(spec, data, rng);
  const balm::Vector phi = balm::pack(params, spec, data);

  const int hw = max_threads();
  std::printf("instance: n=%d L=%d M=%d K=%d P=%d (%d hardware threads)\n",
              data.n, data.L, cfg.M, cfg.K, data.P(), hw);

  const double ref_ms = time_ms(20, [&] {
    volatile double v = balm::reference::log_likelihood(data, params, spec);
    (void)v;
  });
  std::printf("%-34s %10.3f ms\n", "log_likelihood serial reference", ref_ms);

  for (int t = 1; t <= hw; t *= 2) {
    set_threads(t);
    const double ms = time_ms(50, [&] {
      volatile double v = balm::log_likelihood(data, params, spec);
      (void)v;
    });
    std::printf("log_likelihood omp %2d thread(s)    %10.3f ms (%.2fx vs ref)\n",
                t, ms, ref_ms / ms);
  }

  balm::Vector grad;
  for (int t = 1; t <= hw; t *= 2) {
    set_threads(t);
    const double ms = time_ms(50, [&] {
      volatile double v =
          balm::log_posterior_with_grad(phi, data, spec, grad);
      (void)v;
    });
    std::printf("posterior gradient %2d thread(s)    %10.3f ms\n", t, ms);
  }
  return 0;
}
