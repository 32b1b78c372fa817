#ifndef BALM_SAMPLER_HPP
#define BALM_SAMPLER_HPP

#include <functional>

#include "balm/gradients.hpp"
#include "balm/types.hpp"

namespace balm {

// Differentiable log-density interface the sampler runs on. Implementations
// must be safe for concurrent const calls (chains share one target).
class LogDensityTarget {
 public:
  virtual ~LogDensityTarget() = default;
  virtual int dim() const = 0;
  // Returns the log density at phi and fills grad (resized to dim). A
  // numeric_error or a non-finite value marks the state divergent.
  virtual double logp_grad(const Vector& phi, Vector& grad) const = 0;
};

// BALM posterior adapter.
class PosteriorTarget : public LogDensityTarget {
 public:
  PosteriorTarget(const LayerDataset& data, const ModelSpec& spec);
  int dim() const override { return dim_; }
  double logp_grad(const Vector& phi, Vector& grad) const override;
  const LayerDataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  const LayerDataset& data_;
  const ModelSpec& spec_;
  int dim_;
};

// Zero-mean Gaussian pseudo-target with fixed precision matrix; used by the
// sampler calibration checks.
class GaussianTarget : public LogDensityTarget {
 public:
  explicit GaussianTarget(Matrix precision) : prec_(std::move(precision)) {}
  int dim() const override { return static_cast<int>(prec_.rows()); }
  double logp_grad(const Vector& phi, Vector& grad) const override {
    grad = -(prec_ * phi);
    return 0.5 * phi.dot(grad);
  }

 private:
  Matrix prec_;
};

// Position, momentum, and the cached density/gradient at the position.
struct PhasePoint {
  Vector q;
  Vector p;
  Vector grad;
  double logp = 0.0;
  bool ok = false;  // false once any evaluation went non-finite
};

PhasePoint make_phase_point(const LogDensityTarget& target, Vector q, Vector p);

double kinetic_energy(const Vector& p, const Vector& inv_mass_diag);
inline double hamiltonian(const PhasePoint& z, const Vector& inv_mass_diag) {
  return -z.logp + kinetic_energy(z.p, inv_mass_diag);
}

// One velocity-Verlet step with diagonal metric. ok=false flags a
// non-finite gradient or position.
struct LeapfrogResult {
  Vector phi;
  Vector momentum;
  double energy_error = 0.0;
  bool ok = true;
};
LeapfrogResult leapfrog(const LogDensityTarget& target, const Vector& phi,
                        const Vector& momentum, double step,
                        const Vector& inv_mass_diag);

struct NutsStats {
  double accept_stat = 0.0;
  int depth = 0;
  bool divergent = false;
  double energy = 0.0;  // Hamiltonian at the selected state
};

// One multinomial no-U-turn transition from `current` (fresh momentum drawn
// inside). Returns the selected phase point with its density cached.
PhasePoint nuts_transition(const LogDensityTarget& target,
                           const PhasePoint& current, double step,
                           const Vector& inv_mass_diag, Rng& rng,
                           int max_tree_depth, double divergence_threshold,
                           NutsStats& stats);

// Full pipeline on an arbitrary target: per-chain RNG streams keyed by
// (seed, chain), dual-averaging step-size adaptation, expanding diagonal
// mass windows (75 fast / 25-50-100... slow / 50 fast), then exactly
// sampling_iters stored draws per chain. Deterministic per (seed, chain).
using ChainInit = std::function<Vector(int chain, Rng& rng)>;
PosteriorDraws run_chains(const LogDensityTarget& target,
                          const SamplerConfig& config, const ChainInit& init,
                          const std::string& layout_descriptor);

// Prior sample on the constrained space (used for chain initialization).
ParamsConstrained draw_prior_params(const ModelSpec& spec,
                                    const LayerDataset& data, Rng& rng);

// Fits the BALM posterior: chains start from jittered prior draws.
PosteriorDraws adapt_and_sample(const LayerDataset& data, const ModelSpec& spec,
                                const SamplerConfig& config);

}  // namespace balm

#endif  // BALM_SAMPLER_HPP
