#ifndef BALM_TYPES_HPP
#define BALM_TYPES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "balm/util.hpp"

namespace balm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Layer-by-edge matrices are row-major so each layer's row is contiguous.
using LayerMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ByteMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                  Eigen::RowMajor>;

// --- edge ordering -----------------------------------------------------------
// All length-P vectors use row-major upper-triangular order over node pairs
// (0,1),(0,2),...,(n-2,n-1). This is the single vech convention of the
// project; file formats declare it in their manifests.

inline int edge_count(int n) { return n * (n - 1) / 2; }

inline int edge_index(int i, int j, int n) {
  // requires 0 <= i < j < n
  return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

inline std::pair<int, int> edge_nodes(int e, int n) {
  int i = 0;
  int row_len = n - 1;
  while (e >= row_len) {
    e -= row_len;
    --row_len;
    ++i;
  }
  return {i, i + 1 + e};
}

// --- datasets ----------------------------------------------------------------

// L replicated undirected networks on n shared nodes, hurdle-encoded:
// Z(l,e) in {0,1} marks edge presence, Y(l,e) is the logit-scale weight and
// is meaningful only where Z = 1. Optional mask excludes (layer, edge)
// entries from every likelihood sum (held-out data).
struct LayerDataset {
  int n = 0;
  int L = 0;
  ByteMatrix Z;     // L x P
  LayerMatrix Y;    // L x P
  ByteMatrix mask;  // L x P, 1 = excluded; empty means no mask
  std::vector<std::pair<int, int>> mask_list;  // sorted (layer, edge) pairs
  std::optional<Matrix> covariates;            // L x p

  int P() const { return edge_count(n); }
  bool has_mask() const { return !mask_list.empty(); }
  bool masked(int l, int e) const {
    return mask.size() != 0 && mask(l, e) != 0;
  }
  int unmasked_count() const {
    return L * P() - static_cast<int>(mask_list.size());
  }

  // Installs the mask bitmap from a pair list; validates ranges/duplicates.
  void set_mask(std::vector<std::pair<int, int>> pairs);

  // Enforces the structural invariants: shapes, finite Y at unmasked present
  // edges, mask indices in range and duplicate-free. Throws data_error.
  void validate() const;
};

enum class Likelihood { Gaussian, StudentT };
enum class Coupling { Coupled, Decoupled };

struct CovariatePrior {
  double sigma_beta = 1.0;
  double sigma_eps = 1.0;
};

// Model shape plus every fixed prior hyperparameter.
struct ModelSpec {
  int M = 1;
  int K = 1;
  Likelihood likelihood = Likelihood::Gaussian;
  double nu = 5.0;  // Student-t dof, fixed (not inferred)
  Coupling coupling = Coupling::Coupled;
  double alpha = 1.0;
  // 0 = auto: n/sqrt(K), which puts the prior scale of off-diagonal template
  // entries at tau (logit-scale weights are O(1) in normalized data)
  double sigma_gamma = 0.0;
  double sigma_tau = 1.0;
  double sigma_a0 = 5.0;
  double sigma_a1 = 5.0;
  double a_sigma = 2.0;
  double b_sigma = 1.0;
  std::optional<CovariatePrior> covariate_prior;

  bool covariate_mode() const { return covariate_prior.has_value(); }
  bool coupled() const { return coupling == Coupling::Coupled; }
  double resolved_sigma_gamma(int n) const {
    return sigma_gamma > 0.0 ? sigma_gamma
                             : static_cast<double>(n) / std::sqrt(double(K));
  }
  void validate(int n = -1) const;  // throws config_error
};

// Constrained-space parameter collection.
struct ParamsConstrained {
  Matrix W;                     // L x M, rows on the simplex
  std::vector<Matrix> X;        // M matrices, n x K (Stiefel pre-images)
  Matrix gamma;                 // M x K
  double tau = 1.0;
  double a0 = 0.0;
  double a1 = 0.0;
  double sigma2 = 1.0;
  std::optional<Matrix> beta;   // (M-1) x p, covariate mode
  std::optional<Matrix> eps;    // L x (M-1), covariate mode

  void validate(const ModelSpec& spec) const;  // throws data_error
};

// Off-diagonal templates q_m = vech(offdiag(S_m)), one row per template.
struct TemplateSet {
  int n = 0;
  LayerMatrix Q;  // M x P

  int M() const { return static_cast<int>(Q.rows()); }
  int P() const { return static_cast<int>(Q.cols()); }
};

// --- sampler state -----------------------------------------------------------

struct SamplerConfig {
  int chains = 4;
  int warmup_iters = 1000;
  int sampling_iters = 1000;
  double target_accept = 0.80;
  int max_tree_depth = 10;
  double divergence_energy_threshold = 1000.0;
  std::uint64_t seed = 0;
  double init_jitter_scale = 0.1;

  void validate() const;  // throws config_error
};

struct ChainDraws {
  Matrix draws;                        // S x dim
  Vector energy;                       // S
  std::vector<std::uint8_t> divergent; // S
  std::vector<int> depth;              // S
  double step_size = 0.0;              // fixed post-warm-up value
  Vector inv_mass_diag;                // fixed post-warm-up metric
  double mean_accept = 0.0;
  int divergence_count = 0;
  int max_depth_hits = 0;
};

// Post-warm-up draws, one block per chain, plus the flat-coordinate layout
// descriptor needed to interpret columns.
struct PosteriorDraws {
  std::vector<ChainDraws> chains;
  int dim = 0;
  std::string layout_descriptor;
  bool unreliable = false;       // >10% post-warm-up divergences
  double divergence_rate = 0.0;

  int total_draws() const {
    int s = 0;
    for (const auto& c : chains) s += static_cast<int>(c.draws.rows());
    return s;
  }
  // Flat view: draw s of the pool, chain-major then iteration order.
  Eigen::Ref<const Eigen::RowVectorXd> draw(int s) const;
};

}  // namespace balm

#endif  // BALM_TYPES_HPP
