#include "balm/types.hpp"

#include <algorithm>
#include <cmath>

namespace balm {

void LayerDataset::set_mask(std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  mask = ByteMatrix::Zero(L, P());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [l, e] = pairs[i];
    if (l < 0 || l >= L || e < 0 || e >= P())
      throw data_error("mask entry out of range: layer " + std::to_string(l) +
                       ", edge " + std::to_string(e));
    if (i > 0 && pairs[i] == pairs[i - 1])
      throw data_error("duplicate mask entry: layer " + std::to_string(l) +
                       ", edge " + std::to_string(e));
    mask(l, e) = 1;
  }
  mask_list = std::move(pairs);
}

void LayerDataset::validate() const {
  if (n < 2) throw data_error("dataset requires n >= 2");
  if (L < 1) throw data_error("dataset requires L >= 1");
  const int p = P();
  if (Z.rows() != L || Z.cols() != p)
    throw data_error("Z must be L x n(n-1)/2");
  if (Y.rows() != L || Y.cols() != p)
    throw data_error("Y must be L x n(n-1)/2");
  if (mask.size() != 0 && (mask.rows() != L || mask.cols() != p))
    throw data_error("mask bitmap shape mismatch");
  for (const auto& [l, e] : mask_list)
    if (l < 0 || l >= L || e < 0 || e >= p)
      throw data_error("mask entry out of range");
  for (int l = 0; l < L; ++l)
    for (int e = 0; e < p; ++e) {
      if (Z(l, e) > 1) throw data_error("Z entries must be 0 or 1");
      if (Z(l, e) == 1 && !masked(l, e) && !std::isfinite(Y(l, e)))
        throw data_error("non-finite weight at unmasked present edge (layer " +
                         std::to_string(l) + ", edge " + std::to_string(e) +
                         ")");
    }
  if (covariates && covariates->rows() != L)
    throw data_error("covariates must have one row per layer");
}

void ModelSpec::validate(int n) const {
  if (M < 1) throw config_error("M must be >= 1");
  if (K < 1) throw config_error("K must be >= 1");
  if (n > 0 && K > n) throw config_error("K must be <= n");
  if (likelihood == Likelihood::StudentT && !(nu > 2.0))
    throw config_error("nu must be > 2 for the Student-t likelihood");
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0)) throw config_error(std::string(name) + " must be > 0");
  };
  pos(alpha, "alpha");
  if (sigma_gamma < 0.0) throw config_error("sigma_gamma must be >= 0");
  pos(sigma_tau, "sigma_tau");
  pos(sigma_a0, "sigma_a0");
  pos(sigma_a1, "sigma_a1");
  pos(a_sigma, "a_sigma");
  pos(b_sigma, "b_sigma");
  if (covariate_prior) {
    pos(covariate_prior->sigma_beta, "sigma_beta");
    pos(covariate_prior->sigma_eps, "sigma_eps");
  }
}

void ParamsConstrained::validate(const ModelSpec& spec) const {
  const int M = spec.M;
  if (W.cols() != M) throw data_error("W must have M columns");
  for (int l = 0; l < W.rows(); ++l) {
    if ((W.row(l).array() < 0.0).any())
      throw data_error("W entries must be non-negative");
    if (std::abs(W.row(l).sum() - 1.0) > 1e-12)
      throw data_error("W rows must sum to 1");
  }
  if (static_cast<int>(X.size()) != M)
    throw data_error("X must hold M matrices");
  for (const auto& x : X)
    if (x.rows() != X[0].rows() || x.cols() != spec.K)
      throw data_error("X matrices must share shape n x K");
  if (gamma.rows() != M || gamma.cols() != spec.K)
    throw data_error("gamma must be M x K");
  if (!(tau > 0.0)) throw data_error("tau must be > 0");
  if (!(sigma2 > 0.0)) throw data_error("sigma2 must be > 0");
  if (!spec.coupled() && a1 != 0.0)
    throw data_error("decoupled mode pins a1 = 0");
  if (spec.covariate_mode() && (!beta || !eps))
    throw data_error("covariate mode requires beta and eps");
}

void SamplerConfig::validate() const {
  if (chains < 1) throw config_error("chains must be >= 1");
  if (warmup_iters < 150) throw config_error("warmup_iters must be >= 150");
  if (sampling_iters < 1) throw config_error("sampling_iters must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw config_error("target_accept must lie in (0,1)");
  if (max_tree_depth < 1) throw config_error("max_tree_depth must be >= 1");
  if (!(divergence_energy_threshold > 0.0))
    throw config_error("divergence_energy_threshold must be > 0");
  if (!(init_jitter_scale >= 0.0))
    throw config_error("init_jitter_scale must be >= 0");
}

Eigen::Ref<const Eigen::RowVectorXd> PosteriorDraws::draw(int s) const {
  for (const auto& c : chains) {
    const int rows = static_cast<int>(c.draws.rows());
    if (s < rows) return c.draws.row(s);
    s -= rows;
  }
  throw dim_error("draw index out of range");
}

}  // namespace balm
