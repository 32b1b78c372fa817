#ifndef BALM_SELECTION_HPP
#define BALM_SELECTION_HPP

#include <utility>
#include <vector>

#include "balm/types.hpp"

namespace balm {

struct WaicResult {
  double lppd = 0.0;
  double p_waic = 0.0;
  double waic = 0.0;
};

// Edge-wise WAIC from a pointwise log-likelihood matrix (draws x entries).
// lppd_i is a max-shifted log-mean-exp, p_waic_i the S-1 sample variance.
WaicResult waic(const Matrix& pointwise);

// Streaming equivalent that never materializes the S x N matrix; matches
// waic(pointwise_loglik(...)) on the same inputs.
WaicResult waic_streaming(const LayerDataset& data, const PosteriorDraws& draws,
                          const ModelSpec& spec);

struct MaskSplit {
  LayerDataset train;                          // input data with mask set
  std::vector<std::pair<int, int>> heldout;    // sorted (layer, edge) pairs
};
// Uniformly samples floor(fraction * L * P) distinct unmasked pairs without
// replacement; deterministic given seed.
MaskSplit mask_edges(const LayerDataset& data, double fraction,
                     std::uint64_t seed);

// Posterior mean presence probability for each held-out pair, averaging
// logit^{-1}(a0 + a1 mu) over all pooled draws.
Vector predict_edge_probs(const PosteriorDraws& draws, const LayerDataset& data,
                          const std::vector<std::pair<int, int>>& heldout,
                          const ModelSpec& spec);

// Mann-Whitney AUC with tie correction; labels need both classes.
double auc(const Vector& scores, const std::vector<std::uint8_t>& labels);

// Exact minimum-cost assignment (O(n^3) shortest augmenting paths) with a
// deterministic lexicographically-smallest tie-break among optima.
std::vector<int> solve_assignment_min(const Matrix& cost);

struct AlignmentResult {
  std::vector<int> perm;        // template m of A pairs with perm[m] of B
  Matrix correlations;          // M x M Pearson correlations of vech vectors
  double mean_aligned_corr = 0.0;
  bool degenerate = false;      // some template had zero variance
};
// Hungarian alignment maximizing the summed Pearson correlation.
AlignmentResult align_templates(const TemplateSet& a, const TemplateSet& b);

// Mean over run pairs of the mean aligned per-template correlation.
double stability_score(const std::vector<TemplateSet>& runs);

struct QuotientPoint {
  TemplateSet Q;
  double a0 = 0.0;
  double a1 = 0.0;
  double sigma2 = 1.0;
};
// Permutation-minimized template distance (matrix Frobenius) plus scalar
// parameter gaps.
double quotient_distance(const QuotientPoint& a, const QuotientPoint& b);

// Label-aligned posterior means: every draw's templates are matched to the
// first pooled draw before averaging, so template labels stay coherent.
struct PosteriorSummary {
  TemplateSet templates;
  Matrix W;          // L x M
  LayerMatrix mu;    // L x P
  double a0 = 0.0;
  double a1 = 0.0;
  double sigma2 = 0.0;
  double sigma = 0.0;  // mean of sqrt(sigma2) over draws
};
PosteriorSummary posterior_mean_summary(const PosteriorDraws& draws,
                                        const LayerDataset& data,
                                        const ModelSpec& spec);

}  // namespace balm

#endif  // BALM_SELECTION_HPP
