#ifndef BALM_DIAGNOSTICS_HPP
#define BALM_DIAGNOSTICS_HPP

#include <string>
#include <vector>

#include "balm/types.hpp"

namespace balm {

// Pooled fractional ranks (rank - 3/8)/(N + 1/4), ties averaged, mapped
// through the standard normal quantile. Input rows are chains.
Matrix rank_normalize(const Matrix& draws);

struct RhatResult {
  double value = 1.0;
  bool degenerate = false;  // zero within-chain variance -> value = +inf
};
// Rank-normalized split potential scale reduction; draws is chains x S,
// S >= 4. Each chain is halved (middle element dropped when S is odd).
RhatResult split_rhat(const Matrix& draws);

struct EssResult {
  double value = 0.0;
  bool degenerate = false;  // constant input -> 0
};
// Effective sample size via Geyer's initial monotone sequence on the
// combined-chain autocorrelations of rank-normalized draws.
EssResult ess_bulk(const Matrix& draws);
// Minimum ESS of the 5% / 95% pooled-quantile exceedance indicators.
EssResult ess_tail(const Matrix& draws);

struct QuantityDiagnostics {
  std::string name;
  double rhat = 1.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  bool flagged = false;
};

struct DiagnosticsReport {
  std::vector<QuantityDiagnostics> quantities;
  int chains = 0;
  int draws_per_chain = 0;
  int divergence_count = 0;
  int max_depth_hits = 0;
  bool unreliable = false;
  // cited-practice pass thresholds: all rhat < 1.01, ess_bulk > 100 * chains
  bool converged(double rhat_threshold = 1.01,
                 double ess_per_chain = 100.0) const;
  double worst_rhat() const;
  double min_ess_bulk() const;
};

// Diagnostics over the raw flat coordinates (pseudo-target runs).
DiagnosticsReport diagnose_raw(const PosteriorDraws& draws,
                               const std::vector<std::string>& names = {});

// Default quantity set for model runs: every flat coordinate, the derived
// scalars (tau, sigma2, a0, a1), and per-template Frobenius norms. Extra
// per-edge mean diagnostics are opt-in via `edges`.
DiagnosticsReport diagnose_model_run(
    const PosteriorDraws& draws, const LayerDataset& data,
    const ModelSpec& spec,
    const std::vector<std::pair<int, int>>& edges = {});

}  // namespace balm

#endif  // BALM_DIAGNOSTICS_HPP
