#include "balm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "balm/model.hpp"
#include "balm/transforms.hpp"

namespace balm {

Matrix rank_normalize(const Matrix& draws) {
  const std::ptrdiff_t N = draws.size();
  if (N < 2) throw dim_error("rank_normalize: needs at least 2 values");
  std::vector<std::ptrdiff_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  const double* v = draws.data();
  std::sort(order.begin(), order.end(),
            [v](std::ptrdiff_t a, std::ptrdiff_t b) { return v[a] < v[b]; });
  std::vector<double> rank(N);
  std::ptrdiff_t i = 0;
  while (i < N) {
    std::ptrdiff_t j = i;
    while (j + 1 < N && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;  // average rank, 1-based
    for (std::ptrdiff_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  Matrix out(draws.rows(), draws.cols());
  for (std::ptrdiff_t k = 0; k < N; ++k)
    out.data()[k] = norm_quantile((rank[k] - 0.375) / (N + 0.25));
  return out;
}

namespace {

// Classic split-Rhat on already-transformed half-chains (rows).
RhatResult rhat_of_halves(const Matrix& halves) {
  const int J = static_cast<int>(halves.rows());
  const int h = static_cast<int>(halves.cols());
  Vector means(J), vars(J);
  for (int j = 0; j < J; ++j) {
    means[j] = halves.row(j).mean();
    vars[j] = (halves.row(j).array() - means[j]).square().sum() / (h - 1);
  }
  const double W = vars.mean();
  const double mean_of_means = means.mean();
  const double B =
      h * (means.array() - mean_of_means).square().sum() / (J - 1);
  if (!(W > 0.0))
    return {std::numeric_limits<double>::infinity(), true};
  const double var_plus = (h - 1.0) / h * W + B / h;
  return {std::sqrt(var_plus / W), false};
}

Matrix split_chains(const Matrix& draws) {
  const int C = static_cast<int>(draws.rows());
  const int S = static_cast<int>(draws.cols());
  const int h = S / 2;
  Matrix halves(2 * C, h);
  for (int c = 0; c < C; ++c) {
    halves.row(2 * c) = draws.row(c).head(h);
    halves.row(2 * c + 1) = draws.row(c).tail(h);
  }
  return halves;
}

// Combined-chain ESS (Geyer initial monotone sequence) on the given series.
EssResult ess_of(const Matrix& x) {
  const int C = static_cast<int>(x.rows());
  const int S = static_cast<int>(x.cols());
  if (S < 8) throw dim_error("ess: needs S >= 8");

  Matrix centered(C, S);
  Vector chain_mean(C), chain_var(C);
  for (int c = 0; c < C; ++c) {
    chain_mean[c] = x.row(c).mean();
    centered.row(c) = x.row(c).array() - chain_mean[c];
    chain_var[c] = centered.row(c).squaredNorm() / (S - 1);
  }
  const double mean_var = chain_var.mean();
  double var_plus = mean_var * (S - 1.0) / S;
  if (C > 1) {
    const double mm = chain_mean.mean();
    var_plus += (chain_mean.array() - mm).square().sum() / (C - 1);
  }
  if (!(var_plus > 0.0)) return {0.0, true};

  auto acov_mean = [&](int t) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      const double* cs = centered.data() + static_cast<std::ptrdiff_t>(c);
      // column-major: stride C between consecutive draws of one chain
      double a = 0.0;
      for (int i = 0; i + t < S; ++i)
        a += cs[static_cast<std::ptrdiff_t>(i) * C] *
             cs[static_cast<std::ptrdiff_t>(i + t) * C];
      s += a / S;
    }
    return s / C;
  };

  std::vector<double> rho(S, 0.0);
  double rho_even = 1.0;
  rho[0] = 1.0;
  double rho_odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
  rho[1] = rho_odd;
  int s = 1;
  while (s < S - 4 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - acov_mean(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - acov_mean(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const int max_s = s;
  if (rho_even > 0.0) rho[max_s + 1] = rho_even;
  for (int t = 1; t + 3 <= max_s; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double num_total = static_cast<double>(C) * S;
  double tau = -1.0 + rho[max_s + 1];
  for (int t = 0; t < max_s; ++t) tau += 2.0 * rho[t];
  tau = std::max(tau, 1.0 / std::log10(num_total));
  const double ess = std::min(num_total / tau, 2.0 * num_total);
  return {ess, false};
}

double pooled_quantile(const Matrix& x, double p) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  const double h = p * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

}  // namespace

RhatResult split_rhat(const Matrix& draws) {
  if (draws.cols() < 4) throw dim_error("split_rhat: needs S >= 4");
  const Matrix halves = split_chains(draws);
  return rhat_of_halves(rank_normalize(halves));
}

EssResult ess_bulk(const Matrix& draws) {
  const double first = draws(0, 0);
  if ((draws.array() == first).all()) return {0.0, true};
  return ess_of(rank_normalize(draws));
}

EssResult ess_tail(const Matrix& draws) {
  const double first = draws(0, 0);
  if ((draws.array() == first).all()) return {0.0, true};
  const double q05 = pooled_quantile(draws, 0.05);
  const double q95 = pooled_quantile(draws, 0.95);
  Matrix lo(draws.rows(), draws.cols()), hi(draws.rows(), draws.cols());
  for (std::ptrdiff_t i = 0; i < draws.size(); ++i) {
    lo.data()[i] = draws.data()[i] <= q05 ? 1.0 : 0.0;
    hi.data()[i] = draws.data()[i] <= q95 ? 1.0 : 0.0;
  }
  const EssResult a = ess_of(lo);
  const EssResult b = ess_of(hi);
  if (a.degenerate || b.degenerate) return {0.0, true};
  return {std::min(a.value, b.value), false};
}

bool DiagnosticsReport::converged(double rhat_threshold,
                                  double ess_per_chain) const {
  for (const auto& q : quantities)
    if (!(q.rhat < rhat_threshold) || !(q.ess_bulk > ess_per_chain * chains))
      return false;
  return true;
}

double DiagnosticsReport::worst_rhat() const {
  double w = 0.0;
  for (const auto& q : quantities) w = std::max(w, q.rhat);
  return w;
}

double DiagnosticsReport::min_ess_bulk() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& q : quantities) m = std::min(m, q.ess_bulk);
  return m;
}

namespace {

QuantityDiagnostics diagnose_series(const std::string& name,
                                    const Matrix& series) {
  QuantityDiagnostics q;
  q.name = name;
  const RhatResult r = split_rhat(series);
  const EssResult eb = ess_bulk(series);
  const EssResult et = ess_tail(series);
  // the split estimator can dip below 1 by O(1/S); the report floors it
  q.rhat = std::max(r.value, 1.0);
  q.ess_bulk = eb.value;
  q.ess_tail = et.value;
  q.flagged = r.degenerate || eb.degenerate || et.degenerate;
  return q;
}

void fill_globals(DiagnosticsReport& rep, const PosteriorDraws& draws) {
  rep.chains = static_cast<int>(draws.chains.size());
  rep.draws_per_chain =
      rep.chains > 0 ? static_cast<int>(draws.chains[0].draws.rows()) : 0;
  rep.unreliable = draws.unreliable;
  for (const auto& c : draws.chains) {
    rep.divergence_count += c.divergence_count;
    rep.max_depth_hits += c.max_depth_hits;
  }
}

Matrix coordinate_series(const PosteriorDraws& draws, int j) {
  const int C = static_cast<int>(draws.chains.size());
  const int S = static_cast<int>(draws.chains[0].draws.rows());
  Matrix series(C, S);
  for (int c = 0; c < C; ++c)
    series.row(c) = draws.chains[c].draws.col(j).transpose();
  return series;
}

}  // namespace

DiagnosticsReport diagnose_raw(const PosteriorDraws& draws,
                               const std::vector<std::string>& names) {
  DiagnosticsReport rep;
  fill_globals(rep, draws);
  for (int j = 0; j < draws.dim; ++j) {
    const std::string name =
        j < static_cast<int>(names.size()) ? names[j]
                                           : "phi[" + std::to_string(j) + "]";
    rep.quantities.push_back(diagnose_series(name, coordinate_series(draws, j)));
  }
  return rep;
}

DiagnosticsReport diagnose_model_run(
    const PosteriorDraws& draws, const LayerDataset& data,
    const ModelSpec& spec, const std::vector<std::pair<int, int>>& edges) {
  DiagnosticsReport rep;
  fill_globals(rep, draws);
  const PhiLayout ly = PhiLayout::make(spec, data);
  if (ly.dim != draws.dim)
    throw dim_error("diagnose_model_run: layout/draws dimension mismatch");
  const int C = rep.chains;
  const int S = rep.draws_per_chain;

  for (int j = 0; j < draws.dim; ++j)
    rep.quantities.push_back(
        diagnose_series("phi[" + std::to_string(j) + "]",
                        coordinate_series(draws, j)));

  auto push_transformed = [&](const std::string& name, int offset,
                              bool expo) {
    Matrix series = coordinate_series(draws, offset);
    if (expo) series = series.array().exp().matrix();
    rep.quantities.push_back(diagnose_series(name, series));
  };
  push_transformed("tau", ly.log_tau_offset, true);
  push_transformed("sigma2", ly.log_sigma2_offset, true);
  push_transformed("a0", ly.a0_offset, false);
  if (ly.coupled) push_transformed("a1", ly.a1_offset, false);

  // per-template Frobenius norms and opt-in per-edge means
  const int M = spec.M;
  std::vector<Matrix> norm_series(M, Matrix(C, S));
  std::vector<Matrix> edge_series(edges.size(), Matrix(C, S));
  for (int c = 0; c < C; ++c) {
    const Matrix& block = draws.chains[c].draws;
    #pragma omp parallel for schedule(static)
    for (int s = 0; s < S; ++s) {
      const UnpackResult u = unpack(block.row(s).transpose(), spec, data);
      const TemplateSet ts = build_templates(u.params, spec);
      for (int m = 0; m < M; ++m)
        norm_series[m](c, s) = std::sqrt(2.0) * ts.Q.row(m).norm();
      for (std::size_t k = 0; k < edges.size(); ++k) {
        const auto [l, e] = edges[k];
        edge_series[k](c, s) = u.params.W.row(l).dot(ts.Q.col(e));
      }
    }
  }
  for (int m = 0; m < M; ++m)
    rep.quantities.push_back(diagnose_series(
        "template_norm[" + std::to_string(m) + "]", norm_series[m]));
  for (std::size_t k = 0; k < edges.size(); ++k)
    rep.quantities.push_back(diagnose_series(
        "mu[" + std::to_string(edges[k].first) + "," +
            std::to_string(edges[k].second) + "]",
        edge_series[k]));
  return rep;
}

}  // namespace balm
