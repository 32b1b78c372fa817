#include "balm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "balm/model.hpp"
#include "balm/transforms.hpp"
#include "kernels.hpp"

namespace balm {

WaicResult waic(const Matrix& pointwise) {
  const int S = static_cast<int>(pointwise.rows());
  const int N = static_cast<int>(pointwise.cols());
  if (S < 2) throw dim_error("waic: needs at least 2 draws");
  if (!pointwise.allFinite()) throw data_error("waic: non-finite entries");
  WaicResult r;
  for (int i = 0; i < N; ++i) {
    const auto col = pointwise.col(i);
    const double m = col.maxCoeff();
    r.lppd += m + std::log((col.array() - m).exp().mean());
    const double mean = col.mean();
    r.p_waic += (col.array() - mean).square().sum() / (S - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

WaicResult waic_streaming(const LayerDataset& data, const PosteriorDraws& draws,
                          const ModelSpec& spec) {
  const int S = draws.total_draws();
  if (S < 2) throw dim_error("waic_streaming: needs at least 2 draws");
  const int P = data.P();
  const int N = data.unmasked_count();
  // running max-shifted log-sum-exp and Welford variance per entry
  Vector shift = Vector::Constant(N, kNegInf);
  Vector sumexp = Vector::Zero(N);
  Vector mean = Vector::Zero(N), m2 = Vector::Zero(N);
  Vector row(N);
  for (int s = 0; s < S; ++s) {
    const UnpackResult u = unpack(draws.draw(s).transpose(), spec, data);
    const TemplateSet ts = build_templates(u.params, spec);
    const LayerMatrix mu = layer_means(u.params.W, ts);
    const auto cont = detail::ContChannel::make(spec, u.params.sigma2);
    int col = 0;
    for (int l = 0; l < data.L; ++l)
      for (int e = 0; e < P; ++e) {
        if (data.masked(l, e)) continue;
        const double eta = u.params.a0 + u.params.a1 * mu(l, e);
        row[col++] = data.Z(l, e)
                         ? log_sigmoid(eta) + cont.logpdf(data.Y(l, e), mu(l, e))
                         : log_sigmoid(-eta);
      }
    for (int i = 0; i < N; ++i) {
      const double v = row[i];
      if (!std::isfinite(v)) throw data_error("waic_streaming: non-finite");
      if (v > shift[i]) {
        sumexp[i] = sumexp[i] * std::exp(shift[i] - v) + 1.0;
        shift[i] = v;
      } else {
        sumexp[i] += std::exp(v - shift[i]);
      }
      const double d = v - mean[i];
      mean[i] += d / (s + 1);
      m2[i] += d * (v - mean[i]);
    }
  }
  WaicResult r;
  for (int i = 0; i < N; ++i) {
    r.lppd += shift[i] + std::log(sumexp[i] / S);
    r.p_waic += m2[i] / (S - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

MaskSplit mask_edges(const LayerDataset& data, double fraction,
                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw config_error("mask_edges: fraction must lie in (0,1)");
  const int P = data.P();
  const std::int64_t total = static_cast<std::int64_t>(data.L) * P;
  const std::int64_t want =
      static_cast<std::int64_t>(fraction * static_cast<double>(total));
  std::vector<std::int64_t> pool;
  pool.reserve(total);
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const int l = static_cast<int>(idx / P);
    const int e = static_cast<int>(idx % P);
    if (!data.masked(l, e)) pool.push_back(idx);
  }
  if (want > static_cast<std::int64_t>(pool.size()))
    throw data_error("mask_edges: not enough unmasked entries");
  Rng rng = make_rng(seed, 0x6d61736bULL);
  for (std::int64_t i = 0; i < want; ++i) {
    const std::int64_t j =
        i + static_cast<std::int64_t>(bounded_uint(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  MaskSplit out;
  out.heldout.reserve(want);
  for (std::int64_t i = 0; i < want; ++i)
    out.heldout.emplace_back(static_cast<int>(pool[i] / P),
                             static_cast<int>(pool[i] % P));
  std::sort(out.heldout.begin(), out.heldout.end());
  out.train = data;
  std::vector<std::pair<int, int>> all = data.mask_list;
  all.insert(all.end(), out.heldout.begin(), out.heldout.end());
  out.train.set_mask(std::move(all));
  return out;
}

Vector predict_edge_probs(const PosteriorDraws& draws, const LayerDataset& data,
                          const std::vector<std::pair<int, int>>& heldout,
                          const ModelSpec& spec) {
  const int S = draws.total_draws();
  if (S < 1) throw dim_error("predict_edge_probs: no draws");
  const int H = static_cast<int>(heldout.size());
  for (const auto& [l, e] : heldout)
    if (l < 0 || l >= data.L || e < 0 || e >= data.P())
      throw dim_error("predict_edge_probs: held-out index out of range");
  Vector acc = Vector::Zero(H);
  for (int s = 0; s < S; ++s) {
    const UnpackResult u = unpack(draws.draw(s).transpose(), spec, data);
    const TemplateSet ts = build_templates(u.params, spec);
    #pragma omp parallel for schedule(static)
    for (int h = 0; h < H; ++h) {
      const auto [l, e] = heldout[h];
      const double mu = u.params.W.row(l).dot(ts.Q.col(e));
      acc[h] += sigmoid(u.params.a0 + u.params.a1 * mu);
    }
  }
  return acc / S;
}

double auc(const Vector& scores, const std::vector<std::uint8_t>& labels) {
  const int N = static_cast<int>(scores.size());
  if (static_cast<int>(labels.size()) != N)
    throw dim_error("auc: scores/labels length mismatch");
  std::int64_t n1 = 0;
  for (auto z : labels) n1 += z ? 1 : 0;
  const std::int64_t n0 = N - n1;
  if (n1 == 0 || n0 == 0) throw data_error("auc: labels contain one class only");
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < N) {
    int j = i;
    while (j + 1 < N && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k)
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u_stat =
      rank_sum_pos - 0.5 * static_cast<double>(n1) * (n1 + 1);
  return u_stat / (static_cast<double>(n1) * static_cast<double>(n0));
}

namespace {

// Shortest-augmenting-path assignment with potentials; minimizes total cost.
std::vector<int> assignment_core(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

double assignment_value(const Matrix& cost, const std::vector<int>& perm) {
  double s = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) s += cost(i, perm[i]);
  return s;
}

}  // namespace

std::vector<int> solve_assignment_min(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw dim_error("solve_assignment_min: square matrix");
  if (n == 0) return {};
  const double best = assignment_value(cost, assignment_core(cost));
  const double tol = 1e-9 * (1.0 + std::abs(best));
  // Fix rows in order to the smallest column that preserves optimality;
  // yields the lexicographically smallest optimal permutation.
  std::vector<int> perm(n, -1);
  std::vector<char> used(n, 0);
  double fixed_cost = 0.0;
  std::vector<int> free_rows(n), free_cols;
  std::iota(free_rows.begin(), free_rows.end(), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      // optimum of the subproblem with rows > i and columns != chosen
      std::vector<int> rows(free_rows.begin() + i + 1, free_rows.end());
      std::vector<int> cols;
      for (int c = 0; c < n; ++c)
        if (!used[c] && c != j) cols.push_back(c);
      double sub = 0.0;
      if (!rows.empty()) {
        Matrix reduced(rows.size(), cols.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t c = 0; c < cols.size(); ++c)
            reduced(r, c) = cost(rows[r], cols[c]);
        sub = assignment_value(reduced, assignment_core(reduced));
      }
      if (fixed_cost + cost(i, j) + sub <= best + tol) {
        perm[i] = j;
        used[j] = 1;
        fixed_cost += cost(i, j);
        break;
      }
    }
    if (perm[i] < 0) throw numeric_error("solve_assignment_min: refinement failed");
  }
  return perm;
}

namespace {

// Pearson correlation; zero-variance inputs are defined as 0 with a flag.
double pearson(const Eigen::Ref<const Eigen::RowVectorXd>& a,
               const Eigen::Ref<const Eigen::RowVectorXd>& b,
               bool& degenerate) {
  const double ma = a.mean(), mb = b.mean();
  const Eigen::RowVectorXd ca = a.array() - ma;
  const Eigen::RowVectorXd cb = b.array() - mb;
  const double va = ca.squaredNorm(), vb = cb.squaredNorm();
  if (!(va > 0.0) || !(vb > 0.0)) {
    degenerate = true;
    return 0.0;
  }
  return ca.dot(cb) / std::sqrt(va * vb);
}

}  // namespace

AlignmentResult align_templates(const TemplateSet& a, const TemplateSet& b) {
  const int M = a.M();
  if (b.M() != M || b.P() != a.P())
    throw dim_error("align_templates: template sets must share M and P");
  AlignmentResult res;
  res.correlations.resize(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      res.correlations(i, j) =
          pearson(a.Q.row(i), b.Q.row(j), res.degenerate);
  res.perm = solve_assignment_min(-res.correlations);
  double s = 0.0;
  for (int m = 0; m < M; ++m) s += res.correlations(m, res.perm[m]);
  res.mean_aligned_corr = s / M;
  return res;
}

double stability_score(const std::vector<TemplateSet>& runs) {
  const int R = static_cast<int>(runs.size());
  if (R < 2) throw dim_error("stability_score: needs at least 2 runs");
  double s = 0.0;
  int pairs = 0;
  for (int r = 0; r < R; ++r)
    for (int q = r + 1; q < R; ++q) {
      s += align_templates(runs[r], runs[q]).mean_aligned_corr;
      ++pairs;
    }
  return s / pairs;
}

double quotient_distance(const QuotientPoint& a, const QuotientPoint& b) {
  const int M = a.Q.M();
  if (b.Q.M() != M || b.Q.P() != a.Q.P())
    throw dim_error("quotient_distance: shape mismatch");
  Matrix cost(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      // matrix Frobenius: both triangles of the symmetric template count
      cost(i, j) = 2.0 * (a.Q.Q.row(i) - b.Q.Q.row(j)).squaredNorm();
  const std::vector<int> perm = solve_assignment_min(cost);
  const double frob2 = assignment_value(cost, perm);
  return std::sqrt(frob2) + std::abs(a.a0 - b.a0) + std::abs(a.a1 - b.a1) +
         std::abs(a.sigma2 - b.sigma2);
}

PosteriorSummary posterior_mean_summary(const PosteriorDraws& draws,
                                        const LayerDataset& data,
                                        const ModelSpec& spec) {
  const int S = draws.total_draws();
  if (S < 1) throw dim_error("posterior_mean_summary: no draws");
  PosteriorSummary sum;
  TemplateSet ref;
  for (int s = 0; s < S; ++s) {
    const UnpackResult u = unpack(draws.draw(s).transpose(), spec, data);
    TemplateSet ts = build_templates(u.params, spec);
    const LayerMatrix mu = layer_means(u.params.W, ts);
    if (s == 0) {
      ref = ts;
      sum.templates.n = ts.n;
      sum.templates.Q = LayerMatrix::Zero(ts.M(), ts.P());
      sum.W = Matrix::Zero(u.params.W.rows(), u.params.W.cols());
      sum.mu = LayerMatrix::Zero(mu.rows(), mu.cols());
    }
    const AlignmentResult al = align_templates(ref, ts);
    for (int m = 0; m < spec.M; ++m) {
      sum.templates.Q.row(m) += ts.Q.row(al.perm[m]);
      sum.W.col(m) += u.params.W.col(al.perm[m]);
    }
    sum.mu += mu;
    sum.a0 += u.params.a0;
    sum.a1 += u.params.a1;
    sum.sigma2 += u.params.sigma2;
    sum.sigma += std::sqrt(u.params.sigma2);
  }
  sum.templates.Q /= S;
  sum.W /= S;
  sum.mu /= S;
  sum.a0 /= S;
  sum.a1 /= S;
  sum.sigma2 /= S;
  sum.sigma /= S;
  return sum;
}

}  // namespace balm
