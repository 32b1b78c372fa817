#include "balm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "balm/sampler.hpp"
#include "balm/selection.hpp"
#include "balm/transforms.hpp"

namespace balm {

void SimConfig::validate() const {
  if (n < 2) throw config_error("n must be >= 2");
  if (L < 1) throw config_error("L must be >= 1");
  if (M < 1) throw config_error("M must be >= 1");
  if (K < 1 || K > n) throw config_error("K must lie in [1, n]");
  if (!(alpha > 0.0)) throw config_error("alpha must be > 0");
  if (!(tau_star > 0.0)) throw config_error("tau_star must be > 0");
  if (gamma_scale < 0.0) throw config_error("gamma_scale must be >= 0");
  if (!(sigma_star >= 0.0)) throw config_error("sigma_star must be >= 0");
  if (target_density && !(*target_density > 0.0 && *target_density < 1.0))
    throw config_error("target_density must lie in (0,1)");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0))
    throw config_error("mask_fraction must lie in [0,1)");
  if (likelihood == Likelihood::StudentT && !(nu > 2.0))
    throw config_error("nu must be > 2");
}

namespace {

TemplateSet draw_templates(const SimConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int P = edge_count(cfg.n);
  TemplateSet ts;
  ts.n = cfg.n;
  ts.Q.resize(cfg.M, P);
  for (int m = 0; m < cfg.M; ++m) {
    Matrix X(cfg.n, cfg.K);
    for (int i = 0; i < X.size(); ++i) X.data()[i] = normal(rng);
    const Matrix U = stiefel_qr(X);
    Vector gam(cfg.K);
    const double gs = cfg.effective_gamma_scale();
    for (int k = 0; k < cfg.K; ++k) gam[k] = gs * normal(rng);
    const Matrix S = cfg.tau_star * U * gam.asDiagonal() * U.transpose();
    int e = 0;
    for (int i = 0; i < cfg.n; ++i)
      for (int j = i + 1; j < cfg.n; ++j) ts.Q(m, e++) = S(i, j);
  }
  return ts;
}

Matrix draw_weights(int L, int M, double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha / M, 1.0);
  Matrix W(L, M);
  for (int l = 0; l < L; ++l) {
    double sum = 0.0;
    for (int m = 0; m < M; ++m) {
      W(l, m) = std::max(g(rng), 1e-300);
      sum += W(l, m);
    }
    W.row(l) /= sum;
  }
  return W;
}

}  // namespace

std::pair<LayerDataset, GroundTruth> generate(const SimConfig& config) {
  config.validate();
  SimConfig cfg = config;
  Rng rng = make_rng(cfg.seed, 0x67656eULL);

  const TemplateSet ts = draw_templates(cfg, rng);
  if (cfg.target_density)
    cfg.a0_star = calibrate_intercept(ts, cfg.alpha, cfg.a1_star,
                                      *cfg.target_density,
                                      mix_seed(cfg.seed, 0x63616cULL));
  const Matrix W = draw_weights(cfg.L, cfg.M, cfg.alpha, rng);
  const LayerMatrix mu = W * ts.Q;
  const int P = edge_count(cfg.n);

  LayerDataset data;
  data.n = cfg.n;
  data.L = cfg.L;
  data.Z = ByteMatrix::Zero(cfg.L, P);
  data.Y = LayerMatrix::Zero(cfg.L, P);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::student_t_distribution<double> tdist(cfg.nu);
  for (int l = 0; l < cfg.L; ++l)
    for (int e = 0; e < P; ++e) {
      const double pi = sigmoid(cfg.a0_star + cfg.a1_star * mu(l, e));
      if (uniform01(rng) < pi) {
        data.Z(l, e) = 1;
        const double noise = cfg.likelihood == Likelihood::Gaussian
                                 ? normal(rng)
                                 : tdist(rng);
        data.Y(l, e) = mu(l, e) + cfg.sigma_star * noise;
      }
    }

  GroundTruth truth;
  truth.templates = ts;
  truth.W = W;
  truth.a0 = cfg.a0_star;
  truth.a1 = cfg.a1_star;
  truth.sigma = cfg.sigma_star;
  truth.mu = mu;
  if (cfg.mask_fraction > 0.0) {
    MaskSplit split =
        mask_edges(data, cfg.mask_fraction, mix_seed(cfg.seed, 0x6d736bULL));
    truth.mask = split.heldout;
    data = std::move(split.train);
  }
  data.validate();
  return {std::move(data), std::move(truth)};
}

double calibrate_intercept(const TemplateSet& templates, double alpha,
                           double a1_star, double target_density,
                           std::uint64_t seed) {
  if (!(target_density > 0.0 && target_density < 1.0))
    throw config_error("calibrate_intercept: target_density in (0,1)");
  const int draws = 256;
  Rng rng = make_rng(seed, 0x646e73ULL);
  const Matrix W = draw_weights(draws, templates.M(), alpha, rng);
  const LayerMatrix mu = W * templates.Q;  // fixed Monte Carlo sample
  auto density_at = [&](double a0) {
    double s = 0.0;
    const double* m = mu.data();
    for (std::ptrdiff_t i = 0; i < mu.size(); ++i)
      s += sigmoid(a0 + a1_star * m[i]);
    return s / static_cast<double>(mu.size());
  };
  double lo = -30.0, hi = 30.0;
  double flo = density_at(lo), fhi = density_at(hi);
  if (!(flo <= target_density && target_density <= fhi))
    throw numeric_error("calibrate_intercept: target unreachable in [-30,30]");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = density_at(mid);
    if (std::abs(f - target_density) <= 1e-3) return mid;
    if (f < target_density)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-13) break;
  }
  const double mid = 0.5 * (lo + hi);
  if (std::abs(density_at(mid) - target_density) > 1e-3)
    throw numeric_error("calibrate_intercept: bisection failed to converge");
  return mid;
}

double metric_template_correlation(const TemplateSet& estimated,
                                   const TemplateSet& truth) {
  return align_templates(truth, estimated).mean_aligned_corr;
}

double metric_weight_mse(const LayerMatrix& predicted_mu,
                         const LayerDataset& full_data,
                         const std::vector<std::pair<int, int>>& heldout) {
  double s = 0.0;
  int count = 0;
  for (const auto& [l, e] : heldout) {
    if (l < 0 || l >= full_data.L || e < 0 || e >= full_data.P())
      throw dim_error("metric_weight_mse: held-out index out of range");
    if (!full_data.Z(l, e)) continue;
    const double d = predicted_mu(l, e) - full_data.Y(l, e);
    s += d * d;
    ++count;
  }
  if (count == 0)
    throw data_error("metric_weight_mse: no held-out present edges");
  return s / count;
}

double metric_rel_frobenius(const TemplateSet& estimated,
                            const TemplateSet& truth) {
  const AlignmentResult al = align_templates(truth, estimated);
  double num = 0.0, den = 0.0;
  for (int m = 0; m < truth.M(); ++m) {
    num += std::sqrt(2.0) * (truth.Q.row(m) - estimated.Q.row(al.perm[m])).norm();
    den += std::sqrt(2.0) * truth.Q.row(m).norm();
  }
  if (!(den > 0.0)) throw data_error("metric_rel_frobenius: zero truth norm");
  return num / den;
}

namespace {

std::vector<int> dominant_labels(const Matrix& W) {
  std::vector<int> lab(W.rows());
  for (int l = 0; l < W.rows(); ++l) {
    int best = 0;
    for (int m = 1; m < W.cols(); ++m)
      if (W(l, m) > W(l, best)) best = m;  // ties keep the lowest index
    lab[l] = best;
  }
  return lab;
}

double comb2(double x) { return 0.5 * x * (x - 1.0); }

}  // namespace

double metric_ari(const Matrix& w_estimated, const Matrix& w_true) {
  if (w_estimated.rows() != w_true.rows())
    throw dim_error("metric_ari: layer count mismatch");
  const std::vector<int> a = dominant_labels(w_estimated);
  const std::vector<int> b = dominant_labels(w_true);
  const int n = static_cast<int>(a.size());
  const int ka = *std::max_element(a.begin(), a.end()) + 1;
  const int kb = *std::max_element(b.begin(), b.end()) + 1;
  Matrix cont = Matrix::Zero(ka, kb);
  for (int i = 0; i < n; ++i) cont(a[i], b[i]) += 1.0;
  double sum_ij = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) sum_ij += comb2(cont(i, j));
  double sum_a = 0.0, sum_b = 0.0;
  for (int i = 0; i < ka; ++i) sum_a += comb2(cont.row(i).sum());
  for (int j = 0; j < kb; ++j) sum_b += comb2(cont.col(j).sum());
  const double total = comb2(static_cast<double>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected)  // both partitions trivial
    return a == b ? 1.0 : 0.0;
  return (sum_ij - expected) / (max_index - expected);
}

std::vector<CouplingCell> run_coupling_experiment(
    const CouplingExperimentConfig& config) {
  std::vector<CouplingCell> cells;
  int cell_index = 0;
  for (double density : config.densities) {
    for (double a1_star : config.a1_values) {
      CouplingCell cell;
      cell.a1_star = a1_star;
      cell.density = density;
      cell.replications = config.replications;
      std::vector<double> coupled, decoupled;
      double density_sum = 0.0;
      int density_n = 0;
      for (int rep = 0; rep < config.replications; ++rep) {
        try {
          SimConfig sim;
          sim.n = config.n;
          sim.L = config.L;
          sim.M = config.M;
          sim.K = config.K;
          sim.alpha = config.alpha;
          sim.sigma_star = config.sigma_star;
          sim.tau_star = config.tau_star;
          sim.gamma_scale = config.gamma_scale;
          sim.a1_star = a1_star;
          sim.target_density = density;
          sim.seed = mix_seed(config.seed, cell_index, rep);
          auto [data, truth] = generate(sim);
          cell.a0_star = truth.a0;
          density_sum += static_cast<double>(data.Z.cast<int>().sum()) /
                         (static_cast<double>(data.L) * data.P());
          ++density_n;
          for (int mode = 0; mode < 2; ++mode) {
            ModelSpec spec = config.fit_spec_template;
            spec.M = config.M;
            spec.K = config.K;
            spec.coupling = mode == 0 ? Coupling::Coupled : Coupling::Decoupled;
            SamplerConfig sc = config.sampler;
            sc.seed = mix_seed(config.seed, cell_index, rep, 1000 + mode);
            const PosteriorDraws draws = adapt_and_sample(data, spec, sc);
            const PosteriorSummary sum = posterior_mean_summary(draws, data, spec);
            const double corr =
                metric_template_correlation(sum.templates, truth.templates);
            (mode == 0 ? coupled : decoupled).push_back(corr);
          }
        } catch (const std::exception&) {
          ++cell.failures;
        }
      }
      auto mean_sd = [](const std::vector<double>& v, double& mean,
                        double& sd) {
        mean = 0.0;
        sd = 0.0;
        if (v.empty()) return;
        for (double x : v) mean += x;
        mean /= v.size();
        if (v.size() > 1) {
          for (double x : v) sd += (x - mean) * (x - mean);
          sd = std::sqrt(sd / (v.size() - 1));
        }
      };
      mean_sd(coupled, cell.coupled_corr_mean, cell.coupled_corr_sd);
      mean_sd(decoupled, cell.decoupled_corr_mean, cell.decoupled_corr_sd);
      cell.realized_density_mean =
          density_n > 0 ? density_sum / density_n : 0.0;
      cells.push_back(cell);
      ++cell_index;
    }
  }
  return cells;
}

std::string coupling_report_table(const std::vector<CouplingCell>& cells) {
  std::ostringstream os;
  os << "a1_star\tdensity\ta0_star\trealized_density\tcoupled_corr_mean\t"
        "coupled_corr_sd\tdecoupled_corr_mean\tdecoupled_corr_sd\t"
        "replications\tfailures\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf),
                  "%.3g\t%.3g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%d\t%d\n",
                  c.a1_star, c.density, c.a0_star, c.realized_density_mean,
                  c.coupled_corr_mean, c.coupled_corr_sd,
                  c.decoupled_corr_mean, c.decoupled_corr_sd, c.replications,
                  c.failures);
    os << buf;
  }
  return os.str();
}

}  // namespace balm
