#include "balm/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "balm/transforms.hpp"

namespace balm {

PosteriorTarget::PosteriorTarget(const LayerDataset& data,
                                 const ModelSpec& spec)
    : data_(data), spec_(spec) {
  data.validate();
  spec.validate(data.n);
  dim_ = PhiLayout::make(spec, data).dim;
}

double PosteriorTarget::logp_grad(const Vector& phi, Vector& grad) const {
  return log_posterior_with_grad(phi, data_, spec_, grad);
}

PhasePoint make_phase_point(const LogDensityTarget& target, Vector q,
                            Vector p) {
  PhasePoint z;
  z.q = std::move(q);
  z.p = std::move(p);
  try {
    z.logp = target.logp_grad(z.q, z.grad);
    z.ok = std::isfinite(z.logp) && z.grad.allFinite();
  } catch (const numeric_error&) {
    z.logp = kNegInf;
    z.grad = Vector::Zero(z.q.size());
    z.ok = false;
  }
  return z;
}

double kinetic_energy(const Vector& p, const Vector& inv_mass_diag) {
  return 0.5 * p.cwiseProduct(inv_mass_diag).dot(p);
}

namespace {

// One integrator step; z must be ok on entry. Returns false (z.ok=false) when
// the new state is non-finite.
bool leapfrog_step(const LogDensityTarget& target, PhasePoint& z, double step,
                   const Vector& inv_mass_diag) {
  z.p += 0.5 * step * z.grad;
  z.q += step * inv_mass_diag.cwiseProduct(z.p);
  try {
    z.logp = target.logp_grad(z.q, z.grad);
  } catch (const numeric_error&) {
    z.logp = kNegInf;
    z.grad.setZero();
  }
  if (!std::isfinite(z.logp) || !z.grad.allFinite()) {
    z.ok = false;
    return false;
  }
  z.p += 0.5 * step * z.grad;
  z.ok = true;
  return true;
}

struct Subtree {
  PhasePoint z_near;  // endpoint adjacent to the start state
  PhasePoint z_far;   // outermost endpoint in the build direction
  PhasePoint prop;    // multinomial proposal within the subtree
  Vector rho;         // momentum sum over subtree states
  double log_sum_w = kNegInf;
  double sum_alpha = 0.0;
  int n_alpha = 0;
  bool divergent = false;
  bool interior_uturn = false;

  bool valid() const { return !divergent && !interior_uturn; }
};

bool uturn(const Vector& rho, const PhasePoint& z_a, const PhasePoint& z_b,
           const Vector& inv_mass_diag) {
  return rho.dot(inv_mass_diag.cwiseProduct(z_a.p)) <= 0.0 ||
         rho.dot(inv_mass_diag.cwiseProduct(z_b.p)) <= 0.0;
}

Subtree build_tree(const LogDensityTarget& target, const PhasePoint& start,
                   int depth, double dir_step, const Vector& inv_mass_diag,
                   double h0, double divergence_threshold, Rng& rng) {
  if (depth == 0) {
    Subtree t;
    PhasePoint z = start;
    const bool ok = leapfrog_step(target, z, dir_step, inv_mass_diag);
    const double h = ok ? hamiltonian(z, inv_mass_diag) : kNegInf;
    const double dh = ok ? h - h0 : kNegInf;
    t.n_alpha = 1;
    if (!ok || !(dh < divergence_threshold) || !std::isfinite(dh)) {
      t.divergent = true;
      t.sum_alpha = 0.0;
      t.z_near = t.z_far = t.prop = z;
      t.rho = z.p;
      return t;
    }
    t.sum_alpha = std::min(1.0, std::exp(-dh));
    t.log_sum_w = -dh;
    t.z_near = z;
    t.z_far = z;
    t.prop = std::move(z);
    t.rho = t.prop.p;
    return t;
  }
  Subtree t1 = build_tree(target, start, depth - 1, dir_step, inv_mass_diag,
                          h0, divergence_threshold, rng);
  if (!t1.valid()) return t1;
  Subtree t2 = build_tree(target, t1.z_far, depth - 1, dir_step, inv_mass_diag,
                          h0, divergence_threshold, rng);
  t1.sum_alpha += t2.sum_alpha;
  t1.n_alpha += t2.n_alpha;
  if (!t2.valid()) {
    t1.divergent = t2.divergent;
    t1.interior_uturn = t2.interior_uturn;
    return t1;
  }
  const double log_total = logaddexp(t1.log_sum_w, t2.log_sum_w);
  if (std::log(uniform01(rng)) < t2.log_sum_w - log_total)
    t1.prop = std::move(t2.prop);
  t1.log_sum_w = log_total;
  t1.rho += t2.rho;
  t1.z_far = std::move(t2.z_far);
  if (uturn(t1.rho, t1.z_near, t1.z_far, inv_mass_diag))
    t1.interior_uturn = true;
  return t1;
}

}  // namespace

LeapfrogResult leapfrog(const LogDensityTarget& target, const Vector& phi,
                        const Vector& momentum, double step,
                        const Vector& inv_mass_diag) {
  PhasePoint z = make_phase_point(target, phi, momentum);
  if (!z.ok) return {phi, momentum, kNegInf, false};
  const double h0 = hamiltonian(z, inv_mass_diag);
  const bool ok = leapfrog_step(target, z, step, inv_mass_diag);
  const double err =
      ok ? hamiltonian(z, inv_mass_diag) - h0
         : std::numeric_limits<double>::infinity();
  return {std::move(z.q), std::move(z.p), err, ok};
}

PhasePoint nuts_transition(const LogDensityTarget& target,
                           const PhasePoint& current, double step,
                           const Vector& inv_mass_diag, Rng& rng,
                           int max_tree_depth, double divergence_threshold,
                           NutsStats& stats) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PhasePoint z0 = current;
  for (int i = 0; i < z0.p.size(); ++i)
    z0.p[i] = normal(rng) / std::sqrt(inv_mass_diag[i]);
  const double h0 = hamiltonian(z0, inv_mass_diag);

  PhasePoint z_minus = z0, z_plus = z0, prop = z0;
  Vector rho = z0.p;
  double log_sum_w = 0.0;  // weight of the initial state
  double sum_alpha = 0.0;
  int n_alpha = 0;
  stats = NutsStats{};
  for (int depth = 0; depth < max_tree_depth; ++depth) {
    const double dir = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const PhasePoint& edge = dir > 0 ? z_plus : z_minus;
    Subtree sub = build_tree(target, edge, depth, dir * step, inv_mass_diag,
                             h0, divergence_threshold, rng);
    sum_alpha += sub.sum_alpha;
    n_alpha += sub.n_alpha;
    if (sub.divergent) {
      stats.divergent = true;
      break;
    }
    if (sub.interior_uturn) break;
    // biased progressive sampling toward the new subtree
    if (std::log(uniform01(rng)) < sub.log_sum_w - log_sum_w)
      prop = sub.prop;
    log_sum_w = logaddexp(log_sum_w, sub.log_sum_w);
    rho += sub.rho;
    if (dir > 0)
      z_plus = std::move(sub.z_far);
    else
      z_minus = std::move(sub.z_far);
    stats.depth = depth + 1;
    if (uturn(rho, z_minus, z_plus, inv_mass_diag)) break;
  }
  stats.accept_stat = n_alpha > 0 ? sum_alpha / n_alpha : 0.0;
  stats.energy = hamiltonian(prop, inv_mass_diag);
  return prop;
}

namespace {

struct DualAveraging {
  double delta = 0.8;
  double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int t = 0;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    log_eps = std::log(eps);
    log_eps_bar = std::log(eps);
    h_bar = 0.0;
    t = 0;
  }
  void update(double accept) {
    ++t;
    h_bar += (delta - accept - h_bar) / (t + t0);
    log_eps = mu - std::sqrt(static_cast<double>(t)) / gamma * h_bar;
    const double w = std::pow(static_cast<double>(t), -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
  }
  double current() const { return std::exp(log_eps); }
  double averaged() const { return std::exp(log_eps_bar); }
};

// Doubling heuristic bracketing acceptance 0.5 for the initial step size.
double find_reasonable_step(const LogDensityTarget& target,
                            const PhasePoint& z, const Vector& inv_mass_diag,
                            Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PhasePoint z0 = z;
  for (int i = 0; i < z0.p.size(); ++i)
    z0.p[i] = normal(rng) / std::sqrt(inv_mass_diag[i]);
  const double h0 = hamiltonian(z0, inv_mass_diag);
  double eps = 1.0;
  auto accept_of = [&](double e) {
    PhasePoint zt = z0;
    if (!leapfrog_step(target, zt, e, inv_mass_diag)) return 0.0;
    const double dh = hamiltonian(zt, inv_mass_diag) - h0;
    return std::isfinite(dh) ? std::exp(std::min(0.0, -dh)) : 0.0;
  };
  double a = accept_of(eps);
  const double dir = a > 0.5 ? 1.0 : -1.0;
  for (int it = 0; it < 100; ++it) {
    if (dir > 0 ? a <= 0.5 : a >= 0.5) break;
    eps *= dir > 0 ? 2.0 : 0.5;
    if (eps > 1e7 || eps < 1e-10) break;
    a = accept_of(eps);
  }
  return std::clamp(eps, 1e-10, 1e7);
}

// Slow-window boundaries between the fast buffers, doubling sizes with the
// final window absorbing the remainder.
std::vector<int> slow_window_ends(int warmup) {
  const int init_buffer = 75, term_buffer = 50;
  const int end = warmup - term_buffer;
  std::vector<int> ends;
  int start = init_buffer, size = 25;
  while (start < end) {
    int stop = start + size;
    if (stop + 2 * size > end) stop = end;
    ends.push_back(stop);
    start = stop;
    size *= 2;
  }
  return ends;
}

struct Welford {
  Vector mean, m2;
  int n = 0;
  void reset(int dim) {
    mean = Vector::Zero(dim);
    m2 = Vector::Zero(dim);
    n = 0;
  }
  void add(const Vector& x) {
    ++n;
    const Vector d = x - mean;
    mean += d / n;
    m2 += d.cwiseProduct(x - mean);
  }
  // Regularized variance estimate shrunk toward 1e-3.
  Vector regularized_variance() const {
    Vector v = m2 / std::max(1, n - 1);
    const double w = static_cast<double>(n) / (n + 5.0);
    return (w * v.array() + (1.0 - w) * 1e-3).matrix();
  }
};

ChainDraws run_one_chain(const LogDensityTarget& target,
                         const SamplerConfig& config, const ChainInit& init,
                         int chain) {
  const int dim = target.dim();
  Rng rng = make_rng(config.seed, 0x636861696eULL, chain);
  std::normal_distribution<double> normal(0.0, 1.0);

  PhasePoint z;
  bool initialized = false;
  for (int attempt = 0; attempt < 100 && !initialized; ++attempt) {
    Vector q0 = init(chain, rng);
    if (q0.size() != dim)
      throw dim_error("chain init returned wrong dimension");
    z = make_phase_point(target, std::move(q0), Vector::Zero(dim));
    initialized = z.ok;
  }
  if (!initialized)
    throw numeric_error("chain " + std::to_string(chain) +
                        ": no finite initial state after 100 attempts");

  Vector inv_mass = Vector::Ones(dim);
  DualAveraging da;
  da.delta = config.target_accept;
  da.restart(find_reasonable_step(target, z, inv_mass, rng));

  const std::vector<int> window_ends = slow_window_ends(config.warmup_iters);
  std::size_t window_idx = 0;
  Welford wf;
  wf.reset(dim);

  NutsStats stats;
  for (int iter = 0; iter < config.warmup_iters; ++iter) {
    z = nuts_transition(target, z, da.current(), inv_mass, rng,
                        config.max_tree_depth,
                        config.divergence_energy_threshold, stats);
    da.update(stats.accept_stat);
    const bool in_slow = window_idx < window_ends.size() && iter >= 75;
    if (in_slow) wf.add(z.q);
    if (window_idx < window_ends.size() &&
        iter + 1 == window_ends[window_idx]) {
      if (wf.n >= 2) inv_mass = wf.regularized_variance();
      wf.reset(dim);
      ++window_idx;
      // Re-anchor the averaging once, when the metric leaves the unit
      // regime; later mass refinements keep the accumulated average.
      if (window_idx == 1) da.restart(da.averaged());
    }
  }

  ChainDraws out;
  const int S = config.sampling_iters;
  out.draws.resize(S, dim);
  out.energy.resize(S);
  out.divergent.assign(S, 0);
  out.depth.assign(S, 0);
  out.step_size = da.averaged();
  out.inv_mass_diag = inv_mass;
  double accept_sum = 0.0;
  for (int s = 0; s < S; ++s) {
    z = nuts_transition(target, z, out.step_size, inv_mass, rng,
                        config.max_tree_depth,
                        config.divergence_energy_threshold, stats);
    out.draws.row(s) = z.q.transpose();
    out.energy[s] = stats.energy;
    out.divergent[s] = stats.divergent ? 1 : 0;
    out.depth[s] = stats.depth;
    accept_sum += stats.accept_stat;
    if (stats.divergent) ++out.divergence_count;
    if (stats.depth >= config.max_tree_depth) ++out.max_depth_hits;
  }
  out.mean_accept = accept_sum / S;
  return out;
}

}  // namespace

PosteriorDraws run_chains(const LogDensityTarget& target,
                          const SamplerConfig& config, const ChainInit& init,
                          const std::string& layout_descriptor) {
  config.validate();
  PosteriorDraws out;
  out.dim = target.dim();
  out.layout_descriptor = layout_descriptor;
  out.chains.resize(config.chains);
  std::exception_ptr err;
  #pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < config.chains; ++c) {
    try {
      out.chains[c] = run_one_chain(target, config, init, c);
    } catch (...) {
      #pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  int divergences = 0, total = 0;
  for (const auto& c : out.chains) {
    divergences += c.divergence_count;
    total += static_cast<int>(c.draws.rows());
  }
  out.divergence_rate = total > 0 ? static_cast<double>(divergences) / total : 0.0;
  out.unreliable = out.divergence_rate > 0.10;
  return out;
}

ParamsConstrained draw_prior_params(const ModelSpec& spec,
                                    const LayerDataset& data, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int M = spec.M, K = spec.K, n = data.n, L = data.L;
  ParamsConstrained par;
  if (spec.covariate_mode()) {
    const int p = static_cast<int>(data.covariates->cols());
    Matrix beta(M - 1, p), eps(L, M - 1);
    for (int i = 0; i < beta.size(); ++i)
      beta.data()[i] = spec.covariate_prior->sigma_beta * normal(rng);
    for (int i = 0; i < eps.size(); ++i)
      eps.data()[i] = spec.covariate_prior->sigma_eps * normal(rng);
    Matrix psi = Matrix::Zero(L, M);
    psi.rightCols(M - 1) = (*data.covariates) * beta.transpose() + eps;
    par.W = softmax_weights(psi);
    par.beta = std::move(beta);
    par.eps = std::move(eps);
  } else {
    std::gamma_distribution<double> gamma_draw(spec.alpha / M, 1.0);
    par.W.resize(L, M);
    for (int l = 0; l < L; ++l) {
      double sum = 0.0;
      for (int m = 0; m < M; ++m) {
        // floor keeps prior draws off the simplex boundary (ALR domain)
        const double g = std::max(gamma_draw(rng), 1e-8);
        par.W(l, m) = g;
        sum += g;
      }
      par.W.row(l) /= sum;
    }
  }
  par.X.resize(M);
  for (int m = 0; m < M; ++m) {
    par.X[m].resize(n, K);
    for (int i = 0; i < par.X[m].size(); ++i)
      par.X[m].data()[i] = normal(rng);
  }
  par.gamma.resize(M, K);
  const double sg = spec.resolved_sigma_gamma(n);
  for (int i = 0; i < par.gamma.size(); ++i)
    par.gamma.data()[i] = sg * normal(rng);
  par.tau = std::abs(spec.sigma_tau * normal(rng)) + 1e-10;
  par.a0 = spec.sigma_a0 * normal(rng);
  par.a1 = spec.coupled() ? spec.sigma_a1 * normal(rng) : 0.0;
  std::gamma_distribution<double> g_sigma(spec.a_sigma, 1.0);
  par.sigma2 = spec.b_sigma / std::max(g_sigma(rng), 1e-12);
  return par;
}

PosteriorDraws adapt_and_sample(const LayerDataset& data, const ModelSpec& spec,
                                const SamplerConfig& config) {
  const PosteriorTarget target(data, spec);
  const PhiLayout layout = PhiLayout::make(spec, data);
  const double jitter = config.init_jitter_scale;
  ChainInit init = [&](int /*chain*/, Rng& rng) {
    const ParamsConstrained par = draw_prior_params(spec, data, rng);
    Vector phi = pack(par, spec, data);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < phi.size(); ++i) phi[i] += jitter * normal(rng);
    return phi;
  };
  return run_chains(target, config, init, layout.descriptor());
}

}  // namespace balm
