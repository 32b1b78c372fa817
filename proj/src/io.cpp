#include "balm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace balm {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string layer_file_name(int index1) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer_%04d.txt", index1);
  return buf;
}

void write_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << fmt(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::vector<double> row;
    double v;
    while (is >> v) row.push_back(v);
    if (!is.eof()) throw data_error("malformed numeric row in " + path);
    if (!rows.empty() && row.size() != rows[0].size())
      throw data_error("ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw data_error("empty matrix file: " + path);
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

void write_dataset(const std::string& dir, const LayerDataset& data,
                   const GroundTruth* truth, const Json* generator_echo) {
  data.validate();
  fs::create_directories(dir);
  const int n = data.n, P = data.P();
  for (int l = 0; l < data.L; ++l) {
    Matrix A = Matrix::Zero(n, n);
    for (int e = 0; e < P; ++e) {
      if (!data.Z(l, e)) continue;
      const double w = sigmoid(data.Y(l, e));
      if (!(w > 0.0 && w < 1.0))
        throw data_error("write_dataset: weight out of (0,1) after transform");
      const auto [i, j] = edge_nodes(e, n);
      A(i, j) = w;
      A(j, i) = w;
    }
    write_matrix(dir + "/" + layer_file_name(l + 1), A);
  }
  Json manifest;
  manifest["format"] = "balm-dataset";
  manifest["version"] = 1;
  manifest["n"] = data.n;
  manifest["L"] = data.L;
  manifest["edge_order"] = "upper-triangular-row-major";
  manifest["weight_convention"] =
      "w in (0,1) present with Y = logit(w); exact 0 = absent edge";
  Json fields = Json::array({"layers"});
  Json mask = Json::array();
  for (const auto& [l, e] : data.mask_list) mask.push_back({l, e});
  manifest["mask"] = std::move(mask);
  if (data.covariates) {
    write_matrix(dir + "/covariates.txt", *data.covariates);
    manifest["covariates_file"] = "covariates.txt";
    fields.push_back("covariates");
  } else {
    manifest["covariates_file"] = nullptr;
  }
  if (truth) {
    fs::create_directories(dir + "/truth");
    write_matrix(dir + "/truth/templates.txt", truth->templates.Q);
    write_matrix(dir + "/truth/weights.txt", truth->W);
    write_matrix(dir + "/truth/mu.txt", truth->mu);
    Json scalars;
    scalars["a0"] = truth->a0;
    scalars["a1"] = truth->a1;
    scalars["sigma"] = truth->sigma;
    scalars["n"] = truth->templates.n;
    write_text_file(dir + "/truth/scalars.json", scalars.dump(2) + "\n");
    fields.push_back("truth");
  }
  manifest["fields"] = std::move(fields);
  if (generator_echo) manifest["generator"] = *generator_echo;
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

LayerDataset read_dataset(const std::string& dir) {
  const Json manifest = load_json_file(dir + "/manifest.json");
  LayerDataset data;
  try {
    data.n = manifest.at("n").get<int>();
    data.L = manifest.at("L").get<int>();
  } catch (const Json::exception& e) {
    throw data_error("dataset manifest missing n/L: " + std::string(e.what()));
  }
  if (data.n < 2 || data.L < 1) throw data_error("invalid n/L in manifest");
  const int P = data.P();
  data.Z = ByteMatrix::Zero(data.L, P);
  data.Y = LayerMatrix::Zero(data.L, P);
  for (int l = 0; l < data.L; ++l) {
    const std::string path = dir + "/" + layer_file_name(l + 1);
    const Matrix A = read_matrix(path);
    if (A.rows() != data.n || A.cols() != data.n)
      throw data_error("layer matrix must be n x n: " + path);
    for (int i = 0; i < data.n; ++i) {
      if (A(i, i) != 0.0)
        throw data_error("nonzero diagonal at (" + std::to_string(i) + "," +
                         std::to_string(i) + ") in " + path);
      for (int j = i + 1; j < data.n; ++j) {
        if (A(i, j) != A(j, i))
          throw data_error("asymmetric entry at (" + std::to_string(i) + "," +
                           std::to_string(j) + ") in " + path);
        const double w = A(i, j);
        if (w == 0.0) continue;
        if (!(w > 0.0 && w < 1.0))
          throw data_error("weight outside [0,1) at (" + std::to_string(i) +
                           "," + std::to_string(j) + ") in " + path);
        const int e = edge_index(i, j, data.n);
        data.Z(l, e) = 1;
        data.Y(l, e) = std::log(w) - std::log1p(-w);
      }
    }
  }
  if (manifest.contains("covariates_file") &&
      !manifest["covariates_file"].is_null()) {
    const Matrix cov =
        read_matrix(dir + "/" + manifest["covariates_file"].get<std::string>());
    if (cov.rows() != data.L)
      throw data_error("covariates must have L rows");
    data.covariates = cov;
  }
  if (manifest.contains("mask")) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& it : manifest["mask"]) {
      if (!it.is_array() || it.size() != 2)
        throw data_error("mask entries must be [layer, edge] pairs");
      pairs.emplace_back(it[0].get<int>(), it[1].get<int>());
    }
    data.set_mask(std::move(pairs));
  }
  data.validate();
  return data;
}

bool dataset_has_truth(const std::string& dir) {
  return fs::exists(dir + "/truth/scalars.json");
}

GroundTruth read_truth(const std::string& dir) {
  GroundTruth t;
  const Json scalars = load_json_file(dir + "/truth/scalars.json");
  t.a0 = scalars.at("a0").get<double>();
  t.a1 = scalars.at("a1").get<double>();
  t.sigma = scalars.at("sigma").get<double>();
  t.templates.n = scalars.at("n").get<int>();
  t.templates.Q = read_matrix(dir + "/truth/templates.txt");
  t.W = read_matrix(dir + "/truth/weights.txt");
  t.mu = read_matrix(dir + "/truth/mu.txt");
  const Json manifest = load_json_file(dir + "/manifest.json");
  if (manifest.contains("mask"))
    for (const auto& it : manifest["mask"])
      t.mask.emplace_back(it[0].get<int>(), it[1].get<int>());
  return t;
}

std::string dataset_fingerprint(const std::string& dir) {
  const Json manifest = load_json_file(dir + "/manifest.json");
  std::vector<std::string> files = {"manifest.json"};
  const int L = manifest.at("L").get<int>();
  for (int l = 1; l <= L; ++l) files.push_back(layer_file_name(l));
  if (manifest.contains("covariates_file") &&
      !manifest["covariates_file"].is_null())
    files.push_back(manifest["covariates_file"].get<std::string>());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    h = fnv1a64(f.data(), f.size(), h);
    const std::string body = read_text_file(dir + "/" + f);
    h = fnv1a64(body.data(), body.size(), h);
  }
  return "fnv1a64:" + to_hex(h);
}

void write_draws_csv(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << "# phi-layout: " << draws.layout_descriptor << "\n";
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const ChainDraws& ch = draws.chains[c];
    for (int s = 0; s < ch.draws.rows(); ++s) {
      out << c << ',' << s << ',' << int(ch.divergent[s]) << ','
          << fmt(ch.energy[s]) << ',' << ch.depth[s];
      for (int j = 0; j < ch.draws.cols(); ++j)
        out << ',' << fmt(ch.draws(s, j));
      out << '\n';
    }
  }
}

PosteriorDraws read_draws_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open: " + path);
  std::string line;
  std::size_t offset = 0;
  auto fail = [&](const std::string& msg, std::size_t at) {
    throw data_error("draws parse error at byte " + std::to_string(at) +
                     " of " + path + ": " + msg);
  };
  if (!std::getline(in, line)) fail("empty file", 0);
  const std::string prefix = "# phi-layout: ";
  if (line.rfind(prefix, 0) != 0) fail("missing phi-layout header", 0);
  PosteriorDraws draws;
  draws.layout_descriptor = line.substr(prefix.size());
  offset = line.size() + 1;

  struct Row {
    int chain, iter, divergent, depth;
    double energy;
    std::vector<double> phi;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    Row r;
    const char* p = line.c_str();
    const char* end = p + line.size();
    auto next_field = [&](double& out_v) {
      char* stop = nullptr;
      out_v = std::strtod(p, &stop);
      if (stop == p)
        fail("expected number", line_start + (p - line.c_str()));
      p = stop;
      if (p < end) {
        if (*p != ',') fail("expected ','", line_start + (p - line.c_str()));
        ++p;
      }
    };
    double v;
    next_field(v);
    r.chain = static_cast<int>(v);
    next_field(v);
    r.iter = static_cast<int>(v);
    next_field(v);
    r.divergent = static_cast<int>(v);
    next_field(v);
    r.energy = v;
    next_field(v);
    r.depth = static_cast<int>(v);
    while (p < end) {
      next_field(v);
      r.phi.push_back(v);
    }
    if (r.phi.empty()) fail("row has no coordinates", line_start);
    if (!rows.empty() && r.phi.size() != rows[0].phi.size())
      fail("inconsistent row width", line_start);
    if (r.chain < 0) fail("negative chain id", line_start);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail("no draw rows", offset);
  draws.dim = static_cast<int>(rows[0].phi.size());
  int max_chain = 0;
  for (const auto& r : rows) max_chain = std::max(max_chain, r.chain);
  draws.chains.resize(max_chain + 1);
  std::vector<std::vector<const Row*>> grouped(max_chain + 1);
  for (const auto& r : rows) grouped[r.chain].push_back(&r);
  int divergences = 0;
  for (int c = 0; c <= max_chain; ++c) {
    const auto& g = grouped[c];
    if (g.empty()) throw data_error("draws file: chain " + std::to_string(c) +
                                    " has no rows");
    ChainDraws& ch = draws.chains[c];
    const int S = static_cast<int>(g.size());
    ch.draws.resize(S, draws.dim);
    ch.energy.resize(S);
    ch.divergent.assign(S, 0);
    ch.depth.assign(S, 0);
    for (int s = 0; s < S; ++s) {
      ch.energy[s] = g[s]->energy;
      ch.divergent[s] = static_cast<std::uint8_t>(g[s]->divergent);
      ch.depth[s] = g[s]->depth;
      for (int j = 0; j < draws.dim; ++j) ch.draws(s, j) = g[s]->phi[j];
      if (g[s]->divergent) {
        ++ch.divergence_count;
        ++divergences;
      }
    }
  }
  const int total = draws.total_draws();
  draws.divergence_rate =
      total > 0 ? static_cast<double>(divergences) / total : 0.0;
  draws.unreliable = draws.divergence_rate > 0.10;
  return draws;
}

void write_chain_stats(const std::string& path, const PosteriorDraws& draws) {
  std::ostringstream os;
  os << "unreliable " << (draws.unreliable ? "true" : "false") << "\n";
  os << "divergence_rate " << fmt(draws.divergence_rate) << "\n";
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const ChainDraws& ch = draws.chains[c];
    os << "chain " << c << " step_size " << fmt(ch.step_size)
       << " mean_accept " << fmt(ch.mean_accept) << " divergences "
       << ch.divergence_count << " max_depth_hits " << ch.max_depth_hits
       << "\n";
  }
  write_text_file(path, os.str());
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open: " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw config_error("JSON parse failure in " + path + ": " + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << content;
}

namespace {

// Strict-schema helpers: unknown keys are configuration errors.
void check_keys(const Json& j, const std::set<std::string>& allowed,
                const char* what) {
  if (!j.is_object())
    throw config_error(std::string(what) + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw config_error(std::string(what) + ": unknown key '" + item.key() +
                         "'");
}

template <typename T>
T require(const Json& j, const char* key, const char* what) {
  if (!j.contains(key))
    throw config_error(std::string(what) + ": missing required key '" + key +
                       "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw config_error(std::string(what) + ": bad value for key '" + key +
                       "'");
  }
}

template <typename T>
T optional_or(const Json& j, const char* key, T fallback, const char* what) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw config_error(std::string(what) + ": bad value for key '" + key +
                       "'");
  }
}

Likelihood parse_likelihood(const std::string& s, const char* what) {
  if (s == "gaussian") return Likelihood::Gaussian;
  if (s == "student_t") return Likelihood::StudentT;
  throw config_error(std::string(what) +
                     ": likelihood must be 'gaussian' or 'student_t'");
}

}  // namespace

ModelSpec parse_model_spec(const Json& j) {
  check_keys(j,
             {"M", "K", "likelihood", "nu", "coupling", "alpha", "sigma_gamma",
              "sigma_tau", "sigma_a0", "sigma_a1", "a_sigma", "b_sigma",
              "covariates"},
             "model spec");
  ModelSpec spec;
  spec.M = require<int>(j, "M", "model spec");
  spec.K = require<int>(j, "K", "model spec");
  spec.likelihood = parse_likelihood(
      optional_or<std::string>(j, "likelihood", "gaussian", "model spec"),
      "model spec");
  spec.nu = optional_or<double>(j, "nu", 5.0, "model spec");
  const std::string coupling =
      optional_or<std::string>(j, "coupling", "coupled", "model spec");
  if (coupling == "coupled")
    spec.coupling = Coupling::Coupled;
  else if (coupling == "decoupled")
    spec.coupling = Coupling::Decoupled;
  else
    throw config_error("model spec: coupling must be 'coupled' or 'decoupled'");
  spec.alpha = optional_or<double>(j, "alpha", 1.0, "model spec");
  spec.sigma_gamma = optional_or<double>(j, "sigma_gamma", 0.0, "model spec");
  spec.sigma_tau = optional_or<double>(j, "sigma_tau", 1.0, "model spec");
  spec.sigma_a0 = optional_or<double>(j, "sigma_a0", 5.0, "model spec");
  spec.sigma_a1 = optional_or<double>(j, "sigma_a1", 5.0, "model spec");
  spec.a_sigma = optional_or<double>(j, "a_sigma", 2.0, "model spec");
  spec.b_sigma = optional_or<double>(j, "b_sigma", 1.0, "model spec");
  if (j.contains("covariates")) {
    const Json& c = j["covariates"];
    check_keys(c, {"sigma_beta", "sigma_eps"}, "model spec covariates");
    CovariatePrior cp;
    cp.sigma_beta = require<double>(c, "sigma_beta", "model spec covariates");
    cp.sigma_eps = require<double>(c, "sigma_eps", "model spec covariates");
    spec.covariate_prior = cp;
  }
  spec.validate();
  return spec;
}

Json model_spec_to_json(const ModelSpec& spec) {
  Json j;
  j["M"] = spec.M;
  j["K"] = spec.K;
  j["likelihood"] =
      spec.likelihood == Likelihood::Gaussian ? "gaussian" : "student_t";
  j["nu"] = spec.nu;
  j["coupling"] = spec.coupled() ? "coupled" : "decoupled";
  j["alpha"] = spec.alpha;
  j["sigma_gamma"] = spec.sigma_gamma;
  j["sigma_tau"] = spec.sigma_tau;
  j["sigma_a0"] = spec.sigma_a0;
  j["sigma_a1"] = spec.sigma_a1;
  j["a_sigma"] = spec.a_sigma;
  j["b_sigma"] = spec.b_sigma;
  if (spec.covariate_prior) {
    j["covariates"] = {{"sigma_beta", spec.covariate_prior->sigma_beta},
                       {"sigma_eps", spec.covariate_prior->sigma_eps}};
  }
  return j;
}

SamplerConfig parse_sampler_config(const Json& j) {
  check_keys(j,
             {"chains", "warmup", "samples", "target_accept", "max_tree_depth",
              "divergence_energy_threshold", "seed", "init_jitter_scale"},
             "sampler config");
  SamplerConfig c;
  c.chains = optional_or<int>(j, "chains", c.chains, "sampler config");
  c.warmup_iters = optional_or<int>(j, "warmup", c.warmup_iters,
                                    "sampler config");
  c.sampling_iters =
      optional_or<int>(j, "samples", c.sampling_iters, "sampler config");
  c.target_accept = optional_or<double>(j, "target_accept", c.target_accept,
                                        "sampler config");
  c.max_tree_depth =
      optional_or<int>(j, "max_tree_depth", c.max_tree_depth, "sampler config");
  c.divergence_energy_threshold =
      optional_or<double>(j, "divergence_energy_threshold",
                          c.divergence_energy_threshold, "sampler config");
  c.seed = optional_or<std::uint64_t>(j, "seed", c.seed, "sampler config");
  c.init_jitter_scale = optional_or<double>(
      j, "init_jitter_scale", c.init_jitter_scale, "sampler config");
  c.validate();
  return c;
}

Json sampler_config_to_json(const SamplerConfig& c) {
  Json j;
  j["chains"] = c.chains;
  j["warmup"] = c.warmup_iters;
  j["samples"] = c.sampling_iters;
  j["target_accept"] = c.target_accept;
  j["max_tree_depth"] = c.max_tree_depth;
  j["divergence_energy_threshold"] = c.divergence_energy_threshold;
  j["seed"] = c.seed;
  j["init_jitter_scale"] = c.init_jitter_scale;
  return j;
}

SimConfig parse_sim_config(const Json& j) {
  check_keys(j,
             {"n", "L", "M", "K", "alpha", "tau_star", "gamma_scale",
              "sigma_star", "a0_star", "a1_star", "target_density",
              "mask_fraction", "seed", "likelihood", "nu"},
             "sim config");
  SimConfig c;
  c.n = require<int>(j, "n", "sim config");
  c.L = require<int>(j, "L", "sim config");
  c.M = require<int>(j, "M", "sim config");
  c.K = require<int>(j, "K", "sim config");
  c.seed = require<std::uint64_t>(j, "seed", "sim config");
  c.alpha = optional_or<double>(j, "alpha", c.alpha, "sim config");
  c.tau_star = optional_or<double>(j, "tau_star", c.tau_star, "sim config");
  c.gamma_scale =
      optional_or<double>(j, "gamma_scale", c.gamma_scale, "sim config");
  c.sigma_star =
      optional_or<double>(j, "sigma_star", c.sigma_star, "sim config");
  c.a0_star = optional_or<double>(j, "a0_star", c.a0_star, "sim config");
  c.a1_star = optional_or<double>(j, "a1_star", c.a1_star, "sim config");
  if (j.contains("target_density")) {
    if (j.contains("a0_star"))
      throw config_error(
          "sim config: a0_star and target_density are mutually exclusive");
    c.target_density = require<double>(j, "target_density", "sim config");
  }
  c.mask_fraction =
      optional_or<double>(j, "mask_fraction", c.mask_fraction, "sim config");
  c.likelihood = parse_likelihood(
      optional_or<std::string>(j, "likelihood", "gaussian", "sim config"),
      "sim config");
  c.nu = optional_or<double>(j, "nu", c.nu, "sim config");
  c.validate();
  return c;
}

Json sim_config_to_json(const SimConfig& c) {
  Json j;
  j["n"] = c.n;
  j["L"] = c.L;
  j["M"] = c.M;
  j["K"] = c.K;
  j["alpha"] = c.alpha;
  j["tau_star"] = c.tau_star;
  j["gamma_scale"] = c.gamma_scale;
  j["sigma_star"] = c.sigma_star;
  j["a0_star"] = c.a0_star;
  j["a1_star"] = c.a1_star;
  if (c.target_density) j["target_density"] = *c.target_density;
  j["mask_fraction"] = c.mask_fraction;
  j["seed"] = c.seed;
  j["likelihood"] =
      c.likelihood == Likelihood::Gaussian ? "gaussian" : "student_t";
  j["nu"] = c.nu;
  return j;
}

std::string format_diagnostics_report(const DiagnosticsReport& report) {
  std::ostringstream os;
  os << "chains " << report.chains << "\n";
  os << "draws_per_chain " << report.draws_per_chain << "\n";
  os << "divergences " << report.divergence_count << "\n";
  os << "max_depth_hits " << report.max_depth_hits << "\n";
  os << "unreliable " << (report.unreliable ? "true" : "false") << "\n";
  os << "worst_rhat " << fmt(report.worst_rhat()) << "\n";
  os << "min_ess_bulk " << fmt(report.min_ess_bulk()) << "\n";
  os << "converged " << (report.converged() ? "true" : "false") << "\n";
  for (const auto& q : report.quantities) {
    os << "quantity " << q.name << " rhat " << fmt(q.rhat) << " ess_bulk "
       << fmt(q.ess_bulk) << " ess_tail " << fmt(q.ess_tail) << " flagged "
       << (q.flagged ? "true" : "false") << "\n";
  }
  return os.str();
}

}  // namespace balm
