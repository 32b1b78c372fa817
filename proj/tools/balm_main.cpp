// balm: simulate / fit / diagnose / select / evaluate pipeline driver.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "balm/diagnostics.hpp"
#include "balm/io.hpp"
#include "balm/model.hpp"
#include "balm/sampler.hpp"
#include "balm/selection.hpp"
#include "balm/simgen.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

balm::Json fit_manifest(const balm::ModelSpec& spec,
                        const balm::SamplerConfig& sc,
                        const std::string& data_dir,
                        const balm::LayerDataset& data,
                        const std::string& layout_descriptor) {
  balm::Json m;
  m["command"] = "fit";
  m["version"] = balm::kVersion;
  m["seed"] = sc.seed;
  m["spec"] = balm::model_spec_to_json(spec);
  m["sampler"] = balm::sampler_config_to_json(sc);
  m["data_dir"] = data_dir;
  m["data_fingerprint"] = balm::dataset_fingerprint(data_dir);
  m["dims"] = {{"n", data.n},
               {"L", data.L},
               {"p", data.covariates ? int(data.covariates->cols()) : 0}};
  m["phi_layout"] = layout_descriptor;
  return m;
}

struct SamplerOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, warmup, samples;
  void apply(balm::SamplerConfig& sc) const {
    if (seed) sc.seed = *seed;
    if (chains) sc.chains = *chains;
    if (warmup) sc.warmup_iters = *warmup;
    if (samples) sc.sampling_iters = *samples;
    sc.validate();
  }
};

balm::PosteriorDraws fit_and_write(const balm::LayerDataset& data,
                                   const balm::ModelSpec& spec,
                                   const balm::SamplerConfig& sc,
                                   const std::string& data_dir,
                                   const std::string& out_dir) {
  const balm::PosteriorDraws draws = balm::adapt_and_sample(data, spec, sc);
  std::filesystem::create_directories(out_dir);
  balm::write_draws_csv(out_dir + "/draws.csv", draws);
  balm::write_chain_stats(out_dir + "/chain_stats.txt", draws);
  balm::write_text_file(
      out_dir + "/manifest.json",
      fit_manifest(spec, sc, data_dir, data, draws.layout_descriptor).dump(2) +
          "\n");
  return draws;
}

// Surrogate dataset carrying only the shapes the flat layout needs; used by
// diagnose when the original data directory is not supplied.
balm::LayerDataset dims_only_dataset(int n, int L, int p) {
  balm::LayerDataset d;
  d.n = n;
  d.L = L;
  d.Z = balm::ByteMatrix::Zero(L, d.P());
  d.Y = balm::LayerMatrix::Zero(L, d.P());
  if (p > 0) d.covariates = balm::Matrix::Zero(L, p);
  return d;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override,
                 std::optional<double> mask_override) {
  balm::SimConfig cfg =
      balm::parse_sim_config(balm::load_json_file(config_path));
  if (seed_override) cfg.seed = *seed_override;
  if (mask_override) cfg.mask_fraction = *mask_override;
  cfg.validate();
  auto [data, truth] = balm::generate(cfg);
  const balm::Json echo = balm::sim_config_to_json(cfg);
  balm::write_dataset(out_dir, data, &truth, &echo);
  const double density = static_cast<double>(data.Z.cast<int>().sum()) /
                         (static_cast<double>(data.L) * data.P());
  std::cout << "wrote dataset to " << out_dir << " (n=" << data.n
            << ", L=" << data.L << ", realized density " << fmt6(density)
            << ", " << data.mask_list.size() << " masked entries)\n";
  return kExitOk;
}

int cmd_fit(const std::string& data_dir, const std::string& spec_path,
            const std::string& sampler_path, const std::string& out_dir,
            const SamplerOverrides& overrides) {
  const balm::ModelSpec spec =
      balm::parse_model_spec(balm::load_json_file(spec_path));
  balm::SamplerConfig sc;
  if (!sampler_path.empty())
    sc = balm::parse_sampler_config(balm::load_json_file(sampler_path));
  overrides.apply(sc);
  const balm::LayerDataset data = balm::read_dataset(data_dir);
  spec.validate(data.n);
  const balm::PosteriorDraws draws =
      fit_and_write(data, spec, sc, data_dir, out_dir);
  std::cout << "wrote draws to " << out_dir << " ("
            << draws.chains.size() << " chains x "
            << draws.chains[0].draws.rows() << " draws, divergence rate "
            << fmt6(draws.divergence_rate)
            << (draws.unreliable ? ", UNRELIABLE" : "") << ")\n";
  return kExitOk;
}

int cmd_diagnose(const std::string& draws_dir, const std::string& data_dir,
                 const std::vector<std::string>& edge_args) {
  const balm::PosteriorDraws draws =
      balm::read_draws_csv(draws_dir + "/draws.csv");
  const balm::Json manifest = balm::load_json_file(draws_dir + "/manifest.json");
  const balm::ModelSpec spec = balm::parse_model_spec(manifest.at("spec"));
  std::vector<std::pair<int, int>> edges;
  for (const auto& arg : edge_args) {
    int l = -1, e = -1;
    if (std::sscanf(arg.c_str(), "%d,%d", &l, &e) != 2)
      throw balm::config_error("--edge expects 'layer,edge', got '" + arg +
                               "'");
    edges.emplace_back(l, e);
  }
  balm::LayerDataset data;
  if (!data_dir.empty()) {
    data = balm::read_dataset(data_dir);
  } else {
    if (!edges.empty() && spec.covariate_mode())
      throw balm::config_error(
          "per-edge diagnostics in covariate mode require --data");
    const balm::Json& dims = manifest.at("dims");
    data = dims_only_dataset(dims.at("n").get<int>(), dims.at("L").get<int>(),
                             dims.at("p").get<int>());
  }
  const balm::DiagnosticsReport report =
      balm::diagnose_model_run(draws, data, spec, edges);
  const std::string text = balm::format_diagnostics_report(report);
  balm::write_text_file(draws_dir + "/diagnostics.txt", text);
  std::cout << text;
  return kExitOk;
}

int cmd_select(const std::string& data_dir, const std::string& spec_path,
               const std::string& sampler_path, const std::string& out_dir,
               const std::vector<int>& grid, int runs_per_m,
               double mask_fraction, const SamplerOverrides& overrides) {
  if (grid.empty()) throw balm::config_error("--grid must list at least one M");
  if (runs_per_m < 2)
    throw balm::config_error("--runs-per-m must be >= 2 for stability");
  const balm::ModelSpec base =
      balm::parse_model_spec(balm::load_json_file(spec_path));
  balm::SamplerConfig sc;
  if (!sampler_path.empty())
    sc = balm::parse_sampler_config(balm::load_json_file(sampler_path));
  overrides.apply(sc);
  const balm::LayerDataset data = balm::read_dataset(data_dir);

  std::ostringstream table;
  table << "M\tWAIC\tp_waic\tAUC\tStability\n";
  for (int M : grid) {
    balm::ModelSpec spec = base;
    spec.M = M;
    spec.validate(data.n);
    // R unmasked fits: stability across runs, WAIC from the first
    std::vector<balm::TemplateSet> run_templates;
    balm::WaicResult waic_result;
    for (int r = 0; r < runs_per_m; ++r) {
      balm::SamplerConfig run_sc = sc;
      run_sc.seed = balm::mix_seed(sc.seed, 0x73656cULL, M, r);
      const balm::PosteriorDraws draws =
          balm::adapt_and_sample(data, spec, run_sc);
      if (r == 0) waic_result = balm::waic_streaming(data, draws, spec);
      run_templates.push_back(
          balm::posterior_mean_summary(draws, data, spec).templates);
    }
    const double stability = balm::stability_score(run_templates);
    // one masked fit for held-out link prediction
    const balm::MaskSplit split = balm::mask_edges(
        data, mask_fraction, balm::mix_seed(sc.seed, 0x73656cULL, M, 999));
    balm::SamplerConfig auc_sc = sc;
    auc_sc.seed = balm::mix_seed(sc.seed, 0x73656cULL, M, 1000);
    const balm::PosteriorDraws masked_draws =
        balm::adapt_and_sample(split.train, spec, auc_sc);
    const balm::Vector probs =
        balm::predict_edge_probs(masked_draws, split.train, split.heldout, spec);
    std::vector<std::uint8_t> labels;
    labels.reserve(split.heldout.size());
    for (const auto& [l, e] : split.heldout) labels.push_back(data.Z(l, e));
    const double auc_value = balm::auc(probs, labels);
    table << M << '\t' << fmt6(waic_result.waic) << '\t'
          << fmt6(waic_result.p_waic) << '\t' << fmt6(auc_value) << '\t'
          << fmt6(stability) << '\n';
  }
  std::filesystem::create_directories(out_dir);
  balm::Json manifest;
  manifest["command"] = "select";
  manifest["version"] = balm::kVersion;
  manifest["seed"] = sc.seed;
  manifest["grid"] = grid;
  manifest["runs_per_m"] = runs_per_m;
  manifest["mask_fraction"] = mask_fraction;
  manifest["spec"] = balm::model_spec_to_json(base);
  manifest["sampler"] = balm::sampler_config_to_json(sc);
  manifest["data_fingerprint"] = balm::dataset_fingerprint(data_dir);
  balm::write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  balm::write_text_file(out_dir + "/selection.tsv", table.str());
  std::cout << table.str();
  return kExitOk;
}

int cmd_evaluate(const std::string& draws_dir, const std::string& data_dir,
                 const std::string& out_path) {
  const balm::PosteriorDraws draws =
      balm::read_draws_csv(draws_dir + "/draws.csv");
  const balm::Json manifest = balm::load_json_file(draws_dir + "/manifest.json");
  const balm::ModelSpec spec = balm::parse_model_spec(manifest.at("spec"));
  const balm::LayerDataset data = balm::read_dataset(data_dir);
  if (!balm::dataset_has_truth(data_dir))
    throw balm::data_error("evaluate: dataset has no truth/ directory");
  const balm::GroundTruth truth = balm::read_truth(data_dir);
  const balm::PosteriorSummary summary =
      balm::posterior_mean_summary(draws, data, spec);

  std::ostringstream table;
  table << "metric\tvalue\n";
  table << "template_correlation\t"
        << fmt6(balm::metric_template_correlation(summary.templates,
                                                  truth.templates))
        << '\n';
  table << "rel_frobenius\t"
        << fmt6(balm::metric_rel_frobenius(summary.templates, truth.templates))
        << '\n';
  table << "ari\t" << fmt6(balm::metric_ari(summary.W, truth.W)) << '\n';
  table << "a0_mean\t" << fmt6(summary.a0) << '\n';
  table << "a1_mean\t" << fmt6(summary.a1) << '\n';
  table << "sigma_mean\t" << fmt6(summary.sigma) << '\n';
  if (!truth.mask.empty()) {
    const balm::Vector probs =
        balm::predict_edge_probs(draws, data, truth.mask, spec);
    std::vector<std::uint8_t> labels;
    labels.reserve(truth.mask.size());
    for (const auto& [l, e] : truth.mask) labels.push_back(data.Z(l, e));
    table << "auc\t" << fmt6(balm::auc(probs, labels)) << '\n';
    table << "weight_mse\t"
          << fmt6(balm::metric_weight_mse(summary.mu, data, truth.mask))
          << '\n';
  }
  if (!out_path.empty()) balm::write_text_file(out_path, table.str());
  std::cout << table.str();
  return kExitOk;
}

int cmd_coupling(const std::string& config_path, const std::string& out_dir) {
  const balm::Json j = balm::load_json_file(config_path);
  balm::CouplingExperimentConfig cfg;
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    if (k == "a1_values")
      cfg.a1_values = item.value().get<std::vector<double>>();
    else if (k == "densities")
      cfg.densities = item.value().get<std::vector<double>>();
    else if (k == "replications")
      cfg.replications = item.value().get<int>();
    else if (k == "n")
      cfg.n = item.value().get<int>();
    else if (k == "L")
      cfg.L = item.value().get<int>();
    else if (k == "M")
      cfg.M = item.value().get<int>();
    else if (k == "K")
      cfg.K = item.value().get<int>();
    else if (k == "alpha")
      cfg.alpha = item.value().get<double>();
    else if (k == "sigma_star")
      cfg.sigma_star = item.value().get<double>();
    else if (k == "seed")
      cfg.seed = item.value().get<std::uint64_t>();
    else if (k == "sampler")
      cfg.sampler = balm::parse_sampler_config(item.value());
    else if (k == "spec")
      cfg.fit_spec_template = balm::parse_model_spec(item.value());
    else
      throw balm::config_error("coupling config: unknown key '" + k + "'");
  }
  const auto cells = balm::run_coupling_experiment(cfg);
  const std::string table = balm::coupling_report_table(cells);
  std::filesystem::create_directories(out_dir);
  balm::write_text_file(out_dir + "/coupling.tsv", table);
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian latent-mixture inference for zero-inflated "
               "weighted multilayer networks"};
  app.require_subcommand(1);
  app.fallthrough();

  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (0 = default)");

  std::string config_path, out_dir, data_dir, spec_path, sampler_path,
      draws_dir, out_path;
  SamplerOverrides overrides;
  std::optional<std::uint64_t> seed_opt;
  std::optional<double> mask_opt;
  std::vector<int> grid;
  int runs_per_m = 3;
  double mask_fraction = 0.15;
  std::vector<std::string> edge_args;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->add_option("--config", config_path, "sim config JSON")->required();
  simulate->add_option("--out", out_dir, "output dataset directory")->required();
  simulate->add_option("--seed", seed_opt, "override config seed");
  simulate->add_option("--mask-fraction", mask_opt, "override mask fraction");

  auto* fit = app.add_subcommand("fit", "sample the posterior");
  fit->add_option("--data", data_dir, "dataset directory")->required();
  fit->add_option("--spec", spec_path, "model spec JSON")->required();
  fit->add_option("--sampler", sampler_path, "sampler config JSON");
  fit->add_option("--out", out_dir, "output run directory")->required();
  fit->add_option("--seed", overrides.seed, "override sampler seed");
  fit->add_option("--chains", overrides.chains, "override chain count");
  fit->add_option("--warmup", overrides.warmup, "override warm-up iterations");
  fit->add_option("--samples", overrides.samples, "override stored draws");

  auto* diagnose = app.add_subcommand("diagnose", "convergence diagnostics");
  diagnose->add_option("--draws", draws_dir, "run directory")->required();
  diagnose->add_option("--data", data_dir, "dataset directory (optional)");
  diagnose->add_option("--edge", edge_args,
                       "opt-in per-edge mean diagnostics: 'layer,edge'");

  auto* select = app.add_subcommand("select", "model selection across M");
  select->add_option("--data", data_dir, "dataset directory")->required();
  select->add_option("--spec", spec_path, "base model spec JSON")->required();
  select->add_option("--sampler", sampler_path, "sampler config JSON");
  select->add_option("--grid", grid, "template counts, e.g. --grid 2 3 4")
      ->required();
  select->add_option("--runs-per-m", runs_per_m, "independent runs per M");
  select->add_option("--mask-fraction", mask_fraction,
                     "held-out fraction for AUC");
  select->add_option("--out", out_dir, "output directory")->required();
  select->add_option("--seed", overrides.seed, "override sampler seed");
  select->add_option("--chains", overrides.chains, "override chain count");
  select->add_option("--warmup", overrides.warmup, "override warm-up");
  select->add_option("--samples", overrides.samples, "override stored draws");

  auto* evaluate = app.add_subcommand("evaluate", "score a run against truth");
  evaluate->add_option("--draws", draws_dir, "run directory")->required();
  evaluate->add_option("--data", data_dir, "dataset directory with truth/")
      ->required();
  evaluate->add_option("--out", out_path, "write the metric table here");

  auto* coupling = app.add_subcommand(
      "coupling", "coupled-vs-decoupled recovery experiment grid");
  coupling->add_option("--config", config_path, "experiment config JSON")
      ->required();
  coupling->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);
  set_threads(threads);

  try {
    if (simulate->parsed())
      return cmd_simulate(config_path, out_dir, seed_opt, mask_opt);
    if (fit->parsed())
      return cmd_fit(data_dir, spec_path, sampler_path, out_dir, overrides);
    if (diagnose->parsed()) return cmd_diagnose(draws_dir, data_dir, edge_args);
    if (select->parsed())
      return cmd_select(data_dir, spec_path, sampler_path, out_dir, grid,
                        runs_per_m, mask_fraction, overrides);
    if (evaluate->parsed()) return cmd_evaluate(draws_dir, data_dir, out_path);
    if (coupling->parsed()) return cmd_coupling(config_path, out_dir);
  } catch (const balm::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const balm::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const balm::dim_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const balm::numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
