#ifndef BALM_IO_HPP
#define BALM_IO_HPP

#include <nlohmann/json.hpp>
#include <string>

#include "balm/diagnostics.hpp"
#include "balm/simgen.hpp"
#include "balm/types.hpp"

namespace balm {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

// --- dataset directories ---------------------------------------------------
// manifest.json + layer_0001.txt.. (n x n symmetric, zero diagonal, weights
// in [0,1), exact 0 = absent) + optional covariates.txt + optional truth/.
// Weights convert to Y = logit(w) at load; w outside [0,1) is rejected.

void write_dataset(const std::string& dir, const LayerDataset& data,
                   const GroundTruth* truth = nullptr,
                   const Json* generator_echo = nullptr);
LayerDataset read_dataset(const std::string& dir);
bool dataset_has_truth(const std::string& dir);
GroundTruth read_truth(const std::string& dir);

// FNV-1a over the manifest and every data file; stable content hash.
std::string dataset_fingerprint(const std::string& dir);

// --- draws files -------------------------------------------------------------
// One header line carrying the flat-coordinate layout descriptor, then one
// CSV row per draw per chain: chain,iter,divergent,energy,depth,phi...

void write_draws_csv(const std::string& path, const PosteriorDraws& draws);
PosteriorDraws read_draws_csv(const std::string& path);
void write_chain_stats(const std::string& path, const PosteriorDraws& draws);

// --- strict JSON configs -----------------------------------------------------
// Unknown keys are errors; missing required keys are named in the error.

Json load_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

ModelSpec parse_model_spec(const Json& j);
Json model_spec_to_json(const ModelSpec& spec);
SamplerConfig parse_sampler_config(const Json& j);
Json sampler_config_to_json(const SamplerConfig& config);
SimConfig parse_sim_config(const Json& j);
Json sim_config_to_json(const SimConfig& config);

// --- reports -----------------------------------------------------------------

std::string format_diagnostics_report(const DiagnosticsReport& report);

}  // namespace balm

#endif  // BALM_IO_HPP
