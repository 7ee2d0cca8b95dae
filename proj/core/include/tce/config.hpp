#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/datasets.hpp"
#include "tce/diffusion.hpp"
#include "tce/generator.hpp"
#include "tce/policy.hpp"

namespace tce::config {

struct DomainBlock {
  std::string pair = "small-drift";
  int horizon = 0;  // 0 keeps the pair's own horizon
  int ref_episodes = 100;

  bool operator==(const DomainBlock&) const = default;
};

struct DataBlock {
  int source_size = 20000;
  int target_size = 500;
  std::string source_tier = "medium";
  std::string target_tier = "medium";
  int n_generate = 1000;  // < 0 derives round((1 - lambda_mix) * source_size)

  bool operator==(const DataBlock&) const = default;
};

struct MixBlock {
  std::string variant = "og";
  double lambda_cov = 0.2;
  double lambda_mix = 0.0;

  bool operator==(const MixBlock&) const = default;
};

struct ScheduleBlock {
  double alpha_min = 0.1;
  double alpha_max = 20.0;

  bool operator==(const ScheduleBlock&) const = default;
};

struct SamplerBlock {
  int K = 256;
  int corrector_steps = 1;
  double snr = 0.16;
  double tau_floor = 1e-3;

  bool operator==(const SamplerBlock&) const = default;
};

struct ModelBlock {
  int score_hidden = 64;
  int score_blocks = 2;
  std::vector<int> embed_widths = {32, 32};
  int aux_hidden = 32;
  int aux_blocks = 1;
  int mix_epochs = 8000;
  int tran_epochs = 5000;
  int aux_epochs = 1500;
  int batch = 64;
  double lr = 1e-3;
  double holdout_frac = 0.1;
  bool one_stage = false;
  bool reward_uses_action = false;

  bool operator==(const ModelBlock&) const = default;
};

struct IqlBlock {
  double tau_v = 0.7;
  double kappa = 3.0;
  double beta = 0.001;
  double gamma = 0.99;
  double polyak = 0.005;
  double adv_weight_clip = 100.0;
  double lr = 3e-4;
  int steps = 20000;
  int bc_steps = 2000;
  int batch_target = 128;
  int batch_rest = 128;
  int hidden = 64;
  int blocks = 1;
  int eval_episodes = 10;
  int eval_every = 0;

  bool operator==(const IqlBlock&) const = default;
};

struct RunBlock {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // sweep cells; empty falls back to {seed}
  std::string out = "runs/out";
  bool verify_bounds = false;
  int verify_instances = 100;

  bool operator==(const RunBlock&) const = default;
};

// One experiment, end to end. Field defaults are the desk profile; the paper
// profile swaps in the published training scale.
struct ExperimentConfig {
  DomainBlock domain;
  DataBlock data;
  MixBlock mix;
  ScheduleBlock schedule;
  SamplerBlock sampler;
  ModelBlock model;
  IqlBlock iql;
  RunBlock run;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig desk_profile();
ExperimentConfig paper_profile();
ExperimentConfig profile(const std::string& name);

// One `key = value` per line with dotted namespaces (sampler.K=500), '#'
// comments, later lines overriding earlier ones. Unknown keys and malformed
// values are contract violations. parse(serialize(c), {}) == c.
ExperimentConfig parse(const std::string& text, ExperimentConfig base);
ExperimentConfig parse_file(const std::filesystem::path& path, ExperimentConfig base);
std::string serialize(const ExperimentConfig& c);
const std::vector<std::string>& known_keys();

// CRC-32 of the serialized config with run.out blanked, so the hash names
// the experiment rather than its location on disk.
std::string config_hash(const ExperimentConfig& c);

// Views for the modules the pipeline drives.
datasets::VariantSpec variant_spec(const ExperimentConfig& c);
diffusion::NoiseSchedule noise_schedule(const ExperimentConfig& c);
diffusion::SamplerConfig sampler_config(const ExperimentConfig& c);
generator::GenConfig gen_config(const ExperimentConfig& c);
policy::IqlConfig iql_config(const ExperimentConfig& c);

}  // namespace tce::config
