#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tce/config.hpp"

namespace tce::pipeline {

// On-disk layout of one run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config_file;     // config snapshot
  std::filesystem::path source;          // source.tced
  std::filesystem::path target;          // target.tced
  std::filesystem::path selection_file;  // selection.json
  std::filesystem::path models_dir;      // models/
  std::filesystem::path generated;       // generated.tced
  std::filesystem::path train_set;       // train_set.tced
  std::filesystem::path policy_dir;      // policy/
  std::filesystem::path metrics;         // metrics.jsonl
  std::filesystem::path report;          // report.json
  std::filesystem::path timing;          // timing.json (excluded from determinism)
};

RunPaths run_paths(const std::filesystem::path& root);

// Stage names in execution order: collect, select, train-score, generate,
// train-policy (assembles the training set first), evaluate.
const std::vector<std::string>& stage_names();

// Each stage reads its inputs from the run directory and persists its
// outputs there; missing inputs are contract violations naming the stage
// that produces them.
void run_stage(const config::ExperimentConfig& cfg, const std::string& stage);

struct RunReport {
  double ns = 0.0;
  double j = 0.0;
  double transition_error = 0.0;
  double reward_error = 0.0;
  double action_error = 0.0;
  std::string json;  // full report.json text
};

// All stages in order into cfg.run.out; `from` resumes at that stage and
// reuses the artifacts before it. Wall times go to timing.json.
RunReport run_pipeline(const config::ExperimentConfig& cfg, const std::string& from = "");

RunReport read_report(const std::filesystem::path& report_file);

struct SweepCell {
  double value = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  RunReport report;
};

struct SweepTable {
  std::string axis;
  std::vector<SweepCell> cells;
};

// Axes: lambda_cov, lambda_mix, K, target_size. Values are deduplicated and
// sorted; each value runs once per run.seeds entry (run.seed when empty)
// in its own subdirectory of cfg.run.out. Writes sweep.csv and sweep.json.
SweepTable sweep(const config::ExperimentConfig& cfg, const std::string& axis,
                 std::vector<double> values);

std::string sweep_to_csv(const SweepTable& table);
std::string sweep_to_json(const SweepTable& table);

// Fidelity of a generated dataset against the named pair's target dynamics,
// judged with the run's inverse model when a models directory is given.
std::string report_errors_json(const std::filesystem::path& generated_file,
                               const std::string& pair_name,
                               const std::filesystem::path& holdout_file,
                               const std::filesystem::path& models_dir = {});

}  // namespace tce::pipeline
