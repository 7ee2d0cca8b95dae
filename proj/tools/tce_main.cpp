#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tce/config.hpp"
#include "tce/datasets.hpp"
#include "tce/errors.hpp"
#include "tce/netcore.hpp"
#include "tce/pipeline.hpp"
#include "tce/theory.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string profile = "desk";
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool out_set = false;
};

void add_common(CLI::App* cmd, const std::shared_ptr<CommonOpts>& opts) {
  cmd->add_option("--config", opts->config_path, "key=value config file overlaid on the profile")
      ->check(CLI::ExistingFile);
  cmd->add_option("--profile", opts->profile, "base profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", opts->seed, "override run.seed")
      ->each([opts](const std::string&) { opts->seed_set = true; });
  cmd->add_option("--out", opts->out, "override run.out (the run directory)")
      ->each([opts](const std::string&) { opts->out_set = true; });
}

tce::config::ExperimentConfig load_config(const CommonOpts& opts) {
  tce::config::ExperimentConfig cfg = tce::config::profile(opts.profile);
  if (!opts.config_path.empty()) cfg = tce::config::parse_file(opts.config_path, cfg);
  if (opts.seed_set) cfg.run.seed = opts.seed;
  if (opts.out_set) cfg.run.out = opts.out;
  return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> values;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ',')) {
    const char* begin = item.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    tce::check(end == begin + item.size() && !item.empty(),
               "sweep: bad value '" + item + "'");
    values.push_back(v);
  }
  tce::check(!values.empty(), "sweep: --values is empty");
  return values;
}

std::string inspect_path(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.extension() == ".tced") return tce::datasets::describe_tced(p);
  if (p.extension() == ".ckpt") {
    const tce::netcore::Checkpoint ck = tce::netcore::load_checkpoint(p);
    nlohmann::json j;
    j["input_dim"] = ck.spec.input_dim;
    j["hidden_dim"] = ck.spec.hidden_dim;
    j["num_res_blocks"] = ck.spec.num_res_blocks;
    j["output_dim"] = ck.spec.output_dim;
    j["embeds"] = nlohmann::json::array();
    for (const auto& e : ck.spec.embeds)
      j["embeds"].push_back({{"name", e.name}, {"input_dim", e.input_dim},
                             {"widths", e.widths}});
    j["param_count"] = tce::netcore::param_count(ck.spec);
    j["params_crc32"] = tce::netcore::params_crc32(ck.spec, ck.params);
    j["seed"] = ck.seed;
    j["step"] = ck.step;
    return j.dump(2);
  }
  throw tce::ContractViolation("inspect: unsupported file type: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"target-aligned coverage expansion toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // per-stage subcommands share the run directory contract of `run`
  for (const std::string& stage : tce::pipeline::stage_names()) {
    auto opts = std::make_shared<CommonOpts>();
    CLI::App* cmd = app.add_subcommand(stage, "run the '" + stage + "' stage");
    add_common(cmd, opts);
    cmd->callback([opts, stage] {
      tce::pipeline::run_stage(load_config(*opts), stage);
    });
  }

  {
    auto opts = std::make_shared<CommonOpts>();
    auto from = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand("run", "run the full pipeline");
    add_common(cmd, opts);
    cmd->add_option("--stage", *from, "resume from this stage, reusing earlier artifacts");
    cmd->callback([opts, from] {
      const tce::pipeline::RunReport rep =
          tce::pipeline::run_pipeline(load_config(*opts), *from);
      std::cout << rep.json;
    });
  }

  {
    auto opts = std::make_shared<CommonOpts>();
    auto axis = std::make_shared<std::string>();
    auto values = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand("sweep", "run one pipeline per axis value x seed");
    add_common(cmd, opts);
    cmd->add_option("--axis", *axis, "lambda_cov, lambda_mix, K or target_size")
        ->required();
    cmd->add_option("--values", *values, "comma-separated axis values")->required();
    cmd->callback([opts, axis, values] {
      const tce::pipeline::SweepTable table =
          tce::pipeline::sweep(load_config(*opts), *axis, parse_values(*values));
      std::cout << tce::pipeline::sweep_to_csv(table);
    });
  }

  {
    auto instances = std::make_shared<int>(100);
    auto seed = std::make_shared<std::uint64_t>(1);
    CLI::App* cmd = app.add_subcommand(
        "verify-bounds", "check the return-gap certificates on random tabular MDPs");
    cmd->add_option("--instances", *instances, "number of random instances");
    cmd->add_option("--seed", *seed, "instance stream seed");
    cmd->callback([instances, seed, &exit_code] {
      const tce::theory::BoundReport rep = tce::theory::verify_bounds(*instances, *seed);
      std::cout << tce::theory::bound_report_to_json(rep) << "\n";
      if (rep.gap_violations > 0 || rep.ordering_violations > 0) exit_code = 1;
    });
  }

  {
    auto gen = std::make_shared<std::string>();
    auto pair = std::make_shared<std::string>();
    auto holdout = std::make_shared<std::string>();
    auto models = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand(
        "report-errors", "judge a generated dataset against the target dynamics");
    cmd->add_option("--gen", *gen, "generated .tced file")->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--pair", *pair, "domain pair name")->required();
    cmd->add_option("--holdout", *holdout, "target .tced used as the holdout")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--models", *models, "models directory for the inverse-model judge");
    cmd->callback([gen, pair, holdout, models] {
      std::cout << tce::pipeline::report_errors_json(*gen, *pair, *holdout, *models);
    });
  }

  {
    auto path = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand("inspect", "describe a .tced or .ckpt file");
    cmd->add_option("path", *path, "file to describe")->required()
        ->check(CLI::ExistingFile);
    cmd->callback([path] { std::cout << inspect_path(*path) << "\n"; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const tce::ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const tce::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}
