#include "tce/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tce/domains.hpp"
#include "tce/errors.hpp"
#include "tce/generator.hpp"
#include "tce/policy.hpp"
#include "tce/rng.hpp"
#include "tce/selection.hpp"
#include "tce/theory.hpp"

namespace tce::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

RunPaths run_paths(const fs::path& root) {
  RunPaths p;
  p.root = root;
  p.config_file = root / "config.txt";
  p.source = root / "source.tced";
  p.target = root / "target.tced";
  p.selection_file = root / "selection.json";
  p.models_dir = root / "models";
  p.generated = root / "generated.tced";
  p.train_set = root / "train_set.tced";
  p.policy_dir = root / "policy";
  p.metrics = root / "metrics.jsonl";
  p.report = root / "report.json";
  p.timing = root / "timing.json";
  return p;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "collect", "select", "train-score", "generate", "train-policy", "evaluate"};
  return names;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "pipeline: cannot open " + path.string());
  out << text;
  check(out.good(), "pipeline: write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "pipeline: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void require_artifact(const fs::path& path, const std::string& producer) {
  check(fs::exists(path), "pipeline: missing " + path.string() + "; run the '" +
                              producer + "' stage first");
}

domains::DomainPair configured_pair(const config::ExperimentConfig& cfg) {
  domains::DomainPair pair = domains::make_pair(cfg.domain.pair);
  if (cfg.domain.horizon > 0) {
    pair.source.horizon = cfg.domain.horizon;
    pair.target.horizon = cfg.domain.horizon;
  }
  return pair;
}

datasets::TransitionDataset with_hash(const datasets::TransitionDataset& ds,
                                      const std::string& hash) {
  datasets::DatasetMeta meta = ds.meta();
  meta.config_hash = hash;
  return {ds.states(), ds.actions(),   ds.rewards(),    ds.next_states(),
          ds.dones(),  ds.origins(),   std::move(meta), ds.scaler()};
}

selection::SelectionResult selection_from_json(const std::string& text) {
  const json j = json::parse(text);
  selection::SelectionResult r;
  r.lambda = j.at("lambda").get<double>();
  r.source_size = j.at("source_size").get<int>();
  r.indices = j.at("indices").get<std::vector<int>>();
  r.threshold = j.at("threshold").is_null()
                    ? std::numeric_limits<double>::quiet_NaN()
                    : j.at("threshold").get<double>();
  return r;
}

void stage_collect(const config::ExperimentConfig& cfg, const RunPaths& p) {
  const domains::DomainPair pair = configured_pair(cfg);
  const std::string hash = config::config_hash(cfg);
  const auto src = domains::collect(pair.source,
                                    domains::tier_from_name(cfg.data.source_tier),
                                    cfg.data.source_size,
                                    Rng::derive(cfg.run.seed, "collect-source"),
                                    datasets::Origin::Source);
  const auto tgt = domains::collect(pair.target,
                                    domains::tier_from_name(cfg.data.target_tier),
                                    cfg.data.target_size,
                                    Rng::derive(cfg.run.seed, "collect-target"),
                                    datasets::Origin::Target);
  datasets::write_tced(p.source, with_hash(src, hash));
  datasets::write_tced(p.target, with_hash(tgt, hash));
}

void stage_select(const config::ExperimentConfig& cfg, const RunPaths& p) {
  require_artifact(p.source, "collect");
  require_artifact(p.target, "collect");
  const auto src = datasets::read_tced(p.source);
  const auto tgt = datasets::read_tced(p.target);
  // The score-training pool applies lambda_cov internally; this artifact is
  // the lambda_mix selection that the sm variant splices into the policy set.
  const double lambda = config::variant_spec(cfg).kind == datasets::Variant::Sm
                            ? cfg.mix.lambda_mix
                            : 0.0;
  const selection::SelectionResult sel = selection::select(src, tgt, lambda);
  write_text(p.selection_file, selection::selection_to_json(sel) + "\n");
}

void stage_train_score(const config::ExperimentConfig& cfg, const RunPaths& p) {
  require_artifact(p.source, "collect");
  require_artifact(p.target, "collect");
  const auto src = datasets::read_tced(p.source);
  const auto tgt = datasets::read_tced(p.target);
  const auto models =
      generator::train_models(src, tgt, config::noise_schedule(cfg),
                              config::gen_config(cfg),
                              Rng::derive(cfg.run.seed, "train-models"));
  generator::save_models(p.models_dir, models);
}

void stage_generate(const config::ExperimentConfig& cfg, const RunPaths& p) {
  require_artifact(p.source, "collect");
  require_artifact(p.models_dir / "models.json", "train-score");
  const auto src = datasets::read_tced(p.source);
  const auto models = generator::load_models(p.models_dir);
  const auto gen = generator::synthesize(models, config::noise_schedule(cfg),
                                         config::sampler_config(cfg),
                                         config::gen_config(cfg), src.size(),
                                         Rng::derive(cfg.run.seed, "generate"));
  datasets::write_tced(p.generated, gen);
}

void stage_train_policy(const config::ExperimentConfig& cfg, const RunPaths& p) {
  require_artifact(p.source, "collect");
  require_artifact(p.target, "collect");
  require_artifact(p.generated, "generate");
  const auto src = datasets::read_tced(p.source);
  const auto tgt = datasets::read_tced(p.target);
  const auto gen = datasets::read_tced(p.generated);

  const datasets::VariantSpec vspec = config::variant_spec(cfg);
  selection::SelectionResult sel;
  const selection::SelectionResult* sel_ptr = nullptr;
  if (vspec.kind == datasets::Variant::Sm) {
    require_artifact(p.selection_file, "select");
    sel = selection_from_json(read_text(p.selection_file));
    sel_ptr = &sel;
  }
  const auto train = datasets::build_training_set(vspec, src, tgt, gen, sel_ptr);
  datasets::write_tced(p.train_set, train);

  const domains::DomainPair pair = configured_pair(cfg);
  const domains::RefReturns refs = domains::reference_returns(
      pair.target, cfg.domain.ref_episodes, Rng::derive(cfg.run.seed, "refs"));
  const policy::TrainResult result =
      policy::iql_train(train, config::iql_config(cfg),
                        Rng::derive(cfg.run.seed, "train-policy"), &pair.target, &refs);

  std::string lines;
  for (const policy::TrainMetric& m : result.metrics) {
    json row;
    row["step"] = m.step;
    row["v_loss"] = m.v_loss;
    row["q_loss"] = m.q_loss;
    row["policy_loss"] = m.policy_loss;
    if (m.has_ns) row["ns"] = m.ns;
    lines += row.dump() + "\n";
  }
  write_text(p.metrics, lines);
  policy::save_policy(p.policy_dir, result.model);
}

json error_report_json(const domains::ErrorReport& rep) {
  return json::parse(domains::error_report_to_json(rep));
}

void stage_evaluate(const config::ExperimentConfig& cfg, const RunPaths& p) {
  require_artifact(p.policy_dir / "policy.json", "train-policy");
  require_artifact(p.generated, "generate");
  require_artifact(p.target, "collect");
  require_artifact(p.source, "collect");
  require_artifact(p.train_set, "train-policy");

  const domains::DomainPair pair = configured_pair(cfg);
  const policy::PolicyModel model = policy::load_policy(p.policy_dir);
  const domains::RefReturns refs = domains::reference_returns(
      pair.target, cfg.domain.ref_episodes, Rng::derive(cfg.run.seed, "refs"));
  const policy::EvalResult ev =
      policy::evaluate(model.actor, pair.target, refs, cfg.iql.eval_episodes,
                       Rng::derive(cfg.run.seed, "evaluate"));

  const auto gen = datasets::read_tced(p.generated);
  const auto tgt = datasets::read_tced(p.target);
  const auto models = generator::load_models(p.models_dir);
  const domains::InverseModelFn inv = [&](const Eigen::VectorXd& s,
                                          const Eigen::VectorXd& s_next) {
    return Eigen::VectorXd(generator::eval_inverse(models.inv, s.transpose(),
                                                   s_next.transpose())
                               .row(0));
  };
  const domains::ErrorReport errors = domains::error_report(gen, pair.target, tgt, &inv);

  json rep;
  rep["format"] = "tce-report";
  rep["version"] = 1;
  rep["pair"] = cfg.domain.pair;
  rep["variant"] = cfg.mix.variant;
  rep["lambda_cov"] = cfg.mix.lambda_cov;
  rep["lambda_mix"] = cfg.mix.lambda_mix;
  rep["seed"] = cfg.run.seed;
  rep["config_hash"] = config::config_hash(cfg);
  rep["sizes"] = {{"source", datasets::read_tced(p.source).size()},
                  {"target", tgt.size()},
                  {"generated", gen.size()},
                  {"train", datasets::read_tced(p.train_set).size()}};
  rep["returns"] = {{"j", ev.j},
                    {"ns", ev.ns},
                    {"j_random", refs.j_random},
                    {"j_expert", refs.j_expert}};
  rep["errors"] = error_report_json(errors);
  rep["noise_floor"] = domains::noise_floor_mean_norm(pair.target);
  if (cfg.run.verify_bounds) {
    const theory::BoundReport bounds = theory::verify_bounds(
        cfg.run.verify_instances, Rng::derive(cfg.run.seed, "verify-bounds"));
    rep["bounds"] = {{"instances", bounds.instances},
                     {"gap_violations", bounds.gap_violations},
                     {"ordering_violations", bounds.ordering_violations},
                     {"max_residual", bounds.max_residual},
                     {"max_gap_to_value_bound", bounds.max_gap_to_value_bound}};
  }
  write_text(p.report, rep.dump(2) + "\n");
}

void dispatch(const config::ExperimentConfig& cfg, const RunPaths& p,
              const std::string& stage) {
  if (stage == "collect") return stage_collect(cfg, p);
  if (stage == "select") return stage_select(cfg, p);
  if (stage == "train-score") return stage_train_score(cfg, p);
  if (stage == "generate") return stage_generate(cfg, p);
  if (stage == "train-policy") return stage_train_policy(cfg, p);
  if (stage == "evaluate") return stage_evaluate(cfg, p);
  throw ContractViolation("pipeline: unknown stage '" + stage + "'");
}

void record_timing(const fs::path& timing_file, const std::string& stage,
                   double seconds) {
  json j = json::object();
  if (fs::exists(timing_file)) j = json::parse(read_text(timing_file));
  j[stage] = seconds;
  write_text(timing_file, j.dump(2) + "\n");
}

void timed_stage(const config::ExperimentConfig& cfg, const RunPaths& p,
                 const std::string& stage) {
  const auto t0 = std::chrono::steady_clock::now();
  dispatch(cfg, p, stage);
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  record_timing(p.timing, stage, dt.count());
}

}  // namespace

void run_stage(const config::ExperimentConfig& cfg, const std::string& stage) {
  cfg.validate();
  const RunPaths p = run_paths(cfg.run.out);
  fs::create_directories(p.root);
  if (!fs::exists(p.config_file)) write_text(p.config_file, config::serialize(cfg));
  timed_stage(cfg, p, stage);
}

RunReport run_pipeline(const config::ExperimentConfig& cfg, const std::string& from) {
  cfg.validate();
  const RunPaths p = run_paths(cfg.run.out);
  fs::create_directories(p.root);
  write_text(p.config_file, config::serialize(cfg));

  const auto& names = stage_names();
  std::size_t start = 0;
  if (!from.empty()) {
    const auto it = std::find(names.begin(), names.end(), from);
    check(it != names.end(), "pipeline: unknown stage '" + from + "'");
    start = static_cast<std::size_t>(it - names.begin());
  }
  for (std::size_t i = start; i < names.size(); ++i) timed_stage(cfg, p, names[i]);
  return read_report(p.report);
}

RunReport read_report(const fs::path& report_file) {
  RunReport r;
  r.json = read_text(report_file);
  const json j = json::parse(r.json);
  r.ns = j.at("returns").at("ns").get<double>();
  r.j = j.at("returns").at("j").get<double>();
  r.transition_error = j.at("errors").at("transition").at("mean").get<double>();
  r.reward_error = j.at("errors").at("reward").at("mean").get<double>();
  r.action_error = j.at("errors").at("action").at("mean").get<double>();
  return r;
}

namespace {

std::string fmt_axis_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void apply_axis(config::ExperimentConfig& cfg, const std::string& axis, double v) {
  if (axis == "lambda_cov") {
    cfg.mix.lambda_cov = v;
    // the zero-coverage cell of an og sweep is the target-only augmentation
    if (v == 0.0 && cfg.mix.variant == "og") cfg.mix.variant = "simple-aug";
    return;
  }
  if (axis == "lambda_mix") {
    cfg.mix.lambda_mix = v;
    return;
  }
  if (axis == "K" || axis == "target_size") {
    const int n = static_cast<int>(v);
    check(static_cast<double>(n) == v && n >= 1,
          "sweep: axis '" + axis + "' needs positive integers");
    (axis == "K" ? cfg.sampler.K : cfg.data.target_size) = n;
    return;
  }
  throw ContractViolation("sweep: unknown axis '" + axis + "'");
}

}  // namespace

SweepTable sweep(const config::ExperimentConfig& cfg, const std::string& axis,
                 std::vector<double> values) {
  check(!values.empty(), "sweep: no axis values");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<std::uint64_t> seeds = cfg.run.seeds;
  if (seeds.empty()) seeds.push_back(cfg.run.seed);

  const fs::path sweep_dir = fs::path(cfg.run.out) / ("sweep-" + axis);
  SweepTable table;
  table.axis = axis;
  for (double v : values) {
    for (std::uint64_t s : seeds) {
      config::ExperimentConfig cell = cfg;
      apply_axis(cell, axis, v);
      cell.run.seed = s;
      cell.run.seeds.clear();
      const std::string name = axis + "-" + fmt_axis_value(v) + "-seed-" + std::to_string(s);
      cell.run.out = (sweep_dir / name).string();
      SweepCell out;
      out.value = v;
      out.seed = s;
      out.dir = name;
      out.report = run_pipeline(cell);
      table.cells.push_back(std::move(out));
    }
  }
  write_text(sweep_dir / "sweep.csv", sweep_to_csv(table));
  write_text(sweep_dir / "sweep.json", sweep_to_json(table));
  return table;
}

std::string sweep_to_csv(const SweepTable& table) {
  std::string out = "axis,value,seed,ns,j,transition_error,reward_error,action_error\n";
  char buf[256];
  for (const SweepCell& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  table.axis.c_str(), c.value,
                  static_cast<unsigned long long>(c.seed), c.report.ns, c.report.j,
                  c.report.transition_error, c.report.reward_error,
                  c.report.action_error);
    out += buf;
  }
  return out;
}

std::string sweep_to_json(const SweepTable& table) {
  json j;
  j["format"] = "tce-sweep";
  j["version"] = 1;
  j["axis"] = table.axis;
  j["cells"] = json::array();
  for (const SweepCell& c : table.cells) {
    j["cells"].push_back({{"value", c.value},
                          {"seed", c.seed},
                          {"dir", c.dir.string()},
                          {"ns", c.report.ns},
                          {"j", c.report.j},
                          {"transition_error", c.report.transition_error},
                          {"reward_error", c.report.reward_error},
                          {"action_error", c.report.action_error}});
  }
  return j.dump(2) + "\n";
}

std::string report_errors_json(const fs::path& generated_file,
                               const std::string& pair_name,
                               const fs::path& holdout_file,
                               const fs::path& models_dir) {
  const auto gen = datasets::read_tced(generated_file);
  const auto holdout = datasets::read_tced(holdout_file);
  const domains::DomainPair pair = domains::make_pair(pair_name);

  domains::ErrorReport rep;
  if (!models_dir.empty()) {
    const auto models = generator::load_models(models_dir);
    const domains::InverseModelFn inv = [&](const Eigen::VectorXd& s,
                                            const Eigen::VectorXd& s_next) {
      return Eigen::VectorXd(generator::eval_inverse(models.inv, s.transpose(),
                                                     s_next.transpose())
                                 .row(0));
    };
    rep = domains::error_report(gen, pair.target, holdout, &inv);
  } else {
    rep = domains::error_report(gen, pair.target, holdout);
  }

  json j;
  j["format"] = "tce-errors";
  j["version"] = 1;
  j["pair"] = pair_name;
  j["report"] = error_report_json(rep);
  return j.dump(2) + "\n";
}

}  // namespace tce::pipeline
