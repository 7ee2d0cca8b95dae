#include "tce/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <zlib.h>

#include "tce/domains.hpp"
#include "tce/errors.hpp"

namespace tce::config {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const double out = std::strtod(begin, &end);
  check(end == begin + v.size() && !v.empty() && std::isfinite(out),
        "config: bad real for " + key + ": '" + v + "'");
  return out;
}

long long parse_ll(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const long long out = std::strtoll(begin, &end, 10);
  check(end == begin + v.size() && !v.empty(),
        "config: bad integer for " + key + ": '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_ll(key, v));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const unsigned long long out = std::strtoull(begin, &end, 10);
  check(end == begin + v.size() && !v.empty() && v[0] != '-',
        "config: bad seed for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractViolation("config: bad boolean for " + key + ": '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  if (!parts.empty() && parts.back().empty()) parts.pop_back();
  return parts;
}

template <class T>
std::string join_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

struct FieldBinding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

using Cfg = ExperimentConfig;

template <class Ref>
FieldBinding int_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return std::to_string(ref(const_cast<Cfg&>(c))); },
          [key, ref](Cfg& c, const std::string& v) { ref(c) = parse_int(key, v); }};
}

template <class Ref>
FieldBinding dbl_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return fmt_double(ref(const_cast<Cfg&>(c))); },
          [key, ref](Cfg& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <class Ref>
FieldBinding str_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return ref(const_cast<Cfg&>(c)); },
          [ref](Cfg& c, const std::string& v) { ref(c) = v; }};
}

template <class Ref>
FieldBinding bool_field(const std::string& key, Ref ref) {
  return {key,
          [ref](const Cfg& c) { return ref(const_cast<Cfg&>(c)) ? "true" : "false"; },
          [key, ref](Cfg& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

template <class Ref>
FieldBinding u64_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return std::to_string(ref(const_cast<Cfg&>(c))); },
          [key, ref](Cfg& c, const std::string& v) { ref(c) = parse_u64(key, v); }};
}

template <class Ref>
FieldBinding ints_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return join_list(ref(const_cast<Cfg&>(c))); },
          [key, ref](Cfg& c, const std::string& v) {
            std::vector<int> xs;
            for (const std::string& item : split_list(v)) xs.push_back(parse_int(key, item));
            ref(c) = std::move(xs);
          }};
}

template <class Ref>
FieldBinding u64s_field(const std::string& key, Ref ref) {
  return {key, [ref](const Cfg& c) { return join_list(ref(const_cast<Cfg&>(c))); },
          [key, ref](Cfg& c, const std::string& v) {
            std::vector<std::uint64_t> xs;
            for (const std::string& item : split_list(v)) xs.push_back(parse_u64(key, item));
            ref(c) = std::move(xs);
          }};
}

const std::vector<FieldBinding>& bindings() {
  static const std::vector<FieldBinding> table = {
      str_field("domain.pair", [](Cfg& c) -> std::string& { return c.domain.pair; }),
      int_field("domain.horizon", [](Cfg& c) -> int& { return c.domain.horizon; }),
      int_field("domain.ref_episodes",
                [](Cfg& c) -> int& { return c.domain.ref_episodes; }),
      int_field("data.source_size", [](Cfg& c) -> int& { return c.data.source_size; }),
      int_field("data.target_size", [](Cfg& c) -> int& { return c.data.target_size; }),
      str_field("data.source_tier",
                [](Cfg& c) -> std::string& { return c.data.source_tier; }),
      str_field("data.target_tier",
                [](Cfg& c) -> std::string& { return c.data.target_tier; }),
      int_field("data.n_generate", [](Cfg& c) -> int& { return c.data.n_generate; }),
      str_field("mix.variant", [](Cfg& c) -> std::string& { return c.mix.variant; }),
      dbl_field("mix.lambda_cov", [](Cfg& c) -> double& { return c.mix.lambda_cov; }),
      dbl_field("mix.lambda_mix", [](Cfg& c) -> double& { return c.mix.lambda_mix; }),
      dbl_field("schedule.alpha_min",
                [](Cfg& c) -> double& { return c.schedule.alpha_min; }),
      dbl_field("schedule.alpha_max",
                [](Cfg& c) -> double& { return c.schedule.alpha_max; }),
      int_field("sampler.K", [](Cfg& c) -> int& { return c.sampler.K; }),
      int_field("sampler.corrector_steps",
                [](Cfg& c) -> int& { return c.sampler.corrector_steps; }),
      dbl_field("sampler.snr", [](Cfg& c) -> double& { return c.sampler.snr; }),
      dbl_field("sampler.tau_floor", [](Cfg& c) -> double& { return c.sampler.tau_floor; }),
      int_field("model.score_hidden", [](Cfg& c) -> int& { return c.model.score_hidden; }),
      int_field("model.score_blocks", [](Cfg& c) -> int& { return c.model.score_blocks; }),
      ints_field("model.embed_widths",
                 [](Cfg& c) -> std::vector<int>& { return c.model.embed_widths; }),
      int_field("model.aux_hidden", [](Cfg& c) -> int& { return c.model.aux_hidden; }),
      int_field("model.aux_blocks", [](Cfg& c) -> int& { return c.model.aux_blocks; }),
      int_field("model.mix_epochs", [](Cfg& c) -> int& { return c.model.mix_epochs; }),
      int_field("model.tran_epochs", [](Cfg& c) -> int& { return c.model.tran_epochs; }),
      int_field("model.aux_epochs", [](Cfg& c) -> int& { return c.model.aux_epochs; }),
      int_field("model.batch", [](Cfg& c) -> int& { return c.model.batch; }),
      dbl_field("model.lr", [](Cfg& c) -> double& { return c.model.lr; }),
      dbl_field("model.holdout_frac",
                [](Cfg& c) -> double& { return c.model.holdout_frac; }),
      bool_field("model.one_stage", [](Cfg& c) -> bool& { return c.model.one_stage; }),
      bool_field("model.reward_uses_action",
                 [](Cfg& c) -> bool& { return c.model.reward_uses_action; }),
      dbl_field("iql.tau_v", [](Cfg& c) -> double& { return c.iql.tau_v; }),
      dbl_field("iql.kappa", [](Cfg& c) -> double& { return c.iql.kappa; }),
      dbl_field("iql.beta", [](Cfg& c) -> double& { return c.iql.beta; }),
      dbl_field("iql.gamma", [](Cfg& c) -> double& { return c.iql.gamma; }),
      dbl_field("iql.polyak", [](Cfg& c) -> double& { return c.iql.polyak; }),
      dbl_field("iql.adv_weight_clip",
                [](Cfg& c) -> double& { return c.iql.adv_weight_clip; }),
      dbl_field("iql.lr", [](Cfg& c) -> double& { return c.iql.lr; }),
      int_field("iql.steps", [](Cfg& c) -> int& { return c.iql.steps; }),
      int_field("iql.bc_steps", [](Cfg& c) -> int& { return c.iql.bc_steps; }),
      int_field("iql.batch_target", [](Cfg& c) -> int& { return c.iql.batch_target; }),
      int_field("iql.batch_rest", [](Cfg& c) -> int& { return c.iql.batch_rest; }),
      int_field("iql.hidden", [](Cfg& c) -> int& { return c.iql.hidden; }),
      int_field("iql.blocks", [](Cfg& c) -> int& { return c.iql.blocks; }),
      int_field("iql.eval_episodes", [](Cfg& c) -> int& { return c.iql.eval_episodes; }),
      int_field("iql.eval_every", [](Cfg& c) -> int& { return c.iql.eval_every; }),
      u64_field("run.seed", [](Cfg& c) -> std::uint64_t& { return c.run.seed; }),
      u64s_field("run.seeds",
                 [](Cfg& c) -> std::vector<std::uint64_t>& { return c.run.seeds; }),
      str_field("run.out", [](Cfg& c) -> std::string& { return c.run.out; }),
      bool_field("run.verify_bounds", [](Cfg& c) -> bool& { return c.run.verify_bounds; }),
      int_field("run.verify_instances",
                [](Cfg& c) -> int& { return c.run.verify_instances; }),
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto& pairs = domains::shipped_pairs();
  check(std::find(pairs.begin(), pairs.end(), domain.pair) != pairs.end(),
        "config: unknown domain pair '" + domain.pair + "'");
  check(domain.horizon >= 0, "config: domain.horizon must be >= 0");
  check(domain.ref_episodes >= 1, "config: domain.ref_episodes must be positive");
  check(data.source_size >= 1 && data.target_size >= 1,
        "config: dataset sizes must be positive");
  check(data.n_generate >= -1, "config: data.n_generate must be >= -1");
  domains::tier_from_name(data.source_tier);
  domains::tier_from_name(data.target_tier);
  check(schedule.alpha_min > 0.0 && schedule.alpha_max > schedule.alpha_min,
        "config: need 0 < alpha_min < alpha_max");
  check(sampler.K >= 1, "config: sampler.K must be positive");
  check(sampler.corrector_steps >= 0, "config: sampler.corrector_steps must be >= 0");
  check(sampler.snr > 0.0, "config: sampler.snr must be positive");
  check(!run.out.empty(), "config: run.out must be set");
  check(run.verify_instances >= 1, "config: run.verify_instances must be positive");
  variant_spec(*this).validate();
  gen_config(*this).validate();
  iql_config(*this).validate();
}

ExperimentConfig desk_profile() { return {}; }

ExperimentConfig paper_profile() {
  ExperimentConfig c;
  c.data.source_size = 1000000;
  c.data.target_size = 5000;
  c.data.n_generate = -1;
  c.sampler.K = 500;
  c.model.score_hidden = 256;
  c.model.score_blocks = 4;
  c.model.embed_widths = {128, 128};
  c.model.aux_hidden = 256;
  c.model.aux_blocks = 3;
  c.model.mix_epochs = 10000;
  c.model.tran_epochs = 5000;
  c.model.aux_epochs = 1000;
  c.model.batch = 128;
  c.model.lr = 1e-4;
  c.iql.steps = 1000000;
  c.iql.bc_steps = 10000;
  c.iql.hidden = 256;
  c.iql.blocks = 2;
  return c;
}

ExperimentConfig profile(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ContractViolation("config: unknown profile '" + name + "'");
}

ExperimentConfig parse(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos,
          "config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = bindings();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const FieldBinding& b) { return b.key == key; });
    check(it != table.end(), "config: unknown key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

ExperimentConfig parse_file(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), std::move(base));
}

std::string serialize(const ExperimentConfig& c) {
  std::string out;
  std::string section;
  for (const FieldBinding& b : bindings()) {
    const std::string head = b.key.substr(0, b.key.find('.'));
    if (head != section) {
      if (!section.empty()) out += "\n";
      section = head;
    }
    out += b.key + " = " + b.get(c) + "\n";
  }
  return out;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> ks;
    for (const FieldBinding& b : bindings()) ks.push_back(b.key);
    return ks;
  }();
  return keys;
}

std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig anon = c;
  anon.run.out = "";
  const std::string text = serialize(anon);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()),
                         static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

datasets::VariantSpec variant_spec(const ExperimentConfig& c) {
  datasets::VariantSpec spec;
  spec.kind = datasets::variant_from_name(c.mix.variant);
  spec.lambda_cov = c.mix.lambda_cov;
  spec.lambda_mix = c.mix.lambda_mix;
  return spec;
}

diffusion::NoiseSchedule noise_schedule(const ExperimentConfig& c) {
  return {c.schedule.alpha_min, c.schedule.alpha_max};
}

diffusion::SamplerConfig sampler_config(const ExperimentConfig& c) {
  diffusion::SamplerConfig s;
  s.K = c.sampler.K;
  s.corrector_steps = c.sampler.corrector_steps;
  s.corrector_snr = c.sampler.snr;
  s.tau_floor = c.sampler.tau_floor;
  return s;
}

generator::GenConfig gen_config(const ExperimentConfig& c) {
  generator::GenConfig g;
  g.lambda_cov = c.mix.lambda_cov;
  g.lambda_mix = c.mix.lambda_mix;
  g.n_generate = c.data.n_generate;
  g.mix_epochs = c.model.mix_epochs;
  g.tran_epochs = c.model.tran_epochs;
  g.aux_epochs = c.model.aux_epochs;
  g.batch_size = c.model.batch;
  g.lr = c.model.lr;
  g.tau_floor = c.sampler.tau_floor;
  g.holdout_frac = c.model.holdout_frac;
  g.score_hidden = c.model.score_hidden;
  g.score_blocks = c.model.score_blocks;
  g.embed_widths = c.model.embed_widths;
  g.aux_hidden = c.model.aux_hidden;
  g.aux_blocks = c.model.aux_blocks;
  g.one_stage = c.model.one_stage;
  g.reward_uses_action = c.model.reward_uses_action;
  return g;
}

policy::IqlConfig iql_config(const ExperimentConfig& c) {
  policy::IqlConfig q;
  q.tau_v = c.iql.tau_v;
  q.kappa = c.iql.kappa;
  q.beta = c.iql.beta;
  q.gamma = c.iql.gamma;
  q.polyak = c.iql.polyak;
  q.adv_weight_clip = c.iql.adv_weight_clip;
  q.lr = c.iql.lr;
  q.steps = c.iql.steps;
  q.bc_steps = c.iql.bc_steps;
  q.batch_target = c.iql.batch_target;
  q.batch_rest = c.iql.batch_rest;
  q.hidden = c.iql.hidden;
  q.blocks = c.iql.blocks;
  q.eval_episodes = c.iql.eval_episodes;
  q.eval_every = c.iql.eval_every;
  return q;
}

}  // namespace tce::config
