#include "tce/datasets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <zlib.h>

#include <json.hpp>

#include "tce/errors.hpp"
#include "tce/selection.hpp"

namespace tce::datasets {

using json = nlohmann::json;

std::string origin_name(Origin o) {
  switch (o) {
    case Origin::Source: return "source";
    case Origin::Target: return "target";
    case Origin::Generated: return "generated";
  }
  throw ContractViolation("origin_name: unknown origin");
}

VectorXd Scaler::transform(const VectorXd& s) const {
  return (s - mean).cwiseQuotient(std);
}

VectorXd Scaler::inverse(const VectorXd& s) const {
  return s.cwiseProduct(std) + mean;
}

MatrixXd Scaler::transform_rows(const MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() /
         std.transpose().array();
}

MatrixXd Scaler::inverse_rows(const MatrixXd& rows) const {
  return (rows.array().rowwise() * std.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

TransitionDataset::TransitionDataset(int state_dim, int action_dim, DatasetMeta meta)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      s_(0, state_dim),
      a_(0, action_dim),
      s_next_(0, state_dim),
      r_(0),
      done_(0),
      meta_(std::move(meta)) {
  check(state_dim > 0 && action_dim > 0, "TransitionDataset: dims must be positive");
}

TransitionDataset::TransitionDataset(MatrixXd s, MatrixXd a, VectorXd r, MatrixXd s_next,
                                     VectorXd done, std::vector<Origin> origins,
                                     DatasetMeta meta, std::optional<Scaler> scaler)
    : state_dim_(static_cast<int>(s.cols())),
      action_dim_(static_cast<int>(a.cols())),
      s_(std::move(s)),
      a_(std::move(a)),
      s_next_(std::move(s_next)),
      r_(std::move(r)),
      done_(std::move(done)),
      origins_(std::move(origins)),
      meta_(std::move(meta)),
      scaler_(std::move(scaler)) {
  const auto n = s_.rows();
  check(state_dim_ > 0 && action_dim_ > 0, "TransitionDataset: dims must be positive");
  check(a_.rows() == n && s_next_.rows() == n && r_.size() == n && done_.size() == n,
        "TransitionDataset: row count mismatch");
  check(s_next_.cols() == state_dim_, "TransitionDataset: next-state width mismatch");
  check(origins_.size() == static_cast<size_t>(n), "TransitionDataset: origin per row required");
  for (Eigen::Index i = 0; i < done_.size(); ++i)
    check(done_[i] == 0.0 || done_[i] == 1.0, "TransitionDataset: done flags must be 0 or 1");
}

Transition TransitionDataset::row(int i) const {
  check(i >= 0 && i < size(), "TransitionDataset::row: index out of range");
  Transition t;
  t.s = s_.row(i);
  t.a = a_.row(i);
  t.r = r_[i];
  t.s_next = s_next_.row(i);
  t.done = done_[i] != 0.0;
  t.origin = origins_[i];
  return t;
}

TransitionDataset TransitionDataset::take(const std::vector<int>& indices,
                                          DatasetMeta meta) const {
  const int n = static_cast<int>(indices.size());
  MatrixXd s(n, state_dim_), a(n, action_dim_), sn(n, state_dim_);
  VectorXd r(n), done(n);
  std::vector<Origin> origins(n);
  for (int k = 0; k < n; ++k) {
    const int i = indices[k];
    check(i >= 0 && i < size(), "TransitionDataset::take: index out of range");
    s.row(k) = s_.row(i);
    a.row(k) = a_.row(i);
    sn.row(k) = s_next_.row(i);
    r[k] = r_[i];
    done[k] = done_[i];
    origins[k] = origins_[i];
  }
  return TransitionDataset(std::move(s), std::move(a), std::move(r), std::move(sn),
                           std::move(done), std::move(origins), std::move(meta), scaler_);
}

std::vector<int> TransitionDataset::rows_with_origin(Origin o) const {
  std::vector<int> idx;
  for (int i = 0; i < size(); ++i)
    if (origins_[i] == o) idx.push_back(i);
  return idx;
}

TransitionDataset TransitionDataset::concat(const std::vector<const TransitionDataset*>& parts,
                                            DatasetMeta meta) {
  check(!parts.empty(), "concat: no parts");
  const int ds = parts[0]->state_dim();
  const int da = parts[0]->action_dim();
  int n = 0;
  for (const auto* p : parts) {
    check(p->state_dim() == ds && p->action_dim() == da, "concat: dimension mismatch");
    n += p->size();
  }
  MatrixXd s(n, ds), a(n, da), sn(n, ds);
  VectorXd r(n), done(n);
  std::vector<Origin> origins;
  origins.reserve(n);
  int off = 0;
  for (const auto* p : parts) {
    const int m = p->size();
    s.middleRows(off, m) = p->states();
    a.middleRows(off, m) = p->actions();
    sn.middleRows(off, m) = p->next_states();
    r.segment(off, m) = p->rewards();
    done.segment(off, m) = p->dones();
    origins.insert(origins.end(), p->origins().begin(), p->origins().end());
    off += m;
  }
  return TransitionDataset(std::move(s), std::move(a), std::move(r), std::move(sn),
                           std::move(done), std::move(origins), std::move(meta));
}

Scaler fit_scaler(const TransitionDataset& ds) {
  check(ds.size() > 0, "fit_scaler: empty dataset");
  Scaler sc;
  sc.mean = ds.states().colwise().mean();
  MatrixXd centered = ds.states().rowwise() - sc.mean.transpose();
  sc.std = (centered.array().square().colwise().mean()).sqrt();
  for (Eigen::Index d = 0; d < sc.std.size(); ++d) {
    if (sc.std[d] == 0.0) {
      std::cerr << "warning: state dimension " << d
                << " has zero variance; scaler std clamped to 1\n";
      sc.std[d] = 1.0;
    }
  }
  return sc;
}

TransitionDataset apply_scaler(const TransitionDataset& ds, const Scaler& scaler) {
  check(scaler.mean.size() == ds.state_dim(), "apply_scaler: dimension mismatch");
  DatasetMeta meta = ds.meta();
  meta.normalized = true;
  return TransitionDataset(scaler.transform_rows(ds.states()), ds.actions(), ds.rewards(),
                           scaler.transform_rows(ds.next_states()), ds.dones(), ds.origins(),
                           std::move(meta), scaler);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::SimpleAug: return "simple-aug";
    case Variant::Og: return "og";
    case Variant::Sm: return "sm";
  }
  throw ContractViolation("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "simple-aug") return Variant::SimpleAug;
  if (name == "og") return Variant::Og;
  if (name == "sm") return Variant::Sm;
  throw ContractViolation("unknown variant: " + name);
}

void VariantSpec::validate() const {
  check(lambda_cov >= 0.0 && lambda_cov <= 1.0, "VariantSpec: lambda_cov outside [0, 1]");
  check(lambda_mix >= 0.0 && lambda_mix <= 1.0, "VariantSpec: lambda_mix outside [0, 1]");
  switch (kind) {
    case Variant::SimpleAug:
      check(lambda_cov == 0.0 && lambda_mix == 0.0,
            "SimpleAug requires lambda_cov = 0 and lambda_mix = 0");
      break;
    case Variant::Og:
      check(lambda_mix == 0.0, "Og requires lambda_mix = 0");
      check(lambda_cov > 0.0, "Og requires lambda_cov > 0");
      break;
    case Variant::Sm:
      check(lambda_mix > 0.0, "Sm requires lambda_mix > 0");
      break;
  }
}

TransitionDataset build_training_set(const VariantSpec& spec, const TransitionDataset& src,
                                     const TransitionDataset& tgt,
                                     const TransitionDataset& gen,
                                     const selection::SelectionResult* mix_selection) {
  spec.validate();
  check(gen.meta().lambda_cov == spec.lambda_cov,
        "build_training_set: generated set was built with a different lambda_cov");

  DatasetMeta meta = tgt.meta();
  meta.lambda_cov = spec.lambda_cov;
  meta.lambda_mix = spec.lambda_mix;
  meta.extra["variant"] = variant_name(spec.kind);
  meta.extra["n_target"] = std::to_string(tgt.size());
  meta.extra["n_generated"] = std::to_string(gen.size());

  std::vector<const TransitionDataset*> parts;
  std::optional<TransitionDataset> selected;
  if (spec.kind == Variant::Sm) {
    check(mix_selection != nullptr, "build_training_set: Sm needs a mix selection");
    check(mix_selection->lambda == spec.lambda_mix,
          "build_training_set: selection lambda does not match lambda_mix");
    check(mix_selection->source_size == src.size(),
          "build_training_set: selection was computed on a different source set");
    selected = src.take(mix_selection->indices, src.meta());
    meta.extra["n_source_selected"] = std::to_string(selected->size());
    parts.push_back(&*selected);
  }
  parts.push_back(&gen);
  parts.push_back(&tgt);
  return TransitionDataset::concat(parts, std::move(meta));
}

namespace {

constexpr char kMagic[4] = {'T', 'C', 'E', 'D'};
constexpr std::uint16_t kVersion = 1;

json meta_to_json(const DatasetMeta& m) {
  json j;
  j["domain"] = m.domain;
  j["tier"] = m.tier;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["lambda_cov"] = m.lambda_cov;
  j["lambda_mix"] = m.lambda_mix;
  j["normalized"] = m.normalized;
  j["extra"] = m.extra;
  return j;
}

DatasetMeta meta_from_json(const json& j) {
  DatasetMeta m;
  m.domain = j.at("domain").get<std::string>();
  m.tier = j.at("tier").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.lambda_cov = j.at("lambda_cov").get<double>();
  m.lambda_mix = j.at("lambda_mix").get<double>();
  m.normalized = j.at("normalized").get<bool>();
  m.extra = j.at("extra").get<std::map<std::string, std::string>>();
  return m;
}

std::vector<std::pair<int, int>> origins_rle(const std::vector<Origin>& origins) {
  std::vector<std::pair<int, int>> rle;
  for (Origin o : origins) {
    const int tag = static_cast<int>(o);
    if (!rle.empty() && rle.back().first == tag)
      ++rle.back().second;
    else
      rle.emplace_back(tag, 1);
  }
  return rle;
}

}  // namespace

void write_tced(const std::filesystem::path& path, const TransitionDataset& ds) {
  json header;
  header["rows"] = ds.size();
  header["state_dim"] = ds.state_dim();
  header["action_dim"] = ds.action_dim();
  header["meta"] = meta_to_json(ds.meta());
  header["origins_rle"] = origins_rle(ds.origins());
  if (ds.scaler()) {
    header["scaler"] = {
        {"mean", std::vector<double>(ds.scaler()->mean.begin(), ds.scaler()->mean.end())},
        {"std", std::vector<double>(ds.scaler()->std.begin(), ds.scaler()->std.end())}};
  } else {
    header["scaler"] = nullptr;
  }

  const int ds_dim = ds.state_dim(), da = ds.action_dim();
  const int row_width = 2 * ds_dim + da + 2;
  std::vector<double> payload(static_cast<size_t>(ds.size()) * row_width);
  size_t pos = 0;
  for (int i = 0; i < ds.size(); ++i) {
    for (int d = 0; d < ds_dim; ++d) payload[pos++] = ds.states()(i, d);
    for (int d = 0; d < da; ++d) payload[pos++] = ds.actions()(i, d);
    payload[pos++] = ds.rewards()[i];
    for (int d = 0; d < ds_dim; ++d) payload[pos++] = ds.next_states()(i, d);
    payload[pos++] = ds.dones()[i];
  }
  const auto payload_bytes = sizeof(double) * payload.size();
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload_bytes)));

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "write_tced: cannot open " + path.string());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload_bytes));
  out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  check(out.good(), "write_tced: write failed for " + path.string());
}

TransitionDataset read_tced(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_tced: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, kMagic, 4) == 0, "read_tced: bad magic");
  std::uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  check(in.good() && version == kVersion,
        "read_tced: unsupported version " + std::to_string(version));
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(in.good(), "read_tced: truncated header length");
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  check(in.good(), "read_tced: truncated header");
  json header = json::parse(htext, nullptr, false);
  check(!header.is_discarded(), "read_tced: malformed header JSON");

  const int rows = header.at("rows").get<int>();
  const int ds_dim = header.at("state_dim").get<int>();
  const int da = header.at("action_dim").get<int>();
  const int row_width = 2 * ds_dim + da + 2;
  std::vector<double> payload(static_cast<size_t>(rows) * row_width);
  const auto payload_bytes = sizeof(double) * payload.size();
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  check(in.gcount() == static_cast<std::streamsize>(payload_bytes), "read_tced: truncated payload");
  std::uint32_t stored_crc = 0;
  in.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
  check(in.good(), "read_tced: truncated checksum");
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload_bytes)));
  check(crc == stored_crc, "read_tced: payload checksum mismatch");

  MatrixXd s(rows, ds_dim), a(rows, da), sn(rows, ds_dim);
  VectorXd r(rows), done(rows);
  size_t pos = 0;
  for (int i = 0; i < rows; ++i) {
    for (int d = 0; d < ds_dim; ++d) s(i, d) = payload[pos++];
    for (int d = 0; d < da; ++d) a(i, d) = payload[pos++];
    r[i] = payload[pos++];
    for (int d = 0; d < ds_dim; ++d) sn(i, d) = payload[pos++];
    done[i] = payload[pos++];
  }

  std::vector<Origin> origins;
  origins.reserve(rows);
  for (const auto& run : header.at("origins_rle")) {
    const int tag = run.at(0).get<int>();
    const int count = run.at(1).get<int>();
    check(tag >= 0 && tag <= 2, "read_tced: bad origin tag");
    origins.insert(origins.end(), count, static_cast<Origin>(tag));
  }
  check(origins.size() == static_cast<size_t>(rows), "read_tced: origin run length mismatch");

  std::optional<Scaler> scaler;
  if (!header.at("scaler").is_null()) {
    Scaler sc;
    auto mean = header["scaler"].at("mean").get<std::vector<double>>();
    auto std_ = header["scaler"].at("std").get<std::vector<double>>();
    sc.mean = Eigen::Map<VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    sc.std = Eigen::Map<VectorXd>(std_.data(), static_cast<Eigen::Index>(std_.size()));
    scaler = sc;
  }

  if (rows == 0) {
    TransitionDataset empty(ds_dim, da, meta_from_json(header.at("meta")));
    return empty;
  }
  return TransitionDataset(std::move(s), std::move(a), std::move(r), std::move(sn),
                           std::move(done), std::move(origins),
                           meta_from_json(header.at("meta")), std::move(scaler));
}

std::string describe_tced(const std::filesystem::path& path) {
  TransitionDataset ds = read_tced(path);
  json j;
  j["path"] = path.string();
  j["rows"] = ds.size();
  j["state_dim"] = ds.state_dim();
  j["action_dim"] = ds.action_dim();
  j["meta"] = meta_to_json(ds.meta());
  json counts;
  for (Origin o : {Origin::Source, Origin::Target, Origin::Generated})
    counts[origin_name(o)] = static_cast<int>(ds.rows_with_origin(o).size());
  j["origin_counts"] = counts;
  if (ds.size() > 0) {
    j["reward"] = {{"min", ds.rewards().minCoeff()},
                   {"max", ds.rewards().maxCoeff()},
                   {"mean", ds.rewards().mean()}};
    j["state_mean"] = std::vector<double>(ds.states().colwise().mean().begin(),
                                          ds.states().colwise().mean().end());
    j["done_count"] = static_cast<int>(ds.dones().sum());
  }
  return j.dump(2);
}

}  // namespace tce::datasets
