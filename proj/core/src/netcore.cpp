#include "tce/netcore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <zlib.h>

#include <json.hpp>

#include "tce/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset payloads are little-endian");

namespace tce::netcore {

using json = nlohmann::json;

namespace {

MatrixXd silu(const MatrixXd& z) {
  return z.array() * (1.0 / (1.0 + (-z.array()).exp()));
}

// d/dz [z * sigmoid(z)] = sigmoid(z) * (1 + z * (1 - sigmoid(z)))
MatrixXd silu_grad(const MatrixXd& z) {
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
  return s * (1.0 + z.array() * (1.0 - s));
}

MatrixXd affine(const MatrixXd& x, const Dense& d) {
  return (x * d.W.transpose()).rowwise() + d.b.transpose();
}

Dense init_dense(int out, int in, Rng& rng) {
  Dense d;
  d.W.resize(out, in);
  d.b.resize(out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) d.W(r, c) = rng.uniform(-bound, bound);
  for (int r = 0; r < out; ++r) d.b[r] = rng.uniform(-bound, bound);
  return d;
}

Dense zero_dense(int out, int in) {
  Dense d;
  d.W = MatrixXd::Zero(out, in);
  d.b = VectorXd::Zero(out);
  return d;
}

template <typename Fn>
void for_each_dense(const MlpSpec& spec, MlpParams& p, Fn&& fn) {
  for (size_t br = 0; br < spec.embeds.size(); ++br)
    for (auto& layer : p.embed_layers[br]) fn(layer);
  fn(p.input_layer);
  for (auto& blk : p.blocks) {
    fn(blk.l1);
    fn(blk.l2);
  }
  fn(p.output_layer);
}

template <typename Fn>
void for_each_dense(const MlpSpec& spec, const MlpParams& p, Fn&& fn) {
  for_each_dense(spec, const_cast<MlpParams&>(p), [&](Dense& d) { fn(const_cast<const Dense&>(d)); });
}

}  // namespace

int MlpSpec::total_input_dim() const {
  int n = input_dim;
  for (const auto& e : embeds) n += e.input_dim;
  return n;
}

int MlpSpec::concat_dim() const {
  int n = input_dim;
  for (const auto& e : embeds) n += e.widths.back();
  return n;
}

void MlpSpec::validate() const {
  check(input_dim > 0, "MlpSpec: input_dim must be positive");
  check(hidden_dim > 0, "MlpSpec: hidden_dim must be positive");
  check(output_dim > 0, "MlpSpec: output_dim must be positive");
  check(num_res_blocks >= 0, "MlpSpec: num_res_blocks must be non-negative");
  for (const auto& e : embeds) {
    check(e.input_dim > 0, "MlpSpec: embed input_dim must be positive");
    check(!e.widths.empty(), "MlpSpec: embed widths must be non-empty");
    for (int w : e.widths) check(w > 0, "MlpSpec: embed widths must be positive");
  }
}

std::int64_t param_count(const MlpSpec& spec) {
  spec.validate();
  std::int64_t n = 0;
  auto dense = [&](int out, int in) { n += static_cast<std::int64_t>(out) * in + out; };
  for (const auto& e : spec.embeds) {
    int in = e.input_dim;
    for (int w : e.widths) {
      dense(w, in);
      in = w;
    }
  }
  dense(spec.hidden_dim, spec.concat_dim());
  for (int i = 0; i < spec.num_res_blocks; ++i) {
    dense(spec.hidden_dim, spec.hidden_dim);
    dense(spec.hidden_dim, spec.hidden_dim);
  }
  dense(spec.output_dim, spec.hidden_dim);
  return n;
}

MlpParams init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p;
  p.embed_layers.resize(spec.embeds.size());
  for (size_t br = 0; br < spec.embeds.size(); ++br) {
    int in = spec.embeds[br].input_dim;
    for (int w : spec.embeds[br].widths) {
      p.embed_layers[br].push_back(init_dense(w, in, rng));
      in = w;
    }
  }
  p.input_layer = init_dense(spec.hidden_dim, spec.concat_dim(), rng);
  for (int i = 0; i < spec.num_res_blocks; ++i) {
    ResBlockParams blk;
    blk.l1 = init_dense(spec.hidden_dim, spec.hidden_dim, rng);
    blk.l2 = init_dense(spec.hidden_dim, spec.hidden_dim, rng);
    p.blocks.push_back(std::move(blk));
  }
  p.output_layer = init_dense(spec.output_dim, spec.hidden_dim, rng);
  return p;
}

MlpParams zeros_like(const MlpSpec& spec) {
  spec.validate();
  MlpParams p;
  p.embed_layers.resize(spec.embeds.size());
  for (size_t br = 0; br < spec.embeds.size(); ++br) {
    int in = spec.embeds[br].input_dim;
    for (int w : spec.embeds[br].widths) {
      p.embed_layers[br].push_back(zero_dense(w, in));
      in = w;
    }
  }
  p.input_layer = zero_dense(spec.hidden_dim, spec.concat_dim());
  for (int i = 0; i < spec.num_res_blocks; ++i) {
    ResBlockParams blk;
    blk.l1 = zero_dense(spec.hidden_dim, spec.hidden_dim);
    blk.l2 = zero_dense(spec.hidden_dim, spec.hidden_dim);
    p.blocks.push_back(std::move(blk));
  }
  p.output_layer = zero_dense(spec.output_dim, spec.hidden_dim);
  return p;
}

VectorXd flatten(const MlpSpec& spec, const MlpParams& params) {
  VectorXd flat(param_count(spec));
  Eigen::Index pos = 0;
  for_each_dense(spec, params, [&](const Dense& d) {
    const Eigen::Index nw = d.W.size();
    std::memcpy(flat.data() + pos, d.W.data(), sizeof(double) * nw);
    pos += nw;
    std::memcpy(flat.data() + pos, d.b.data(), sizeof(double) * d.b.size());
    pos += d.b.size();
  });
  check(pos == flat.size(), "flatten: parameter layout mismatch");
  return flat;
}

MlpParams unflatten(const MlpSpec& spec, const VectorXd& flat) {
  check(flat.size() == param_count(spec), "unflatten: size mismatch");
  MlpParams p = zeros_like(spec);
  Eigen::Index pos = 0;
  for_each_dense(spec, p, [&](Dense& d) {
    std::memcpy(d.W.data(), flat.data() + pos, sizeof(double) * d.W.size());
    pos += d.W.size();
    std::memcpy(d.b.data(), flat.data() + pos, sizeof(double) * d.b.size());
    pos += d.b.size();
  });
  return p;
}

MatrixXd forward(const MlpSpec& spec, const MlpParams& params, const MatrixXd& X,
                 Workspace* ws) {
  check(X.cols() == spec.total_input_dim(), "forward: input width mismatch");
  const auto nb = spec.embeds.size();
  Workspace local;
  Workspace& w = ws ? *ws : local;
  w.embed_pre.assign(nb, {});
  w.embed_act.assign(nb, {});

  MatrixXd concat(X.rows(), spec.concat_dim());
  concat.leftCols(spec.input_dim) = X.leftCols(spec.input_dim);
  int in_off = spec.input_dim;
  int out_off = spec.input_dim;
  for (size_t br = 0; br < nb; ++br) {
    const auto& espec = spec.embeds[br];
    MatrixXd act = X.middleCols(in_off, espec.input_dim);
    in_off += espec.input_dim;
    w.embed_act[br].push_back(act);
    for (size_t l = 0; l < espec.widths.size(); ++l) {
      MatrixXd pre = affine(act, params.embed_layers[br][l]);
      act = silu(pre);
      w.embed_pre[br].push_back(std::move(pre));
      w.embed_act[br].push_back(act);
    }
    concat.middleCols(out_off, espec.widths.back()) = act;
    out_off += espec.widths.back();
  }
  w.concat_in = std::move(concat);

  w.trunk_pre = affine(w.concat_in, params.input_layer);
  w.trunk_act = silu(w.trunk_pre);

  w.block_pre.clear();
  w.block_hidden.clear();
  w.block_in.clear();
  MatrixXd h = w.trunk_act;
  for (const auto& blk : params.blocks) {
    w.block_in.push_back(h);
    MatrixXd pre = affine(h, blk.l1);
    MatrixXd hid = silu(pre);
    h = h + affine(hid, blk.l2);
    w.block_pre.push_back(std::move(pre));
    w.block_hidden.push_back(std::move(hid));
  }
  w.head_in = h;
  return affine(h, params.output_layer);
}

MlpParams backward(const MlpSpec& spec, const MlpParams& params, const Workspace& ws,
                   const MatrixXd& dY) {
  MlpParams g = zeros_like(spec);

  g.output_layer.W = dY.transpose() * ws.head_in;
  g.output_layer.b = dY.colwise().sum();
  MatrixXd dH = dY * params.output_layer.W;

  for (int i = spec.num_res_blocks - 1; i >= 0; --i) {
    g.blocks[i].l2.W = dH.transpose() * ws.block_hidden[i];
    g.blocks[i].l2.b = dH.colwise().sum();
    MatrixXd dpre = (dH * params.blocks[i].l2.W).cwiseProduct(silu_grad(ws.block_pre[i]));
    g.blocks[i].l1.W = dpre.transpose() * ws.block_in[i];
    g.blocks[i].l1.b = dpre.colwise().sum();
    dH += dpre * params.blocks[i].l1.W;
  }

  MatrixXd dtrunk = dH.cwiseProduct(silu_grad(ws.trunk_pre));
  g.input_layer.W = dtrunk.transpose() * ws.concat_in;
  g.input_layer.b = dtrunk.colwise().sum();
  MatrixXd dconcat = dtrunk * params.input_layer.W;

  int off = spec.input_dim;  // gradient w.r.t. the main input is not needed
  for (size_t br = 0; br < spec.embeds.size(); ++br) {
    const auto& espec = spec.embeds[br];
    MatrixXd dact = dconcat.middleCols(off, espec.widths.back());
    off += espec.widths.back();
    for (int l = static_cast<int>(espec.widths.size()) - 1; l >= 0; --l) {
      MatrixXd dpre = dact.cwiseProduct(silu_grad(ws.embed_pre[br][l]));
      g.embed_layers[br][l].W = dpre.transpose() * ws.embed_act[br][l];
      g.embed_layers[br][l].b = dpre.colwise().sum();
      if (l > 0) dact = dpre * params.embed_layers[br][l].W;
    }
  }
  return g;
}

LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params,
                       const LossBatch& batch, LossKind kind) {
  const Eigen::Index B = batch.inputs.rows();
  check(B > 0, "loss_and_grad: empty batch");
  check(batch.targets.rows() == B, "loss_and_grad: target row count mismatch");
  check(batch.targets.cols() == spec.output_dim, "loss_and_grad: target width mismatch");
  if (kind == LossKind::Dsm)
    check(batch.scales.size() == B, "loss_and_grad: dsm needs one scale per row");

  Workspace ws;
  MatrixXd Y = forward(spec, params, batch.inputs, &ws);

  MatrixXd R;
  if (kind == LossKind::MseToTarget) {
    R = Y - batch.targets;
  } else {
    R = batch.scales.asDiagonal() * Y + batch.targets;
  }
  VectorXd row_loss = R.rowwise().squaredNorm();
  for (Eigen::Index i = 0; i < B; ++i) {
    check_numeric(std::isfinite(row_loss[i]),
                  "loss_and_grad: non-finite loss at batch row " + std::to_string(i));
  }

  MatrixXd dY = (2.0 / static_cast<double>(B)) * R;
  if (kind == LossKind::Dsm) dY = batch.scales.asDiagonal() * dY;

  LossGrad out;
  out.loss = row_loss.mean();
  out.grads = backward(spec, params, ws, dY);
  return out;
}

AdamState make_adam_flat(Eigen::Index n, const AdamConfig& cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m = VectorXd::Zero(n);
  s.v = VectorXd::Zero(n);
  return s;
}

AdamState make_adam(const MlpSpec& spec, const AdamConfig& cfg) {
  return make_adam_flat(param_count(spec), cfg);
}

void adam_step_flat(AdamState& state, VectorXd& params, const VectorXd& grads) {
  check(params.size() == state.m.size() && grads.size() == state.m.size(),
        "adam_step: size mismatch");
  const auto& c = state.cfg;
  state.t += 1;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v.array().matrix() + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  params.array() -=
      c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

void adam_step(AdamState& state, const MlpSpec& spec, MlpParams& params,
               const MlpParams& grads) {
  VectorXd flat = flatten(spec, params);
  VectorXd gflat = flatten(spec, grads);
  adam_step_flat(state, flat, gflat);
  params = unflatten(spec, flat);
}

namespace {

json spec_to_json(const MlpSpec& spec) {
  json j;
  j["input_dim"] = spec.input_dim;
  j["hidden_dim"] = spec.hidden_dim;
  j["num_res_blocks"] = spec.num_res_blocks;
  j["output_dim"] = spec.output_dim;
  j["embeds"] = json::array();
  for (const auto& e : spec.embeds) {
    j["embeds"].push_back({{"name", e.name}, {"input_dim", e.input_dim}, {"widths", e.widths}});
  }
  return j;
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_dim = j.at("hidden_dim").get<int>();
  spec.num_res_blocks = j.at("num_res_blocks").get<int>();
  spec.output_dim = j.at("output_dim").get<int>();
  for (const auto& je : j.at("embeds")) {
    EmbedSpec e;
    e.name = je.at("name").get<std::string>();
    e.input_dim = je.at("input_dim").get<int>();
    e.widths = je.at("widths").get<std::vector<int>>();
    spec.embeds.push_back(std::move(e));
  }
  return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["format"] = "tce-checkpoint";
  header["version"] = 1;
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["spec"] = spec_to_json(ckpt.spec);
  VectorXd flat = flatten(ckpt.spec, ckpt.params);
  header["param_count"] = static_cast<std::int64_t>(flat.size());

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot open " + path.string());
  std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(sizeof(double) * flat.size()));
  check(out.good(), "save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open " + path.string());
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(in.good(), "load_checkpoint: truncated header length");
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  check(in.good(), "load_checkpoint: truncated header");
  json header = json::parse(htext, nullptr, false);
  check(!header.is_discarded(), "load_checkpoint: malformed header JSON");
  check(header.value("format", "") == "tce-checkpoint", "load_checkpoint: bad format tag");
  check(header.value("version", 0) == 1, "load_checkpoint: unsupported version");

  Checkpoint ckpt;
  ckpt.spec = spec_from_json(header.at("spec"));
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::int64_t>();
  const std::int64_t n = header.at("param_count").get<std::int64_t>();
  check(n == param_count(ckpt.spec), "load_checkpoint: param count does not match spec");
  VectorXd flat(n);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(sizeof(double) * n));
  check(in.gcount() == static_cast<std::streamsize>(sizeof(double) * n),
        "load_checkpoint: truncated payload");
  ckpt.params = unflatten(ckpt.spec, flat);
  return ckpt;
}

std::uint32_t params_crc32(const MlpSpec& spec, const MlpParams& params) {
  VectorXd flat = flatten(spec, params);
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(flat.data()),
            static_cast<uInt>(sizeof(double) * flat.size())));
}

}  // namespace tce::netcore
