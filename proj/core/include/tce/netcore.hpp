#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/rng.hpp"

namespace tce::netcore {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One side branch: a small SiLU MLP whose output is concatenated with the
// main input before the trunk (used for time and conditioning embeddings).
struct EmbedSpec {
  std::string name;
  int input_dim = 0;
  std::vector<int> widths;

  bool operator==(const EmbedSpec&) const = default;
};

// Fixed network family: per-branch embeddings, a SiLU input layer of
// hidden_dim units, num_res_blocks residual blocks (x + W2*silu(W1*x+b1)+b2),
// and a linear output head.
struct MlpSpec {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_res_blocks = 0;
  int output_dim = 0;
  std::vector<EmbedSpec> embeds;

  // Width of the full input row: main input followed by each branch input.
  int total_input_dim() const;
  // Width after concatenating the main input with the branch outputs.
  int concat_dim() const;
  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

struct Dense {
  MatrixXd W;  // out x in
  VectorXd b;
};

struct ResBlockParams {
  Dense l1, l2;
};

struct MlpParams {
  std::vector<std::vector<Dense>> embed_layers;  // [branch][layer]
  Dense input_layer;
  std::vector<ResBlockParams> blocks;
  Dense output_layer;
};

std::int64_t param_count(const MlpSpec& spec);
MlpParams init_params(const MlpSpec& spec, Rng& rng);
MlpParams zeros_like(const MlpSpec& spec);

// Canonical flat order: embed branches (branch order, layer order, W then b),
// input layer, residual blocks (W1, b1, W2, b2), output layer. Matrices are
// laid out column-major within each tensor.
VectorXd flatten(const MlpSpec& spec, const MlpParams& params);
MlpParams unflatten(const MlpSpec& spec, const VectorXd& flat);

// Activation caches produced by forward() and consumed by backward().
struct Workspace {
  std::vector<std::vector<MatrixXd>> embed_pre;  // pre-activations per branch layer
  std::vector<std::vector<MatrixXd>> embed_act;  // activations per branch layer
  MatrixXd concat_in;
  MatrixXd trunk_pre;
  MatrixXd trunk_act;
  std::vector<MatrixXd> block_pre;    // W1*h+b1 per block
  std::vector<MatrixXd> block_hidden; // silu of the above
  std::vector<MatrixXd> block_in;     // block input per block
  MatrixXd head_in;
};

// Rows of X are samples: [main | embed_1 input | embed_2 input | ...].
MatrixXd forward(const MlpSpec& spec, const MlpParams& params, const MatrixXd& X,
                 Workspace* ws = nullptr);

// Gradients of a scalar loss with upstream dL/dY; shapes mirror MlpParams.
MlpParams backward(const MlpSpec& spec, const MlpParams& params, const Workspace& ws,
                   const MatrixXd& dY);

enum class LossKind {
  MseToTarget,  // mean_i ||f(x_i) - t_i||^2
  Dsm,          // mean_i ||scale_i * f(x_i) + t_i||^2 (t_i holds the noise draw)
};

struct LossBatch {
  MatrixXd inputs;
  MatrixXd targets;
  VectorXd scales;  // per-row; only read for LossKind::Dsm
};

struct LossGrad {
  double loss = 0.0;
  MlpParams grads;
};

LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params,
                       const LossBatch& batch, LossKind kind);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  VectorXd m, v;
  std::int64_t t = 0;
};

AdamState make_adam(const MlpSpec& spec, const AdamConfig& cfg);
AdamState make_adam_flat(Eigen::Index n, const AdamConfig& cfg);

// Bias-corrected Adam on a flat parameter vector.
void adam_step_flat(AdamState& state, VectorXd& params, const VectorXd& grads);
void adam_step(AdamState& state, const MlpSpec& spec, MlpParams& params,
               const MlpParams& grads);

struct Checkpoint {
  MlpSpec spec;
  MlpParams params;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

// JSON header (spec, seed, step) followed by the flat little-endian float64
// payload in the flatten() order. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// CRC-32 of the flat parameter payload; recorded as model provenance in
// generated-dataset metadata.
std::uint32_t params_crc32(const MlpSpec& spec, const MlpParams& params);

}  // namespace tce::netcore
