#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/datasets.hpp"
#include "tce/diffusion.hpp"
#include "tce/netcore.hpp"

namespace tce::generator {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A trained score network together with the state standardization it was
// fitted under. The network operates in scaler coordinates throughout;
// samples drawn from it must be inverse-transformed before use as raw states.
struct ScoreModel {
  netcore::MlpSpec spec;
  netcore::MlpParams params;
  datasets::Scaler scaler;
  int state_dim = 0;
  int cond_dim = 0;  // 0 for the unconditional mixture model
  std::string provenance;
  std::vector<double> loss_log;  // one entry per gradient step
};

// MSE regressor over standardized state pairs (plus raw actions when the
// reward model is configured to see them).
struct AuxModel {
  netcore::MlpSpec spec;
  netcore::MlpParams params;
  datasets::Scaler scaler;
  double holdout_mse = 0.0;  // mean squared residual norm on the holdout rows
  double holdout_err = 0.0;  // mean residual norm on the holdout rows
  std::vector<double> loss_log;
};

// The four networks of the synthesis procedure plus shared bookkeeping.
struct TceModels {
  ScoreModel q_mix;
  ScoreModel q_tran;
  AuxModel inv;
  AuxModel rew;
  int state_dim = 0;
  int action_dim = 0;
  std::string domain;
  bool one_stage = false;
  bool reward_uses_action = false;
  // One-stage mode conditions the transition score on (s, a); the actions
  // used at synthesis time are drawn uniformly from this pool (the target
  // dataset's action column).
  MatrixXd action_pool;

  void validate() const;
};

struct GenConfig {
  double lambda_cov = 0.0;
  double lambda_mix = 0.0;
  int n_generate = -1;  // < 0 means round((1 - lambda_mix) * |D_src|)

  // "Epochs" counts gradient steps at batch_size, one minibatch per step.
  int mix_epochs = 10000;
  int tran_epochs = 5000;
  int aux_epochs = 1000;
  int batch_size = 128;
  double lr = 1e-4;
  double tau_floor = 1e-3;
  double holdout_frac = 0.1;

  int score_hidden = 256;
  int score_blocks = 4;
  std::vector<int> embed_widths = {128, 128};
  int aux_hidden = 256;
  int aux_blocks = 3;

  bool one_stage = false;
  bool reward_uses_action = false;

  void validate() const;
};

// cfg.n_generate when set, otherwise round((1 - lambda_mix) * source_size).
int planned_generate_count(const GenConfig& cfg, int source_size);

// D_src^{lambda_cov} followed by D_tar: the lambda_cov nearest-to-target
// source rows (kept in dataset order) concatenated with the whole target set.
// lambda_cov = 0 degenerates to the target set alone.
datasets::TransitionDataset coverage_union(const datasets::TransitionDataset& src,
                                           const datasets::TransitionDataset& tgt,
                                           double lambda_cov);

// Denoising score matching on a pool of raw state rows; the scaler is applied
// to the pool before training (pass an identity scaler to train on raw
// coordinates).
ScoreModel train_mixture_score(const MatrixXd& states, const datasets::Scaler& scaler,
                               const diffusion::NoiseSchedule& sched,
                               const GenConfig& cfg, std::uint64_t seed);

// Conditional score of s_{t+1} given s_t (given (s_t, a_t) in one-stage
// mode). Accepts target rows only; mixed provenance is a contract violation.
ScoreModel train_transition_score(const datasets::TransitionDataset& tgt,
                                  const datasets::Scaler& scaler,
                                  const diffusion::NoiseSchedule& sched,
                                  const GenConfig& cfg, std::uint64_t seed);

struct AuxPair {
  AuxModel inv;
  AuxModel rew;
};

// inv fits (s, s') -> a on the target set alone; rew fits (s, s') -> r, with
// the action appended when configured, on the coverage union. Each model
// reports its error on a held-out fraction of its own training set, so both
// datasets must have at least two rows.
AuxPair train_aux(const datasets::TransitionDataset& tgt,
                  const datasets::TransitionDataset& rew_set,
                  const datasets::Scaler& scaler, const GenConfig& cfg,
                  std::uint64_t seed);

// Full fit: shared scaler on the coverage-union states, then both score
// networks and both regressors, each on its own derived seed.
TceModels train_models(const datasets::TransitionDataset& src,
                       const datasets::TransitionDataset& tgt,
                       const diffusion::NoiseSchedule& sched, const GenConfig& cfg,
                       std::uint64_t seed);

// Score closures in scaler coordinates for pc_sample_batch. The conditional
// form pins condition row i to chain i, so the batch passed in must keep the
// sampler's row count.
diffusion::BatchScoreFn score_fn(const ScoreModel& m);
diffusion::BatchScoreFn score_fn(const ScoreModel& m, const MatrixXd& conds);

// Regressor evaluation on raw states; standardization happens inside.
MatrixXd eval_inverse(const AuxModel& m, const MatrixXd& s, const MatrixXd& s_next);
VectorXd eval_reward(const AuxModel& m, const MatrixXd& s, const MatrixXd& s_next,
                     const MatrixXd* actions = nullptr);

// Two-stage synthesis: states from q_mix, next states from q_tran conditioned
// on them, actions and rewards from the regressors (one-stage mode instead
// conditions on pool actions and keeps them as the rows' actions). Chains
// that leave the finite range are retried once under a fresh stream, then
// dropped; a drop rate above 1% raises NumericFailure. Rows come back raw
// (inverse-transformed) and tagged Origin::Generated.
datasets::TransitionDataset synthesize(const TceModels& models,
                                       const diffusion::NoiseSchedule& sched,
                                       const diffusion::SamplerConfig& sampler,
                                       const GenConfig& cfg, int source_size,
                                       std::uint64_t seed);

// Directory of four netcore checkpoints plus a models.json with the scaler
// and synthesis flags. Loss logs are transient and not preserved.
void save_models(const std::filesystem::path& dir, const TceModels& m);
TceModels load_models(const std::filesystem::path& dir);

}  // namespace tce::generator
