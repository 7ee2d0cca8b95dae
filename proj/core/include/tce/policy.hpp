#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/datasets.hpp"
#include "tce/domains.hpp"
#include "tce/netcore.hpp"
#include "tce/rng.hpp"

namespace tce::policy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct IqlConfig {
  double tau_v = 0.7;
  double kappa = 3.0;
  double beta = 0.001;
  double gamma = 0.99;
  double polyak = 0.005;
  double adv_weight_clip = 100.0;
  int steps = 1000000;
  int bc_steps = 10000;
  int batch_target = 128;
  int batch_rest = 128;
  double lr = 3e-4;
  int hidden = 256;
  int blocks = 2;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  int eval_episodes = 10;
  // metrics cadence in steps; 0 logs only the final step
  int eval_every = 0;

  void validate() const;
};

// Diagonal Gaussian with a state-dependent mean and a state-independent,
// clamped log standard deviation.
struct GaussianPolicy {
  netcore::MlpSpec spec;
  netcore::MlpParams params;
  VectorXd log_std;

  MatrixXd mean(const MatrixXd& states) const;
  VectorXd std_dev() const { return log_std.array().exp(); }
  // log pi(a|s) per row
  VectorXd log_prob(const MatrixXd& states, const MatrixXd& actions) const;
  void validate() const;
};

struct PolicyModel {
  GaussianPolicy actor;
  GaussianPolicy behavior;
  netcore::MlpSpec q_spec;
  netcore::MlpSpec v_spec;
  netcore::MlpParams q;
  netcore::MlpParams q_target;
  netcore::MlpParams v;
  int state_dim = 0;
  int action_dim = 0;

  void validate() const;
};

// |tau - 1[u<0]| * u^2
double expectile_loss(double u, double tau_v);

// KL(N(mu1, diag sd1^2) || N(mu2, diag sd2^2)) in closed form.
double gaussian_kl(const VectorXd& mu1, const VectorXd& sd1, const VectorXd& mu2,
                   const VectorXd& sd2);

struct Batch {
  MatrixXd states;
  MatrixXd actions;
  VectorXd rewards;
  MatrixXd next_states;
  VectorXd dones;
  // first n_target rows came from the target dataset
  int n_target = 0;
};

// Optimizer bundle for one training run; exposed so single steps can be
// driven directly by tests.
struct IqlTrainer {
  PolicyModel model;
  IqlConfig cfg;
  netcore::AdamState adam_q;
  netcore::AdamState adam_v;
  netcore::AdamState adam_actor;
  netcore::AdamState adam_log_std;
};

IqlTrainer make_trainer(int state_dim, int action_dim, const IqlConfig& cfg,
                        std::uint64_t seed);

struct StepLosses {
  double v_loss = 0.0;
  double q_loss = 0.0;
  double awr_loss = 0.0;
  double kl = 0.0;
  double policy_loss = 0.0;
};

// L_V: expectile regression of V toward the target-network Q values.
double value_step(IqlTrainer& tr, const Batch& batch);
// L_Q: squared TD error toward r + gamma (1 - done) V(s'); the target Q
// copy is polyak-averaged after the update.
double q_step(IqlTrainer& tr, const Batch& batch);
// AWR extraction over the full batch plus the KL penalty on the target half;
// beta = 0 skips the KL machinery entirely.
StepLosses policy_step(IqlTrainer& tr, const Batch& batch);

// target <- (1 - p) * target + p * online, elementwise exact
void polyak_update(const netcore::MlpSpec& spec, netcore::MlpParams& target,
                   const netcore::MlpParams& online, double p);

GaussianPolicy behavior_clone(const datasets::TransitionDataset& tgt, const IqlConfig& cfg,
                              std::uint64_t seed, std::vector<double>* nll_log = nullptr);

struct TrainMetric {
  int step = 0;
  double v_loss = 0.0;
  double q_loss = 0.0;
  double policy_loss = 0.0;
  double ns = 0.0;
  bool has_ns = false;
};

struct TrainResult {
  PolicyModel model;
  std::vector<TrainMetric> metrics;
};

// Full IQL+KL run on an origin-tagged training set: each step draws
// batch_target rows from the target-origin part and batch_rest from the
// remainder (from the target part again when there is no remainder).
// Evaluation metrics are recorded when a domain and references are given.
TrainResult iql_train(const datasets::TransitionDataset& train, const IqlConfig& cfg,
                      std::uint64_t seed,
                      const domains::LinearGaussianDomain* eval_domain = nullptr,
                      const domains::RefReturns* refs = nullptr);

double normalized_score(double j, const domains::RefReturns& refs);

struct EvalResult {
  double j = 0.0;
  double ns = 0.0;
};

// Mean-action rollouts; J is the undiscounted per-episode return averaged
// over episodes, matching the reference-return convention.
EvalResult evaluate(const GaussianPolicy& actor, const domains::LinearGaussianDomain& d,
                    const domains::RefReturns& refs, int episodes, std::uint64_t seed);

void save_policy(const std::filesystem::path& dir, const PolicyModel& m);
PolicyModel load_policy(const std::filesystem::path& dir);

}  // namespace tce::policy
