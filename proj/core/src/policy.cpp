#include "tce/policy.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "tce/errors.hpp"

namespace tce::policy {

void IqlConfig::validate() const {
  check(tau_v > 0.0 && tau_v < 1.0, "IqlConfig: tau_v must lie in (0,1)");
  check(kappa >= 0.0, "IqlConfig: kappa must be nonnegative");
  check(beta >= 0.0, "IqlConfig: beta must be nonnegative");
  // gamma = 0 is legal: the undiscounted fixed point Q = r is a useful
  // degenerate case for verification
  check(gamma >= 0.0 && gamma < 1.0, "IqlConfig: gamma must lie in [0,1)");
  check(polyak > 0.0 && polyak <= 1.0, "IqlConfig: polyak must lie in (0,1]");
  check(adv_weight_clip > 0.0, "IqlConfig: adv_weight_clip must be positive");
  check(steps > 0, "IqlConfig: steps must be positive");
  check(bc_steps > 0, "IqlConfig: bc_steps must be positive");
  check(batch_target > 0 && batch_rest >= 0, "IqlConfig: bad batch sizes");
  check(lr > 0.0, "IqlConfig: lr must be positive");
  check(hidden > 0 && blocks >= 0, "IqlConfig: bad net shape");
  check(log_std_min < log_std_max, "IqlConfig: log-std bounds inverted");
  check(eval_episodes > 0, "IqlConfig: eval_episodes must be positive");
  check(eval_every >= 0, "IqlConfig: eval_every must be nonnegative");
}

MatrixXd GaussianPolicy::mean(const MatrixXd& states) const {
  return netcore::forward(spec, params, states);
}

VectorXd GaussianPolicy::log_prob(const MatrixXd& states, const MatrixXd& actions) const {
  check(states.rows() == actions.rows(), "log_prob: row count mismatch");
  check(actions.cols() == spec.output_dim, "log_prob: action dimension mismatch");
  const MatrixXd mu = mean(states);
  const VectorXd sd = std_dev();
  const double log_norm =
      log_std.sum() + 0.5 * spec.output_dim * std::log(2.0 * std::numbers::pi);
  VectorXd lp(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const VectorXd z = (actions.row(i) - mu.row(i)).transpose().cwiseQuotient(sd);
    lp[i] = -0.5 * z.squaredNorm() - log_norm;
  }
  return lp;
}

void GaussianPolicy::validate() const {
  spec.validate();
  check(log_std.size() == spec.output_dim, "GaussianPolicy: log_std size mismatch");
}

void PolicyModel::validate() const {
  check(state_dim > 0 && action_dim > 0, "PolicyModel: dims must be positive");
  actor.validate();
  behavior.validate();
  check(actor.spec.input_dim == state_dim && actor.spec.output_dim == action_dim,
        "PolicyModel: actor shape mismatch");
  check(q_spec.input_dim == state_dim + action_dim && q_spec.output_dim == 1,
        "PolicyModel: Q shape mismatch");
  check(v_spec.input_dim == state_dim && v_spec.output_dim == 1,
        "PolicyModel: V shape mismatch");
}

double expectile_loss(double u, double tau_v) {
  const double w = std::abs(tau_v - (u < 0.0 ? 1.0 : 0.0));
  return w * u * u;
}

double gaussian_kl(const VectorXd& mu1, const VectorXd& sd1, const VectorXd& mu2,
                   const VectorXd& sd2) {
  check(mu1.size() == mu2.size() && sd1.size() == sd2.size() && mu1.size() == sd1.size(),
        "gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index d = 0; d < mu1.size(); ++d) {
    const double r2 = (sd1[d] * sd1[d] + (mu1[d] - mu2[d]) * (mu1[d] - mu2[d])) /
                      (sd2[d] * sd2[d]);
    kl += std::log(sd2[d] / sd1[d]) + 0.5 * r2 - 0.5;
  }
  return kl;
}

namespace {

netcore::MlpSpec plain_spec(int input_dim, int output_dim, const IqlConfig& cfg) {
  netcore::MlpSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_dim = cfg.hidden;
  spec.num_res_blocks = cfg.blocks;
  spec.output_dim = output_dim;
  spec.validate();
  return spec;
}

GaussianPolicy make_gaussian(int state_dim, int action_dim, const IqlConfig& cfg, Rng& rng) {
  GaussianPolicy pi;
  pi.spec = plain_spec(state_dim, action_dim, cfg);
  pi.params = netcore::init_params(pi.spec, rng);
  pi.log_std = VectorXd::Zero(action_dim);
  return pi;
}

MatrixXd with_actions(const MatrixXd& states, const MatrixXd& actions) {
  MatrixXd X(states.rows(), states.cols() + actions.cols());
  X << states, actions;
  return X;
}

void clamp_log_std(VectorXd& log_std, const IqlConfig& cfg) {
  log_std = log_std.cwiseMax(cfg.log_std_min).cwiseMin(cfg.log_std_max);
}

// Gradient step on a Gaussian policy for loss mean_i w_i * (-log pi(a_i|s_i));
// returns the loss. Shared by behavior cloning (w = 1) and AWR extraction.
double weighted_nll_step(GaussianPolicy& pi, netcore::AdamState& adam_mean,
                         netcore::AdamState& adam_log_std, const IqlConfig& cfg,
                         const MatrixXd& states, const MatrixXd& actions,
                         const VectorXd& weights, const MatrixXd* kl_mu_b = nullptr,
                         const VectorXd* kl_sd_b = nullptr, double beta = 0.0,
                         int n_kl = 0, double* kl_out = nullptr) {
  const Eigen::Index B = states.rows();
  netcore::Workspace ws;
  const MatrixXd mu = netcore::forward(pi.spec, pi.params, states, &ws);
  const VectorXd sd = pi.std_dev();
  const double log_norm =
      pi.log_std.sum() + 0.5 * pi.spec.output_dim * std::log(2.0 * std::numbers::pi);

  double loss = 0.0;
  MatrixXd dmu(B, pi.spec.output_dim);
  VectorXd dlog_std = VectorXd::Zero(pi.spec.output_dim);
  for (Eigen::Index i = 0; i < B; ++i) {
    const VectorXd z = (actions.row(i) - mu.row(i)).transpose().cwiseQuotient(sd);
    loss += weights[i] * (0.5 * z.squaredNorm() + log_norm);
    dmu.row(i) = -(weights[i] / B) * z.cwiseQuotient(sd).transpose();
    dlog_std += (weights[i] / B) * (VectorXd::Ones(z.size()) - z.cwiseAbs2());
  }
  loss /= static_cast<double>(B);

  // KL(behavior || pi) on the first n_kl rows, in closed form
  if (kl_out != nullptr) *kl_out = 0.0;
  if (beta != 0.0 && n_kl > 0) {
    check(kl_mu_b != nullptr && kl_sd_b != nullptr, "weighted_nll_step: missing KL inputs");
    double kl = 0.0;
    for (int i = 0; i < n_kl; ++i) {
      const VectorXd mu_b = kl_mu_b->row(i);
      const VectorXd mu_p = mu.row(i);
      kl += gaussian_kl(mu_b, *kl_sd_b, mu_p, sd);
      dmu.row(i) += (beta / n_kl) *
                    (mu_p - mu_b).transpose().cwiseQuotient(sd.cwiseAbs2().transpose());
    }
    kl /= n_kl;
    for (Eigen::Index d = 0; d < sd.size(); ++d) {
      double acc = 0.0;
      for (int i = 0; i < n_kl; ++i) {
        const double diff = (*kl_mu_b)(i, d) - mu(i, d);
        acc += 1.0 - ((*kl_sd_b)[d] * (*kl_sd_b)[d] + diff * diff) / (sd[d] * sd[d]);
      }
      dlog_std[d] += beta * acc / n_kl;
    }
    if (kl_out != nullptr) *kl_out = kl;
    loss += beta * kl;
  }

  netcore::MlpParams grads = netcore::backward(pi.spec, pi.params, ws, dmu);
  netcore::adam_step(adam_mean, pi.spec, pi.params, grads);
  netcore::adam_step_flat(adam_log_std, pi.log_std, dlog_std);
  clamp_log_std(pi.log_std, cfg);
  return loss;
}

}  // namespace

IqlTrainer make_trainer(int state_dim, int action_dim, const IqlConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  check(state_dim > 0 && action_dim > 0, "make_trainer: dims must be positive");
  IqlTrainer tr;
  tr.cfg = cfg;
  tr.model.state_dim = state_dim;
  tr.model.action_dim = action_dim;

  Rng rng(seed);
  tr.model.actor = make_gaussian(state_dim, action_dim, cfg, rng);
  tr.model.behavior = make_gaussian(state_dim, action_dim, cfg, rng);
  tr.model.q_spec = plain_spec(state_dim + action_dim, 1, cfg);
  tr.model.v_spec = plain_spec(state_dim, 1, cfg);
  tr.model.q = netcore::init_params(tr.model.q_spec, rng);
  tr.model.q_target = tr.model.q;
  tr.model.v = netcore::init_params(tr.model.v_spec, rng);

  const netcore::AdamConfig ac{.lr = cfg.lr};
  tr.adam_q = netcore::make_adam(tr.model.q_spec, ac);
  tr.adam_v = netcore::make_adam(tr.model.v_spec, ac);
  tr.adam_actor = netcore::make_adam(tr.model.actor.spec, ac);
  tr.adam_log_std = netcore::make_adam_flat(action_dim, ac);
  return tr;
}

double value_step(IqlTrainer& tr, const Batch& batch) {
  const Eigen::Index B = batch.states.rows();
  check(B > 0, "value_step: empty batch");
  const MatrixXd sa = with_actions(batch.states, batch.actions);
  const VectorXd qt = netcore::forward(tr.model.q_spec, tr.model.q_target, sa);

  netcore::Workspace ws;
  const VectorXd v = netcore::forward(tr.model.v_spec, tr.model.v, batch.states, &ws);
  double loss = 0.0;
  MatrixXd dv(B, 1);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double u = qt[i] - v[i];
    const double w = std::abs(tr.cfg.tau_v - (u < 0.0 ? 1.0 : 0.0));
    loss += w * u * u;
    dv(i, 0) = -2.0 * w * u / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);
  check_numeric(std::isfinite(loss), "value_step: non-finite expectile loss");

  netcore::MlpParams grads = netcore::backward(tr.model.v_spec, tr.model.v, ws, dv);
  netcore::adam_step(tr.adam_v, tr.model.v_spec, tr.model.v, grads);
  return loss;
}

double q_step(IqlTrainer& tr, const Batch& batch) {
  const Eigen::Index B = batch.states.rows();
  check(B > 0, "q_step: empty batch");
  const VectorXd vn =
      netcore::forward(tr.model.v_spec, tr.model.v, batch.next_states);
  netcore::LossBatch lb;
  lb.inputs = with_actions(batch.states, batch.actions);
  lb.targets.resize(B, 1);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double y = batch.rewards[i] + tr.cfg.gamma * (1.0 - batch.dones[i]) * vn[i];
    check_numeric(std::isfinite(y), "q_step: non-finite TD target at row " +
                                        std::to_string(i));
    lb.targets(i, 0) = y;
  }
  netcore::LossGrad lg = netcore::loss_and_grad(tr.model.q_spec, tr.model.q, lb,
                                                netcore::LossKind::MseToTarget);
  netcore::adam_step(tr.adam_q, tr.model.q_spec, tr.model.q, lg.grads);
  polyak_update(tr.model.q_spec, tr.model.q_target, tr.model.q, tr.cfg.polyak);
  return lg.loss;
}

StepLosses policy_step(IqlTrainer& tr, const Batch& batch) {
  const Eigen::Index B = batch.states.rows();
  check(B > 0, "policy_step: empty batch");
  check(batch.n_target >= 0 && batch.n_target <= B, "policy_step: bad target count");

  const MatrixXd sa = with_actions(batch.states, batch.actions);
  const VectorXd qt = netcore::forward(tr.model.q_spec, tr.model.q_target, sa);
  const VectorXd v = netcore::forward(tr.model.v_spec, tr.model.v, batch.states);
  VectorXd w(B);
  for (Eigen::Index i = 0; i < B; ++i)
    w[i] = std::min(std::exp(tr.cfg.kappa * (qt[i] - v[i])), tr.cfg.adv_weight_clip);

  StepLosses out;
  if (tr.cfg.beta != 0.0 && batch.n_target > 0) {
    const MatrixXd tgt_states = batch.states.topRows(batch.n_target);
    const MatrixXd mu_b = tr.model.behavior.mean(tgt_states);
    const VectorXd sd_b = tr.model.behavior.std_dev();
    out.awr_loss = weighted_nll_step(tr.model.actor, tr.adam_actor, tr.adam_log_std,
                                     tr.cfg, batch.states, batch.actions, w, &mu_b,
                                     &sd_b, tr.cfg.beta, batch.n_target, &out.kl);
    out.awr_loss -= tr.cfg.beta * out.kl;
  } else {
    out.awr_loss = weighted_nll_step(tr.model.actor, tr.adam_actor, tr.adam_log_std,
                                     tr.cfg, batch.states, batch.actions, w);
  }
  out.policy_loss = out.awr_loss + tr.cfg.beta * out.kl;
  check_numeric(std::isfinite(out.policy_loss), "policy_step: non-finite policy loss");
  return out;
}

void polyak_update(const netcore::MlpSpec& spec, netcore::MlpParams& target,
                   const netcore::MlpParams& online, double p) {
  VectorXd t = netcore::flatten(spec, target);
  const VectorXd o = netcore::flatten(spec, online);
  t = (1.0 - p) * t + p * o;
  target = netcore::unflatten(spec, t);
}

GaussianPolicy behavior_clone(const datasets::TransitionDataset& tgt, const IqlConfig& cfg,
                              std::uint64_t seed, std::vector<double>* nll_log) {
  cfg.validate();
  check(tgt.size() > 0, "behavior_clone: empty dataset");

  Rng rng(seed);
  GaussianPolicy pi = make_gaussian(tgt.state_dim(), tgt.action_dim(), cfg, rng);
  netcore::AdamState adam_mean = netcore::make_adam(pi.spec, {.lr = cfg.lr});
  netcore::AdamState adam_log_std = netcore::make_adam_flat(tgt.action_dim(), {.lr = cfg.lr});

  const int n = tgt.size();
  const int B = cfg.batch_target + cfg.batch_rest;
  MatrixXd s(B, tgt.state_dim()), a(B, tgt.action_dim());
  const VectorXd ones = VectorXd::Ones(B);
  if (nll_log != nullptr) nll_log->reserve(static_cast<std::size_t>(cfg.bc_steps));
  for (int step = 0; step < cfg.bc_steps; ++step) {
    for (int i = 0; i < B; ++i) {
      const auto row = rng.uniform_int(n);
      s.row(i) = tgt.states().row(row);
      a.row(i) = tgt.actions().row(row);
    }
    const double nll = weighted_nll_step(pi, adam_mean, adam_log_std, cfg, s, a, ones);
    if (nll_log != nullptr) nll_log->push_back(nll);
  }
  return pi;
}

namespace {

Batch draw_batch(const datasets::TransitionDataset& train, const std::vector<int>& tgt_idx,
                 const std::vector<int>& rest_idx, const IqlConfig& cfg, Rng& rng) {
  const int nt = cfg.batch_target;
  const int nr = cfg.batch_rest;
  Batch b;
  b.n_target = nt;
  b.states.resize(nt + nr, train.state_dim());
  b.actions.resize(nt + nr, train.action_dim());
  b.rewards.resize(nt + nr);
  b.next_states.resize(nt + nr, train.state_dim());
  b.dones.resize(nt + nr);
  // rest rows come from the target pool again when nothing else is present
  const std::vector<int>& rest_pool = rest_idx.empty() ? tgt_idx : rest_idx;
  for (int i = 0; i < nt + nr; ++i) {
    const std::vector<int>& pool = i < nt ? tgt_idx : rest_pool;
    const int row = pool[rng.uniform_int(pool.size())];
    b.states.row(i) = train.states().row(row);
    b.actions.row(i) = train.actions().row(row);
    b.rewards[i] = train.rewards()[row];
    b.next_states.row(i) = train.next_states().row(row);
    b.dones[i] = train.dones()[row];
  }
  return b;
}

}  // namespace

TrainResult iql_train(const datasets::TransitionDataset& train, const IqlConfig& cfg,
                      std::uint64_t seed, const domains::LinearGaussianDomain* eval_domain,
                      const domains::RefReturns* refs) {
  cfg.validate();
  check(train.size() > 0, "iql_train: empty training set");
  check((eval_domain == nullptr) == (refs == nullptr),
        "iql_train: evaluation needs both a domain and reference returns");

  std::vector<int> tgt_idx, rest_idx;
  for (int i = 0; i < train.size(); ++i) {
    if (train.origins()[static_cast<std::size_t>(i)] == datasets::Origin::Target)
      tgt_idx.push_back(i);
    else
      rest_idx.push_back(i);
  }
  check(!tgt_idx.empty(), "iql_train: training set has no target-origin rows");

  datasets::DatasetMeta tgt_meta = train.meta();
  tgt_meta.extra["pool"] = "behavior-clone";
  const datasets::TransitionDataset tgt_only = train.take(tgt_idx, tgt_meta);

  TrainResult result;
  IqlTrainer tr = make_trainer(train.state_dim(), train.action_dim(), cfg,
                               Rng::derive(seed, "iql-init"));
  tr.model.behavior = behavior_clone(tgt_only, cfg, Rng::derive(seed, "bc"));

  Rng batch_rng(Rng::derive(seed, "iql-batch"));
  for (int step = 1; step <= cfg.steps; ++step) {
    const Batch batch = draw_batch(train, tgt_idx, rest_idx, cfg, batch_rng);
    const double v_loss = value_step(tr, batch);
    const double q_loss = q_step(tr, batch);
    const StepLosses pl = policy_step(tr, batch);

    const bool last = step == cfg.steps;
    if (last || (cfg.eval_every > 0 && step % cfg.eval_every == 0)) {
      TrainMetric m;
      m.step = step;
      m.v_loss = v_loss;
      m.q_loss = q_loss;
      m.policy_loss = pl.policy_loss;
      if (eval_domain != nullptr) {
        const EvalResult ev = evaluate(tr.model.actor, *eval_domain, *refs,
                                       cfg.eval_episodes,
                                       Rng::derive(seed, "eval-" + std::to_string(step)));
        m.ns = ev.ns;
        m.has_ns = true;
      }
      result.metrics.push_back(m);
    }
  }
  result.model = std::move(tr.model);
  return result;
}

double normalized_score(double j, const domains::RefReturns& refs) {
  check(refs.j_expert != refs.j_random,
        "normalized_score: degenerate references (J_e = J_r)");
  return (j - refs.j_random) / (refs.j_expert - refs.j_random) * 100.0;
}

EvalResult evaluate(const GaussianPolicy& actor, const domains::LinearGaussianDomain& d,
                    const domains::RefReturns& refs, int episodes, std::uint64_t seed) {
  actor.validate();
  d.validate();
  check(episodes > 0, "evaluate: episodes must be positive");
  check(actor.spec.input_dim == d.state_dim() && actor.spec.output_dim == d.action_dim(),
        "evaluate: actor does not match the domain");

  Rng rng(seed);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    VectorXd s = d.init_mean + d.init_std.cwiseProduct(rng.normal_vector(d.state_dim()));
    for (int t = 0; t < d.horizon; ++t) {
      const VectorXd a = actor.mean(s.transpose()).row(0);
      total += d.reward(s, a);
      s = d.step(s, a, rng);
    }
  }
  EvalResult out;
  out.j = total / episodes;
  out.ns = normalized_score(out.j, refs);
  return out;
}

namespace {

nlohmann::json vec_to_json(const VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VectorXd vec_from_json(const nlohmann::json& arr) {
  VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i];
  return v;
}

}  // namespace

void save_policy(const std::filesystem::path& dir, const PolicyModel& m) {
  m.validate();
  std::filesystem::create_directories(dir);
  const auto save_net = [&](const std::string& name, const netcore::MlpSpec& spec,
                            const netcore::MlpParams& params) {
    netcore::save_checkpoint(dir / (name + ".ckpt"), {spec, params, 0, 0});
  };
  save_net("actor", m.actor.spec, m.actor.params);
  save_net("behavior", m.behavior.spec, m.behavior.params);
  save_net("q", m.q_spec, m.q);
  save_net("q_target", m.q_spec, m.q_target);
  save_net("v", m.v_spec, m.v);

  nlohmann::json j;
  j["format"] = "tce-policy";
  j["version"] = 1;
  j["state_dim"] = m.state_dim;
  j["action_dim"] = m.action_dim;
  j["actor_log_std"] = vec_to_json(m.actor.log_std);
  j["behavior_log_std"] = vec_to_json(m.behavior.log_std);
  std::ofstream out(dir / "policy.json");
  check(out.good(), "save_policy: cannot open " + (dir / "policy.json").string());
  out << j.dump(2) << "\n";
  check(out.good(), "save_policy: write failed");
}

PolicyModel load_policy(const std::filesystem::path& dir) {
  std::ifstream in(dir / "policy.json");
  check(in.good(), "load_policy: cannot open " + (dir / "policy.json").string());
  nlohmann::json j;
  in >> j;
  check(j.value("format", "") == "tce-policy", "load_policy: not a policy directory");
  check(j.value("version", 0) == 1, "load_policy: unsupported version");

  PolicyModel m;
  m.state_dim = j.at("state_dim").get<int>();
  m.action_dim = j.at("action_dim").get<int>();
  const auto load_net = [&](const std::string& name, netcore::MlpSpec& spec,
                            netcore::MlpParams& params) {
    netcore::Checkpoint c = netcore::load_checkpoint(dir / (name + ".ckpt"));
    spec = c.spec;
    params = std::move(c.params);
  };
  load_net("actor", m.actor.spec, m.actor.params);
  load_net("behavior", m.behavior.spec, m.behavior.params);
  load_net("q", m.q_spec, m.q);
  netcore::MlpSpec qt_spec;
  load_net("q_target", qt_spec, m.q_target);
  check(qt_spec == m.q_spec, "load_policy: target-Q spec mismatch");
  load_net("v", m.v_spec, m.v);
  m.actor.log_std = vec_from_json(j.at("actor_log_std"));
  m.behavior.log_std = vec_from_json(j.at("behavior_log_std"));
  m.validate();
  return m;
}

}  // namespace tce::policy
