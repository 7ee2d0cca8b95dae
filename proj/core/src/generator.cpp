#include "tce/generator.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <utility>

#include <json.hpp>

#include "tce/errors.hpp"
#include "tce/rng.hpp"
#include "tce/selection.hpp"

namespace tce::generator {

using json = nlohmann::json;
using datasets::Origin;
using datasets::Scaler;
using datasets::TransitionDataset;
using netcore::MlpSpec;

void GenConfig::validate() const {
  check(lambda_cov >= 0.0 && lambda_cov <= 1.0, "GenConfig: lambda_cov outside [0, 1]");
  check(lambda_mix >= 0.0 && lambda_mix <= 1.0, "GenConfig: lambda_mix outside [0, 1]");
  check(mix_epochs >= 1 && tran_epochs >= 1 && aux_epochs >= 1,
        "GenConfig: epoch counts must be positive");
  check(batch_size >= 1, "GenConfig: batch_size must be positive");
  check(lr > 0.0, "GenConfig: lr must be positive");
  check(tau_floor > 0.0 && tau_floor < 1.0, "GenConfig: tau_floor outside (0, 1)");
  check(holdout_frac > 0.0 && holdout_frac < 1.0,
        "GenConfig: holdout_frac outside (0, 1)");
  check(score_hidden >= 1 && aux_hidden >= 1, "GenConfig: hidden widths must be positive");
  check(score_blocks >= 0 && aux_blocks >= 0, "GenConfig: block counts must be >= 0");
  for (int w : embed_widths) check(w >= 1, "GenConfig: embed widths must be positive");
}

void TceModels::validate() const {
  check(state_dim >= 1 && action_dim >= 1, "TceModels: dims must be positive");
  check(q_mix.state_dim == state_dim && q_mix.cond_dim == 0,
        "TceModels: q_mix must be an unconditional state score");
  const int want_cond = one_stage ? state_dim + action_dim : state_dim;
  check(q_tran.state_dim == state_dim && q_tran.cond_dim == want_cond,
        "TceModels: q_tran conditioning width inconsistent with mode");
  check(inv.spec.input_dim == 2 * state_dim && inv.spec.output_dim == action_dim,
        "TceModels: inverse model dims inconsistent");
  const int rew_in = 2 * state_dim + (reward_uses_action ? action_dim : 0);
  check(rew.spec.input_dim == rew_in && rew.spec.output_dim == 1,
        "TceModels: reward model dims inconsistent");
  if (one_stage) {
    check(action_pool.rows() >= 1 && action_pool.cols() == action_dim,
          "TceModels: one-stage mode needs a non-empty action pool");
  }
}

int planned_generate_count(const GenConfig& cfg, int source_size) {
  check(source_size >= 0, "planned_generate_count: negative source size");
  if (cfg.n_generate >= 0) return cfg.n_generate;
  return static_cast<int>(std::lround((1.0 - cfg.lambda_mix) * source_size));
}

TransitionDataset coverage_union(const TransitionDataset& src, const TransitionDataset& tgt,
                                 double lambda_cov) {
  check(lambda_cov >= 0.0 && lambda_cov <= 1.0, "coverage_union: lambda_cov outside [0, 1]");
  datasets::DatasetMeta meta = tgt.meta();
  meta.lambda_cov = lambda_cov;
  meta.extra["pool"] = "coverage-union";
  if (lambda_cov == 0.0) {
    meta.extra["n_source_selected"] = "0";
    return tgt.take(
        [&] {
          std::vector<int> all(static_cast<std::size_t>(tgt.size()));
          std::iota(all.begin(), all.end(), 0);
          return all;
        }(),
        meta);
  }
  selection::SelectionResult sel = selection::select(src, tgt, lambda_cov);
  meta.extra["n_source_selected"] = std::to_string(sel.indices.size());
  TransitionDataset picked = src.take(sel.indices, meta);
  return TransitionDataset::concat({&picked, &tgt}, meta);
}

namespace {

MlpSpec score_spec(int state_dim, int cond_dim, const GenConfig& cfg) {
  MlpSpec spec;
  spec.input_dim = state_dim;
  spec.hidden_dim = cfg.score_hidden;
  spec.num_res_blocks = cfg.score_blocks;
  spec.output_dim = state_dim;
  spec.embeds.push_back({"tau", 1, cfg.embed_widths});
  if (cond_dim > 0) spec.embeds.push_back({"cond", cond_dim, cfg.embed_widths});
  spec.validate();
  return spec;
}

MlpSpec aux_spec(int input_dim, int output_dim, const GenConfig& cfg) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_dim = cfg.aux_hidden;
  spec.num_res_blocks = cfg.aux_blocks;
  spec.output_dim = output_dim;
  spec.validate();
  return spec;
}

// One DSM gradient step per "epoch": each batch row draws a pool index, a
// noise level tau and a perturbation z, in that order.
ScoreModel train_score(const MatrixXd& x0, const MatrixXd& cond, const Scaler& scaler,
                       const diffusion::NoiseSchedule& sched, const GenConfig& cfg,
                       int epochs, std::uint64_t seed, std::string provenance) {
  const int n = static_cast<int>(x0.rows());
  check(n > 0, "train_score: empty training set");
  const int d = static_cast<int>(x0.cols());
  const int cond_dim = static_cast<int>(cond.cols());
  if (cond_dim > 0) check(cond.rows() == n, "train_score: conditioning row count mismatch");

  ScoreModel model;
  model.spec = score_spec(d, cond_dim, cfg);
  model.scaler = scaler;
  model.state_dim = d;
  model.cond_dim = cond_dim;
  model.provenance = std::move(provenance);

  Rng rng(seed);
  model.params = netcore::init_params(model.spec, rng);
  netcore::AdamState adam = netcore::make_adam(model.spec, {.lr = cfg.lr});

  const int B = cfg.batch_size;
  netcore::LossBatch batch;
  batch.inputs.resize(B, model.spec.total_input_dim());
  batch.targets.resize(B, d);
  batch.scales.resize(B);
  model.loss_log.reserve(static_cast<std::size_t>(epochs));
  for (int step = 0; step < epochs; ++step) {
    for (int i = 0; i < B; ++i) {
      const auto idx = rng.uniform_int(n);
      const double tau = rng.uniform(cfg.tau_floor, 1.0);
      const VectorXd z = rng.normal_vector(d);
      const double sig = sched.sigma(tau);
      batch.inputs.row(i).segment(0, d) = x0.row(idx) + sig * z.transpose();
      batch.inputs(i, d) = tau;
      if (cond_dim > 0) batch.inputs.row(i).segment(d + 1, cond_dim) = cond.row(idx);
      batch.targets.row(i) = z.transpose();
      batch.scales[i] = sig;
    }
    netcore::LossGrad lg =
        netcore::loss_and_grad(model.spec, model.params, batch, netcore::LossKind::Dsm);
    netcore::adam_step(adam, model.spec, model.params, lg.grads);
    model.loss_log.push_back(lg.loss);
  }
  return model;
}

AuxModel train_regressor(const MatrixXd& X, const MatrixXd& Y, const Scaler& scaler,
                         const GenConfig& cfg, std::uint64_t seed) {
  const int n = static_cast<int>(X.rows());
  check(n >= 2, "train_regressor: need at least 2 rows for a holdout split");

  AuxModel model;
  model.spec = aux_spec(static_cast<int>(X.cols()), static_cast<int>(Y.cols()), cfg);
  model.scaler = scaler;

  Rng rng(seed);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i >= 1; --i) {
    const auto j = rng.uniform_int(i + 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  int n_hold = static_cast<int>(std::lround(cfg.holdout_frac * n));
  n_hold = std::max(1, std::min(n_hold, n - 1));
  const int n_train = n - n_hold;

  model.params = netcore::init_params(model.spec, rng);
  netcore::AdamState adam = netcore::make_adam(model.spec, {.lr = cfg.lr});

  const int B = cfg.batch_size;
  netcore::LossBatch batch;
  batch.inputs.resize(B, model.spec.input_dim);
  batch.targets.resize(B, model.spec.output_dim);
  model.loss_log.reserve(static_cast<std::size_t>(cfg.aux_epochs));
  for (int step = 0; step < cfg.aux_epochs; ++step) {
    for (int i = 0; i < B; ++i) {
      const int row = perm[static_cast<std::size_t>(rng.uniform_int(n_train))];
      batch.inputs.row(i) = X.row(row);
      batch.targets.row(i) = Y.row(row);
    }
    netcore::LossGrad lg = netcore::loss_and_grad(model.spec, model.params, batch,
                                                  netcore::LossKind::MseToTarget);
    netcore::adam_step(adam, model.spec, model.params, lg.grads);
    model.loss_log.push_back(lg.loss);
  }

  MatrixXd Xh(n_hold, X.cols()), Yh(n_hold, Y.cols());
  for (int i = 0; i < n_hold; ++i) {
    Xh.row(i) = X.row(perm[static_cast<std::size_t>(n_train + i)]);
    Yh.row(i) = Y.row(perm[static_cast<std::size_t>(n_train + i)]);
  }
  const MatrixXd R = netcore::forward(model.spec, model.params, Xh) - Yh;
  model.holdout_mse = R.rowwise().squaredNorm().mean();
  model.holdout_err = R.rowwise().norm().mean();
  return model;
}

void assert_target_only(const TransitionDataset& ds, const std::string& who) {
  for (Origin o : ds.origins())
    check(o == Origin::Target, who + ": training set must contain target rows only");
}

}  // namespace

ScoreModel train_mixture_score(const MatrixXd& states, const Scaler& scaler,
                               const diffusion::NoiseSchedule& sched, const GenConfig& cfg,
                               std::uint64_t seed) {
  cfg.validate();
  check(states.rows() > 0, "train_mixture_score: empty training set");
  const MatrixXd z0 = scaler.transform_rows(states);
  return train_score(z0, MatrixXd(states.rows(), 0), scaler, sched, cfg, cfg.mix_epochs,
                     seed, "state-pool[n=" + std::to_string(states.rows()) + "]");
}

ScoreModel train_transition_score(const TransitionDataset& tgt, const Scaler& scaler,
                                  const diffusion::NoiseSchedule& sched, const GenConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  check(tgt.size() > 0, "train_transition_score: empty training set");
  assert_target_only(tgt, "train_transition_score");
  const MatrixXd z_next = scaler.transform_rows(tgt.next_states());
  MatrixXd cond = scaler.transform_rows(tgt.states());
  if (cfg.one_stage) {
    MatrixXd with_a(cond.rows(), cond.cols() + tgt.action_dim());
    with_a << cond, tgt.actions();
    cond = std::move(with_a);
  }
  return train_score(z_next, cond, scaler, sched, cfg, cfg.tran_epochs, seed,
                     "target-only[n=" + std::to_string(tgt.size()) + "]");
}

AuxPair train_aux(const TransitionDataset& tgt, const TransitionDataset& rew_set,
                  const Scaler& scaler, const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check(tgt.size() > 0 && rew_set.size() > 0, "train_aux: empty training set");
  assert_target_only(tgt, "train_aux(inv)");

  AuxPair out;
  {
    MatrixXd X(tgt.size(), 2 * tgt.state_dim());
    X << scaler.transform_rows(tgt.states()), scaler.transform_rows(tgt.next_states());
    out.inv = train_regressor(X, tgt.actions(), scaler, cfg, Rng::derive(seed, "inv"));
  }
  {
    const int extra = cfg.reward_uses_action ? rew_set.action_dim() : 0;
    MatrixXd X(rew_set.size(), 2 * rew_set.state_dim() + extra);
    if (extra > 0) {
      X << scaler.transform_rows(rew_set.states()),
          scaler.transform_rows(rew_set.next_states()), rew_set.actions();
    } else {
      X << scaler.transform_rows(rew_set.states()),
          scaler.transform_rows(rew_set.next_states());
    }
    out.rew = train_regressor(X, rew_set.rewards(), scaler, cfg, Rng::derive(seed, "rew"));
  }
  return out;
}

TceModels train_models(const TransitionDataset& src, const TransitionDataset& tgt,
                       const diffusion::NoiseSchedule& sched, const GenConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  check(src.state_dim() == tgt.state_dim() && src.action_dim() == tgt.action_dim(),
        "train_models: source and target dims differ");

  const TransitionDataset pool = coverage_union(src, tgt, cfg.lambda_cov);
  const Scaler scaler = datasets::fit_scaler(pool);

  TceModels m;
  m.state_dim = tgt.state_dim();
  m.action_dim = tgt.action_dim();
  m.domain = tgt.meta().domain;
  m.one_stage = cfg.one_stage;
  m.reward_uses_action = cfg.reward_uses_action;
  m.q_mix = train_mixture_score(pool.states(), scaler, sched, cfg,
                                Rng::derive(seed, "q_mix"));
  m.q_mix.provenance = "coverage-union[lambda_cov=" + std::to_string(cfg.lambda_cov) +
                       ",n=" + std::to_string(pool.size()) + "]";
  m.q_tran = train_transition_score(tgt, scaler, sched, cfg, Rng::derive(seed, "q_tran"));
  AuxPair aux = train_aux(tgt, pool, scaler, cfg, Rng::derive(seed, "aux"));
  m.inv = std::move(aux.inv);
  m.rew = std::move(aux.rew);
  if (cfg.one_stage) m.action_pool = tgt.actions();
  m.validate();
  return m;
}

diffusion::BatchScoreFn score_fn(const ScoreModel& m) {
  check(m.cond_dim == 0, "score_fn: model expects a conditioning input");
  return [spec = m.spec, params = m.params](const MatrixXd& x, double tau) {
    MatrixXd in(x.rows(), x.cols() + 1);
    in.leftCols(x.cols()) = x;
    in.col(x.cols()).setConstant(tau);
    return netcore::forward(spec, params, in);
  };
}

diffusion::BatchScoreFn score_fn(const ScoreModel& m, const MatrixXd& conds) {
  check(m.cond_dim > 0, "score_fn: model is unconditional");
  check(conds.cols() == m.cond_dim, "score_fn: conditioning width mismatch");
  return [spec = m.spec, params = m.params, conds](const MatrixXd& x, double tau) {
    check(x.rows() == conds.rows(), "score_fn: batch does not match conditioning rows");
    MatrixXd in(x.rows(), x.cols() + 1 + conds.cols());
    in.leftCols(x.cols()) = x;
    in.col(x.cols()).setConstant(tau);
    in.rightCols(conds.cols()) = conds;
    return netcore::forward(spec, params, in);
  };
}

MatrixXd eval_inverse(const AuxModel& m, const MatrixXd& s, const MatrixXd& s_next) {
  check(s.rows() == s_next.rows(), "eval_inverse: row count mismatch");
  MatrixXd X(s.rows(), s.cols() + s_next.cols());
  X << m.scaler.transform_rows(s), m.scaler.transform_rows(s_next);
  return netcore::forward(m.spec, m.params, X);
}

VectorXd eval_reward(const AuxModel& m, const MatrixXd& s, const MatrixXd& s_next,
                     const MatrixXd* actions) {
  check(s.rows() == s_next.rows(), "eval_reward: row count mismatch");
  const int extra = actions ? static_cast<int>(actions->cols()) : 0;
  check(s.cols() + s_next.cols() + extra == m.spec.input_dim,
        "eval_reward: input width mismatch (is the action flag consistent?)");
  MatrixXd X(s.rows(), s.cols() + s_next.cols() + extra);
  if (actions) {
    check(actions->rows() == s.rows(), "eval_reward: action row count mismatch");
    X << m.scaler.transform_rows(s), m.scaler.transform_rows(s_next), *actions;
  } else {
    X << m.scaler.transform_rows(s), m.scaler.transform_rows(s_next);
  }
  return netcore::forward(m.spec, m.params, X).col(0);
}

namespace {

// Runs one sampling stage over the still-alive rows: a first lockstep pass,
// one retry pass for chains that failed, then drops. `conds` may be empty
// (unconditional) and is indexed in the same row order as `rows`.
void run_stage(const ScoreModel& model, const MatrixXd& conds, MatrixXd& out,
               std::vector<int>& rows, std::vector<char>& dead,
               const diffusion::SamplerConfig& sampler, const diffusion::NoiseSchedule& sched,
               std::uint64_t stage_seed, std::uint64_t retry_seed) {
  const int n = static_cast<int>(rows.size());
  const bool conditional = conds.cols() > 0;
  auto fn = conditional ? score_fn(model, conds) : score_fn(model);
  diffusion::SampleBatch first =
      diffusion::pc_sample_batch(fn, model.state_dim, n, sampler, sched, stage_seed);

  std::vector<int> failed;
  for (int i = 0; i < n; ++i) {
    if (first.failed_step[i] == -1)
      out.row(rows[static_cast<std::size_t>(i)]) = first.samples.row(i);
    else
      failed.push_back(i);
  }
  if (failed.empty()) return;

  MatrixXd retry_conds(static_cast<int>(failed.size()), conds.cols());
  for (std::size_t j = 0; j < failed.size(); ++j)
    if (conditional) retry_conds.row(static_cast<int>(j)) = conds.row(failed[j]);
  auto retry_fn = conditional ? score_fn(model, retry_conds) : score_fn(model);
  diffusion::SampleBatch second = diffusion::pc_sample_batch(
      retry_fn, model.state_dim, static_cast<int>(failed.size()), sampler, sched, retry_seed);
  for (std::size_t j = 0; j < failed.size(); ++j) {
    const int row = rows[static_cast<std::size_t>(failed[j])];
    if (second.failed_step[static_cast<int>(j)] == -1)
      out.row(row) = second.samples.row(static_cast<int>(j));
    else
      dead[static_cast<std::size_t>(row)] = 1;
  }
}

}  // namespace

TransitionDataset synthesize(const TceModels& models, const diffusion::NoiseSchedule& sched,
                             const diffusion::SamplerConfig& sampler, const GenConfig& cfg,
                             int source_size, std::uint64_t seed) {
  cfg.validate();
  models.validate();
  const int n = planned_generate_count(cfg, source_size);
  const int d = models.state_dim;

  datasets::DatasetMeta meta;
  meta.domain = models.domain;
  meta.tier = "generated";
  meta.seed = seed;
  meta.lambda_cov = cfg.lambda_cov;
  meta.lambda_mix = cfg.lambda_mix;
  meta.extra["mode"] = models.one_stage ? "one-stage" : "two-stage";
  meta.extra["n_requested"] = std::to_string(n);
  meta.extra["q_mix_crc32"] =
      std::to_string(netcore::params_crc32(models.q_mix.spec, models.q_mix.params));
  meta.extra["q_tran_crc32"] =
      std::to_string(netcore::params_crc32(models.q_tran.spec, models.q_tran.params));
  meta.extra["inv_crc32"] =
      std::to_string(netcore::params_crc32(models.inv.spec, models.inv.params));
  meta.extra["rew_crc32"] =
      std::to_string(netcore::params_crc32(models.rew.spec, models.rew.params));
  if (n == 0) {
    meta.extra["n_dropped"] = "0";
    return TransitionDataset(d, models.action_dim, meta);
  }

  std::vector<char> dead(static_cast<std::size_t>(n), 0);

  // Stage 1: states from the mixture score.
  MatrixXd Z(n, d);
  Z.setZero();
  {
    std::vector<int> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    run_stage(models.q_mix, MatrixXd(n, 0), Z, rows, dead, sampler, sched,
              Rng::derive(seed, "stage1"), Rng::derive(seed, "stage1-retry"));
  }

  // One-stage conditioning actions are drawn for every requested row before
  // any drop so later rows do not shift when an early chain fails.
  MatrixXd pool_actions(0, 0);
  if (models.one_stage) {
    Rng arng(Rng::derive(seed, "actions"));
    pool_actions.resize(n, models.action_dim);
    for (int i = 0; i < n; ++i)
      pool_actions.row(i) =
          models.action_pool.row(static_cast<int>(arng.uniform_int(models.action_pool.rows())));
  }

  // Stage 2: next states conditioned on the surviving stage-1 states.
  std::vector<int> alive;
  for (int i = 0; i < n; ++i)
    if (!dead[static_cast<std::size_t>(i)]) alive.push_back(i);
  MatrixXd Z_next(n, d);
  Z_next.setZero();
  if (!alive.empty()) {
    MatrixXd conds(static_cast<int>(alive.size()), models.q_tran.cond_dim);
    for (std::size_t j = 0; j < alive.size(); ++j) {
      conds.row(static_cast<int>(j)).segment(0, d) = Z.row(alive[j]);
      if (models.one_stage)
        conds.row(static_cast<int>(j)).segment(d, models.action_dim) =
            pool_actions.row(alive[j]);
    }
    run_stage(models.q_tran, conds, Z_next, alive, dead, sampler, sched,
              Rng::derive(seed, "stage2"), Rng::derive(seed, "stage2-retry"));
  }

  alive.clear();
  for (int i = 0; i < n; ++i)
    if (!dead[static_cast<std::size_t>(i)]) alive.push_back(i);

  // Labeling: raw states in, actions and rewards out. Non-finite labels are
  // deterministic, so they drop without a retry.
  MatrixXd S(static_cast<int>(alive.size()), d), S_next(static_cast<int>(alive.size()), d);
  for (std::size_t j = 0; j < alive.size(); ++j) {
    S.row(static_cast<int>(j)) = Z.row(alive[j]);
    S_next.row(static_cast<int>(j)) = Z_next.row(alive[j]);
  }
  S = models.q_mix.scaler.inverse_rows(S);
  S_next = models.q_mix.scaler.inverse_rows(S_next);

  MatrixXd A;
  if (models.one_stage) {
    A.resize(static_cast<int>(alive.size()), models.action_dim);
    for (std::size_t j = 0; j < alive.size(); ++j)
      A.row(static_cast<int>(j)) = pool_actions.row(alive[j]);
  } else {
    A = eval_inverse(models.inv, S, S_next);
  }
  const VectorXd r =
      eval_reward(models.rew, S, S_next, models.reward_uses_action ? &A : nullptr);

  std::vector<int> kept;
  for (std::size_t j = 0; j < alive.size(); ++j) {
    const bool finite = S.row(static_cast<int>(j)).allFinite() &&
                        S_next.row(static_cast<int>(j)).allFinite() &&
                        A.row(static_cast<int>(j)).allFinite() &&
                        std::isfinite(r[static_cast<int>(j)]);
    if (finite)
      kept.push_back(static_cast<int>(j));
    else
      dead[static_cast<std::size_t>(alive[j])] = 1;
  }

  const int n_dropped = n - static_cast<int>(kept.size());
  meta.extra["n_dropped"] = std::to_string(n_dropped);
  check_numeric(static_cast<double>(n_dropped) <= 0.01 * n,
                "synthesize: dropped " + std::to_string(n_dropped) + " of " +
                    std::to_string(n) + " chains (limit 1%)");

  const int m = static_cast<int>(kept.size());
  MatrixXd Sk(m, d), Snk(m, d), Ak(m, models.action_dim);
  VectorXd rk(m), done = VectorXd::Zero(m);
  for (int j = 0; j < m; ++j) {
    Sk.row(j) = S.row(kept[static_cast<std::size_t>(j)]);
    Snk.row(j) = S_next.row(kept[static_cast<std::size_t>(j)]);
    Ak.row(j) = A.row(kept[static_cast<std::size_t>(j)]);
    rk[j] = r[kept[static_cast<std::size_t>(j)]];
  }
  std::vector<Origin> origins(static_cast<std::size_t>(m), Origin::Generated);
  return TransitionDataset(std::move(Sk), std::move(Ak), std::move(rk), std::move(Snk),
                           std::move(done), std::move(origins), meta);
}

namespace {

json scaler_to_json(const Scaler& s) {
  json j;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
  return j;
}

Scaler scaler_from_json(const json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std_ = j.at("std").get<std::vector<double>>();
  check(mean.size() == std_.size(), "load_models: scaler dims differ");
  Scaler s;
  s.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const VectorXd>(std_.data(), static_cast<Eigen::Index>(std_.size()));
  return s;
}

void save_net(const std::filesystem::path& dir, const std::string& name,
              const MlpSpec& spec, const netcore::MlpParams& params, std::int64_t step) {
  netcore::Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.params = params;
  ckpt.step = step;
  netcore::save_checkpoint(dir / (name + ".ckpt"), ckpt);
}

}  // namespace

void save_models(const std::filesystem::path& dir, const TceModels& m) {
  m.validate();
  std::filesystem::create_directories(dir);
  save_net(dir, "q_mix", m.q_mix.spec, m.q_mix.params,
           static_cast<std::int64_t>(m.q_mix.loss_log.size()));
  save_net(dir, "q_tran", m.q_tran.spec, m.q_tran.params,
           static_cast<std::int64_t>(m.q_tran.loss_log.size()));
  save_net(dir, "inv", m.inv.spec, m.inv.params,
           static_cast<std::int64_t>(m.inv.loss_log.size()));
  save_net(dir, "rew", m.rew.spec, m.rew.params,
           static_cast<std::int64_t>(m.rew.loss_log.size()));

  json j;
  j["format"] = "tce-models";
  j["version"] = 1;
  j["state_dim"] = m.state_dim;
  j["action_dim"] = m.action_dim;
  j["domain"] = m.domain;
  j["one_stage"] = m.one_stage;
  j["reward_uses_action"] = m.reward_uses_action;
  j["scaler"] = scaler_to_json(m.q_mix.scaler);
  j["q_mix"] = {{"provenance", m.q_mix.provenance}};
  j["q_tran"] = {{"provenance", m.q_tran.provenance}};
  j["inv"] = {{"holdout_mse", m.inv.holdout_mse}, {"holdout_err", m.inv.holdout_err}};
  j["rew"] = {{"holdout_mse", m.rew.holdout_mse}, {"holdout_err", m.rew.holdout_err}};
  j["action_pool"] = json::array();
  for (Eigen::Index i = 0; i < m.action_pool.rows(); ++i) {
    std::vector<double> row(m.action_pool.cols());
    for (Eigen::Index c = 0; c < m.action_pool.cols(); ++c)
      row[static_cast<std::size_t>(c)] = m.action_pool(i, c);
    j["action_pool"].push_back(row);
  }
  std::ofstream out(dir / "models.json");
  check(out.good(), "save_models: cannot open " + (dir / "models.json").string());
  out << j.dump(2) << "\n";
  check(out.good(), "save_models: write failed");
}

TceModels load_models(const std::filesystem::path& dir) {
  std::ifstream in(dir / "models.json");
  check(in.good(), "load_models: cannot open " + (dir / "models.json").string());
  json j = json::parse(in, nullptr, false);
  check(!j.is_discarded(), "load_models: malformed models.json");
  check(j.value("format", "") == "tce-models", "load_models: bad format tag");
  check(j.value("version", 0) == 1, "load_models: unsupported version");

  TceModels m;
  m.state_dim = j.at("state_dim").get<int>();
  m.action_dim = j.at("action_dim").get<int>();
  m.domain = j.value("domain", "");
  m.one_stage = j.at("one_stage").get<bool>();
  m.reward_uses_action = j.at("reward_uses_action").get<bool>();
  const Scaler scaler = scaler_from_json(j.at("scaler"));

  auto load_net = [&](const std::string& name) {
    return netcore::load_checkpoint(dir / (name + ".ckpt"));
  };
  netcore::Checkpoint ck = load_net("q_mix");
  m.q_mix = {ck.spec, ck.params, scaler, m.state_dim, 0,
             j.at("q_mix").value("provenance", ""), {}};
  ck = load_net("q_tran");
  const int cond = m.one_stage ? m.state_dim + m.action_dim : m.state_dim;
  m.q_tran = {ck.spec, ck.params, scaler, m.state_dim, cond,
              j.at("q_tran").value("provenance", ""), {}};
  ck = load_net("inv");
  m.inv = {ck.spec,
           ck.params,
           scaler,
           j.at("inv").value("holdout_mse", 0.0),
           j.at("inv").value("holdout_err", 0.0),
           {}};
  ck = load_net("rew");
  m.rew = {ck.spec,
           ck.params,
           scaler,
           j.at("rew").value("holdout_mse", 0.0),
           j.at("rew").value("holdout_err", 0.0),
           {}};

  const auto pool = j.at("action_pool").get<std::vector<std::vector<double>>>();
  m.action_pool.resize(static_cast<Eigen::Index>(pool.size()), m.action_dim);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    check(static_cast<int>(pool[i].size()) == m.action_dim,
          "load_models: action pool width mismatch");
    for (int c = 0; c < m.action_dim; ++c)
      m.action_pool(static_cast<Eigen::Index>(i), c) = pool[i][static_cast<std::size_t>(c)];
  }
  m.validate();
  return m;
}

}  // namespace tce::generator
