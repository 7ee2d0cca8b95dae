#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "tce/datasets.hpp"
#include "tce/domains.hpp"
#include "tce/errors.hpp"
#include "tce/netcore.hpp"
#include "tce/policy.hpp"
#include "tce/rng.hpp"

using namespace tce;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

policy::IqlConfig tiny_cfg() {
  policy::IqlConfig cfg;
  cfg.hidden = 32;
  cfg.blocks = 1;
  cfg.lr = 1e-3;
  cfg.steps = 30;
  cfg.bc_steps = 20;
  cfg.batch_target = 16;
  cfg.batch_rest = 16;
  cfg.eval_episodes = 2;
  return cfg;
}

datasets::TransitionDataset make_ds(const MatrixXd& s, const MatrixXd& a, const VectorXd& r,
                                    const MatrixXd& s_next, datasets::Origin origin) {
  std::vector<datasets::Origin> origins(static_cast<std::size_t>(s.rows()), origin);
  datasets::DatasetMeta meta;
  meta.domain = "toy";
  return {s, a, r, s_next, VectorXd::Zero(s.rows()), origins, meta};
}

policy::Batch rand_batch(Rng& rng, int n, int n_target, int ds, int da) {
  policy::Batch b;
  b.states = rng.normal_matrix(n, ds);
  b.actions = rng.normal_matrix(n, da);
  b.rewards = rng.normal_vector(n);
  b.next_states = rng.normal_matrix(n, ds);
  b.dones = VectorXd::Zero(n);
  b.n_target = n_target;
  return b;
}

bool same_params(const netcore::MlpSpec& spec, const netcore::MlpParams& a,
                 const netcore::MlpParams& b) {
  const VectorXd fa = netcore::flatten(spec, a);
  const VectorXd fb = netcore::flatten(spec, b);
  return fa.size() == fb.size() && (fa.array() == fb.array()).all();
}

// All-zero parameters output exactly the head bias, which makes closed-form
// loss oracles possible.
netcore::MlpParams const_net(const netcore::MlpSpec& spec, const VectorXd& out_bias) {
  netcore::MlpParams p = netcore::zeros_like(spec);
  p.output_layer.b = out_bias;
  return p;
}

netcore::MlpParams const_net(const netcore::MlpSpec& spec, double out_bias) {
  return const_net(spec, VectorXd::Constant(spec.output_dim, out_bias));
}

}  // namespace

TEST_CASE("expectile loss satisfies the partition identity") {
  const double taus[] = {0.1, 0.3, 0.5, 0.7, 0.9};
  const double us[] = {-3.0, -1.0, -0.25, 0.1, 2.0, 5.0};
  for (double tau : taus) {
    for (double u : us) {
      CHECK(policy::expectile_loss(u, tau) + policy::expectile_loss(-u, tau) ==
            doctest::Approx(u * u).epsilon(1e-12));
      CHECK(policy::expectile_loss(u, 0.5) == doctest::Approx(0.5 * u * u).epsilon(1e-12));
    }
  }
  CHECK(policy::expectile_loss(2.0, 0.5) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(policy::expectile_loss(-1.0, 0.7) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(policy::expectile_loss(1.0, 0.7) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("diagonal gaussian KL matches the closed form") {
  VectorXd mu1(2), mu2(2), unit(2);
  mu1 << 0.0, 0.0;
  mu2 << 1.0, 0.0;
  unit << 1.0, 1.0;
  CHECK(policy::gaussian_kl(mu1, unit, mu2, unit) == 0.5);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd a = rng.normal_vector(3);
    const VectorXd b = rng.normal_vector(3);
    const VectorXd sa = rng.normal_vector(3).array().abs() + 0.1;
    const VectorXd sb = rng.normal_vector(3).array().abs() + 0.1;
    CHECK(policy::gaussian_kl(a, sa, a, sa) == 0.0);
    CHECK(policy::gaussian_kl(a, sa, b, sb) >= -1e-12);

    double ref = 0.0;
    for (int d = 0; d < 3; ++d) {
      ref += std::log(sb[d]) - std::log(sa[d]) - 0.5 +
             0.5 * (sa[d] * sa[d] + (a[d] - b[d]) * (a[d] - b[d])) / (sb[d] * sb[d]);
    }
    CHECK(policy::gaussian_kl(a, sa, b, sb) == doctest::Approx(ref).epsilon(1e-12));
  }

  VectorXd bad(3);
  CHECK_THROWS_AS(policy::gaussian_kl(mu1, unit, bad, unit), ContractViolation);
}

TEST_CASE("config validation rejects bad settings") {
  policy::IqlConfig ok = tiny_cfg();
  CHECK_NOTHROW(ok.validate());

  policy::IqlConfig gamma0 = ok;
  gamma0.gamma = 0.0;
  CHECK_NOTHROW(gamma0.validate());

  auto reject = [&](auto mutate) {
    policy::IqlConfig bad = ok;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
  };
  reject([](policy::IqlConfig& c) { c.tau_v = 0.0; });
  reject([](policy::IqlConfig& c) { c.tau_v = 1.0; });
  reject([](policy::IqlConfig& c) { c.gamma = 1.0; });
  reject([](policy::IqlConfig& c) { c.gamma = -0.1; });
  reject([](policy::IqlConfig& c) { c.beta = -1e-3; });
  reject([](policy::IqlConfig& c) { c.kappa = -1.0; });
  reject([](policy::IqlConfig& c) { c.polyak = 0.0; });
  reject([](policy::IqlConfig& c) { c.adv_weight_clip = 0.0; });
  reject([](policy::IqlConfig& c) { c.batch_target = 0; });
  reject([](policy::IqlConfig& c) { c.batch_rest = -1; });
  reject([](policy::IqlConfig& c) { c.lr = 0.0; });
  reject([](policy::IqlConfig& c) { c.log_std_min = c.log_std_max; });
  reject([](policy::IqlConfig& c) { c.eval_episodes = 0; });
  reject([](policy::IqlConfig& c) { c.steps = 0; });
}

TEST_CASE("log probability matches the gaussian density") {
  policy::IqlConfig cfg = tiny_cfg();
  policy::GaussianPolicy pi = policy::make_trainer(4, 2, cfg, 5).model.actor;
  VectorXd mu(2), log_std(2);
  mu << 0.5, -0.5;
  log_std << 0.1, -0.3;
  pi.params = const_net(pi.spec, mu);
  pi.log_std = log_std;

  Rng rng(6);
  const MatrixXd s = rng.normal_matrix(5, 4);
  const MatrixXd a = rng.normal_matrix(5, 2);
  const VectorXd lp = pi.log_prob(s, a);
  for (int i = 0; i < 5; ++i) {
    double ref = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double sd = std::exp(log_std[d]);
      const double z = (a(i, d) - mu[d]) / sd;
      ref += -0.5 * z * z - log_std[d] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    CHECK(lp[i] == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("polyak update mixes parameters exactly") {
  policy::IqlConfig cfg = tiny_cfg();
  policy::IqlTrainer t1 = policy::make_trainer(4, 2, cfg, 1);
  policy::IqlTrainer t2 = policy::make_trainer(4, 2, cfg, 2);
  const netcore::MlpSpec& spec = t1.model.q_spec;

  const double p = 0.005;
  const VectorXd old = netcore::flatten(spec, t1.model.q);
  const VectorXd online = netcore::flatten(spec, t2.model.q);
  policy::polyak_update(spec, t1.model.q, t2.model.q, p);

  const VectorXd got = netcore::flatten(spec, t1.model.q);
  const VectorXd want = (1.0 - p) * old + p * online;
  CHECK((got.array() == want.array()).all());
}

TEST_CASE("TD targets mask the bootstrap term on done rows") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.hidden = 16;
  policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 9);
  tr.model.q = netcore::zeros_like(tr.model.q_spec);
  tr.model.v = const_net(tr.model.v_spec, 2.0);
  const VectorXd qt_before = netcore::flatten(tr.model.q_spec, tr.model.q_target);

  Rng rng(10);
  policy::Batch b = rand_batch(rng, 2, 0, 4, 2);
  b.rewards << 0.5, 0.5;
  b.dones << 1.0, 0.0;

  // Q is identically zero, so the loss is the mean squared TD target. The
  // done row must not see the V(s') = 2 bootstrap.
  const double y0 = 0.5;
  const double y1 = 0.5 + cfg.gamma * 2.0;
  const double loss = policy::q_step(tr, b);
  CHECK(loss == doctest::Approx((y0 * y0 + y1 * y1) / 2.0).epsilon(1e-12));

  const VectorXd qt_after = netcore::flatten(tr.model.q_spec, tr.model.q_target);
  CHECK_FALSE((qt_after.array() == qt_before.array()).all());
}

TEST_CASE("gamma zero drives Q to the constant reward") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.gamma = 0.0;
  policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 12);

  Rng rng(13);
  policy::Batch b = rand_batch(rng, 64, 0, 4, 2);
  b.rewards = VectorXd::Ones(64);
  for (int i = 0; i < 64; i += 2) b.dones[i] = 1.0;

  for (int step = 0; step < 1500; ++step) policy::q_step(tr, b);

  MatrixXd sa(64, 6);
  sa << b.states, b.actions;
  const VectorXd q = netcore::forward(tr.model.q_spec, tr.model.q, sa);
  CHECK((q.array() - 1.0).abs().maxCoeff() <= 0.02);
}

TEST_CASE("single transition converges to the hand fixed point") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.lr = 5e-4;
  policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 15);

  policy::Batch b;
  b.states = MatrixXd::Zero(1, 4);
  b.states << 0.3, -0.2, 0.1, 0.5;
  b.actions = MatrixXd::Zero(1, 2);
  b.actions << 0.2, -0.4;
  b.rewards = VectorXd::Constant(1, 0.7);
  b.next_states = MatrixXd::Zero(1, 4);
  b.dones = VectorXd::Ones(1);
  b.n_target = 1;

  // Terminal transition: the fixed point is Q = r and V = r.
  for (int step = 0; step < 6000; ++step) {
    policy::value_step(tr, b);
    policy::q_step(tr, b);
  }
  MatrixXd sa(1, 6);
  sa << b.states, b.actions;
  const double q = netcore::forward(tr.model.q_spec, tr.model.q, sa)(0, 0);
  const double v = netcore::forward(tr.model.v_spec, tr.model.v, b.states)(0, 0);
  CHECK(std::abs(q - 0.7) <= 1e-3);
  CHECK(std::abs(v - 0.7) <= 1e-3);
}

TEST_CASE("beta zero policy extraction ignores the behavior model") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.beta = 0.0;
  Rng rng(17);
  const policy::Batch b = rand_batch(rng, 16, 8, 4, 2);

  policy::IqlTrainer ta = policy::make_trainer(4, 2, cfg, 11);
  policy::IqlTrainer tb = policy::make_trainer(4, 2, cfg, 11);
  VectorXd junk = netcore::flatten(tb.model.behavior.spec, tb.model.behavior.params);
  junk.setConstant(777.0);
  tb.model.behavior.params = netcore::unflatten(tb.model.behavior.spec, junk);
  tb.model.behavior.log_std.setConstant(1.3);

  const policy::StepLosses la = policy::policy_step(ta, b);
  const policy::StepLosses lb = policy::policy_step(tb, b);
  CHECK(la.kl == 0.0);
  CHECK(lb.kl == 0.0);
  CHECK(la.awr_loss == lb.awr_loss);
  CHECK(la.policy_loss == la.awr_loss);
  CHECK(same_params(ta.model.actor.spec, ta.model.actor.params, tb.model.actor.params));
  CHECK((ta.model.actor.log_std.array() == tb.model.actor.log_std.array()).all());

  // beta > 0 without target rows in the batch is the same pure-AWR update
  policy::IqlConfig cfg_kl = cfg;
  cfg_kl.beta = 0.5;
  policy::IqlTrainer tc = policy::make_trainer(4, 2, cfg_kl, 11);
  policy::Batch b0 = b;
  b0.n_target = 0;
  const policy::StepLosses lc = policy::policy_step(tc, b0);
  CHECK(lc.kl == 0.0);
  CHECK(lc.awr_loss == la.awr_loss);
  CHECK(same_params(ta.model.actor.spec, ta.model.actor.params, tc.model.actor.params));
}

TEST_CASE("advantage weights and losses follow the closed form") {
  Rng rng(19);

  SUBCASE("zero advantage gives unit weights and NLL plus beta KL") {
    policy::IqlConfig cfg = tiny_cfg();
    cfg.beta = 0.001;
    policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 21);
    tr.model.q_target = netcore::zeros_like(tr.model.q_spec);
    tr.model.v = netcore::zeros_like(tr.model.v_spec);
    tr.model.behavior.params = tr.model.actor.params;
    tr.model.behavior.log_std = tr.model.actor.log_std;

    policy::Batch b = rand_batch(rng, 8, 8, 4, 2);
    const double nll = -tr.model.actor.log_prob(b.states, b.actions).mean();
    const policy::StepLosses out = policy::policy_step(tr, b);
    CHECK(out.kl == 0.0);
    CHECK(out.awr_loss == doctest::Approx(nll).epsilon(1e-12));
    CHECK(out.policy_loss == doctest::Approx(nll).epsilon(1e-12));
  }

  SUBCASE("constant advantage scales the loss and the KL is pinned") {
    policy::IqlConfig cfg = tiny_cfg();
    cfg.beta = 0.5;
    policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 22);
    tr.model.q_target = const_net(tr.model.q_spec, 0.3);
    tr.model.v = const_net(tr.model.v_spec, 0.1);
    tr.model.actor.params = netcore::zeros_like(tr.model.actor.spec);
    tr.model.actor.log_std.setZero();
    VectorXd mu_b(2);
    mu_b << 1.0, 0.0;
    tr.model.behavior.params = const_net(tr.model.behavior.spec, mu_b);
    tr.model.behavior.log_std.setZero();

    policy::Batch b = rand_batch(rng, 8, 8, 4, 2);
    const double w = std::exp(cfg.kappa * 0.2);
    const double nll = -tr.model.actor.log_prob(b.states, b.actions).mean();
    const policy::StepLosses out = policy::policy_step(tr, b);
    CHECK(out.kl == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.awr_loss == doctest::Approx(w * nll).epsilon(1e-11));
    CHECK(out.policy_loss == doctest::Approx(w * nll + 0.25).epsilon(1e-11));
  }

  SUBCASE("large advantages saturate at the weight clip") {
    policy::IqlConfig cfg = tiny_cfg();
    cfg.beta = 0.0;
    policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 23);
    tr.model.q_target = const_net(tr.model.q_spec, 10.0);
    tr.model.v = netcore::zeros_like(tr.model.v_spec);

    policy::Batch b = rand_batch(rng, 8, 0, 4, 2);
    const double nll = -tr.model.actor.log_prob(b.states, b.actions).mean();
    const policy::StepLosses out = policy::policy_step(tr, b);
    CHECK(out.awr_loss == doctest::Approx(cfg.adv_weight_clip * nll).epsilon(1e-11));
  }
}

TEST_CASE("advantage weights ignore shared shifts of Q and V") {
  policy::IqlConfig cfg = tiny_cfg();
  Rng rng(25);
  const policy::Batch b = rand_batch(rng, 16, 8, 4, 2);

  policy::IqlTrainer te = policy::make_trainer(4, 2, cfg, 27);
  policy::IqlTrainer tf = policy::make_trainer(4, 2, cfg, 27);
  te.model.q_target = const_net(te.model.q_spec, 3.7);
  te.model.v = const_net(te.model.v_spec, 3.7);
  tf.model.q_target = netcore::zeros_like(tf.model.q_spec);
  tf.model.v = netcore::zeros_like(tf.model.v_spec);

  const policy::StepLosses le = policy::policy_step(te, b);
  const policy::StepLosses lf = policy::policy_step(tf, b);
  CHECK(le.awr_loss == lf.awr_loss);
  CHECK(le.kl == lf.kl);
  CHECK(same_params(te.model.actor.spec, te.model.actor.params, tf.model.actor.params));
  CHECK((te.model.actor.log_std.array() == tf.model.actor.log_std.array()).all());
}

TEST_CASE("KL regularizer reads only the target half of the batch") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.beta = 0.5;
  Rng rng(29);
  const policy::Batch bx = rand_batch(rng, 12, 6, 4, 2);

  policy::Batch by = bx;
  by.states.bottomRows(6) = rng.normal_matrix(6, 4);
  by.actions.bottomRows(6) = rng.normal_matrix(6, 2);

  policy::Batch bz = bx;
  bz.states.topRows(6) = rng.normal_matrix(6, 4);

  policy::IqlTrainer tx = policy::make_trainer(4, 2, cfg, 31);
  policy::IqlTrainer ty = policy::make_trainer(4, 2, cfg, 31);
  policy::IqlTrainer tz = policy::make_trainer(4, 2, cfg, 31);
  const double kx = policy::policy_step(tx, bx).kl;
  const double ky = policy::policy_step(ty, by).kl;
  const double kz = policy::policy_step(tz, bz).kl;
  CHECK(kx == ky);
  CHECK(kx != kz);
  CHECK(kx > 0.0);
}

TEST_CASE("behavior cloning recovers linear and constant behaviors") {
  SUBCASE("linear feedback with observation noise") {
    Rng rng(101);
    const MatrixXd S = rng.normal_matrix(4000, 4);
    MatrixXd K(2, 4);
    K << 0.5, -0.2, 0.3, 0.1, -0.4, 0.1, 0.2, -0.3;
    const double sigma = 0.05;
    const MatrixXd A = S * K.transpose() + sigma * rng.normal_matrix(4000, 2);
    const auto ds = make_ds(S, A, VectorXd::Zero(4000), S, datasets::Origin::Target);

    policy::IqlConfig cfg = tiny_cfg();
    cfg.hidden = 64;
    cfg.bc_steps = 4000;
    cfg.batch_target = 64;
    cfg.batch_rest = 64;
    std::vector<double> nll;
    const policy::GaussianPolicy pi = policy::behavior_clone(ds, cfg, 7, &nll);

    const MatrixXd Sh = rng.normal_matrix(512, 4);
    const MatrixXd Ah = Sh * K.transpose() + sigma * rng.normal_matrix(512, 2);
    const double mse = (pi.mean(Sh) - Ah).rowwise().squaredNorm().mean();
    const double floor = 2.0 * sigma * sigma;
    CHECK(mse < 2.0 * floor);

    REQUIRE(nll.size() == 4000);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 100; ++i) {
      head += nll[static_cast<std::size_t>(i)];
      tail += nll[nll.size() - 100 + static_cast<std::size_t>(i)];
    }
    CHECK(tail / 100.0 < head / 100.0);
    CHECK(tail / 100.0 < 0.0);  // well below the unit-variance start
    for (int d = 0; d < 2; ++d) {
      CHECK(pi.std_dev()[d] > 0.03);
      CHECK(pi.std_dev()[d] < 0.10);
    }
  }

  SUBCASE("constant action is recovered exactly in mean") {
    Rng rng(103);
    const MatrixXd S = rng.normal_matrix(1000, 4);
    VectorXd a0(2);
    a0 << 0.3, -0.7;
    const MatrixXd A = a0.transpose().replicate(1000, 1);
    const auto ds = make_ds(S, A, VectorXd::Zero(1000), S, datasets::Origin::Target);

    policy::IqlConfig cfg = tiny_cfg();
    cfg.bc_steps = 12000;
    cfg.batch_target = 64;
    cfg.batch_rest = 64;
    const policy::GaussianPolicy pi = policy::behavior_clone(ds, cfg, 8);

    const MatrixXd err = pi.mean(S) - A;
    CHECK(err.array().abs().maxCoeff() <= 5e-3);
    // noiseless data pushes the log-std into its lower clamp
    CHECK((pi.log_std.array() == cfg.log_std_min).all());
  }
}

TEST_CASE("evaluation is deterministic and normalized scores are pinned") {
  domains::RefReturns ant{-325.6, 5722.01};
  CHECK(policy::normalized_score(5722.01, ant) == 100.0);
  CHECK(policy::normalized_score(-325.6, ant) == 0.0);
  CHECK(policy::normalized_score(2698.205, ant) == doctest::Approx(50.0).epsilon(1e-9));
  CHECK_THROWS_AS(policy::normalized_score(1.0, domains::RefReturns{2.0, 2.0}),
                  ContractViolation);

  const auto pair = domains::make_pair("small-drift");
  const domains::RefReturns refs = domains::reference_returns(pair.target, 3, 99);
  policy::IqlConfig cfg = tiny_cfg();
  cfg.hidden = 16;
  const policy::GaussianPolicy actor = policy::make_trainer(4, 2, cfg, 33).model.actor;

  const policy::EvalResult e1 = policy::evaluate(actor, pair.target, refs, 3, 5);
  const policy::EvalResult e2 = policy::evaluate(actor, pair.target, refs, 3, 5);
  const policy::EvalResult e3 = policy::evaluate(actor, pair.target, refs, 3, 6);
  CHECK(e1.j == e2.j);
  CHECK(e1.ns == e2.ns);
  CHECK(e1.j != e3.j);
  CHECK(e1.ns == policy::normalized_score(e1.j, refs));

  const policy::GaussianPolicy wrong = policy::make_trainer(3, 2, cfg, 34).model.actor;
  CHECK_THROWS_AS(policy::evaluate(wrong, pair.target, refs, 3, 5), ContractViolation);
}

TEST_CASE("iql training records metrics and respects origin tags") {
  const auto pair = domains::make_pair("small-drift");
  const auto tgt = domains::collect(pair.target, domains::Tier::Expert, 200, 31,
                                    datasets::Origin::Target);
  const auto src = domains::collect(pair.source, domains::Tier::Medium, 200, 32,
                                    datasets::Origin::Source);
  datasets::DatasetMeta meta = tgt.meta();
  const auto train = datasets::TransitionDataset::concat({&src, &tgt}, meta);

  policy::IqlConfig cfg = tiny_cfg();
  cfg.bc_steps = 20;
  cfg.steps = 30;
  cfg.eval_every = 10;
  const domains::RefReturns refs = domains::reference_returns(pair.target, 3, 99);

  const policy::TrainResult res = policy::iql_train(train, cfg, 41, &pair.target, &refs);
  REQUIRE(res.metrics.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const policy::TrainMetric& m = res.metrics[static_cast<std::size_t>(i)];
    CHECK(m.step == 10 * (i + 1));
    CHECK(m.has_ns);
    CHECK(std::isfinite(m.v_loss));
    CHECK(std::isfinite(m.q_loss));
    CHECK(std::isfinite(m.policy_loss));
    CHECK(std::isfinite(m.ns));
  }
  CHECK_NOTHROW(res.model.validate());
  CHECK(res.model.state_dim == 4);
  CHECK(res.model.action_dim == 2);

  // same seed, same run
  const policy::TrainResult rep = policy::iql_train(train, cfg, 41, &pair.target, &refs);
  for (std::size_t i = 0; i < res.metrics.size(); ++i) {
    CHECK(res.metrics[i].ns == rep.metrics[i].ns);
    CHECK(res.metrics[i].q_loss == rep.metrics[i].q_loss);
  }

  // no target rows anywhere: nothing to clone or anchor on
  CHECK_THROWS_AS(policy::iql_train(src, cfg, 41, &pair.target, &refs), ContractViolation);

  // target-only set trains fine; the rest half falls back to target rows
  policy::IqlConfig solo = cfg;
  solo.steps = 10;
  solo.eval_every = 0;
  const policy::TrainResult only = policy::iql_train(tgt, solo, 43);
  REQUIRE(only.metrics.size() == 1);
  CHECK(only.metrics[0].step == 10);
  CHECK_FALSE(only.metrics[0].has_ns);
}

TEST_CASE("policy roundtrips through save and load") {
  policy::IqlConfig cfg = tiny_cfg();
  cfg.hidden = 16;
  policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 7);
  tr.model.actor.log_std << 0.3, -0.7;
  tr.model.behavior.log_std << -1.1, 0.2;

  const auto dir = std::filesystem::temp_directory_path() / "tce_policy_test";
  std::filesystem::remove_all(dir);
  policy::save_policy(dir, tr.model);
  const policy::PolicyModel back = policy::load_policy(dir);

  CHECK(back.state_dim == 4);
  CHECK(back.action_dim == 2);
  CHECK(back.actor.spec == tr.model.actor.spec);
  CHECK(same_params(tr.model.actor.spec, back.actor.params, tr.model.actor.params));
  CHECK(same_params(tr.model.behavior.spec, back.behavior.params, tr.model.behavior.params));
  CHECK(same_params(tr.model.q_spec, back.q, tr.model.q));
  CHECK(same_params(tr.model.q_spec, back.q_target, tr.model.q_target));
  CHECK(same_params(tr.model.v_spec, back.v, tr.model.v));
  CHECK((back.actor.log_std.array() == tr.model.actor.log_std.array()).all());
  CHECK((back.behavior.log_std.array() == tr.model.behavior.log_std.array()).all());

  nlohmann::json j;
  {
    std::ifstream in(dir / "policy.json");
    in >> j;
  }
  j["version"] = 2;
  {
    std::ofstream out(dir / "policy.json");
    out << j.dump(2) << "\n";
  }
  CHECK_THROWS_AS(policy::load_policy(dir), ContractViolation);
  std::filesystem::remove_all(dir);
}
