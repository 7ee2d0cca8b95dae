#include <benchmark/benchmark.h>

#include <filesystem>

#include "tce/datasets.hpp"
#include "tce/diffusion.hpp"
#include "tce/domains.hpp"
#include "tce/netcore.hpp"
#include "tce/policy.hpp"
#include "tce/rng.hpp"
#include "tce/selection.hpp"
#include "tce/theory.hpp"

using namespace tce;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// The desk-profile transition score net: 4-d state, tau and condition branches.
netcore::MlpSpec score_spec() {
  netcore::MlpSpec s;
  s.input_dim = 4;
  s.hidden_dim = 64;
  s.num_res_blocks = 2;
  s.output_dim = 4;
  s.embeds.push_back({"tau", 1, {32, 32}});
  s.embeds.push_back({"cond", 4, {32, 32}});
  return s;
}

void BM_forward(benchmark::State& state) {
  const netcore::MlpSpec spec = score_spec();
  Rng rng(1);
  const netcore::MlpParams params = netcore::init_params(spec, rng);
  const MatrixXd X = rng.normal_matrix(state.range(0), spec.total_input_dim());
  for (auto _ : state) benchmark::DoNotOptimize(netcore::forward(spec, params, X));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_forward)->Arg(64)->Arg(256);

void BM_loss_and_grad(benchmark::State& state) {
  const netcore::MlpSpec spec = score_spec();
  Rng rng(2);
  const netcore::MlpParams params = netcore::init_params(spec, rng);
  netcore::LossBatch batch;
  batch.inputs = rng.normal_matrix(state.range(0), spec.total_input_dim());
  batch.targets = rng.normal_matrix(state.range(0), spec.output_dim);
  batch.scales = VectorXd::Constant(state.range(0), 0.7);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        netcore::loss_and_grad(spec, params, batch, netcore::LossKind::Dsm));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_loss_and_grad)->Arg(64)->Arg(256);

void BM_adam_step(benchmark::State& state) {
  const netcore::MlpSpec spec = score_spec();
  Rng rng(3);
  const Eigen::Index n = netcore::param_count(spec);
  netcore::AdamState adam = netcore::make_adam_flat(n, {});
  VectorXd params = rng.normal_vector(n);
  const VectorXd grads = rng.normal_vector(n);
  for (auto _ : state) {
    netcore::adam_step_flat(adam, params, grads);
    benchmark::DoNotOptimize(params.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_adam_step);

void BM_pc_sampling(benchmark::State& state) {
  const VectorXd mu = (VectorXd(2) << 2.0, -1.0).finished();
  const diffusion::NoiseSchedule sched;
  diffusion::SamplerConfig cfg;
  cfg.K = static_cast<int>(state.range(0));
  const diffusion::BatchScoreFn score = [&](const MatrixXd& x, double tau) {
    return MatrixXd(-(x.rowwise() - mu.transpose()) / (1.0 + sched.sigma2(tau)));
  };
  const int chains = 256;
  for (auto _ : state)
    benchmark::DoNotOptimize(diffusion::pc_sample_batch(score, 2, chains, cfg, sched, 5));
  // one predictor plus one corrector evaluation per grid step
  state.SetItemsProcessed(state.iterations() * chains * cfg.K);
}
BENCHMARK(BM_pc_sampling)->Arg(64)->Arg(256);

void BM_selection_scan(benchmark::State& state) {
  Rng rng(4);
  const int n_src = static_cast<int>(state.range(0));
  const MatrixXd src_s = rng.normal_matrix(n_src, 4);
  const MatrixXd src_n = rng.normal_matrix(n_src, 4);
  const MatrixXd tgt_s = rng.normal_matrix(500, 4);
  const MatrixXd tgt_n = rng.normal_matrix(500, 4);
  for (auto _ : state)
    benchmark::DoNotOptimize(selection::nn_distances(src_s, src_n, tgt_s, tgt_n));
  state.SetItemsProcessed(state.iterations() * n_src * 500);
}
BENCHMARK(BM_selection_scan)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_occupancy_solve(benchmark::State& state) {
  Rng rng(6);
  const theory::TabularMDP mdp = theory::random_mdp(5, 3, 0.9, 0.9, rng);
  const theory::TabularPolicy pi = theory::random_policy(5, 3, rng);
  for (auto _ : state) benchmark::DoNotOptimize(theory::occupancy(mdp, pi));
}
BENCHMARK(BM_occupancy_solve);

void BM_tced_roundtrip(benchmark::State& state) {
  const domains::DomainPair pair = domains::make_pair("small-drift");
  const datasets::TransitionDataset ds =
      domains::collect(pair.target, domains::Tier::Medium,
                       static_cast<int>(state.range(0)), 7, datasets::Origin::Target);
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "tce_bench.tced";
  for (auto _ : state) {
    datasets::write_tced(path, ds);
    benchmark::DoNotOptimize(datasets::read_tced(path));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  std::filesystem::remove(path);
}
BENCHMARK(BM_tced_roundtrip)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_iql_policy_step(benchmark::State& state) {
  policy::IqlConfig cfg;
  cfg.hidden = 64;
  cfg.blocks = 1;
  cfg.steps = 1;
  cfg.bc_steps = 1;
  policy::IqlTrainer tr = policy::make_trainer(4, 2, cfg, 9);
  Rng rng(10);
  policy::Batch b;
  b.states = rng.normal_matrix(256, 4);
  b.actions = rng.normal_matrix(256, 2);
  b.rewards = rng.normal_vector(256);
  b.next_states = rng.normal_matrix(256, 4);
  b.dones = VectorXd::Zero(256);
  b.n_target = 128;
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy::value_step(tr, b));
    benchmark::DoNotOptimize(policy::q_step(tr, b));
    benchmark::DoNotOptimize(policy::policy_step(tr, b));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_iql_policy_step);

}  // namespace

BENCHMARK_MAIN();
