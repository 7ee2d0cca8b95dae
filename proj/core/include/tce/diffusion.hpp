#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <vector>

#include "tce/rng.hpp"

namespace tce::diffusion {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Variance-exploding schedule sigma(tau) = sqrt(1 - exp(-B(tau))) with
// B(tau) = alpha_min * tau + (alpha_max - alpha_min) * tau^2 / 2.
struct NoiseSchedule {
  double alpha_min = 0.1;
  double alpha_max = 20.0;

  double beta_integral(double tau) const;
  double sigma(double tau) const;
  double sigma2(double tau) const;
  // Squared diffusion coefficient g(tau)^2 = d sigma^2 / d tau.
  double g2(double tau) const;
  double g(double tau) const;
};

struct SamplerConfig {
  int K = 500;
  int corrector_steps = 1;       // Langevin corrections per predictor step
  double corrector_snr = 0.16;
  double terminal_prior_std = -1.0;  // < 0 means sigma(1)
  double tau_floor = 1e-3;           // lowest tau sampled during training
};

// Score evaluated on a batch of rows at a shared noise level.
using BatchScoreFn = std::function<MatrixXd(const MatrixXd& x, double tau)>;
// Score evaluated on a batch of rows with a per-row noise level.
using RowScoreFn = std::function<MatrixXd(const MatrixXd& x, const VectorXd& taus)>;

// x^tau = x^0 + sigma(tau) z, row-wise.
MatrixXd perturb(const MatrixXd& x0, const VectorXd& taus, const MatrixXd& z,
                 const NoiseSchedule& sched);

// Monte-Carlo denoising objective: mean_i ||sigma_i q(x_i^tau, tau_i) + z_i||^2
// with tau_i ~ U[tau_floor, 1] and z_i standard normal.
double dsm_loss(const RowScoreFn& score, const MatrixXd& x0, const NoiseSchedule& sched,
                double tau_floor, Rng& rng);

// Predictor-corrector reverse-SDE sampler on the uniform grid tau_k = k / K.
// The final predictor step is taken without injected noise; correctors run
// after every predictor step except the final one (the score is only
// required at tau > 0). Throws NumericFailure with the step index if the
// chain leaves the finite range.
VectorXd pc_sample(const BatchScoreFn& score, int dim, const SamplerConfig& cfg,
                   const NoiseSchedule& sched, Rng& rng);

struct SampleBatch {
  MatrixXd samples;              // one chain per row
  std::vector<int> failed_step;  // -1 if the chain stayed finite
  int n_failed = 0;
};

// Lockstep batch of independent chains; chain i draws from its own stream
// derived from (seed, i), so results do not depend on batching or order.
SampleBatch pc_sample_batch(const BatchScoreFn& score, int dim, int n_chains,
                            const SamplerConfig& cfg, const NoiseSchedule& sched,
                            std::uint64_t seed);

}  // namespace tce::diffusion
