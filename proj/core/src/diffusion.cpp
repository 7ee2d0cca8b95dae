#include "tce/diffusion.hpp"

#include <cmath>

#include "tce/errors.hpp"

namespace tce::diffusion {

double NoiseSchedule::beta_integral(double tau) const {
  check(tau >= 0.0 && tau <= 1.0, "NoiseSchedule: tau outside [0, 1]");
  return alpha_min * tau + 0.5 * (alpha_max - alpha_min) * tau * tau;
}

double NoiseSchedule::sigma2(double tau) const {
  return -std::expm1(-beta_integral(tau));
}

double NoiseSchedule::sigma(double tau) const { return std::sqrt(sigma2(tau)); }

double NoiseSchedule::g2(double tau) const {
  // d/dtau [1 - exp(-B)] = B'(tau) exp(-B(tau))
  const double bprime = alpha_min + (alpha_max - alpha_min) * tau;
  return bprime * std::exp(-beta_integral(tau));
}

double NoiseSchedule::g(double tau) const { return std::sqrt(g2(tau)); }

MatrixXd perturb(const MatrixXd& x0, const VectorXd& taus, const MatrixXd& z,
                 const NoiseSchedule& sched) {
  check(taus.size() == x0.rows(), "perturb: one tau per row required");
  check(z.rows() == x0.rows() && z.cols() == x0.cols(), "perturb: noise shape mismatch");
  MatrixXd out = x0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i)
    out.row(i) += sched.sigma(taus[i]) * z.row(i);
  return out;
}

double dsm_loss(const RowScoreFn& score, const MatrixXd& x0, const NoiseSchedule& sched,
                double tau_floor, Rng& rng) {
  const Eigen::Index B = x0.rows();
  check(B > 0, "dsm_loss: empty batch");
  check(tau_floor > 0.0 && tau_floor < 1.0, "dsm_loss: tau_floor outside (0, 1)");
  VectorXd taus(B);
  for (Eigen::Index i = 0; i < B; ++i) taus[i] = rng.uniform(tau_floor, 1.0);
  MatrixXd z = rng.normal_matrix(B, x0.cols());
  MatrixXd q = score(perturb(x0, taus, z, sched), taus);
  check(q.rows() == B && q.cols() == x0.cols(), "dsm_loss: score shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < B; ++i)
    acc += (sched.sigma(taus[i]) * q.row(i) + z.row(i)).squaredNorm();
  return acc / static_cast<double>(B);
}

namespace {

// Shared lockstep loop. Each chain owns an Rng; draw order per chain and
// step is fixed (predictor noise, then one noise vector per corrector pass),
// so a singleton batch reproduces pc_sample exactly.
SampleBatch run_chains(const BatchScoreFn& score, int dim, const SamplerConfig& cfg,
                       const NoiseSchedule& sched, std::vector<Rng>& streams) {
  const int n = static_cast<int>(streams.size());
  check(cfg.K >= 1, "pc_sample: K must be at least 1");
  check(cfg.corrector_steps >= 0, "pc_sample: corrector_steps must be non-negative");
  check(dim > 0, "pc_sample: dim must be positive");

  const double prior_std =
      cfg.terminal_prior_std < 0.0 ? sched.sigma(1.0) : cfg.terminal_prior_std;
  const double dt = 1.0 / static_cast<double>(cfg.K);

  SampleBatch out;
  out.samples.resize(n, dim);
  out.failed_step.assign(n, -1);
  std::vector<bool> alive(n, true);

  MatrixXd x(n, dim);
  for (int i = 0; i < n; ++i) x.row(i) = prior_std * streams[i].normal_vector(dim).transpose();

  auto mark_failures = [&](int step) {
    for (int i = 0; i < n; ++i) {
      if (alive[i] && !x.row(i).allFinite()) {
        alive[i] = false;
        out.failed_step[i] = step;
        ++out.n_failed;
        x.row(i).setZero();  // keep the lockstep math finite for other chains
      }
    }
  };

  for (int k = cfg.K; k >= 1; --k) {
    const double tau_k = static_cast<double>(k) / cfg.K;
    MatrixXd q = score(x, tau_k);
    x += sched.g2(tau_k) * dt * q;
    if (k > 1) {
      const double noise_scale = sched.g(tau_k) * std::sqrt(dt);
      for (int i = 0; i < n; ++i)
        x.row(i) += noise_scale * streams[i].normal_vector(dim).transpose();
      mark_failures(k);

      const double tau_next = static_cast<double>(k - 1) / cfg.K;
      // Langevin step sized at the noise level, eta = 2 (snr sigma(tau))^2:
      // the noise-dominated reference of the snr ratio ||xi|| / ||q||. A
      // per-chain ratio diverges when a chain sits near a mode, and
      // batch-averaged norms would couple the chains.
      const double eta =
          2.0 * std::pow(cfg.corrector_snr * sched.sigma(tau_next), 2.0);
      for (int c = 0; c < cfg.corrector_steps; ++c) {
        MatrixXd qc = score(x, tau_next);
        for (int i = 0; i < n; ++i) {
          VectorXd xi = streams[i].normal_vector(dim);
          if (!alive[i]) continue;
          x.row(i) += eta * qc.row(i) + std::sqrt(2.0 * eta) * xi.transpose();
        }
        mark_failures(k);
      }
    } else {
      mark_failures(k);
    }
  }

  out.samples = x;
  return out;
}

}  // namespace

VectorXd pc_sample(const BatchScoreFn& score, int dim, const SamplerConfig& cfg,
                   const NoiseSchedule& sched, Rng& rng) {
  std::vector<Rng> streams{rng};
  SampleBatch batch = run_chains(score, dim, cfg, sched, streams);
  rng = streams[0];
  check_numeric(batch.n_failed == 0,
                "pc_sample: chain left the finite range at step " +
                    std::to_string(batch.failed_step[0]));
  return batch.samples.row(0);
}

SampleBatch pc_sample_batch(const BatchScoreFn& score, int dim, int n_chains,
                            const SamplerConfig& cfg, const NoiseSchedule& sched,
                            std::uint64_t seed) {
  check(n_chains >= 0, "pc_sample_batch: negative chain count");
  std::vector<Rng> streams;
  streams.reserve(n_chains);
  for (int i = 0; i < n_chains; ++i)
    streams.emplace_back(Rng::derive(seed, static_cast<std::uint64_t>(i)));
  if (n_chains == 0) {
    SampleBatch empty;
    empty.samples.resize(0, dim);
    return empty;
  }
  return run_chains(score, dim, cfg, sched, streams);
}

}  // namespace tce::diffusion
