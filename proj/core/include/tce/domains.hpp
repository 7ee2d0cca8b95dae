#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tce/datasets.hpp"
#include "tce/rng.hpp"

namespace tce::domains {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Linear-Gaussian control domain: s' = A s + B a + c + diag(noise_std) eps,
// reward 1 - ((s-goal)' Qc (s-goal) + a' Rc a) / reward_scale clamped to
// [0, 1]. Episodes run for `horizon` steps from a Gaussian initial state.
struct LinearGaussianDomain {
  std::string name;
  MatrixXd A, B;
  VectorXd c;
  VectorXd noise_std;
  VectorXd goal;
  MatrixXd q_cost, r_cost;
  double reward_scale = 1.0;
  VectorXd init_mean, init_std;
  int horizon = 50;
  double random_action_scale = 2.0;  // uniform reference policy range

  int state_dim() const { return static_cast<int>(A.rows()); }
  int action_dim() const { return static_cast<int>(B.cols()); }

  VectorXd step_mean(const VectorXd& s, const VectorXd& a) const;
  VectorXd step(const VectorXd& s, const VectorXd& a, Rng& rng) const;
  double reward(const VectorXd& s, const VectorXd& a) const;
  double spectral_radius() const;
  void validate() const;
};

// Finite-horizon affine-LQR feedback a_t = -K_t [s; 1], solved by backward
// Riccati recursion on the augmented system.
struct LqrPolicy {
  std::vector<MatrixXd> K;
  VectorXd act(const VectorXd& s, int t) const;
};

LqrPolicy solve_lqr(const LinearGaussianDomain& d);

enum class Tier { Medium, Expert };

std::string tier_name(Tier t);
Tier tier_from_name(const std::string& name);
double tier_action_noise(Tier t);  // medium 0.5, expert 0.05

// Episodic rollouts under the domain's LQR feedback plus Gaussian action
// noise; rows are tagged done at episode ends and carry `origin`.
datasets::TransitionDataset collect(const LinearGaussianDomain& d, Tier tier,
                                    int n_transitions, std::uint64_t seed,
                                    datasets::Origin origin);

struct DomainPair {
  std::string name;
  LinearGaussianDomain source, target;
};

// Shipped pairs: "small-drift" (||delta c|| = 0.2), "large-drift"
// (||delta c|| = 1.0) and "structure" (one A coordinate perturbed by 10%).
DomainPair make_pair(const std::string& name);
std::vector<std::string> shipped_pairs();

struct RefReturns {
  double j_random = 0.0;
  double j_expert = 0.0;
};

// Monte-Carlo reference returns: uniform-random policy and noiseless LQR
// feedback, `episodes` episodes each.
RefReturns reference_returns(const LinearGaussianDomain& d, int episodes,
                             std::uint64_t seed);

struct ErrStat {
  double mean = 0.0;
  double stddev = 0.0;
};

struct ErrorReport {
  ErrStat action, reward, transition;
  int n_generated = 0;
  int n_holdout = 0;
  std::string action_error_kind;  // "inverse-model" or "pseudo-inverse"
};

using InverseModelFn = std::function<VectorXd(const VectorXd& s, const VectorXd& s_next)>;

// Fidelity of a generated dataset against the known target dynamics:
// transition error ||s'_gen - (A s + B a + c)||, reward error vs the true
// reward, and either the inverse model's holdout prediction error (when a
// model is supplied) or the exact pseudo-inverse action residual.
ErrorReport error_report(const datasets::TransitionDataset& gen,
                         const LinearGaussianDomain& target,
                         const datasets::TransitionDataset& tgt_holdout,
                         const InverseModelFn* inverse_model = nullptr);

std::string error_report_to_json(const ErrorReport& report);

// E || diag(noise_std) eps || for standard normal eps.
double noise_floor_mean_norm(const LinearGaussianDomain& d);

}  // namespace tce::domains
