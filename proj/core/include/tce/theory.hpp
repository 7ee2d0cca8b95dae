#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "tce/rng.hpp"

namespace tce::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Finite MDP with rewards in [0, r_max]. P[a](s, s') is the next-state row
// for action a taken in state s.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<MatrixXd> P;
  MatrixXd r;  // n_states x n_actions
  double gamma = 0.9;
  VectorXd mu0;
  double r_max = 1.0;

  void validate() const;
};

// Rows are per-state action distributions.
using TabularPolicy = MatrixXd;

MatrixXd policy_transition(const TabularMDP& mdp, const TabularPolicy& pi);

// Normalized discounted occupancy rho(s, a); sums to one.
MatrixXd occupancy(const TabularMDP& mdp, const TabularPolicy& pi);

// Normalized return eta = E_rho[r] = (1 - gamma) * mu0' V.
double eta(const TabularMDP& mdp, const TabularPolicy& pi);

// State values from the exact linear solve (I - gamma P_pi) V = r_pi.
VectorXd value(const TabularMDP& mdp, const TabularPolicy& pi);

double total_variation(const VectorXd& p, const VectorXd& q);

// lambda * P_a + (1 - lambda) * P_b under the reward/gamma/mu0 of `a`;
// the two MDPs must agree on those fields.
TabularMDP mix(const TabularMDP& a, const TabularMDP& b, double lambda);

// Return-gap certificate from per-(s,a) total variation between dynamics:
//   (2 gamma r_max / (1-gamma)^2) * E_rho_mix[lambda TV(P_src, P_tar)
//                                           + (1-lambda) TV(P_hat, P_tar)]
double tv_bound(const TabularMDP& src, const TabularMDP& hat, const TabularMDP& tar,
                const TabularPolicy& pi, double lambda);

// Tighter certificate through next-state values of the target MDP:
//   (gamma / (1-gamma)) * E_rho_mix[lambda |(P_src - P_tar) V_tar|
//                                 + (1-lambda) |(P_hat - P_tar) V_tar|]
double value_bound(const TabularMDP& src, const TabularMDP& hat, const TabularMDP& tar,
                   const TabularPolicy& pi, double lambda);

// |J_1 - J_2 - (gamma / (1-gamma)) E_rho_1[(P_1 - P_2) V_2]| where
// J = mu0' V is the discounted return; zero up to solver round-off for any
// pair sharing rewards, gamma and mu0.
double telescoping_residual(const TabularMDP& m1, const TabularMDP& m2,
                            const TabularPolicy& pi);

TabularMDP random_mdp(int n_states, int n_actions, double gamma_lo, double gamma_hi,
                      Rng& rng);
TabularPolicy random_policy(int n_states, int n_actions, Rng& rng);

struct BoundInstance {
  int n_states = 0, n_actions = 0;
  double gamma = 0.0, lambda = 0.0;
  double gap = 0.0, value_bound = 0.0, tv_bound = 0.0;
  double telescoping_residual = 0.0;
};

struct BoundReport {
  int instances = 0;
  std::uint64_t seed = 0;
  int gap_violations = 0;       // gap > value_bound
  int ordering_violations = 0;  // value_bound > tv_bound
  double max_residual = 0.0;
  double max_gap_to_value_bound = 0.0;  // max over instances of gap / value_bound
  std::vector<BoundInstance> rows;
};

// Random instances with |S| in [2, max_states], |A| in [1, max_actions],
// independent source/model dynamics, shared rewards, random policy and mix.
BoundReport verify_bounds(int instances, std::uint64_t seed, int max_states = 5,
                          int max_actions = 3);

std::string bound_report_to_json(const BoundReport& report);

// KL(N(mu1, diag(var1)) || N(mu2, diag(var2))).
double gaussian_kl_diag(const VectorXd& mu1, const VectorXd& var1, const VectorXd& mu2,
                        const VectorXd& var2);

// Pinsker: TV <= sqrt(KL / 2).
double pinsker_tv(double kl);

}  // namespace tce::theory
