#include "tce/theory.hpp"

#include <Eigen/LU>
#include <cmath>

#include <json.hpp>

#include "tce/errors.hpp"

namespace tce::theory {

void TabularMDP::validate() const {
  check(n_states > 0 && n_actions > 0, "TabularMDP: sizes must be positive");
  check(static_cast<int>(P.size()) == n_actions, "TabularMDP: one matrix per action");
  check(gamma > 0.0 && gamma < 1.0, "TabularMDP: gamma outside (0, 1)");
  check(r.rows() == n_states && r.cols() == n_actions, "TabularMDP: reward shape");
  check(mu0.size() == n_states, "TabularMDP: mu0 size");
  check(std::abs(mu0.sum() - 1.0) <= 1e-12 && mu0.minCoeff() >= 0.0,
        "TabularMDP: mu0 must lie on the simplex");
  for (const auto& Pa : P) {
    check(Pa.rows() == n_states && Pa.cols() == n_states, "TabularMDP: P shape");
    check(Pa.minCoeff() >= 0.0, "TabularMDP: negative transition probability");
    for (int s = 0; s < n_states; ++s)
      check(std::abs(Pa.row(s).sum() - 1.0) <= 1e-12, "TabularMDP: row does not sum to 1");
  }
  check(r.minCoeff() >= 0.0 && r.maxCoeff() <= r_max, "TabularMDP: rewards outside [0, r_max]");
}

MatrixXd policy_transition(const TabularMDP& mdp, const TabularPolicy& pi) {
  check(pi.rows() == mdp.n_states && pi.cols() == mdp.n_actions,
        "policy_transition: policy shape");
  MatrixXd P_pi = MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int a = 0; a < mdp.n_actions; ++a)
    P_pi += pi.col(a).asDiagonal() * mdp.P[a];
  return P_pi;
}

MatrixXd occupancy(const TabularMDP& mdp, const TabularPolicy& pi) {
  const MatrixXd P_pi = policy_transition(mdp, pi);
  const int S = mdp.n_states;
  // d = (1 - gamma) mu0 + gamma P_pi' d
  const MatrixXd A = MatrixXd::Identity(S, S) - mdp.gamma * P_pi.transpose();
  const VectorXd d = A.partialPivLu().solve((1.0 - mdp.gamma) * mdp.mu0);
  MatrixXd rho(S, mdp.n_actions);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) rho(s, a) = d[s] * pi(s, a);
  return rho;
}

VectorXd value(const TabularMDP& mdp, const TabularPolicy& pi) {
  const MatrixXd P_pi = policy_transition(mdp, pi);
  const VectorXd r_pi = (mdp.r.array() * pi.array()).rowwise().sum();
  const int S = mdp.n_states;
  const MatrixXd A = MatrixXd::Identity(S, S) - mdp.gamma * P_pi;
  return A.partialPivLu().solve(r_pi);
}

double eta(const TabularMDP& mdp, const TabularPolicy& pi) {
  const MatrixXd rho = occupancy(mdp, pi);
  return (rho.array() * mdp.r.array()).sum();
}

double total_variation(const VectorXd& p, const VectorXd& q) {
  check(p.size() == q.size(), "total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

TabularMDP mix(const TabularMDP& a, const TabularMDP& b, double lambda) {
  check(lambda >= 0.0 && lambda <= 1.0, "mix: lambda outside [0, 1]");
  check(a.n_states == b.n_states && a.n_actions == b.n_actions, "mix: shape mismatch");
  check(a.gamma == b.gamma, "mix: gamma mismatch");
  check(a.r == b.r, "mix: the mixture is defined for a shared reward");
  check(a.mu0 == b.mu0, "mix: mu0 mismatch");
  TabularMDP out = a;
  for (int act = 0; act < a.n_actions; ++act)
    out.P[act] = lambda * a.P[act] + (1.0 - lambda) * b.P[act];
  return out;
}

namespace {

// E_rho_mix of per-(s,a) deviation terms; `dev` maps (s, a) to the bracketed
// lambda-weighted deviation.
template <typename Fn>
double occupancy_average(const TabularMDP& mixed, const TabularPolicy& pi, Fn&& dev) {
  const MatrixXd rho = occupancy(mixed, pi);
  double acc = 0.0;
  for (int s = 0; s < mixed.n_states; ++s)
    for (int a = 0; a < mixed.n_actions; ++a) acc += rho(s, a) * dev(s, a);
  return acc;
}

}  // namespace

double tv_bound(const TabularMDP& src, const TabularMDP& hat, const TabularMDP& tar,
                const TabularPolicy& pi, double lambda) {
  const TabularMDP mixed = mix(src, hat, lambda);
  const double avg = occupancy_average(mixed, pi, [&](int s, int a) {
    return lambda * total_variation(src.P[a].row(s), tar.P[a].row(s)) +
           (1.0 - lambda) * total_variation(hat.P[a].row(s), tar.P[a].row(s));
  });
  const double g = tar.gamma;
  return 2.0 * g * tar.r_max / ((1.0 - g) * (1.0 - g)) * avg;
}

double value_bound(const TabularMDP& src, const TabularMDP& hat, const TabularMDP& tar,
                   const TabularPolicy& pi, double lambda) {
  const TabularMDP mixed = mix(src, hat, lambda);
  const VectorXd v_tar = value(tar, pi);
  const double avg = occupancy_average(mixed, pi, [&](int s, int a) {
    const double d_src = std::abs(((src.P[a].row(s) - tar.P[a].row(s)) * v_tar).value());
    const double d_hat = std::abs(((hat.P[a].row(s) - tar.P[a].row(s)) * v_tar).value());
    return lambda * d_src + (1.0 - lambda) * d_hat;
  });
  const double g = tar.gamma;
  return g / (1.0 - g) * avg;
}

double telescoping_residual(const TabularMDP& m1, const TabularMDP& m2,
                            const TabularPolicy& pi) {
  const VectorXd v2 = value(m2, pi);
  const double avg = occupancy_average(m1, pi, [&](int s, int a) {
    return ((m1.P[a].row(s) - m2.P[a].row(s)) * v2).value();
  });
  // The identity is exact for the discounted return mu0' V = eta / (1-gamma).
  const double lhs = m1.mu0.dot(value(m1, pi)) - m2.mu0.dot(v2);
  return std::abs(lhs - m1.gamma / (1.0 - m1.gamma) * avg);
}

namespace {

VectorXd dirichlet_one(int n, Rng& rng) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.exponential();
  return v / v.sum();
}

}  // namespace

TabularMDP random_mdp(int n_states, int n_actions, double gamma_lo, double gamma_hi,
                      Rng& rng) {
  TabularMDP mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = rng.uniform(gamma_lo, gamma_hi);
  mdp.P.resize(n_actions);
  for (int a = 0; a < n_actions; ++a) {
    mdp.P[a].resize(n_states, n_states);
    for (int s = 0; s < n_states; ++s) mdp.P[a].row(s) = dirichlet_one(n_states, rng).transpose();
  }
  mdp.r.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) mdp.r(s, a) = rng.uniform();
  mdp.mu0 = dirichlet_one(n_states, rng);
  mdp.r_max = 1.0;
  return mdp;
}

TabularPolicy random_policy(int n_states, int n_actions, Rng& rng) {
  TabularPolicy pi(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) pi.row(s) = dirichlet_one(n_actions, rng).transpose();
  return pi;
}

BoundReport verify_bounds(int instances, std::uint64_t seed, int max_states,
                          int max_actions) {
  check(instances > 0, "verify_bounds: instances must be positive");
  BoundReport report;
  report.instances = instances;
  report.seed = seed;
  Rng rng(seed);
  for (int k = 0; k < instances; ++k) {
    const int S = 2 + static_cast<int>(rng.uniform_int(max_states - 1));
    const int A = 1 + static_cast<int>(rng.uniform_int(max_actions));
    TabularMDP tar = random_mdp(S, A, 0.5, 0.95, rng);
    TabularMDP src = tar, hat = tar;
    for (int a = 0; a < A; ++a) {
      for (int s = 0; s < S; ++s) {
        src.P[a].row(s) = dirichlet_one(S, rng).transpose();
        hat.P[a].row(s) = dirichlet_one(S, rng).transpose();
      }
    }
    const TabularPolicy pi = random_policy(S, A, rng);
    const double lambda = rng.uniform();

    BoundInstance row;
    row.n_states = S;
    row.n_actions = A;
    row.gamma = tar.gamma;
    row.lambda = lambda;
    const TabularMDP mixed = mix(src, hat, lambda);
    row.gap = std::abs(mixed.mu0.dot(value(mixed, pi)) - tar.mu0.dot(value(tar, pi)));
    row.value_bound = value_bound(src, hat, tar, pi, lambda);
    row.tv_bound = tv_bound(src, hat, tar, pi, lambda);
    row.telescoping_residual = telescoping_residual(mixed, tar, pi);

    if (row.gap > row.value_bound + 1e-9) ++report.gap_violations;
    if (row.value_bound > row.tv_bound + 1e-9) ++report.ordering_violations;
    report.max_residual = std::max(report.max_residual, row.telescoping_residual);
    if (row.value_bound > 0.0)
      report.max_gap_to_value_bound =
          std::max(report.max_gap_to_value_bound, row.gap / row.value_bound);
    report.rows.push_back(row);
  }
  return report;
}

std::string bound_report_to_json(const BoundReport& report) {
  nlohmann::json j;
  j["schema"] = "tce-bound-report/1";
  j["instances"] = report.instances;
  j["seed"] = report.seed;
  j["gap_violations"] = report.gap_violations;
  j["ordering_violations"] = report.ordering_violations;
  j["max_telescoping_residual"] = report.max_residual;
  j["max_gap_to_value_bound"] = report.max_gap_to_value_bound;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    j["rows"].push_back({{"states", row.n_states},
                         {"actions", row.n_actions},
                         {"gamma", row.gamma},
                         {"lambda", row.lambda},
                         {"gap", row.gap},
                         {"value_bound", row.value_bound},
                         {"tv_bound", row.tv_bound},
                         {"telescoping_residual", row.telescoping_residual}});
  }
  return j.dump(2);
}

double gaussian_kl_diag(const VectorXd& mu1, const VectorXd& var1, const VectorXd& mu2,
                        const VectorXd& var2) {
  check(mu1.size() == mu2.size() && var1.size() == var2.size() && mu1.size() == var1.size(),
        "gaussian_kl_diag: size mismatch");
  check(var1.minCoeff() > 0.0 && var2.minCoeff() > 0.0,
        "gaussian_kl_diag: variances must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu1.size(); ++i) {
    kl += 0.5 * (std::log(var2[i] / var1[i]) +
                 (var1[i] + (mu1[i] - mu2[i]) * (mu1[i] - mu2[i])) / var2[i] - 1.0);
  }
  return kl;
}

double pinsker_tv(double kl) {
  check(kl >= 0.0, "pinsker_tv: negative KL");
  return std::min(1.0, std::sqrt(0.5 * kl));
}

}  // namespace tce::theory
