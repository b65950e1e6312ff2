#pragma once

// Test-only reference computations. None of these call the exact solvers
// they are used to check.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "compatpg/mdp.hpp"
#include "compatpg/policy.hpp"

namespace oracle {

using compatpg::StateActionTable;
using compatpg::StateTable;
using compatpg::TabularMdp;

/// Policy evaluation by repeated Bellman backups until the sup-norm change is below tol.
inline StateTable value_iteration(const TabularMdp& m, const StateActionTable& pi, double tol = 1e-12) {
  StateTable v = StateTable::Zero(m.n_states);
  for (int it = 0; it < 100000; ++it) {
    StateTable next = StateTable::Zero(m.n_states);
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 0; a < m.n_actions; ++a) {
        double ev = 0.0;
        for (int t = 0; t < m.n_states; ++t) ev += m.p(s, a, t) * v[t];
        next[s] += pi(s, a) * (m.reward(s, a) + m.gamma * ev);
      }
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < tol) break;
  }
  return v;
}

inline StateActionTable q_from_value_iteration(const TabularMdp& m, const StateActionTable& pi) {
  const StateTable v = value_iteration(m, pi);
  StateActionTable q(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      double ev = 0.0;
      for (int t = 0; t < m.n_states; ++t) ev += m.p(s, a, t) * v[t];
      q(s, a) = m.reward(s, a) + m.gamma * ev;
    }
  return q;
}

/// sum_{t <= horizon} gamma^t P(s_t = s) by forward recursion of the state distribution.
inline StateTable truncated_occupancy(const TabularMdp& m, const StateActionTable& pi, int horizon) {
  StateTable dist = m.initial_dist, rho = StateTable::Zero(m.n_states);
  double w = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    rho += w * dist;
    StateTable next = StateTable::Zero(m.n_states);
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 0; a < m.n_actions; ++a)
        for (int u = 0; u < m.n_states; ++u) next[u] += dist[s] * pi(s, a) * m.p(s, a, u);
    dist = next;
    w *= m.gamma;
  }
  return rho;
}

/// Stationary distribution of P_pi by power iteration.
inline StateTable stationary(const TabularMdp& m, const StateActionTable& pi) {
  StateTable d = StateTable::Constant(m.n_states, 1.0 / m.n_states);
  for (int it = 0; it < 20000; ++it) {
    StateTable next = StateTable::Zero(m.n_states);
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 0; a < m.n_actions; ++a)
        for (int u = 0; u < m.n_states; ++u) next[u] += d[s] * pi(s, a) * m.p(s, a, u);
    d = next;
  }
  return d;
}

/// Surrogate objective expanded term by term from value-iteration quantities:
/// J(b) + sum_s rho_b(s) sum_a pi_t(a|s) (Q_b(s,a) - V_b(s)).
inline double surrogate_brute_force(const TabularMdp& m, const StateActionTable& pb,
                                    const StateActionTable& pt) {
  const StateTable v = value_iteration(m, pb, 1e-14);
  const StateActionTable q = q_from_value_iteration(m, pb);
  const StateTable rho = truncated_occupancy(m, pb, 2000);
  double L = m.initial_dist.dot(v);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) L += rho[s] * pt(s, a) * (q(s, a) - v[s]);
  return L;
}

/// Central differences of f around x.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd up = x, down = x;
    up[k] += step;
    down[k] -= step;
    g[k] = (f(up) - f(down)) / (2.0 * step);
  }
  return g;
}

/// ||analytic - fd||_inf <= rel * ||analytic||_inf + abs_floor.
inline bool fd_close(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd, double rel = 1e-6,
                     double abs_floor = 1e-9) {
  return (analytic - fd).cwiseAbs().maxCoeff() <=
         rel * analytic.cwiseAbs().maxCoeff() + abs_floor;
}

inline compatpg::DifferentiablePolicy random_softmax(compatpg::Dims dims, std::mt19937_64& rng,
                                                     double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd logits(static_cast<Eigen::Index>(dims.n_states) * dims.n_actions);
  for (auto& x : logits) x = n(rng);
  return compatpg::DifferentiablePolicy::softmax_tabular(dims, logits);
}

}  // namespace oracle
