#pragma once

// Finite discounted MDPs and their exact solution by dense linear solves.

#include <cmath>
#include <cstddef>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace compatpg {

/// Values indexed by state: V^pi and the occupancy measure rho_pi.
using StateTable = Eigen::VectorXd;
/// Values indexed by (state, action): Q, A, pi(a|s), critic evaluations.
using StateActionTable = Eigen::MatrixXd;

struct Dims {
  int n_states = 0;
  int n_actions = 0;
  bool operator==(const Dims&) const = default;
};

/// Thrown when an MDP, policy or table violates its structural invariants.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
Finite MDP <S, A, P, R, rho0, gamma> stored as dense arrays.

The transition tensor is flattened in (s, a, s') row-major order; use
`p(s, a, next)` for element access.
*/
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;
  StateActionTable reward;
  StateTable initial_dist;
  double gamma = 0.0;

  Dims dims() const { return {n_states, n_actions}; }

  double& p(int s, int a, int next) {
    return transition[index(s, a, next)];
  }
  double p(int s, int a, int next) const {
    return transition[index(s, a, next)];
  }

  /// Row P[s][a][.] as a read-only map.
  Eigen::Map<const Eigen::VectorXd> row(int s, int a) const {
    return {transition.data() + index(s, a, 0), n_states};
  }

  static TabularMdp zeros(int n_states, int n_actions, double gamma) {
    TabularMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    m.reward = StateActionTable::Zero(n_states, n_actions);
    m.initial_dist = StateTable::Zero(n_states);
    m.gamma = gamma;
    return m;
  }

 private:
  std::size_t index(int s, int a, int next) const {
    return (static_cast<std::size_t>(s) * n_actions + a) * n_states + next;
  }
};

inline constexpr double kStochasticTol = 1e-12;

/// Throws ValidationError naming the first violated invariant.
inline void validate(const TabularMdp& mdp) {
  auto fail = [](const std::string& what) { throw ValidationError(what); };
  if (mdp.n_states <= 0) fail("n_states must be positive");
  if (mdp.n_actions <= 0) fail("n_actions must be positive");
  if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) {
    std::ostringstream os;
    os << "discount out of range: gamma=" << mdp.gamma << " not in (0,1)";
    fail(os.str());
  }
  const auto S = static_cast<std::size_t>(mdp.n_states);
  const auto A = static_cast<std::size_t>(mdp.n_actions);
  if (mdp.transition.size() != S * A * S) fail("transition tensor has wrong size");
  if (mdp.reward.rows() != mdp.n_states || mdp.reward.cols() != mdp.n_actions)
    fail("reward matrix has wrong shape");
  if (mdp.initial_dist.size() != mdp.n_states) fail("initial distribution has wrong size");

  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double sum = 0.0;
      for (int t = 0; t < mdp.n_states; ++t) {
        const double p = mdp.p(s, a, t);
        if (!(p >= 0.0) || !std::isfinite(p)) {
          std::ostringstream os;
          os << "negative or non-finite transition probability at P[" << s << "][" << a << "][" << t
             << "]";
          fail(os.str());
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kStochasticTol) {
        std::ostringstream os;
        os << "transition row not stochastic: P[" << s << "][" << a << "] sums to " << sum;
        fail(os.str());
      }
      if (!std::isfinite(mdp.reward(s, a))) {
        std::ostringstream os;
        os << "non-finite reward at R[" << s << "][" << a << "]";
        fail(os.str());
      }
    }
  }
  double mass = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (!(mdp.initial_dist[s] >= 0.0)) {
      std::ostringstream os;
      os << "negative initial probability at rho0[" << s << "]";
      fail(os.str());
    }
    mass += mdp.initial_dist[s];
  }
  if (std::abs(mass - 1.0) > kStochasticTol) {
    std::ostringstream os;
    os << "initial distribution not normalized: sums to " << mass;
    fail(os.str());
  }
}

namespace nchain {
inline constexpr int kForward = 0;
inline constexpr int kReturn = 1;
}  // namespace nchain

/**
NChain benchmark. Action FORWARD (0) advances s -> s+1 with reward 0, or
self-loops on the last state with `large_reward`. RETURN (1) jumps to state 0
with `small_reward`. The chosen action is swapped for the other with
probability `slip`; rewards are stored as their expectation over the swap.
Starts in state 0.
*/
inline TabularMdp make_nchain(int n = 5, double slip = 0.2, double small_reward = 2.0,
                              double large_reward = 10.0, double gamma = 0.9) {
  if (n < 2) throw ValidationError("nchain needs at least 2 states");
  if (!(slip >= 0.0 && slip < 1.0)) throw ValidationError("nchain slip must lie in [0,1)");
  auto m = TabularMdp::zeros(n, 2, gamma);
  for (int s = 0; s < n; ++s) {
    const int forward_next = s + 1 < n ? s + 1 : s;
    const double forward_reward = s + 1 < n ? 0.0 : large_reward;
    for (int a = 0; a < 2; ++a) {
      const double p_forward = a == nchain::kForward ? 1.0 - slip : slip;
      const double p_return = 1.0 - p_forward;
      m.p(s, a, forward_next) += p_forward;
      m.p(s, a, 0) += p_return;
      m.reward(s, a) = p_forward * forward_reward + p_return * small_reward;
    }
  }
  m.initial_dist[0] = 1.0;
  validate(m);
  return m;
}

/// Random MDP with Dirichlet(1) rows, uniform [0,1) rewards and random rho0.
template <class Rng>
TabularMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto m = TabularMdp::zeros(n_states, n_actions, gamma);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double z = 0.0;
      for (int t = 0; t < n_states; ++t) z += (m.p(s, a, t) = expo(rng));
      for (int t = 0; t < n_states; ++t) m.p(s, a, t) /= z;
      m.reward(s, a) = unif(rng);
    }
  }
  double z = 0.0;
  for (int s = 0; s < n_states; ++s) z += (m.initial_dist[s] = expo(rng));
  m.initial_dist /= z;
  return m;
}

inline void check_policy_table(const TabularMdp& mdp, const StateActionTable& pi) {
  if (pi.rows() != mdp.n_states || pi.cols() != mdp.n_actions)
    throw ValidationError("policy table shape does not match the MDP");
  for (int s = 0; s < mdp.n_states; ++s) {
    if ((pi.row(s).array() < 0.0).any()) throw ValidationError("policy table has negative entries");
    if (std::abs(pi.row(s).sum() - 1.0) > 1e-10) {
      std::ostringstream os;
      os << "policy row " << s << " does not sum to 1";
      throw ValidationError(os.str());
    }
  }
}

/// P_pi[s][s'] = sum_a pi(a|s) P[s][a][s'].
inline Eigen::MatrixXd policy_transition(const TabularMdp& mdp, const StateActionTable& pi) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) out.row(s) += pi(s, a) * mdp.row(s, a).transpose();
  return out;
}

/// r_pi[s] = sum_a pi(a|s) R[s][a].
inline StateTable policy_reward(const TabularMdp& mdp, const StateActionTable& pi) {
  return mdp.reward.cwiseProduct(pi).rowwise().sum();
}

namespace detail {
inline Eigen::VectorXd solve_checked(const Eigen::MatrixXd& lhs, const Eigen::VectorXd& rhs) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  Eigen::VectorXd x = lu.solve(rhs);
  if (!x.allFinite()) throw SolverError("linear solve produced non-finite values");
  // One step of iterative refinement keeps residuals near machine precision.
  x += lu.solve(rhs - lhs * x);
  return x;
}
}  // namespace detail

/// V = (I - gamma P_pi)^{-1} r_pi.
inline StateTable exact_value(const TabularMdp& mdp, const StateActionTable& pi) {
  validate(mdp);
  check_policy_table(mdp, pi);
  const Eigen::MatrixXd lhs =
      Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi);
  return detail::solve_checked(lhs, policy_reward(mdp, pi));
}

/// One-step lookahead of a state table: R[s][a] + gamma * sum_s' P[s][a][s'] V[s'].
inline StateActionTable backup(const TabularMdp& mdp, const StateTable& v) {
  StateActionTable q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      q(s, a) = mdp.reward(s, a) + mdp.gamma * mdp.row(s, a).dot(v);
  return q;
}

inline StateActionTable exact_q(const TabularMdp& mdp, const StateActionTable& pi) {
  return backup(mdp, exact_value(mdp, pi));
}

inline StateActionTable exact_advantage(const TabularMdp& mdp, const StateActionTable& pi) {
  const StateTable v = exact_value(mdp, pi);
  return backup(mdp, v).colwise() - v;
}

/// Unnormalized discounted occupancy: rho = rho0 + gamma P_pi^T rho, total mass 1/(1-gamma).
inline StateTable exact_occupancy(const TabularMdp& mdp, const StateActionTable& pi) {
  validate(mdp);
  check_policy_table(mdp, pi);
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) -
                              mdp.gamma * policy_transition(mdp, pi).transpose();
  return detail::solve_checked(lhs, mdp.initial_dist);
}

/// J(pi) = sum_s rho0(s) V(s).
inline double policy_value(const TabularMdp& mdp, const StateActionTable& pi) {
  return mdp.initial_dist.dot(exact_value(mdp, pi));
}

/// Everything the exact paths need about one policy, solved once.
struct ExactSolution {
  StateTable value;
  StateActionTable q;
  StateActionTable advantage;
  StateTable occupancy;
  double J = 0.0;
};

inline ExactSolution solve(const TabularMdp& mdp, const StateActionTable& pi) {
  ExactSolution out;
  out.value = exact_value(mdp, pi);
  out.q = backup(mdp, out.value);
  out.advantage = out.q.colwise() - out.value;
  out.occupancy = exact_occupancy(mdp, pi);
  out.J = mdp.initial_dist.dot(out.value);
  return out;
}

}  // namespace compatpg
