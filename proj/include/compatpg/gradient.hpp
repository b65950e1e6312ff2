#pragma once

// Exact and Monte-Carlo gradients of the surrogate objective
//   L_behavior(target) = J(behavior) + sum_s rho_behavior(s) sum_a pi_target(a|s) A_behavior(s, a)
// with respect to the target parameters, the classic policy gradient, and the
// monotonic-improvement lower bound.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compatpg/critic.hpp"
#include "compatpg/mdp.hpp"
#include "compatpg/policy.hpp"
#include "compatpg/rollout.hpp"

namespace compatpg {

enum class GradientEstimator { ExactTrueQ, ExactCritic, McTrueQ, McCritic };

inline std::string to_string(GradientEstimator e) {
  switch (e) {
    case GradientEstimator::ExactTrueQ: return "exact_true_q";
    case GradientEstimator::ExactCritic: return "exact_critic";
    case GradientEstimator::McTrueQ: return "mc_true_q";
    case GradientEstimator::McCritic: return "mc_critic";
  }
  return "?";
}

struct GradientEstimate {
  Eigen::VectorXd g;
  GradientEstimator estimator = GradientEstimator::ExactTrueQ;
  /// std::nullopt for exact estimates.
  std::optional<int> n_rollouts;
  std::optional<FeatureKind> critic_kind;
};

/// L = J(behavior) + sum_s rho(s) sum_a pi_target(a|s) A(s, a), all exact.
inline double surrogate_value(const TabularMdp& mdp, const DifferentiablePolicy& behavior,
                              const DifferentiablePolicy& target) {
  const Dims dims = mdp.dims();
  const ExactSolution sol = solve(mdp, action_probs(behavior, dims));
  const StateActionTable pt = action_probs(target, dims);
  return sol.J + sol.occupancy.dot(pt.cwiseProduct(sol.advantage).rowwise().sum());
}

/**
g = sum_s rho_behavior(s) sum_a pi_target(a|s) score_target(s, a) T(s, a).

T is exact Q^behavior or an evaluated critic. Any per-state shift of T
leaves g unchanged because sum_a d pi_target(a|s) / d theta = 0.
*/
inline GradientEstimate surrogate_grad_exact(const TabularMdp& mdp,
                                             const DifferentiablePolicy& behavior,
                                             const DifferentiablePolicy& target,
                                             const StateActionTable& values,
                                             GradientEstimator tag = GradientEstimator::ExactTrueQ,
                                             std::optional<FeatureKind> critic_kind = {}) {
  const Dims dims = mdp.dims();
  if (values.rows() != dims.n_states || values.cols() != dims.n_actions)
    throw ValidationError("value table shape does not match the MDP");
  const StateTable rho = exact_occupancy(mdp, action_probs(behavior, dims));
  const StateActionTable pt = action_probs(target, dims);
  const ScoreTable score = score_table(target, dims);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(target.param_dim());
  for (int s = 0; s < dims.n_states; ++s)
    for (int a = 0; a < dims.n_actions; ++a)
      g += (rho[s] * pt(s, a) * values(s, a)) * score.at(s, a).transpose();
  return {g, tag, std::nullopt, critic_kind};
}

inline GradientEstimate surrogate_grad_exact(const TabularMdp& mdp, const LinearCritic& critic) {
  return surrogate_grad_exact(mdp, critic.features.behavior(), critic.features.target(),
                              critic.table(), GradientEstimator::ExactCritic,
                              critic.features.kind());
}

/// Exact policy gradient: sum_s rho(s) sum_a pi(a|s) score(s, a) Q(s, a).
inline GradientEstimate policy_grad_exact(const TabularMdp& mdp,
                                          const DifferentiablePolicy& policy) {
  return surrogate_grad_exact(mdp, policy, policy,
                              exact_q(mdp, action_probs(policy, mdp.dims())));
}

namespace detail {

/// value_at(trajectory index, step index, s, a) supplies the value term.
template <class ValueAt>
Eigen::VectorXd surrogate_grad_mc_impl(const SampleSet& samples,
                                       const DifferentiablePolicy& behavior,
                                       const DifferentiablePolicy& target, ValueAt&& value_at) {
  const Dims dims = samples.dims;
  if (samples.trajectories.empty()) throw ValidationError("no trajectories to average");
  const StateActionTable pb = action_probs(behavior, dims);
  const StateActionTable pt = action_probs(target, dims);
  const ScoreTable score = score_table(target, dims);
  // ratio * score per (s, a)
  Eigen::MatrixXd weighted = score.rows;
  for (int s = 0; s < dims.n_states; ++s)
    for (int a = 0; a < dims.n_actions; ++a) {
      const Eigen::Index r = static_cast<Eigen::Index>(s) * dims.n_actions + a;
      weighted.row(r) *= pb(s, a) > 0.0 ? pt(s, a) / pb(s, a)
                                        : std::numeric_limits<double>::quiet_NaN();
    }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(target.param_dim());
  for (std::size_t i = 0; i < samples.trajectories.size(); ++i) {
    const auto& steps = samples.trajectories[i].transitions;
    double discount = 1.0;
    for (std::size_t j = 0; j < steps.size(); ++j) {
      const auto& st = steps[j];
      if (!(pb(st.s, st.a) > 0.0))
        throw ValidationError("behavior probability is zero at a sampled pair");
      g += (discount * value_at(i, j, st.s, st.a)) *
           weighted.row(static_cast<Eigen::Index>(st.s) * dims.n_actions + st.a).transpose();
      discount *= samples.gamma;
    }
  }
  return g / static_cast<double>(samples.trajectories.size());
}

}  // namespace detail

/**
Importance-weighted score-function estimate of the surrogate gradient from
behavior trajectories:

  g = (1/N) sum_trajectories sum_t gamma^t (pi_target / pi_behavior)(a_t|s_t)
      score_target(s_t, a_t) value(s_t, a_t)

Its expectation equals surrogate_grad_exact with the same value table, up to
horizon truncation.
*/
inline GradientEstimate surrogate_grad_mc(const SampleSet& samples,
                                          const DifferentiablePolicy& behavior,
                                          const DifferentiablePolicy& target,
                                          const StateActionTable& values,
                                          GradientEstimator tag = GradientEstimator::McTrueQ,
                                          std::optional<FeatureKind> critic_kind = {}) {
  auto g = detail::surrogate_grad_mc_impl(
      samples, behavior, target,
      [&](std::size_t, std::size_t, int s, int a) { return values(s, a); });
  return {g, tag, static_cast<int>(samples.trajectories.size()), critic_kind};
}

/// Same estimator with one value per sampled step (e.g. empirical returns),
/// in trajectory order.
inline GradientEstimate surrogate_grad_mc(const SampleSet& samples,
                                          const DifferentiablePolicy& behavior,
                                          const DifferentiablePolicy& target,
                                          const std::vector<double>& per_step_values,
                                          GradientEstimator tag = GradientEstimator::McTrueQ,
                                          std::optional<FeatureKind> critic_kind = {}) {
  if (per_step_values.size() != samples.n_steps())
    throw ValidationError("need exactly one value per sampled step");
  std::vector<std::size_t> offsets(samples.trajectories.size());
  std::size_t acc = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    offsets[i] = acc;
    acc += samples.trajectories[i].transitions.size();
  }
  auto g = detail::surrogate_grad_mc_impl(
      samples, behavior, target,
      [&](std::size_t i, std::size_t j, int, int) { return per_step_values[offsets[i] + j]; });
  return {g, tag, static_cast<int>(samples.trajectories.size()), critic_kind};
}

inline GradientEstimate surrogate_grad_mc(const SampleSet& samples, const LinearCritic& critic) {
  return surrogate_grad_mc(samples, critic.features.behavior(), critic.features.target(),
                           critic.table(), GradientEstimator::McCritic, critic.features.kind());
}

struct BoundReport {
  double L = 0.0;
  double epsilon = 0.0;  ///< max |A_behavior(s, a)|
  double alpha = 0.0;    ///< max_s total variation between action distributions
  double bound = 0.0;    ///< L - 4 epsilon gamma alpha^2 / (1 - gamma)^2
  double J_target = 0.0;
  bool holds = false;    ///< J_target >= bound - 1e-8
};

inline BoundReport mpi_lower_bound(const TabularMdp& mdp, const DifferentiablePolicy& behavior,
                                   const DifferentiablePolicy& target) {
  const Dims dims = mdp.dims();
  const StateActionTable pb = action_probs(behavior, dims);
  const StateActionTable pt = action_probs(target, dims);
  const ExactSolution sol = solve(mdp, pb);
  BoundReport r;
  r.L = sol.J + sol.occupancy.dot(pt.cwiseProduct(sol.advantage).rowwise().sum());
  r.epsilon = sol.advantage.cwiseAbs().maxCoeff();
  r.alpha = tv_distance_alpha(pb, pt);
  const double g = mdp.gamma;
  r.bound = r.L - 4.0 * r.epsilon * g * r.alpha * r.alpha / ((1.0 - g) * (1.0 - g));
  r.J_target = policy_value(mdp, pt);
  r.holds = r.J_target >= r.bound - 1e-8;
  return r;
}

}  // namespace compatpg
