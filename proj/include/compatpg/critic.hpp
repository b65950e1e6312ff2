#pragma once

// Linear critics: the standard [s, enc(a), 1] regression and the two
// compatible feature maps for the surrogate objective, fitted either exactly
// over the finite MDP or from sampled trajectories.

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compatpg/mdp.hpp"
#include "compatpg/policy.hpp"
#include "compatpg/rollout.hpp"

namespace compatpg {

enum class FeatureKind {
  StandardLinear,    ///< [s, enc(a), 1]
  CompatibleIS,      ///< (pi_target / pi_behavior) * score_target
  CompatibleTarget,  ///< score_target
};

enum class Weighting {
  Behavior,  ///< actions weighted by pi_behavior
  Target,    ///< actions weighted by pi_target
};

inline std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::StandardLinear: return "standard_linear";
    case FeatureKind::CompatibleIS: return "compatible_is";
    case FeatureKind::CompatibleTarget: return "compatible_target";
  }
  return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& name) {
  if (name == "standard_linear") return FeatureKind::StandardLinear;
  if (name == "compatible_is") return FeatureKind::CompatibleIS;
  if (name == "compatible_target") return FeatureKind::CompatibleTarget;
  throw ValidationError("unknown feature kind: " + name);
}

inline bool is_compatible(FeatureKind k) { return k != FeatureKind::StandardLinear; }

/// Feature map phi(s, a) tied to a behavior/target policy pair. All rows are
/// tabulated at construction.
class FeatureMap {
 public:
  FeatureMap(FeatureKind kind, const DifferentiablePolicy& behavior,
             const DifferentiablePolicy& target, Dims dims)
      : kind_(kind), behavior_(behavior), target_(target), dims_(dims) {
    behavior_probs_ = action_probs(behavior, dims);
    target_probs_ = action_probs(target, dims);
    const Eigen::Index d = kind == FeatureKind::StandardLinear ? 3 : target.param_dim();
    rows_.resize(static_cast<Eigen::Index>(dims.n_states) * dims.n_actions, d);
    const ScoreTable target_score =
        kind == FeatureKind::StandardLinear ? ScoreTable{} : score_table(target, dims);
    for (int s = 0; s < dims.n_states; ++s) {
      for (int a = 0; a < dims.n_actions; ++a) {
        auto row = rows_.row(index(s, a));
        switch (kind) {
          case FeatureKind::StandardLinear:
            row << static_cast<double>(s), target.encoding(a), 1.0;
            break;
          case FeatureKind::CompatibleTarget:
            row = target_score.at(s, a);
            break;
          case FeatureKind::CompatibleIS: {
            if (!(behavior_probs_(s, a) > 0.0)) {
              std::ostringstream os;
              os << "importance weight undefined: behavior probability is zero at (" << s << ","
                 << a << ")";
              throw ValidationError(os.str());
            }
            row = (target_probs_(s, a) / behavior_probs_(s, a)) * target_score.at(s, a);
            break;
          }
        }
      }
    }
  }

  FeatureKind kind() const { return kind_; }
  Eigen::Index dim() const { return rows_.cols(); }
  Dims dims() const { return dims_; }
  const DifferentiablePolicy& behavior() const { return behavior_; }
  const DifferentiablePolicy& target() const { return target_; }
  const StateActionTable& behavior_probs() const { return behavior_probs_; }
  const StateActionTable& target_probs() const { return target_probs_; }

  auto row(int s, int a) const { return rows_.row(index(s, a)); }

 private:
  Eigen::Index index(int s, int a) const {
    return static_cast<Eigen::Index>(s) * dims_.n_actions + a;
  }

  FeatureKind kind_;
  DifferentiablePolicy behavior_;
  DifferentiablePolicy target_;
  Dims dims_;
  StateActionTable behavior_probs_;
  StateActionTable target_probs_;
  Eigen::MatrixXd rows_;
};

inline Eigen::VectorXd features(const FeatureMap& map, int s, int a) {
  if (s < 0 || s >= map.dims().n_states || a < 0 || a >= map.dims().n_actions)
    throw ValidationError("state or action index out of range");
  return map.row(s, a).transpose();
}

/// f_w(s, a) = w . phi(s, a) + c0(s).
struct LinearCritic {
  FeatureMap features;
  Eigen::VectorXd w;
  StateTable baseline;

  double evaluate(int s, int a) const { return features.row(s, a).dot(w) + baseline[s]; }

  StateActionTable table() const {
    const Dims d = features.dims();
    StateActionTable t(d.n_states, d.n_actions);
    for (int s = 0; s < d.n_states; ++s)
      for (int a = 0; a < d.n_actions; ++a) t(s, a) = evaluate(s, a);
    return t;
  }
};

inline double evaluate(const LinearCritic& critic, int s, int a) { return critic.evaluate(s, a); }

struct FitReport {
  Eigen::VectorXd w;
  /// sum weight * (target - f_w) * phi at the solution; zero when the normal
  /// equations are solved exactly.
  Eigen::VectorXd weighted_residual_moment;
  double condition_number = 0.0;
  int rank = 0;
  bool degenerate = false;
  /// std::nullopt marks an exact fit over the full state-action space.
  std::optional<std::size_t> n_samples;
};

struct FitResult {
  FitReport report;
  LinearCritic critic;
};

struct FitOptions {
  /// Rank cutoff relative to the largest pivot of the Gram matrix.
  double rank_tol = 1e-10;
  /// Weight sample at time t by gamma^t so the empirical measure tracks the
  /// discounted occupancy.
  bool discount_weighting = true;
};

namespace detail {

/// Minimum-norm solution of gram * w = rhs via complete orthogonal decomposition.
inline FitReport solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs,
                                        double rank_tol) {
  FitReport rep;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
  cod.setThreshold(rank_tol);
  rep.rank = static_cast<int>(cod.rank());
  rep.degenerate = rep.rank < gram.cols();
  rep.w = cod.solve(rhs);
  if (!rep.w.allFinite()) throw SolverError("critic normal equations produced non-finite weights");
  const Eigen::VectorXd sv = gram.jacobiSvd().singularValues();
  rep.condition_number = sv.size() == 0 || sv.minCoeff() <= 0.0
                             ? std::numeric_limits<double>::infinity()
                             : sv.maxCoeff() / sv.minCoeff();
  rep.weighted_residual_moment = rhs - gram * rep.w;
  return rep;
}

inline StateTable default_baseline(const TabularMdp& mdp, const FeatureMap& map) {
  if (!is_compatible(map.kind())) return StateTable::Zero(mdp.n_states);
  return exact_value(mdp, map.behavior_probs());
}

}  // namespace detail

/**
Exact projection of q_table onto the feature span under the measure
rho_behavior(s) * pi_weight(a|s), where pi_weight is the behavior or target
policy. Solves

  sum rho pi_w phi phi^T w = sum rho pi_w phi (Q - c0).

With CompatibleIS + Behavior or CompatibleTarget + Target weighting the
resulting critic leaves the exact surrogate gradient unchanged.
*/
inline FitResult fit_exact(const TabularMdp& mdp, const FeatureMap& map,
                           const StateActionTable& q_table, Weighting weighting,
                           const StateTable& baseline, const FitOptions& opts = {}) {
  const Dims dims = mdp.dims();
  if (!(map.dims() == dims)) throw ValidationError("feature map dimensions do not match the MDP");
  if (q_table.rows() != dims.n_states || q_table.cols() != dims.n_actions)
    throw ValidationError("q table shape does not match the MDP");
  if (baseline.size() != dims.n_states) throw ValidationError("baseline size does not match the MDP");
  const StateTable rho = exact_occupancy(mdp, map.behavior_probs());
  const StateActionTable& pi_w =
      weighting == Weighting::Behavior ? map.behavior_probs() : map.target_probs();
  const Eigen::Index d = map.dim();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (int s = 0; s < dims.n_states; ++s) {
    for (int a = 0; a < dims.n_actions; ++a) {
      const double weight = rho[s] * pi_w(s, a);
      const auto phi = map.row(s, a);
      gram.noalias() += weight * phi.transpose() * phi;
      rhs += weight * (q_table(s, a) - baseline[s]) * phi.transpose();
    }
  }
  FitReport rep = detail::solve_normal_equations(gram, rhs, opts.rank_tol);
  return {rep, LinearCritic{map, rep.w, baseline}};
}

/// Baseline defaults to exact V^behavior for compatible kinds and zero for
/// the standard critic.
inline FitResult fit_exact(const TabularMdp& mdp, const FeatureMap& map,
                           const StateActionTable& q_table, Weighting weighting,
                           const FitOptions& opts = {}) {
  return fit_exact(mdp, map, q_table, weighting, detail::default_baseline(mdp, map), opts);
}

namespace detail {

inline FitResult fit_samples(const SampleSet& samples, const FeatureMap& map,
                             const std::vector<double>& q_targets, const StateTable& baseline,
                             bool importance_weighted, const FitOptions& opts) {
  if (q_targets.size() != samples.n_steps())
    throw ValidationError("need exactly one target per sampled step");
  if (!(samples.dims == map.dims())) throw ValidationError("sample dimensions do not match feature map");
  if (baseline.size() != map.dims().n_states) throw ValidationError("baseline size mismatch");
  const Eigen::Index d = map.dim();
  const StateActionTable& pb = map.behavior_probs();
  const StateActionTable& pt = map.target_probs();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  std::size_t k = 0;
  for (const auto& tr : samples.trajectories) {
    double discount = 1.0;
    for (const auto& st : tr.transitions) {
      double weight = opts.discount_weighting ? discount : 1.0;
      if (importance_weighted) {
        if (!(pb(st.s, st.a) > 0.0))
          throw ValidationError("importance weight undefined at a sampled pair");
        weight *= pt(st.s, st.a) / pb(st.s, st.a);
      }
      const auto phi = map.row(st.s, st.a);
      gram.noalias() += weight * phi.transpose() * phi;
      rhs += weight * (q_targets[k++] - baseline[st.s]) * phi.transpose();
      discount *= samples.gamma;
    }
  }
  const double n = static_cast<double>(samples.trajectories.size());
  FitReport rep = solve_normal_equations(gram / n, rhs / n, opts.rank_tol);
  rep.n_samples = samples.n_steps();
  return {rep, LinearCritic{map, rep.w, baseline}};
}

}  // namespace detail

/// Least squares over sampled pairs (each step weighted by gamma^t unless
/// disabled). Rank deficiency yields the minimum-norm solution, flagged.
inline FitResult fit_standard_ls(const SampleSet& samples, const FeatureMap& map,
                                 const std::vector<double>& q_targets, const StateTable& baseline,
                                 const FitOptions& opts = {}) {
  return detail::fit_samples(samples, map, q_targets, baseline, false, opts);
}

/// Least squares with per-sample weights pi_target(a|s) / pi_behavior(a|s)
/// (times gamma^t): the sampled form of the target-weighted projection.
inline FitResult fit_weighted_ls(const SampleSet& samples, const FeatureMap& map,
                                 const std::vector<double>& q_targets, const StateTable& baseline,
                                 const FitOptions& opts = {}) {
  return detail::fit_samples(samples, map, q_targets, baseline, true, opts);
}

/// V-hat(s): plain average of the per-step targets observed at s; 0 if unvisited.
inline StateTable sample_average_baseline(const SampleSet& samples,
                                          const std::vector<double>& targets) {
  StateTable sum = StateTable::Zero(samples.dims.n_states);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(samples.dims.n_states);
  std::size_t k = 0;
  for (const auto& tr : samples.trajectories)
    for (const auto& st : tr.transitions) {
      sum[st.s] += targets[k++];
      count[st.s] += 1.0;
    }
  for (int s = 0; s < samples.dims.n_states; ++s)
    if (count[s] > 0.0) sum[s] /= count[s];
  return sum;
}

}  // namespace compatpg
