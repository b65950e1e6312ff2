#pragma once

// Differentiable stochastic policies over finite action sets.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "compatpg/mdp.hpp"

namespace compatpg {

enum class PolicyFamily { SigmoidLinear, SoftmaxTabular };

inline std::string to_string(PolicyFamily f) {
  return f == PolicyFamily::SigmoidLinear ? "sigmoid_linear" : "softmax_tabular";
}

inline PolicyFamily policy_family_from_string(const std::string& name) {
  if (name == "sigmoid_linear" || name == "SigmoidLinear") return PolicyFamily::SigmoidLinear;
  if (name == "softmax_tabular" || name == "SoftmaxTabular") return PolicyFamily::SoftmaxTabular;
  throw ValidationError("unknown policy family: " + name);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/**
Parametric policy pi_theta(a|s) with an analytic score d log pi / d theta.

SigmoidLinear: logit-free form sigma(theta_0 * s + theta_1 * enc(a)),
renormalized over actions so every state carries a proper distribution.
The score therefore includes the gradient of the normalizer.

SoftmaxTabular: one logit per (s, a), parameter index s * n_actions + a.
*/
class DifferentiablePolicy {
 public:
  static DifferentiablePolicy sigmoid_linear(double theta_state, double theta_action,
                                             std::vector<double> action_encoding = {0.0, 1.0}) {
    Eigen::VectorXd theta(2);
    theta << theta_state, theta_action;
    return sigmoid_linear(std::move(theta), std::move(action_encoding));
  }

  static DifferentiablePolicy sigmoid_linear(Eigen::VectorXd theta,
                                             std::vector<double> action_encoding = {0.0, 1.0}) {
    if (theta.size() != 2) throw ValidationError("sigmoid_linear policy has exactly 2 parameters");
    if (action_encoding.empty()) throw ValidationError("action encoding must be nonempty");
    DifferentiablePolicy p;
    p.family_ = PolicyFamily::SigmoidLinear;
    p.theta_ = std::move(theta);
    p.encoding_ = std::move(action_encoding);
    p.check_finite();
    return p;
  }

  static DifferentiablePolicy softmax_tabular(Dims dims, Eigen::VectorXd logits) {
    if (logits.size() != static_cast<Eigen::Index>(dims.n_states) * dims.n_actions)
      throw ValidationError("softmax_tabular needs n_states * n_actions logits");
    DifferentiablePolicy p;
    p.family_ = PolicyFamily::SoftmaxTabular;
    p.theta_ = std::move(logits);
    p.tabular_dims_ = dims;
    p.check_finite();
    return p;
  }

  PolicyFamily family() const { return family_; }
  const Eigen::VectorXd& theta() const { return theta_; }
  const std::vector<double>& action_encoding() const { return encoding_; }
  Eigen::Index param_dim() const { return theta_.size(); }

  /// Same family and encoding, different parameters.
  DifferentiablePolicy with_theta(Eigen::VectorXd theta) const {
    if (theta.size() != theta_.size()) throw ValidationError("parameter dimension mismatch");
    DifferentiablePolicy p = *this;
    p.theta_ = std::move(theta);
    p.check_finite();
    return p;
  }

  void check_dims(Dims dims) const {
    if (family_ == PolicyFamily::SigmoidLinear) {
      if (static_cast<int>(encoding_.size()) != dims.n_actions)
        throw ValidationError("action encoding size does not match n_actions");
    } else if (!(tabular_dims_ == dims)) {
      throw ValidationError("softmax_tabular policy dimensions do not match the MDP");
    }
  }

  double encoding(int a) const { return encoding_.empty() ? a : encoding_[a]; }

  /// pi(.|s) over n_actions actions.
  Eigen::VectorXd probs(int s, int n_actions) const {
    Eigen::VectorXd out(n_actions);
    if (family_ == PolicyFamily::SigmoidLinear) {
      for (int a = 0; a < n_actions; ++a) out[a] = sigmoid(linear(s, a));
    } else {
      const auto logits = theta_.segment(static_cast<Eigen::Index>(s) * n_actions, n_actions);
      out = (logits.array() - logits.maxCoeff()).exp();
    }
    return out / out.sum();
  }

  /// d log pi(a|s) / d theta.
  Eigen::VectorXd score(int s, int a, int n_actions) const {
    const Eigen::VectorXd pi = probs(s, n_actions);
    if (family_ == PolicyFamily::SigmoidLinear) {
      Eigen::VectorXd out = unnormalized_score(s, a);
      for (int b = 0; b < n_actions; ++b) out -= pi[b] * unnormalized_score(s, b);
      return out;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(theta_.size());
    const Eigen::Index base = static_cast<Eigen::Index>(s) * n_actions;
    out.segment(base, n_actions) = -pi;
    out[base + a] += 1.0;
    return out;
  }

  /// Gradient of log sigma(theta_0 s + theta_1 enc(a)) alone, without the
  /// normalizer: [(1 - sigma) s, (1 - sigma) enc(a)].
  Eigen::VectorXd unnormalized_score(int s, int a) const {
    if (family_ != PolicyFamily::SigmoidLinear)
      throw ValidationError("unnormalized score exists only for sigmoid_linear");
    const double one_minus = 1.0 - sigmoid(linear(s, a));
    Eigen::VectorXd out(2);
    out << one_minus * s, one_minus * encoding(a);
    return out;
  }

 private:
  DifferentiablePolicy() = default;

  double linear(int s, int a) const { return theta_[0] * s + theta_[1] * encoding(a); }

  void check_finite() const {
    if (!theta_.allFinite()) throw ValidationError("policy parameters must be finite");
  }

  PolicyFamily family_ = PolicyFamily::SigmoidLinear;
  Eigen::VectorXd theta_;
  std::vector<double> encoding_;
  Dims tabular_dims_;
};

inline StateActionTable action_probs(const DifferentiablePolicy& policy, Dims dims) {
  policy.check_dims(dims);
  StateActionTable out(dims.n_states, dims.n_actions);
  for (int s = 0; s < dims.n_states; ++s) out.row(s) = policy.probs(s, dims.n_actions).transpose();
  return out;
}

inline Eigen::VectorXd score(const DifferentiablePolicy& policy, Dims dims, int s, int a) {
  policy.check_dims(dims);
  return policy.score(s, a, dims.n_actions);
}

/// The sigmoid_linear score with the normalization term omitted. Exposed for
/// comparison only; it is not the gradient of the normalized policy.
inline Eigen::VectorXd literal_sigmoid_score(const DifferentiablePolicy& policy, int s, int a) {
  return policy.unnormalized_score(s, a);
}

/// G[s][a][k] = d log pi(a|s) / d theta_k, stored with row index s * n_actions + a.
struct ScoreTable {
  Dims dims;
  Eigen::MatrixXd rows;

  auto at(int s, int a) const { return rows.row(static_cast<Eigen::Index>(s) * dims.n_actions + a); }
  Eigen::Index param_dim() const { return rows.cols(); }
};

inline ScoreTable score_table(const DifferentiablePolicy& policy, Dims dims) {
  policy.check_dims(dims);
  ScoreTable t{dims, Eigen::MatrixXd(static_cast<Eigen::Index>(dims.n_states) * dims.n_actions,
                                     policy.param_dim())};
  for (int s = 0; s < dims.n_states; ++s)
    for (int a = 0; a < dims.n_actions; ++a)
      t.rows.row(static_cast<Eigen::Index>(s) * dims.n_actions + a) =
          policy.score(s, a, dims.n_actions).transpose();
  return t;
}

/**
Largest discrepancy between the analytic score and a central difference of
log pi(a|s) with the given step, over all (s, a, k). Each entry's error is
scaled by max(1, |analytic|).
*/
inline double finite_diff_score_check(const DifferentiablePolicy& policy, Dims dims, double step) {
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  policy.check_dims(dims);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < policy.param_dim(); ++k) {
    Eigen::VectorXd up = policy.theta(), down = policy.theta();
    up[k] += step;
    down[k] -= step;
    const auto p_up = policy.with_theta(up);
    const auto p_down = policy.with_theta(down);
    for (int s = 0; s < dims.n_states; ++s) {
      const Eigen::VectorXd lu = p_up.probs(s, dims.n_actions).array().log();
      const Eigen::VectorXd ld = p_down.probs(s, dims.n_actions).array().log();
      for (int a = 0; a < dims.n_actions; ++a) {
        const double fd = (lu[a] - ld[a]) / (2.0 * step);
        const double analytic = policy.score(s, a, dims.n_actions)[k];
        worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)));
      }
    }
  }
  return worst;
}

/// alpha = max_s (1/2) sum_a |p(a|s) - q(a|s)|.
inline double tv_distance_alpha(const StateActionTable& p, const StateActionTable& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw ValidationError("policy tables have different shapes");
  return 0.5 * (p - q).cwiseAbs().rowwise().sum().maxCoeff();
}

inline double tv_distance_alpha(const DifferentiablePolicy& p, const DifferentiablePolicy& q,
                                Dims dims) {
  return tv_distance_alpha(action_probs(p, dims), action_probs(q, dims));
}

}  // namespace compatpg
