#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "compatpg/gradient.hpp"
#include "oracles.hpp"

using namespace compatpg;

namespace {

struct Reference {
  TabularMdp mdp = make_nchain();
  DifferentiablePolicy behavior = DifferentiablePolicy::sigmoid_linear(0.2, 0.5);
  DifferentiablePolicy target = DifferentiablePolicy::sigmoid_linear(0.3, 0.6);
  StateActionTable pb = action_probs(behavior, mdp.dims());
  StateActionTable q = exact_q(mdp, pb);
  StateTable v = exact_value(mdp, pb);
};

// Frozen from tests/oracle/nchain_oracle.py: 40-digit central differences of
// the brute-force surrogate in theta_tilde.
const double kTrueGrad[2] = {0.37954272395565508, 0.38752955241565642};

}  // namespace

TEST(SurrogateValue, EqualsJWhenTargetIsBehavior) {
  const Reference p;
  EXPECT_NEAR(surrogate_value(p.mdp, p.behavior, p.behavior), policy_value(p.mdp, p.pb), 1e-12);
}

TEST(SurrogateValue, SingleActionMdp) {
  std::mt19937_64 rng(1);
  const auto m = random_mdp(4, 1, 0.8, rng);
  const auto b = oracle::random_softmax({4, 1}, rng), t = oracle::random_softmax({4, 1}, rng);
  EXPECT_NEAR(surrogate_value(m, b, t), policy_value(m, action_probs(t, {4, 1})), 1e-12);
}

TEST(SurrogateValue, ReferenceParametersMatchBruteForce) {
  const Reference p;
  const double L = surrogate_value(p.mdp, p.behavior, p.target);
  EXPECT_NEAR(L, 12.278949155731849, 1e-10);
  EXPECT_NEAR(L, oracle::surrogate_brute_force(p.mdp, p.pb, action_probs(p.target, p.mdp.dims())), 1e-8);
}

TEST(SurrogateGradExact, FirstOrderMatchAtBehavior) {
  const Reference p;
  const auto g_surr = surrogate_grad_exact(p.mdp, p.behavior, p.behavior, p.q).g;
  const auto g_pg = policy_grad_exact(p.mdp, p.behavior).g;
  EXPECT_LE((g_surr - g_pg).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SurrogateGradExact, ZeroForStatewiseConstantValues) {
  const Reference p;
  const StateActionTable t = p.v.replicate(1, 2);
  EXPECT_LE(surrogate_grad_exact(p.mdp, p.behavior, p.target, t).g.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SurrogateGradExact, ReferenceGroundTruth) {
  const Reference p;
  const auto est = surrogate_grad_exact(p.mdp, p.behavior, p.target, p.q);
  EXPECT_EQ(est.estimator, GradientEstimator::ExactTrueQ);
  EXPECT_FALSE(est.n_rollouts.has_value());
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(est.g[k], kTrueGrad[k], 1e-12);
  const auto L = [&](const Eigen::VectorXd& th) {
    return surrogate_value(p.mdp, p.behavior, p.target.with_theta(th));
  };
  EXPECT_TRUE(oracle::fd_close(est.g, oracle::central_difference(L, p.target.theta(), 1e-5)));
}

TEST(SurrogateGradExact, BaselineInvariance) {
  const Reference p;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 10.0);
  const auto g0 = surrogate_grad_exact(p.mdp, p.behavior, p.target, p.q).g;
  for (int rep = 0; rep < 10; ++rep) {
    StateTable shift(5);
    for (auto& x : shift) x = n(rng);
    const StateActionTable shifted = p.q.colwise() + shift;
    EXPECT_LE((surrogate_grad_exact(p.mdp, p.behavior, p.target, shifted).g - g0).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(PolicyGradExact, SingleActionIsZero) {
  std::mt19937_64 rng(2);
  const auto m = random_mdp(3, 1, 0.9, rng);
  EXPECT_EQ(policy_grad_exact(m, oracle::random_softmax({3, 1}, rng)).g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PolicyGradExact, ExchangeableActionsHaveEqualComponents) {
  // Actions 1 and 2 are copies of each other with equal logits.
  std::mt19937_64 rng(6);
  auto m = random_mdp(3, 3, 0.9, rng);
  for (int s = 0; s < 3; ++s) {
    m.reward(s, 2) = m.reward(s, 1);
    for (int t = 0; t < 3; ++t) m.p(s, 2, t) = m.p(s, 1, t);
  }
  Eigen::VectorXd logits(9);
  logits << 0.3, -0.2, -0.2, 1.0, 0.5, 0.5, -0.7, 0.1, 0.1;
  const auto g = policy_grad_exact(m, DifferentiablePolicy::softmax_tabular({3, 3}, logits)).g;
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(g[3 * s + 1], g[3 * s + 2], 1e-12);
}

TEST(PolicyGradExact, NChainMatchesFiniteDifferenceOfJ) {
  const Reference p;
  const auto g = policy_grad_exact(p.mdp, p.behavior).g;
  const auto J = [&](const Eigen::VectorXd& th) {
    return policy_value(p.mdp, action_probs(p.behavior.with_theta(th), p.mdp.dims()));
  };
  EXPECT_TRUE(oracle::fd_close(g, oracle::central_difference(J, p.behavior.theta(), 1e-5)));
}

TEST(SurrogateGradMc, ZeroValueGivesZero) {
  const Reference p;
  const auto samples = collect(p.mdp, p.behavior, 10, 50, 1);
  const auto g = surrogate_grad_mc(samples, p.behavior, p.target, StateActionTable::Zero(5, 2));
  EXPECT_EQ(g.g.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(*g.n_rollouts, 10);
}

TEST(SurrogateGradMc, StatewiseConstantValueAveragesToZero) {
  const Reference p;
  const int n = 10000;
  const auto samples = collect(p.mdp, p.behavior, n, default_horizon(p.mdp), 77);
  // Per-trajectory contributions give the standard error.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = Eigen::VectorXd::Zero(2);
  const StateActionTable c = StateTable::LinSpaced(5, 1.0, 5.0).replicate(1, 2);
  for (const auto& tr : samples.trajectories) {
    SampleSet one{{tr}, samples.behavior_params, 0, samples.gamma, samples.dims};
    const Eigen::VectorXd g = surrogate_grad_mc(one, p.behavior, p.behavior, c).g;
    sum += g;
    sq += g.cwiseAbs2();
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd se = ((sq / n - mean.cwiseAbs2()) / n).cwiseSqrt();
  const auto whole = surrogate_grad_mc(samples, p.behavior, p.behavior, c).g;
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(whole[k], mean[k], 1e-12);
    EXPECT_LE(std::abs(mean[k]), 3.0 * se[k]);
  }
}

TEST(SurrogateGradMc, UnbiasedForExactGradient) {
  const Reference p;
  const int n = 100000;
  const auto samples = collect(p.mdp, p.behavior, n, default_horizon(p.mdp), 4242);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = Eigen::VectorXd::Zero(2);
  for (const auto& tr : samples.trajectories) {
    SampleSet one{{tr}, samples.behavior_params, 0, samples.gamma, samples.dims};
    const Eigen::VectorXd g = surrogate_grad_mc(one, p.behavior, p.target, p.q).g;
    sum += g;
    sq += g.cwiseAbs2();
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd se = ((sq / n - mean.cwiseAbs2()) / n).cwiseSqrt();
  for (int k = 0; k < 2; ++k) EXPECT_LE(std::abs(mean[k] - kTrueGrad[k]), 3.0 * se[k]);
}

TEST(SurrogateGradMc, PerStepValuesMatchTableWhenEqual) {
  const Reference p;
  const auto samples = collect(p.mdp, p.behavior, 25, 40, 12);
  const auto a = surrogate_grad_mc(samples, p.behavior, p.target, p.q).g;
  const auto b = surrogate_grad_mc(samples, p.behavior, p.target, table_targets(samples, p.q)).g;
  EXPECT_EQ(a, b);
  EXPECT_THROW(surrogate_grad_mc(samples, p.behavior, p.target, std::vector<double>{1.0}), ValidationError);
}

TEST(ExactCriticGradient, CompatibleCriticsAreUnbiasedStandardIsNot) {
  const Reference p;
  const auto g_true = surrogate_grad_exact(p.mdp, p.behavior, p.target, p.q).g;
  const auto gap = [&](FeatureKind kind, Weighting w) {
    const FeatureMap map(kind, p.behavior, p.target, p.mdp.dims());
    const auto fit = fit_exact(p.mdp, map, p.q, w);
    const auto est = surrogate_grad_exact(p.mdp, fit.critic);
    EXPECT_EQ(est.estimator, GradientEstimator::ExactCritic);
    EXPECT_EQ(est.critic_kind, kind);
    return (est.g - g_true).cwiseAbs().maxCoeff();
  };
  EXPECT_LE(gap(FeatureKind::CompatibleTarget, Weighting::Target), 1e-8);
  EXPECT_LE(gap(FeatureKind::CompatibleIS, Weighting::Behavior), 1e-8);
  // The mismatched pairings are not guaranteed to be unbiased.
  EXPECT_GT(gap(FeatureKind::StandardLinear, Weighting::Behavior), 1e-4);
}

TEST(ExactCriticGradient, CompatibleCriticsExactOnRandomSoftmaxInstances) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> ns(2, 6), na(2, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{ns(rng), na(rng)};
    const auto m = random_mdp(d.n_states, d.n_actions, 0.9, rng);
    const auto b = oracle::random_softmax(d, rng), t = oracle::random_softmax(d, rng);
    const auto q = exact_q(m, action_probs(b, d));
    const auto g_true = surrogate_grad_exact(m, b, t, q).g;
    for (auto [kind, w] : {std::pair{FeatureKind::CompatibleTarget, Weighting::Target},
                           std::pair{FeatureKind::CompatibleIS, Weighting::Behavior}}) {
      const auto fit = fit_exact(m, FeatureMap(kind, b, t, d), q, w);
      EXPECT_LE((surrogate_grad_exact(m, fit.critic).g - g_true).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(MpiLowerBound, TightAtBehavior) {
  const Reference p;
  const auto r = mpi_lower_bound(p.mdp, p.behavior, p.behavior);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_NEAR(r.bound, r.J_target, 1e-10);
  EXPECT_NEAR(r.L, r.J_target, 1e-10);
  EXPECT_TRUE(r.holds);
}

TEST(MpiLowerBound, SingleActionMdp) {
  std::mt19937_64 rng(8);
  const auto m = random_mdp(3, 1, 0.9, rng);
  const auto r = mpi_lower_bound(m, oracle::random_softmax({3, 1}, rng), oracle::random_softmax({3, 1}, rng));
  EXPECT_EQ(r.epsilon, 0.0);
  EXPECT_NEAR(r.bound, r.J_target, 1e-10);
}

TEST(MpiLowerBound, ReferenceParameters) {
  const Reference p;
  const auto r = mpi_lower_bound(p.mdp, p.behavior, p.target);
  EXPECT_NEAR(r.alpha, 0.0090193739724866163, 1e-15);
  EXPECT_NEAR(r.L, 12.278949155731849, 1e-10);
  EXPECT_NEAR(r.bound, r.L - 4 * r.epsilon * 0.9 * r.alpha * r.alpha / 0.01, 1e-12);
  EXPECT_TRUE(r.holds);
}

TEST(MpiLowerBound, HoldsForRandomSoftmaxPairsOnNChain) {
  const auto m = make_nchain();
  std::mt19937_64 rng(31);
  for (int i = 0; i < 100; ++i) {
    const auto b = oracle::random_softmax({5, 2}, rng, 2.0), t = oracle::random_softmax({5, 2}, rng, 2.0);
    EXPECT_TRUE(mpi_lower_bound(m, b, t).holds);
  }
}
