#pragma once

// Seeded Monte-Carlo trajectories under a behavior policy.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "compatpg/mdp.hpp"
#include "compatpg/parallel.hpp"
#include "compatpg/policy.hpp"

namespace compatpg {

/// SplitMix64 output function.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Child seed number `index` of `seed`: mix64(seed + (index + 1) * 0x9E3779B97F4A7C15).
/// Fixed so that sweeps are reproducible across thread counts and builds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int t = 0;
  bool operator==(const Transition&) const = default;
};

struct Trajectory {
  std::vector<Transition> transitions;
  int horizon = 0;
  std::uint64_t seed = 0;
  bool operator==(const Trajectory&) const = default;
};

struct SampleSet {
  std::vector<Trajectory> trajectories;
  Eigen::VectorXd behavior_params;
  std::uint64_t seed = 0;
  double gamma = 0.0;
  Dims dims;

  std::size_t n_steps() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories) n += tr.transitions.size();
    return n;
  }
};

/// Cumulative-table sampler for one (mdp, policy) pair; reusable across seeds.
class TrajectorySampler {
 public:
  TrajectorySampler(const TabularMdp& mdp, const DifferentiablePolicy& policy)
      : mdp_(mdp), dims_(mdp.dims()) {
    validate(mdp);
    const StateActionTable pi = action_probs(policy, dims_);
    initial_cdf_ = cumulative(mdp.initial_dist);
    action_cdf_.resize(dims_.n_states);
    next_cdf_.resize(static_cast<std::size_t>(dims_.n_states) * dims_.n_actions);
    for (int s = 0; s < dims_.n_states; ++s) {
      action_cdf_[s] = cumulative(pi.row(s).transpose());
      for (int a = 0; a < dims_.n_actions; ++a)
        next_cdf_[static_cast<std::size_t>(s) * dims_.n_actions + a] = cumulative(mdp.row(s, a));
    }
  }

  Trajectory sample(int horizon, std::uint64_t seed) const {
    if (horizon < 1) throw ValidationError("horizon must be at least 1");
    Rng rng(seed);
    Trajectory tr;
    tr.horizon = horizon;
    tr.seed = seed;
    tr.transitions.reserve(horizon);
    int s = draw(initial_cdf_, rng);
    for (int t = 0; t < horizon; ++t) {
      const int a = draw(action_cdf_[s], rng);
      tr.transitions.push_back({s, a, mdp_.reward(s, a), t});
      s = draw(next_cdf_[static_cast<std::size_t>(s) * dims_.n_actions + a], rng);
    }
    return tr;
  }

 private:
  static std::vector<double> cumulative(const Eigen::Ref<const Eigen::VectorXd>& p) {
    std::vector<double> c(p.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) c[i] = (acc += p[i]);
    return c;
  }

  static int draw(const std::vector<double>& cdf, Rng& rng) {
    const double u = uniform01(rng) * cdf.back();
    const int last = static_cast<int>(cdf.size()) - 1;
    for (int i = 0; i < last; ++i)
      if (u < cdf[i]) return i;
    return last;
  }

  const TabularMdp& mdp_;
  Dims dims_;
  std::vector<double> initial_cdf_;
  std::vector<std::vector<double>> action_cdf_;
  std::vector<std::vector<double>> next_cdf_;
};

inline Trajectory sample_trajectory(const TabularMdp& mdp, const DifferentiablePolicy& policy,
                                    int horizon, std::uint64_t seed) {
  return TrajectorySampler(mdp, policy).sample(horizon, seed);
}

/// G_t = sum_{k >= t} gamma^{k-t} r_k over the stored (truncated) trajectory.
inline std::vector<double> empirical_returns(const Trajectory& traj, double gamma) {
  std::vector<double> g(traj.transitions.size());
  double acc = 0.0;
  for (std::size_t i = g.size(); i-- > 0;) g[i] = acc = traj.transitions[i].r + gamma * acc;
  return g;
}

/// Trajectory i is drawn with seed derive_seed(seed, i).
inline SampleSet collect(const TabularMdp& mdp, const DifferentiablePolicy& policy, int n_rollouts,
                         int horizon, std::uint64_t seed, unsigned threads = 1) {
  if (n_rollouts < 1) throw ValidationError("n_rollouts must be at least 1");
  const TrajectorySampler sampler(mdp, policy);
  SampleSet out;
  out.behavior_params = policy.theta();
  out.seed = seed;
  out.gamma = mdp.gamma;
  out.dims = mdp.dims();
  out.trajectories.resize(n_rollouts);
  parallel_for(static_cast<std::size_t>(n_rollouts), threads, [&](std::size_t i) {
    out.trajectories[i] = sampler.sample(horizon, derive_seed(seed, i));
  });
  return out;
}

/// Smallest H with gamma^H * R_max / (1 - gamma) <= tol.
inline int default_horizon(const TabularMdp& mdp, double tol = 1e-6) {
  const double r_max = mdp.reward.cwiseAbs().maxCoeff();
  if (r_max == 0.0) return 1;
  const double h = std::log(tol * (1.0 - mdp.gamma) / r_max) / std::log(mdp.gamma);
  return std::max(1, static_cast<int>(std::ceil(h)));
}

/// Per-step targets read from a state-action table, in trajectory order.
inline std::vector<double> table_targets(const SampleSet& samples, const StateActionTable& table) {
  std::vector<double> out;
  out.reserve(samples.n_steps());
  for (const auto& tr : samples.trajectories)
    for (const auto& st : tr.transitions) out.push_back(table(st.s, st.a));
  return out;
}

/// Per-step empirical returns, in trajectory order.
inline std::vector<double> return_targets(const SampleSet& samples) {
  std::vector<double> out;
  out.reserve(samples.n_steps());
  for (const auto& tr : samples.trajectories) {
    const auto g = empirical_returns(tr, samples.gamma);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

}  // namespace compatpg
