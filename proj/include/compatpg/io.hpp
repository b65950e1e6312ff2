#pragma once

// JSON forms of MDPs, policies, critics, trajectories and experiment configs.

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "compatpg/critic.hpp"
#include "compatpg/experiment.hpp"
#include "compatpg/mdp.hpp"
#include "compatpg/policy.hpp"
#include "compatpg/rollout.hpp"

namespace compatpg::io {

using nlohmann::json;

inline json vec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

inline json mdp_to_json(const TabularMdp& mdp) {
  json transition = json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    json per_action = json::array();
    for (int a = 0; a < mdp.n_actions; ++a) per_action.push_back(vec_to_json(mdp.row(s, a)));
    transition.push_back(per_action);
  }
  return {{"n_states", mdp.n_states},   {"n_actions", mdp.n_actions},
          {"transition", transition},   {"reward", mat_to_json(mdp.reward)},
          {"initial_dist", vec_to_json(mdp.initial_dist)}, {"gamma", mdp.gamma}};
}

/// Parses and validates.
inline TabularMdp mdp_from_json(const json& j) {
  const int S = j.at("n_states").get<int>();
  const int A = j.at("n_actions").get<int>();
  if (S <= 0 || A <= 0) throw ValidationError("n_states and n_actions must be positive");
  auto m = TabularMdp::zeros(S, A, j.at("gamma").get<double>());
  const auto& tr = j.at("transition");
  const auto& rw = j.at("reward");
  if (tr.size() != static_cast<std::size_t>(S) || rw.size() != static_cast<std::size_t>(S))
    throw ValidationError("transition/reward must have n_states rows");
  for (int s = 0; s < S; ++s) {
    if (tr[s].size() != static_cast<std::size_t>(A) || rw[s].size() != static_cast<std::size_t>(A))
      throw ValidationError("transition/reward rows must have n_actions entries");
    for (int a = 0; a < A; ++a) {
      const auto row = tr[s][a].get<std::vector<double>>();
      if (row.size() != static_cast<std::size_t>(S))
        throw ValidationError("transition row must have n_states entries");
      for (int t = 0; t < S; ++t) m.p(s, a, t) = row[t];
      m.reward(s, a) = rw[s][a].get<double>();
    }
  }
  m.initial_dist = vec_from_json(j.at("initial_dist"));
  validate(m);
  return m;
}

inline json policy_to_json(const DifferentiablePolicy& p) {
  json j = {{"family", to_string(p.family())}, {"theta", vec_to_json(p.theta())}};
  if (p.family() == PolicyFamily::SigmoidLinear) j["action_encoding"] = p.action_encoding();
  return j;
}

/// SoftmaxTabular needs the MDP dimensions to reshape its logits.
inline DifferentiablePolicy policy_from_json(const json& j, Dims dims) {
  const auto family = policy_family_from_string(j.value("family", std::string("sigmoid_linear")));
  const Eigen::VectorXd theta = vec_from_json(j.at("theta"));
  if (family == PolicyFamily::SoftmaxTabular) return DifferentiablePolicy::softmax_tabular(dims, theta);
  std::vector<double> enc = j.contains("action_encoding")
                                ? j.at("action_encoding").get<std::vector<double>>()
                                : std::vector<double>{0.0, 1.0};
  return DifferentiablePolicy::sigmoid_linear(theta, std::move(enc));
}

inline json critic_to_json(const LinearCritic& c) {
  return {{"kind", to_string(c.features.kind())},
          {"w", vec_to_json(c.w)},
          {"baseline", vec_to_json(c.baseline)},
          {"behavior_theta", vec_to_json(c.features.behavior().theta())},
          {"target_theta", vec_to_json(c.features.target().theta())}};
}

/// Rebuilds a critic; the policy templates supply family and encoding.
inline LinearCritic critic_from_json(const json& j, const DifferentiablePolicy& behavior_template,
                                     const DifferentiablePolicy& target_template, Dims dims) {
  FeatureMap map(feature_kind_from_string(j.at("kind").get<std::string>()),
                 behavior_template.with_theta(vec_from_json(j.at("behavior_theta"))),
                 target_template.with_theta(vec_from_json(j.at("target_theta"))), dims);
  LinearCritic c{map, vec_from_json(j.at("w")), vec_from_json(j.at("baseline"))};
  if (c.w.size() != map.dim()) throw ValidationError("critic weight dimension mismatch");
  if (c.baseline.size() != dims.n_states) throw ValidationError("critic baseline size mismatch");
  return c;
}

inline json fit_report_to_json(const FitReport& r) {
  json j = {{"w", vec_to_json(r.w)},
            {"weighted_residual_moment", vec_to_json(r.weighted_residual_moment)},
            {"condition_number", std::isfinite(r.condition_number) ? json(r.condition_number)
                                                                   : json("inf")},
            {"rank", r.rank},
            {"degenerate", r.degenerate}};
  j["n_samples"] = r.n_samples ? json(*r.n_samples) : json("EXACT");
  return j;
}

/// One line per trajectory: {"seed": ..., "steps": [[s, a, r], ...]}.
inline void write_jsonl(const SampleSet& samples, std::ostream& out) {
  for (const auto& tr : samples.trajectories) {
    json steps = json::array();
    for (const auto& st : tr.transitions) steps.push_back(json::array({st.s, st.a, st.r}));
    out << json{{"seed", tr.seed}, {"steps", steps}}.dump() << '\n';
  }
}

inline std::vector<Trajectory> read_jsonl(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Trajectory tr;
    tr.seed = j.at("seed").get<std::uint64_t>();
    int t = 0;
    for (const auto& st : j.at("steps"))
      tr.transitions.push_back({st.at(0).get<int>(), st.at(1).get<int>(), st.at(2).get<double>(), t++});
    tr.horizon = t;
    out.push_back(std::move(tr));
  }
  return out;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

/**
Experiment config. Recognized keys (all optional):
  "nchain": {"n", "slip", "small_reward", "large_reward", "gamma"}
  "mdp": inline MDP object or path to an MDP JSON file (overrides "nchain")
  "policy_family", "action_encoding", "theta", "theta_tilde",
  "rollout_counts", "trials", "horizon", "seed", "estimators",
  "q_target_mode", "threads"
*/
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("mdp")) {
    const auto& m = j.at("mdp");
    cfg.mdp = m.is_string() ? mdp_from_json(load_json_file(m.get<std::string>())) : mdp_from_json(m);
  } else if (j.contains("nchain")) {
    const auto& n = j.at("nchain");
    cfg.mdp = make_nchain(n.value("n", 5), n.value("slip", 0.2), n.value("small_reward", 2.0),
                          n.value("large_reward", 10.0), n.value("gamma", 0.9));
  }
  const Dims dims = cfg.mdp.dims();
  json pol = {{"family", j.value("policy_family", std::string("sigmoid_linear"))}};
  if (j.contains("action_encoding")) pol["action_encoding"] = j.at("action_encoding");
  if (j.contains("theta")) {
    pol["theta"] = j.at("theta");
    cfg.behavior = policy_from_json(pol, dims);
  }
  if (j.contains("theta_tilde")) {
    pol["theta"] = j.at("theta_tilde");
    cfg.target = policy_from_json(pol, dims);
  }
  if (j.contains("rollout_counts")) cfg.rollout_counts = j.at("rollout_counts").get<std::vector<int>>();
  cfg.n_trials = j.value("trials", cfg.n_trials);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.master_seed = j.value("seed", cfg.master_seed);
  if (j.contains("estimators")) {
    cfg.estimators.clear();
    for (const auto& e : j.at("estimators")) cfg.estimators.push_back(estimator_from_string(e.get<std::string>()));
  }
  if (j.contains("q_target_mode"))
    cfg.q_target_mode = q_target_mode_from_string(j.at("q_target_mode").get<std::string>());
  cfg.threads = j.value("threads", cfg.threads);
  return cfg;
}

}  // namespace compatpg::io
