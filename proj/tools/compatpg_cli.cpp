// Command-line front end: exact solves, rollouts, critic fits, gradient
// comparisons and bias/variance sweeps.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "compatpg/compatpg.hpp"
#include "compatpg/io.hpp"

namespace {

using namespace compatpg;
using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  std::string mdp_path;
  std::optional<int> nchain_n;
  std::optional<double> slip, small_reward, large_reward, gamma;
  std::string policy_family;
  std::vector<double> theta, theta_tilde;
  std::optional<int> trials, horizon;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<int> rollout_counts;
  std::vector<std::string> estimators;
  std::string q_target_mode;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags override it)");
    app->add_option("--mdp", mdp_path, "MDP JSON file (replaces the NChain environment)");
    app->add_option("--nchain-n", nchain_n, "NChain length");
    app->add_option("--slip", slip, "NChain action slip probability");
    app->add_option("--small-reward", small_reward, "NChain RETURN reward");
    app->add_option("--large-reward", large_reward, "NChain end-of-chain reward");
    app->add_option("--gamma", gamma, "discount factor");
    app->add_option("--policy-family", policy_family, "sigmoid_linear | softmax_tabular");
    app->add_option("--theta", theta, "behavior parameters, comma separated")->delimiter(',');
    app->add_option("--theta-tilde", theta_tilde, "target parameters, comma separated")->delimiter(',');
    app->add_option("--trials", trials, "trials per sweep cell");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--horizon", horizon, "rollout truncation length (0 = automatic)");
    app->add_option("--threads", threads, "worker threads");
    app->add_option("--rollout-counts", rollout_counts, "ascending rollout budgets")->delimiter(',');
    app->add_option("--estimators", estimators,
                    "true_q, standard, compatible, compatible_is")->delimiter(',');
    app->add_option("--q-targets", q_target_mode, "exact_q | empirical_returns");
    app->add_option("--out", out, "output path (default stdout)");
  }

  ExperimentConfig build() const {
    json j = config_path.empty() ? json::object() : io::load_json_file(config_path);
    if (!mdp_path.empty()) {
      j["mdp"] = mdp_path;
    } else if (nchain_n || slip || small_reward || large_reward) {
      j.erase("mdp");
    }
    if (!j.contains("mdp")) {
      json& n = j["nchain"];
      if (!n.is_object()) n = json::object();
      if (nchain_n) n["n"] = *nchain_n;
      if (slip) n["slip"] = *slip;
      if (small_reward) n["small_reward"] = *small_reward;
      if (large_reward) n["large_reward"] = *large_reward;
      if (gamma) n["gamma"] = *gamma;
    }
    if (!policy_family.empty()) j["policy_family"] = policy_family;
    if (!theta.empty()) j["theta"] = theta;
    if (!theta_tilde.empty()) j["theta_tilde"] = theta_tilde;
    if (trials) j["trials"] = *trials;
    if (horizon) j["horizon"] = *horizon;
    if (seed) j["seed"] = *seed;
    if (threads) j["threads"] = *threads;
    if (!rollout_counts.empty()) j["rollout_counts"] = rollout_counts;
    if (!estimators.empty()) j["estimators"] = estimators;
    if (!q_target_mode.empty()) j["q_target_mode"] = q_target_mode;
    ExperimentConfig cfg = io::config_from_json(j);
    if (gamma && j.contains("mdp")) {
      cfg.mdp.gamma = *gamma;
      validate(cfg.mdp);
    }
    return cfg;
  }
};

/// Writes to --out, or stdout when empty.
template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  fn(f);
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string short_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", x);
  return buf;
}

Weighting parse_weighting(const std::string& w) {
  if (w == "behavior") return Weighting::Behavior;
  if (w == "target") return Weighting::Target;
  throw ValidationError("weighting must be behavior or target");
}

Weighting natural_weighting(FeatureKind k) {
  return k == FeatureKind::CompatibleTarget ? Weighting::Target : Weighting::Behavior;
}

void cmd_solve(const CommonArgs& args, bool use_target) {
  const auto cfg = args.build();
  const auto& policy = use_target ? cfg.target : cfg.behavior;
  const auto pi = action_probs(policy, cfg.mdp.dims());
  const auto sol = solve(cfg.mdp, pi);
  json out = {{"policy", io::policy_to_json(policy)},
              {"pi", io::mat_to_json(pi)},
              {"V", io::vec_to_json(sol.value)},
              {"Q", io::mat_to_json(sol.q)},
              {"A", io::mat_to_json(sol.advantage)},
              {"rho", io::vec_to_json(sol.occupancy)},
              {"J", sol.J}};
  with_output(args.out, [&](std::ostream& os) { os << std::setw(2) << out << '\n'; });
}

void cmd_rollout(const CommonArgs& args, int n_rollouts) {
  const auto cfg = args.build();
  const auto samples = collect(cfg.mdp, cfg.behavior, n_rollouts, cfg.effective_horizon(),
                               cfg.master_seed, cfg.threads);
  with_output(args.out, [&](std::ostream& os) { io::write_jsonl(samples, os); });
}

void cmd_fit_critic(const CommonArgs& args, const std::string& kind_name,
                    const std::string& weighting_name, int samples_n) {
  const auto cfg = args.build();
  const FeatureKind kind = feature_kind_from_string(kind_name);
  const FeatureMap map(kind, cfg.behavior, cfg.target, cfg.mdp.dims());
  const auto sol = solve(cfg.mdp, map.behavior_probs());
  const StateTable baseline = is_compatible(kind) ? sol.value : StateTable::Zero(cfg.mdp.n_states);
  std::optional<FitResult> fit;
  std::string method;
  if (samples_n > 0) {
    const auto samples = collect(cfg.mdp, cfg.behavior, samples_n, cfg.effective_horizon(),
                                 cfg.master_seed, cfg.threads);
    const auto targets = cfg.q_target_mode == QTargetMode::ExactQ ? table_targets(samples, sol.q)
                                                                  : return_targets(samples);
    const Weighting w = weighting_name.empty() ? natural_weighting(kind) : parse_weighting(weighting_name);
    fit = w == Weighting::Target ? fit_weighted_ls(samples, map, targets, baseline)
                                 : fit_standard_ls(samples, map, targets, baseline);
    method = w == Weighting::Target ? "weighted_ls" : "standard_ls";
  } else {
    const Weighting w = weighting_name.empty() ? natural_weighting(kind) : parse_weighting(weighting_name);
    fit = fit_exact(cfg.mdp, map, sol.q, w, baseline);
    method = w == Weighting::Target ? "exact_target_weighted" : "exact_behavior_weighted";
  }
  const auto g_true = surrogate_grad_exact(cfg.mdp, cfg.behavior, cfg.target, sol.q).g;
  const auto g_fit = surrogate_grad_exact(cfg.mdp, fit->critic).g;
  json out = {{"method", method},
              {"report", io::fit_report_to_json(fit->report)},
              {"critic", io::critic_to_json(fit->critic)},
              {"exact_gradient_gap_inf", (g_fit - g_true).cwiseAbs().maxCoeff()}};
  with_output(args.out, [&](std::ostream& os) { os << std::setw(2) << out << '\n'; });
}

void cmd_grad_compare(const CommonArgs& args, int n_rollouts, bool as_json) {
  const auto cfg = args.build();
  cfg.validate();
  const auto ctx = SweepContext::build(cfg);
  struct Row {
    std::string name;
    Eigen::VectorXd g;
  };
  std::vector<Row> rows{{"exact_true_q", ctx.ground_truth}};
  for (auto kind : {FeatureKind::StandardLinear, FeatureKind::CompatibleIS, FeatureKind::CompatibleTarget}) {
    const FeatureMap map(kind, cfg.behavior, cfg.target, cfg.mdp.dims());
    const auto fit = fit_exact(cfg.mdp, map, ctx.behavior_solution.q, natural_weighting(kind));
    rows.push_back({"exact_critic:" + to_string(kind), surrogate_grad_exact(cfg.mdp, fit.critic).g});
  }
  for (auto est : cfg.estimators) {
    const auto t = run_trial(cfg, ctx, est, n_rollouts, 0);
    if (!t.ok()) throw std::runtime_error(to_string(est) + " trial failed: " + t.failure);
    rows.push_back({"mc:" + to_string(est) + "@" + std::to_string(n_rollouts), t.estimate->g});
  }
  with_output(args.out, [&](std::ostream& os) {
    if (as_json) {
      json arr = json::array();
      for (const auto& r : rows)
        arr.push_back({{"estimator", r.name},
                       {"gradient", io::vec_to_json(r.g)},
                       {"gap_inf", (r.g - ctx.ground_truth).cwiseAbs().maxCoeff()}});
      os << std::setw(2) << arr << '\n';
      return;
    }
    os << std::left << std::setw(36) << "estimator";
    for (Eigen::Index k = 0; k < ctx.ground_truth.size(); ++k)
      os << std::right << std::setw(16) << ("g[" + std::to_string(k) + "]");
    os << std::setw(16) << "gap_inf" << '\n';
    for (const auto& r : rows) {
      os << std::left << std::setw(36) << r.name << std::right;
      for (Eigen::Index k = 0; k < r.g.size(); ++k) os << std::setw(16) << short_number(r.g[k]);
      os << std::setw(16) << short_number((r.g - ctx.ground_truth).cwiseAbs().maxCoeff())
         << '\n';
    }
  });
}

void cmd_sweep(const CommonArgs& args, const std::string& plot_path) {
  const auto cfg = args.build();
  const auto result = run_sweep(cfg);
  with_output(args.out, [&](std::ostream& os) { write_csv(result, os); });
  if (!plot_path.empty()) emit_plot(result, plot_path);
}

void cmd_plot(const std::string& csv, const std::string& out) {
  const auto result = read_csv(csv);
  with_output(out, [&](std::ostream& os) { emit_plot(result, os); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compatible critics for the surrogate policy objective"};
  app.require_subcommand(1);

  CommonArgs solve_args, rollout_args, fit_args, grad_args, sweep_args;

  auto* solve_cmd = app.add_subcommand("solve", "exact V, Q, A, rho and J for an MDP and policy");
  solve_args.add_to(solve_cmd);
  bool solve_target = false;
  solve_cmd->add_flag("--target", solve_target, "solve for theta-tilde instead of theta");

  auto* rollout_cmd = app.add_subcommand("rollout", "write behavior-policy trajectories as JSON lines");
  rollout_args.add_to(rollout_cmd);
  int rollouts = 10;
  rollout_cmd->add_option("-n,--rollouts", rollouts, "number of trajectories");

  auto* fit_cmd = app.add_subcommand("fit-critic", "fit a linear critic and print its report");
  fit_args.add_to(fit_cmd);
  std::string kind = "compatible_target", weighting;
  int fit_samples = 0;
  fit_cmd->add_option("--kind", kind, "standard_linear | compatible_is | compatible_target");
  fit_cmd->add_option("--weighting", weighting, "behavior | target (default follows the kind)");
  fit_cmd->add_option("--samples", fit_samples, "fit from this many rollouts instead of exactly");

  auto* grad_cmd = app.add_subcommand("grad-compare", "compare surrogate-gradient estimators");
  grad_args.add_to(grad_cmd);
  int grad_rollouts = 1000;
  bool grad_json = false;
  grad_cmd->add_option("-n,--rollouts", grad_rollouts, "rollouts for the Monte-Carlo rows");
  grad_cmd->add_flag("--json", grad_json, "emit JSON instead of a table");

  auto* sweep_cmd = app.add_subcommand("sweep", "bias/variance/RMSE sweep over rollout budgets (CSV)");
  sweep_args.add_to(sweep_cmd);
  std::string sweep_plot;
  sweep_cmd->add_option("--plot", sweep_plot, "also write an SVG chart here");

  auto* plot_cmd = app.add_subcommand("plot", "render a sweep CSV as SVG");
  std::string plot_csv, plot_out;
  plot_cmd->add_option("csv", plot_csv, "sweep CSV")->required();
  plot_cmd->add_option("--out", plot_out, "SVG path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve_cmd) cmd_solve(solve_args, solve_target);
    if (*rollout_cmd) cmd_rollout(rollout_args, rollouts);
    if (*fit_cmd) cmd_fit_critic(fit_args, kind, weighting, fit_samples);
    if (*grad_cmd) cmd_grad_compare(grad_args, grad_rollouts, grad_json);
    if (*sweep_cmd) cmd_sweep(sweep_args, sweep_plot);
    if (*plot_cmd) cmd_plot(plot_csv, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
