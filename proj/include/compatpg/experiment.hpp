#pragma once

// Rollout-budget sweeps comparing surrogate-gradient estimators: per-cell
// bias, variance and RMSE against the exact gradient, CSV output and an SVG
// chart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "compatpg/critic.hpp"
#include "compatpg/gradient.hpp"
#include "compatpg/mdp.hpp"
#include "compatpg/parallel.hpp"
#include "compatpg/policy.hpp"
#include "compatpg/rollout.hpp"

namespace compatpg {

/// A critic kind paired with its fitting procedure. The enum value feeds the
/// per-trial seed, so values must stay stable.
enum class EstimatorKind {
  TrueQ = 0,          ///< no critic; value = Q (or empirical returns)
  Standard = 1,       ///< [s, enc(a), 1], least squares over behavior samples
  Compatible = 2,     ///< target score features, importance-weighted least squares
  CompatibleIS = 3,   ///< ratio-scaled target score features, least squares
};

inline std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::TrueQ: return "true_q";
    case EstimatorKind::Standard: return "standard";
    case EstimatorKind::Compatible: return "compatible";
    case EstimatorKind::CompatibleIS: return "compatible_is";
  }
  return "?";
}

inline EstimatorKind estimator_from_string(const std::string& name) {
  for (auto e : {EstimatorKind::TrueQ, EstimatorKind::Standard, EstimatorKind::Compatible,
                 EstimatorKind::CompatibleIS})
    if (to_string(e) == name) return e;
  throw ValidationError("unknown estimator: " + name);
}

enum class QTargetMode { ExactQ, EmpiricalReturns };

inline std::string to_string(QTargetMode m) {
  return m == QTargetMode::ExactQ ? "exact_q" : "empirical_returns";
}

inline QTargetMode q_target_mode_from_string(const std::string& name) {
  if (name == "exact_q") return QTargetMode::ExactQ;
  if (name == "empirical_returns") return QTargetMode::EmpiricalReturns;
  throw ValidationError("unknown q target mode: " + name);
}

struct ExperimentConfig {
  TabularMdp mdp = make_nchain();
  DifferentiablePolicy behavior = DifferentiablePolicy::sigmoid_linear(0.2, 0.5);
  DifferentiablePolicy target = DifferentiablePolicy::sigmoid_linear(0.3, 0.6);
  std::vector<int> rollout_counts{10, 30, 100, 300, 1000, 3000};
  int n_trials = 250;
  /// 0 selects default_horizon(mdp).
  int horizon = 0;
  std::uint64_t master_seed = 20190501;
  std::vector<EstimatorKind> estimators{EstimatorKind::Standard, EstimatorKind::Compatible};
  QTargetMode q_target_mode = QTargetMode::ExactQ;
  unsigned threads = 1;

  int effective_horizon() const { return horizon > 0 ? horizon : default_horizon(mdp); }

  void validate() const {
    compatpg::validate(mdp);
    behavior.check_dims(mdp.dims());
    target.check_dims(mdp.dims());
    if (behavior.param_dim() != target.param_dim() || behavior.family() != target.family())
      throw ValidationError("behavior and target policies must share a family");
    if (rollout_counts.empty()) throw ValidationError("rollout_counts must be nonempty");
    for (std::size_t i = 0; i < rollout_counts.size(); ++i) {
      if (rollout_counts[i] < 1) throw ValidationError("rollout counts must be positive");
      if (i > 0 && rollout_counts[i] <= rollout_counts[i - 1])
        throw ValidationError("rollout_counts must be strictly ascending");
    }
    if (n_trials < 2) throw ValidationError("n_trials must be at least 2");
    if (estimators.empty()) throw ValidationError("at least one estimator is required");
  }
};

/// Seed for one trial: a chain of derive_seed over (estimator, rollout_count, trial).
inline std::uint64_t trial_seed(std::uint64_t master, EstimatorKind est, int rollout_count,
                                int trial_index) {
  std::uint64_t s = derive_seed(master, static_cast<std::uint64_t>(est));
  s = derive_seed(s, static_cast<std::uint64_t>(rollout_count));
  return derive_seed(s, static_cast<std::uint64_t>(trial_index));
}

struct TrialOutcome {
  std::optional<GradientEstimate> estimate;
  std::string failure;

  bool ok() const { return estimate.has_value(); }
};

/// Quantities shared by every trial of a sweep.
struct SweepContext {
  ExactSolution behavior_solution;
  Eigen::VectorXd ground_truth;
  int horizon = 0;

  static SweepContext build(const ExperimentConfig& cfg) {
    SweepContext ctx;
    ctx.behavior_solution = solve(cfg.mdp, action_probs(cfg.behavior, cfg.mdp.dims()));
    ctx.ground_truth =
        surrogate_grad_exact(cfg.mdp, cfg.behavior, cfg.target, ctx.behavior_solution.q).g;
    ctx.horizon = cfg.effective_horizon();
    return ctx;
  }
};

inline TrialOutcome run_trial(const ExperimentConfig& cfg, const SweepContext& ctx,
                              EstimatorKind est, int rollout_count, int trial_index) {
  const std::uint64_t seed = trial_seed(cfg.master_seed, est, rollout_count, trial_index);
  const SampleSet samples = collect(cfg.mdp, cfg.behavior, rollout_count, ctx.horizon, seed);
  const bool exact_targets = cfg.q_target_mode == QTargetMode::ExactQ;
  const std::vector<double> targets = exact_targets ? table_targets(samples, ctx.behavior_solution.q)
                                                    : return_targets(samples);
  TrialOutcome out;
  if (est == EstimatorKind::TrueQ) {
    out.estimate = exact_targets
                       ? surrogate_grad_mc(samples, cfg.behavior, cfg.target, ctx.behavior_solution.q)
                       : surrogate_grad_mc(samples, cfg.behavior, cfg.target, targets);
    return out;
  }
  const FeatureKind kind = est == EstimatorKind::Standard     ? FeatureKind::StandardLinear
                           : est == EstimatorKind::Compatible ? FeatureKind::CompatibleTarget
                                                              : FeatureKind::CompatibleIS;
  const FeatureMap map(kind, cfg.behavior, cfg.target, cfg.mdp.dims());
  StateTable baseline = StateTable::Zero(cfg.mdp.n_states);
  if (is_compatible(kind))
    baseline = exact_targets ? ctx.behavior_solution.value
                             : sample_average_baseline(samples, targets);
  try {
    const FitResult fit = est == EstimatorKind::Compatible
                              ? fit_weighted_ls(samples, map, targets, baseline)
                              : fit_standard_ls(samples, map, targets, baseline);
    if (fit.report.degenerate) {
      std::ostringstream os;
      os << "degenerate critic fit (rank " << fit.report.rank << " of " << map.dim() << ")";
      out.failure = os.str();
      return out;
    }
    out.estimate = surrogate_grad_mc(samples, fit.critic);
  } catch (const std::exception& e) {
    out.failure = e.what();
  }
  return out;
}

inline TrialOutcome run_trial(const ExperimentConfig& cfg, EstimatorKind est, int rollout_count,
                              int trial_index) {
  return run_trial(cfg, SweepContext::build(cfg), est, rollout_count, trial_index);
}

/// Statistics of one (estimator, rollout count) cell over its successful trials.
struct CellStats {
  std::string estimator;
  int n_rollouts = 0;
  int n_trials = 0;
  int n_failed = 0;
  Eigen::VectorXd bias;      ///< mean(g_hat) - g*
  double bias_norm = 0.0;    ///< ||bias||_2
  Eigen::VectorXd variance;  ///< unbiased per-component sample variance
  double var_trace = 0.0;
  double rmse = 0.0;          ///< sqrt(mean ||g_hat - g*||^2)
  double se_bias_norm = 0.0;  ///< sqrt(var_trace / n_ok)

  int n_ok() const { return n_trials - n_failed; }
};

/// Aggregate in the given order. Throws if every trial failed.
inline CellStats summarize(const std::vector<TrialOutcome>& trials, const Eigen::VectorXd& truth) {
  CellStats c;
  c.n_trials = static_cast<int>(trials.size());
  const Eigen::Index d = truth.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  int ok = 0;
  for (const auto& t : trials)
    if (t.ok()) {
      mean += t.estimate->g;
      ++ok;
    }
  c.n_failed = c.n_trials - ok;
  if (ok == 0) throw std::runtime_error("every trial in the cell failed");
  mean /= ok;
  c.bias = mean - truth;
  c.bias_norm = c.bias.norm();
  c.variance = Eigen::VectorXd::Zero(d);
  double sq_err = 0.0;
  for (const auto& t : trials)
    if (t.ok()) {
      c.variance += (t.estimate->g - mean).cwiseAbs2();
      sq_err += (t.estimate->g - truth).squaredNorm();
    }
  c.variance = ok > 1 ? Eigen::VectorXd(c.variance / (ok - 1))
                      : Eigen::VectorXd(Eigen::VectorXd::Zero(d));
  c.var_trace = c.variance.sum();
  c.rmse = std::sqrt(sq_err / ok);
  c.se_bias_norm = std::sqrt(c.var_trace / ok);
  return c;
}

struct SweepResult {
  Eigen::VectorXd ground_truth;
  Eigen::Index param_dim = 0;
  std::vector<CellStats> cells;  ///< ordered by estimator (config order), then n_rollouts
};

inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const SweepContext ctx = SweepContext::build(cfg);
  struct Job {
    EstimatorKind est;
    int count;
    int trial;
  };
  std::vector<Job> jobs;
  for (auto est : cfg.estimators)
    for (int count : cfg.rollout_counts)
      for (int t = 0; t < cfg.n_trials; ++t) jobs.push_back({est, count, t});
  // Largest budgets first so the tail of the schedule is short.
  std::vector<std::size_t> order(jobs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return jobs[x].count > jobs[y].count; });

  std::vector<TrialOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t k) {
    const Job& j = jobs[order[k]];
    outcomes[order[k]] = run_trial(cfg, ctx, j.est, j.count, j.trial);
  });

  SweepResult res;
  res.ground_truth = ctx.ground_truth;
  res.param_dim = ctx.ground_truth.size();
  std::size_t k = 0;
  for (auto est : cfg.estimators)
    for (int count : cfg.rollout_counts) {
      std::vector<TrialOutcome> cell(outcomes.begin() + k, outcomes.begin() + k + cfg.n_trials);
      k += cfg.n_trials;
      CellStats c;
      try {
        c = summarize(cell, ctx.ground_truth);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("sweep aborted: all trials failed for " + to_string(est) +
                                 " at " + std::to_string(count) + " rollouts: " + cell.front().failure);
      }
      c.estimator = to_string(est);
      c.n_rollouts = count;
      res.cells.push_back(std::move(c));
    }
  return res;
}

// --- CSV --------------------------------------------------------------------

inline std::string csv_header(Eigen::Index param_dim) {
  std::string h = "estimator,n_rollouts,n_trials,n_failed";
  for (Eigen::Index i = 0; i < param_dim; ++i) h += ",bias_" + std::to_string(i);
  return h + ",bias_norm,var_trace,rmse,se_bias_norm";
}

inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline void write_csv(const SweepResult& result, std::ostream& out) {
  out << csv_header(result.param_dim) << '\n';
  for (const auto& c : result.cells) {
    out << c.estimator << ',' << c.n_rollouts << ',' << c.n_trials << ',' << c.n_failed;
    for (Eigen::Index i = 0; i < c.bias.size(); ++i) out << ',' << format_number(c.bias[i]);
    out << ',' << format_number(c.bias_norm) << ',' << format_number(c.var_trace) << ','
        << format_number(c.rmse) << ',' << format_number(c.se_bias_norm) << '\n';
  }
}

inline void write_csv(const SweepResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(result, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Inverse of write_csv. Per-component variances are not stored, so only
/// var_trace is restored.
inline SweepResult read_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV");
  const auto header = split(line);
  if (header.size() < 8 || header[0] != "estimator")
    throw ValidationError("unrecognized CSV header");
  SweepResult res;
  res.param_dim = static_cast<Eigen::Index>(header.size()) - 8;
  if (csv_header(res.param_dim) != line) throw ValidationError("unrecognized CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw ValidationError("CSV row has wrong field count");
    CellStats c;
    c.estimator = f[0];
    c.n_rollouts = std::stoi(f[1]);
    c.n_trials = std::stoi(f[2]);
    c.n_failed = std::stoi(f[3]);
    c.bias.resize(res.param_dim);
    for (Eigen::Index i = 0; i < res.param_dim; ++i) c.bias[i] = std::stod(f[4 + i]);
    const std::size_t base = 4 + static_cast<std::size_t>(res.param_dim);
    c.bias_norm = std::stod(f[base]);
    c.var_trace = std::stod(f[base + 1]);
    c.rmse = std::stod(f[base + 2]);
    c.se_bias_norm = std::stod(f[base + 3]);
    res.cells.push_back(std::move(c));
  }
  return res;
}

inline SweepResult read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return read_csv(in);
}

// --- SVG --------------------------------------------------------------------

namespace detail {

struct LogAxis {
  double lo = 1.0, hi = 10.0;  // log10 range
  double px0 = 0.0, px1 = 1.0;

  double map(double v) const {
    const double t = (std::log10(v) - lo) / (hi - lo);
    return px0 + t * (px1 - px0);
  }
};

inline LogAxis make_log_axis(const std::vector<double>& values, double px0, double px1) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values)
    if (v > 0.0 && std::isfinite(v)) {
      lo = std::min(lo, std::log10(v));
      hi = std::max(hi, std::log10(v));
    }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  lo = std::floor(lo);
  hi = std::ceil(hi);
  if (hi <= lo) hi = lo + 1.0;
  return {lo, hi, px0, px1};
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace detail

/// Three log-log panels (|bias|, variance trace, RMSE against rollouts), one
/// polyline per estimator. Non-positive values are drawn at the panel floor.
inline void emit_plot(const SweepResult& result, std::ostream& out) {
  if (result.cells.empty()) throw ValidationError("nothing to plot");
  static const char* kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  struct Panel {
    const char* title;
    double CellStats::*field;
  };
  const Panel panels[] = {{"|bias|", &CellStats::bias_norm},
                          {"variance (trace)", &CellStats::var_trace},
                          {"RMSE", &CellStats::rmse}};
  std::vector<std::string> estimators;
  for (const auto& c : result.cells)
    if (std::find(estimators.begin(), estimators.end(), c.estimator) == estimators.end())
      estimators.push_back(c.estimator);

  const double panel_w = 300, panel_h = 220, margin_l = 70, margin_t = 40, gap = 40, margin_b = 90;
  const double width = margin_l + 3 * (panel_w + gap), height = margin_t + panel_h + margin_b;

  std::vector<double> xs;
  for (const auto& c : result.cells) xs.push_back(c.n_rollouts);

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int p = 0; p < 3; ++p) {
    const double x0 = margin_l + p * (panel_w + gap), y0 = margin_t;
    std::vector<double> ys;
    for (const auto& c : result.cells) ys.push_back(c.*(panels[p].field));
    const auto xa = detail::make_log_axis(xs, x0, x0 + panel_w);
    const auto ya = detail::make_log_axis(ys, y0 + panel_h, y0);
    const double floor_value = std::pow(10.0, ya.lo);
    out << "<g class=\"panel\" id=\"panel-" << p << "\">\n";
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\""
        << panel_h << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">" << detail::xml_escape(panels[p].title)
        << "</text>\n";
    for (double e = xa.lo; e <= xa.hi + 1e-9; e += 1.0) {
      const double px = xa.map(std::pow(10.0, e));
      out << "<line x1=\"" << px << "\" y1=\"" << y0 + panel_h << "\" x2=\"" << px << "\" y2=\""
          << y0 + panel_h + 4 << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << px << "\" y=\"" << y0 + panel_h + 16
          << "\" text-anchor=\"middle\">1e" << static_cast<int>(e) << "</text>\n";
    }
    for (double e = ya.lo; e <= ya.hi + 1e-9; e += 1.0) {
      const double py = ya.map(std::pow(10.0, e));
      out << "<line x1=\"" << x0 - 4 << "\" y1=\"" << py << "\" x2=\"" << x0 << "\" y2=\"" << py
          << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">1e"
          << static_cast<int>(e) << "</text>\n";
    }
    out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 + panel_h + 34
        << "\" text-anchor=\"middle\">rollouts</text>\n";
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const char* color = kColors[e % 6];
      std::ostringstream pts;
      std::vector<std::pair<double, double>> marks;
      for (const auto& c : result.cells) {
        if (c.estimator != estimators[e]) continue;
        const double v = std::max(c.*(panels[p].field), floor_value);
        const double px = xa.map(c.n_rollouts), py = ya.map(v);
        pts << (marks.empty() ? "" : " ") << px << ',' << py;
        marks.emplace_back(px, py);
      }
      out << "<polyline class=\"series\" data-estimator=\"" << detail::xml_escape(estimators[e])
          << "\" points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n";
      for (const auto& [px, py] : marks)
        out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"2.5\" fill=\"" << color
            << "\"/>\n";
    }
    out << "</g>\n";
  }
  const double ly = margin_t + panel_h + 60;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    const double lx = margin_l + e * 160.0;
    out << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 24 << "\" y2=\"" << ly
        << "\" stroke=\"" << kColors[e % 6] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 30 << "\" y=\"" << ly + 4 << "\">"
        << detail::xml_escape(estimators[e]) << "</text>\n";
  }
  out << "</svg>\n";
}

inline void emit_plot(const SweepResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  emit_plot(result, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace compatpg
