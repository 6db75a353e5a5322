#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/cartpole.hpp"
#include "nfqi/mdp.hpp"
#include "nfqi/qfunction.hpp"

namespace nfqi {

/// Which transitions the first NFQI stage regresses on.
enum class Stage1Samples { all, background };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage1Samples, {{Stage1Samples::all, "all"}, {Stage1Samples::background, "background"}})

struct TrainConfig {
  double gamma = 0.95;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs_per_iteration = 1;
  int max_fqi_iterations = 300;
  /// Iteration cap for foreground stages; negative means max_fqi_iterations. May be 0.
  int foreground_max_iterations = -1;
  int convergence_successes = 3;
  /// Probe the simulator every this many iterations.
  int eval_every = 1;
  std::uint64_t seed = 0;
  bool normalize_inputs = true;
  Stage1Samples stage1_samples = Stage1Samples::all;
  int plateau_window = 10;
  double plateau_tolerance = 1e-4;
  /// On hitting the iteration cap with a probe attached, return the iterate
  /// whose last convergence_successes probes survived longest on average.
  bool restore_best_probe = false;
  /// When positive, restore_best_probe scores each iterate by its mean
  /// survival over this many fixed probe starts instead of recent probes.
  int selection_rollouts = 0;

  int foreground_cap() const { return foreground_max_iterations < 0 ? max_fqi_iterations : foreground_max_iterations; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, gamma, learning_rate, batch_size, epochs_per_iteration,
                                                max_fqi_iterations, foreground_max_iterations, convergence_successes,
                                                eval_every, seed, normalize_inputs, stage1_samples, plateau_window,
                                                plateau_tolerance, restore_best_probe,
                                                selection_rollouts)

inline void validate(const TrainConfig& c) {
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  if (!(c.learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (c.batch_size < 1 || c.epochs_per_iteration < 1 || c.max_fqi_iterations < 1 || c.convergence_successes < 1 ||
      c.eval_every < 1 || c.plateau_window < 1) {
    throw Error("training counts must be at least 1");
  }
  if (c.selection_rollouts < 0) throw Error("selection_rollouts must be non-negative");
}

enum class ConvergenceReason { success_criterion, loss_plateau, iteration_cap };

NLOHMANN_JSON_SERIALIZE_ENUM(ConvergenceReason, {{ConvergenceReason::success_criterion, "success-criterion"},
                                                 {ConvergenceReason::loss_plateau, "loss-plateau"},
                                                 {ConvergenceReason::iteration_cap, "iteration-cap"}})

struct StageReport {
  std::string name;
  int iterations = 0;
  double final_loss = 0.0;
  ConvergenceReason reason = ConvergenceReason::iteration_cap;
  std::vector<double> loss_trace;
  /// Steps survived by each simulator probe (empty without a probe).
  std::vector<int> probe_steps;
  /// Iteration whose parameters were returned (1-based).
  int selected_iteration = 0;
  /// Score of the restored iterate under restore_best_probe, else -1.
  double selection_score = -1.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StageReport, name, iterations, final_loss, reason, loss_trace, probe_steps,
                                   selected_iteration, selection_score)

struct TrainReport {
  std::vector<StageReport> stages;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainReport, stages)

/// Simulator attached to a training run for convergence testing. `groups`
/// lists the environments a probe must survive; only train_fqi reads it,
/// the staged trainers pick the environment matching each stage.
struct EnvProbe {
  cartpole::Params params;
  std::vector<Group> groups{Group::background};
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// argmax over actions of f(s, a, z); ties go to the lowest action id.
template <QFunction M>
int greedy_action(const M& model, std::span<const double> state, Group z) {
  int best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < model.num_actions(); ++a) {
    const double v = forward(model, state, a, z);
    if (v > best_value) {
      best_value = v;
      best = a;
    }
  }
  return best;
}

/// Greedy policy with the group label fixed to z, whatever environment it runs in.
template <QFunction M>
Policy greedy_policy(const M& model, Group z) {
  auto shared = std::make_shared<const M>(model);
  return [shared, z](const State& s, Group) { return greedy_action(*shared, s, z); };
}

/// Greedy policy that reads the group label of the environment it runs in.
template <QFunction M>
Policy nested_policy(const M& model) {
  auto shared = std::make_shared<const M>(model);
  return [shared](const State& s, Group z) { return greedy_action(*shared, s, z); };
}

// ---------------------------------------------------------------------------
// Bellman targets and regression
// ---------------------------------------------------------------------------

namespace detail {

/// Encoded regression problem for one stage: current inputs (n x d), and
/// next-state inputs for every action (n x A x d).
struct Design {
  std::size_t n = 0;
  std::size_t dim = 0;
  int num_actions = 0;
  std::vector<double> inputs;
  std::vector<double> next_inputs;
  std::vector<double> rewards;
  std::vector<char> terminal;
  std::vector<Group> groups;

  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * dim, dim}; }
  std::span<const double> next_input(std::size_t i, int a) const {
    return {next_inputs.data() + (i * static_cast<std::size_t>(num_actions) + static_cast<std::size_t>(a)) * dim, dim};
  }
};

inline Design make_design(std::span<const Transition> transitions, int state_dim, int num_actions,
                          std::optional<Group> z_override) {
  Design d;
  d.n = transitions.size();
  d.dim = static_cast<std::size_t>(state_dim + num_actions);
  d.num_actions = num_actions;
  d.inputs.resize(d.n * d.dim);
  d.next_inputs.resize(d.n * d.dim * static_cast<std::size_t>(num_actions));
  for (std::size_t i = 0; i < d.n; ++i) {
    const Transition& t = transitions[i];
    if (t.state.size() != static_cast<std::size_t>(state_dim) ||
        t.next_state.size() != static_cast<std::size_t>(state_dim)) {
      throw Error("state dimension mismatch");
    }
    encode_input(t.state, t.action, num_actions, std::span<double>(d.inputs.data() + i * d.dim, d.dim));
    for (int a = 0; a < num_actions; ++a) {
      auto out = std::span<double>(
          d.next_inputs.data() + (i * static_cast<std::size_t>(num_actions) + static_cast<std::size_t>(a)) * d.dim,
          d.dim);
      encode_input(t.next_state, a, num_actions, out);
    }
    d.rewards.push_back(t.reward);
    d.terminal.push_back(t.terminal ? 1 : 0);
    d.groups.push_back(z_override.value_or(t.group));
  }
  return d;
}

template <QFunction M>
std::vector<double> targets(const M& model, const Design& d, double gamma) {
  std::vector<double> y(d.n);
  for (std::size_t i = 0; i < d.n; ++i) {
    if (d.terminal[i] || gamma == 0.0) {
      y[i] = d.rewards[i];
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < d.num_actions; ++a) best = std::max(best, model.value(d.next_input(i, a), d.groups[i]));
    y[i] = d.rewards[i] + gamma * best;
  }
  return y;
}

template <QFunction M>
double mean_squared_error(const M& model, const Design& d, std::span<const double> y) {
  if (d.n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) {
    const double e = model.value(d.input(i), d.groups[i]) - y[i];
    s += e * e;
  }
  return s / static_cast<double>(d.n);
}

template <QFunction M>
double regress(M& model, const Design& d, std::span<const double> y, const TrainConfig& cfg, ParamMask mask,
               std::uint64_t seed) {
  if (y.size() != d.n) throw Error("target count does not match transition count");
  if (d.n == 0) return 0.0;
  SeedStream rng(seed);
  std::vector<std::size_t> order(d.n);
  std::vector<double> grad(model.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs_per_iteration; ++epoch) {
    for (std::size_t i = 0; i < d.n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < d.n; start += batch) {
      const std::size_t stop = std::min(d.n, start + batch);
      const double weight = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        model.add_loss_gradient(d.input(i), d.groups[i], y[i], weight, grad);
      }
      sgd_update(model, grad, cfg.learning_rate, mask);
    }
  }
  return mean_squared_error(model, d, y);
}

}  // namespace detail

/// r + gamma * max_a' f(s', a', z) per transition, or r at terminal
/// transitions. z is the transition's own label unless overridden.
template <QFunction M>
std::vector<double> bellman_targets(const M& model, std::span<const Transition> transitions, double gamma,
                                    std::optional<Group> z_override = std::nullopt) {
  const auto d = detail::make_design(transitions, model.state_dim(), model.num_actions(), z_override);
  return detail::targets(model, d, gamma);
}

/// epochs_per_iteration passes of mini-batch SGD on squared error, batches
/// drawn from a shuffle seeded by cfg.seed. Returns the post-update MSE.
template <QFunction M>
double regression_step(M& model, std::span<const Transition> transitions, std::span<const double> targets,
                       const TrainConfig& cfg, ParamMask mask, std::optional<Group> z_override = std::nullopt) {
  const auto d = detail::make_design(transitions, model.state_dim(), model.num_actions(), z_override);
  return detail::regress(model, d, targets, cfg, mask, cfg.seed);
}

/// Shuffle seed used by the k-th regression of stage `stage_index`.
inline std::uint64_t iteration_seed(std::uint64_t seed, int stage_index, int iteration) {
  return derive_seed(derive_seed(seed, 0x57a9e000ULL + static_cast<std::uint64_t>(stage_index)),
                     static_cast<std::uint64_t>(iteration));
}

// ---------------------------------------------------------------------------
// FQI loop
// ---------------------------------------------------------------------------

namespace detail {

struct StageProbe {
  cartpole::Params params;
  std::vector<Group> environments;
  Group policy_group = Group::background;
  bool use_env_group = false;
  std::uint64_t seed = 0;
};

struct StageSpec {
  std::string name;
  int index = 0;
  std::optional<Group> z_override;
  ParamMask mask;
  int max_iterations = 0;
  std::optional<StageProbe> probe;
};

/// One success-or-failure probe: a rollout from a fresh random start in each
/// listed environment; returns the minimum steps survived.
template <QFunction M>
int probe_once(const M& model, const StageProbe& probe, int iteration) {
  int worst = std::numeric_limits<int>::max();
  for (std::size_t e = 0; e < probe.environments.size(); ++e) {
    const Group env = probe.environments[e];
    const Group z = probe.use_env_group ? env : probe.policy_group;
    SeedStream rng(derive_seed(probe.seed, static_cast<std::uint64_t>(iteration) * 4 + e));
    const Policy pi = [&model, z](const State& s, Group) { return greedy_action(model, s, z); };
    worst = std::min(worst, cartpole::rollout_policy(pi, env, probe.params, rng));
  }
  return worst;
}

/// Mean over n rollouts from starts that are the same at every iteration, so
/// iterates are compared on common random numbers.
template <QFunction M>
double selection_score(const M& model, const StageProbe& probe, int n) {
  double total = 0.0;
  for (std::size_t e = 0; e < probe.environments.size(); ++e) {
    const Group env = probe.environments[e];
    const Group z = probe.use_env_group ? env : probe.policy_group;
    const Policy pi = [&model, z](const State& s, Group) { return greedy_action(model, s, z); };
    for (int i = 0; i < n; ++i) {
      SeedStream rng(derive_seed(derive_seed(probe.seed, 0x5e1ec7ULL + e), static_cast<std::uint64_t>(i)));
      total += cartpole::rollout_policy(pi, env, probe.params, rng);
    }
  }
  return total / static_cast<double>(n * static_cast<int>(probe.environments.size()));
}

template <QFunction M>
StageReport run_stage(M& model, std::span<const Transition> transitions, const StageSpec& spec,
                      const TrainConfig& cfg) {
  StageReport report;
  report.name = spec.name;
  const auto d = make_design(transitions, model.state_dim(), model.num_actions(), spec.z_override);
  int successes = 0;
  std::optional<M> best;
  double best_score = -1.0;
  int best_iteration = 0;
  for (int k = 0; k < spec.max_iterations; ++k) {
    const auto y = targets(model, d, cfg.gamma);
    const double loss = regress(model, d, y, cfg, spec.mask, iteration_seed(cfg.seed, spec.index, k));
    report.loss_trace.push_back(loss);
    report.iterations = k + 1;
    report.final_loss = loss;

    if (spec.probe) {
      if ((k + 1) % cfg.eval_every == 0) {
        const int steps = probe_once(model, *spec.probe, k);
        report.probe_steps.push_back(steps);
        successes = steps >= spec.probe->params.max_steps ? successes + 1 : 0;
        if (successes >= cfg.convergence_successes) {
          report.reason = ConvergenceReason::success_criterion;
          report.selected_iteration = k + 1;
          return report;
        }
        if (cfg.restore_best_probe) {
          double score = 0.0;
          if (cfg.selection_rollouts > 0) {
            score = selection_score(model, *spec.probe, cfg.selection_rollouts);
          } else {
            const auto& ps = report.probe_steps;
            const std::size_t w = std::min(ps.size(), static_cast<std::size_t>(cfg.convergence_successes));
            for (std::size_t i = ps.size() - w; i < ps.size(); ++i) score += ps[i];
            score /= static_cast<double>(cfg.convergence_successes);
          }
          if (score > best_score) {
            best_score = score;
            best = model;
            best_iteration = k + 1;
          }
        }
      }
    } else if (k >= cfg.plateau_window) {
      const double before = report.loss_trace[static_cast<std::size_t>(k - cfg.plateau_window)];
      const double scale = std::max(std::abs(before), std::numeric_limits<double>::min());
      if ((before - loss) / scale < cfg.plateau_tolerance) {
        report.reason = ConvergenceReason::loss_plateau;
        report.selected_iteration = k + 1;
        return report;
      }
    }
  }
  report.reason = ConvergenceReason::iteration_cap;
  report.selected_iteration = report.iterations;
  if (best) {
    model = std::move(*best);
    report.selected_iteration = best_iteration;
    report.selection_score = best_score;
  }
  return report;
}

}  // namespace detail

template <QFunction M>
struct FitResult {
  M model;
  TrainReport report;
};

template <QFunction M>
struct NestedFitResult {
  M model;
  Policy background_policy;
  Policy foreground_policy;
  TrainReport report;
};

template <QFunction M>
struct TransferFitResult {
  M model;
  Policy policy;
  TrainReport report;
};

/// Default network initialisation used by the convenience trainers.
inline NestedQModel default_model(const TrainConfig& cfg, NestedArch arch = {}) {
  return init_params(arch, derive_seed(cfg.seed, 0x1417ULL));
}

/// Group-agnostic FQI: every sample is treated as foreground (z = 1), so all
/// layers are used and trained.
template <QFunction M>
FitResult<M> train_fqi(M model, std::span<const Transition> transitions, const std::optional<EnvProbe>& probe,
                       const TrainConfig& cfg) {
  validate(cfg);
  if (transitions.empty()) throw Error("cannot train on an empty transition set");
  if (cfg.normalize_inputs) model = fit_norm_stats(std::move(model), transitions);
  detail::StageSpec spec{"fqi", 0, Group::foreground, ParamMask::all(), cfg.max_fqi_iterations, std::nullopt};
  if (probe) spec.probe = detail::StageProbe{probe->params, probe->groups, Group::foreground, false, probe->seed};
  FitResult<M> out{std::move(model), {}};
  out.report.stages.push_back(detail::run_stage(out.model, transitions, spec, cfg));
  out.model.stage = "fqi";
  return out;
}

inline FitResult<NestedQModel> train_fqi(std::span<const Transition> transitions,
                                         const std::optional<EnvProbe>& probe, const TrainConfig& cfg,
                                         NestedArch arch = {}) {
  return train_fqi(default_model(cfg, std::move(arch)), transitions, probe, cfg);
}

/// Two-stage nested training. Stage 1 fits theta_s on all samples with z
/// forced to 0; stage 2 fits theta_f on foreground samples with z = 1 and
/// theta_s frozen. Foreground Q is g_s + g_f.
template <QFunction M>
NestedFitResult<M> train_nfqi(M model, const NestedDataset& ds, const std::optional<EnvProbe>& probe,
                              const TrainConfig& cfg) {
  validate(cfg);
  if (ds.background.empty() || ds.foreground.empty()) throw Error("both groups need at least one trajectory");
  const auto all = flatten(ds);
  const auto fg = flatten(ds.foreground);
  const auto bg = flatten(ds.background);
  if (all.empty() || fg.empty() || bg.empty()) throw Error("both groups need at least one transition");
  if (cfg.normalize_inputs) model = fit_norm_stats(std::move(model), all);

  std::optional<detail::StageProbe> p1, p2;
  if (probe) {
    p1 = detail::StageProbe{probe->params, {Group::background}, Group::background, false, derive_seed(probe->seed, 1)};
    p2 = detail::StageProbe{probe->params, {Group::foreground}, Group::foreground, false, derive_seed(probe->seed, 2)};
  }
  TrainReport report;
  const auto& stage1_data = cfg.stage1_samples == Stage1Samples::all ? all : bg;
  report.stages.push_back(detail::run_stage(
      model, stage1_data, {"shared", 1, Group::background, ParamMask::shared_only(), cfg.max_fqi_iterations, p1}, cfg));
  report.stages.push_back(detail::run_stage(
      model, fg, {"foreground", 2, Group::foreground, ParamMask::foreground_only(), cfg.foreground_cap(), p2}, cfg));
  model.stage = "nfqi";
  Policy pb = greedy_policy(model, Group::background);
  Policy pf = greedy_policy(model, Group::foreground);
  return {std::move(model), std::move(pb), std::move(pf), std::move(report)};
}

inline NestedFitResult<NestedQModel> train_nfqi(const NestedDataset& ds, const std::optional<EnvProbe>& probe,
                                                const TrainConfig& cfg, NestedArch arch = {}) {
  return train_nfqi(default_model(cfg, std::move(arch)), ds, probe, cfg);
}

/// Fine-tuning baseline: theta_s on background samples, then theta_f on
/// foreground samples with theta_s frozen. Inference ignores the group label
/// and always uses every layer.
template <QFunction M>
TransferFitResult<M> train_transfer(M model, const NestedDataset& ds, const std::optional<EnvProbe>& probe,
                                    const TrainConfig& cfg) {
  validate(cfg);
  if (ds.background.empty() || ds.foreground.empty()) throw Error("both groups need at least one trajectory");
  const auto bg = flatten(ds.background);
  const auto fg = flatten(ds.foreground);
  if (bg.empty() || fg.empty()) throw Error("both groups need at least one transition");
  if (cfg.normalize_inputs) model = fit_norm_stats(std::move(model), flatten(ds));

  std::optional<detail::StageProbe> p1, p2;
  if (probe) {
    p1 = detail::StageProbe{probe->params, {Group::background}, Group::background, false, derive_seed(probe->seed, 3)};
    p2 = detail::StageProbe{probe->params, {Group::foreground}, Group::foreground, false, derive_seed(probe->seed, 4)};
  }
  TrainReport report;
  report.stages.push_back(detail::run_stage(
      model, bg, {"pretrain", 3, Group::background, ParamMask::shared_only(), cfg.max_fqi_iterations, p1}, cfg));
  report.stages.push_back(detail::run_stage(
      model, fg, {"finetune", 4, Group::foreground, ParamMask::foreground_only(), cfg.foreground_cap(), p2}, cfg));
  model.stage = "transfer";
  Policy pi = greedy_policy(model, Group::foreground);
  return {std::move(model), std::move(pi), std::move(report)};
}

inline TransferFitResult<NestedQModel> train_transfer(const NestedDataset& ds, const std::optional<EnvProbe>& probe,
                                                      const TrainConfig& cfg, NestedArch arch = {}) {
  return train_transfer(default_model(cfg, std::move(arch)), ds, probe, cfg);
}

/// Loss trace rows as CSV: iteration,stage,loss.
inline std::string loss_trace_csv(const TrainReport& report) {
  std::string out = "iteration,stage,loss\n";
  for (const auto& st : report.stages) {
    for (std::size_t i = 0; i < st.loss_trace.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", st.loss_trace[i]);
      out += std::to_string(i + 1) + "," + st.name + "," + buf + "\n";
    }
  }
  return out;
}

}  // namespace nfqi
