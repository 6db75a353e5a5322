#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/cartpole.hpp"
#include "nfqi/clinical.hpp"
#include "nfqi/evaluation.hpp"
#include "nfqi/explain.hpp"
#include "nfqi/mdp.hpp"
#include "nfqi/qfunction.hpp"
#include "nfqi/training.hpp"

namespace nfqi::experiments {

inline constexpr const char* kVersion = "0.1.0";

struct AttributionSettings {
  ShapleyEstimator estimator = ShapleyEstimator::exact;
  AttributionTarget target = AttributionTarget::greedy_action;
  int n_permutations = 1000;
  /// Per group; 0 means every held-out transition.
  int max_samples = 200;
  /// Explain the same held-out transitions (both groups pooled) under each
  /// label, so group differences come from the model rather than the samples.
  bool pooled = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttributionSettings, estimator, target, n_permutations, max_samples,
                                                pooled)

struct ClinicalSettings {
  int n_background = 400;
  int n_foreground = 123;
  int steps = 12;
  clinical::RewardParams reward;
  clinical::HeatmapGrid grid;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClinicalSettings, n_background, n_foreground, steps, reward, grid)

struct ExperimentConfig {
  cartpole::Params environment = [] {
    cartpole::Params p;
    p.foreground_force = 5.0;
    p.max_steps = 500;
    return p;
  }();
  std::vector<double> c_grid{0.0, 5.0, 10.0};
  int n_background = 200;
  int n_foreground = 50;
  int total_trajectories = 400;
  std::vector<double> fractions{0.1, 0.3, 0.5};
  double train_fraction = 0.8;
  TrainConfig train;
  int eval_repetitions = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Attach the simulator for success-based convergence.
  bool use_probe = true;
  CiMethod ci_method = CiMethod::normal;
  AttributionSettings attribution;
  ClinicalSettings clinical;
  std::string output_dir = "out";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, environment, c_grid, n_background, n_foreground,
                                                total_trajectories, fractions, train_fraction, train,
                                                eval_repetitions, seeds, use_probe, ci_method, attribution, clinical,
                                                output_dir)

inline void validate(const ExperimentConfig& c) {
  cartpole::validate(c.environment);
  validate(c.train);
  if (c.c_grid.empty() || c.fractions.empty() || c.seeds.empty()) throw Error("experiment grids must be nonempty");
  for (double v : c.c_grid) {
    if (!(v >= 0.0)) throw Error("c grid values must be non-negative");
  }
  for (double f : c.fractions) {
    if (!(f > 0.0 && f < 1.0)) throw Error("foreground fractions must lie in (0, 1)");
  }
  if (c.n_background < 1 || c.n_foreground < 1 || c.total_trajectories < 2) throw Error("dataset sizes must be positive");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw Error("train_fraction must lie in (0, 1)");
  if (c.eval_repetitions < 1) throw Error("eval_repetitions must be at least 1");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw Error("seeds must be distinct");
  }
  if (c.clinical.n_background < 1 || c.clinical.n_foreground < 1 || c.clinical.steps < 1) {
    throw Error("clinical cohort sizes must be positive");
  }
  clinical::validate(c.clinical.reward);
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c = j.get<ExperimentConfig>();
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct EvalRow {
  std::uint64_t seed = 0;
  double c = 0.0;
  double fraction = 0.0;
  std::string model = "network";
  std::string algorithm;
  EvalReport report;
};

struct MatchRow {
  std::uint64_t seed = 0;
  std::string algorithm;
  Group group = Group::background;
  std::size_t n = 0;
  MatchReport report;
};

struct RankingRow {
  std::uint64_t seed = 0;
  std::vector<std::string> background;
  std::vector<std::string> foreground;
};

struct ExperimentResult {
  std::string command;
  std::vector<EvalRow> evals;
  std::vector<MatchRow> matches;
  std::vector<RankingRow> rankings;
  /// File name -> contents, written under the output directory.
  std::map<std::string, std::string> files;
  nlohmann::json summary = nlohmann::json::object();

  /// Looks up the unique row matching the filters.
  const EvalRow& find(std::uint64_t seed, const std::string& algorithm, Group group, double c = -1.0,
                      double fraction = -1.0, const std::string& model = "network") const {
    for (const auto& r : evals) {
      if (r.seed == seed && r.algorithm == algorithm && r.report.group == group && r.model == model &&
          (c < 0 || r.c == c) && (fraction < 0 || r.fraction == fraction)) {
        return r;
      }
    }
    throw Error("no result row for " + algorithm);
  }
};

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// FNV-1a over the canonical config dump.
inline std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json manifest(const ExperimentResult& r, const ExperimentConfig& cfg) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& [name, _] : r.files) files.push_back(name);
  return {{"command", r.command},
          {"config_hash", config_hash(nlohmann::json(cfg))},
          {"seeds", cfg.seeds},
          {"version", kVersion},
          {"compiler", __VERSION__},
          {"cxx_standard", static_cast<long>(__cplusplus)},
          {"outputs", files}};
}

inline void write_outputs(const ExperimentResult& r, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << text;
  };
  for (const auto& [name, text] : r.files) put(name, text);
  put("summary.json", r.summary.dump(2) + "\n");
  put("manifest.json", manifest(r, cfg).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

namespace detail {

enum Stream : std::uint64_t { kData = 1, kSplit, kTrain, kProbe, kEval, kRelabel, kAttrib };

inline std::uint64_t stream(std::uint64_t seed, Stream s, std::uint64_t sub = 0) {
  return derive_seed(derive_seed(seed, s), sub);
}

inline TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed, std::uint64_t algorithm) {
  TrainConfig t = cfg.train;
  t.seed = stream(seed, kTrain, algorithm);
  return t;
}

inline std::optional<EnvProbe> probe(const ExperimentConfig& cfg, const cartpole::Params& env, std::uint64_t seed,
                                     std::vector<Group> groups) {
  if (!cfg.use_probe) return std::nullopt;
  return EnvProbe{env, std::move(groups), stream(seed, kProbe)};
}

/// Every algorithm sees the same start states in a given environment.
inline EvalReport evaluate(const ExperimentConfig& cfg, const Policy& pi, Group z, const cartpole::Params& env,
                           std::uint64_t seed, const std::string& tag) {
  return evaluate_policy(pi, z, env, cfg.eval_repetitions, stream(seed, kEval, static_cast<std::uint64_t>(as_int(z))),
                         tag, cfg.ci_method);
}

inline cartpole::Params with_force(cartpole::Params p, double c) {
  p.foreground_force = c;
  return p;
}

inline NestedDataset training_split(const NestedDataset& ds, const ExperimentConfig& cfg, std::uint64_t seed,
                                    NestedDataset* test = nullptr) {
  auto [train, held_out] = split_train_test(ds, cfg.train_fraction, stream(seed, kSplit));
  if (test) *test = std::move(held_out);
  return train;
}

inline std::string eval_csv(const std::vector<EvalRow>& rows, const std::vector<std::string>& columns) {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
  out += "\n";
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const auto& col = columns[i];
      std::string v;
      if (col == "seed") v = std::to_string(r.seed);
      else if (col == "c") v = fmt(r.c);
      else if (col == "fraction") v = fmt(r.fraction);
      else if (col == "model") v = r.model;
      else if (col == "algorithm") v = r.algorithm;
      else if (col == "group") v = std::to_string(as_int(r.report.group));
      else if (col == "mean") v = fmt(r.report.mean);
      else if (col == "ci_low") v = fmt(r.report.ci95_low);
      else if (col == "ci_high") v = fmt(r.report.ci95_high);
      else if (col == "n") v = std::to_string(r.report.n());
      else throw Error("unknown column " + col);
      line += (i ? "," : "") + v;
    }
    out += line + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const TrainReport& r) { return nlohmann::json(r); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// FQI trained separately per group versus NFQI on the same nested data.
inline ExperimentResult run_benchmark(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "benchmark";
  const auto& env = cfg.environment;
  nlohmann::json training = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const auto ds = cartpole::collect_dataset(static_cast<std::size_t>(cfg.n_background),
                                              static_cast<std::size_t>(cfg.n_foreground), env, stream(seed, kData));
    const auto train = training_split(ds, cfg, seed);

    for (Group z : {Group::background, Group::foreground}) {
      const auto fit = train_fqi(flatten(train.part(z)), probe(cfg, env, seed, {z}), train_config(cfg, seed, 1 + as_int(z)));
      out.evals.push_back({seed, env.foreground_force, 0.0, "network", "fqi",
                           evaluate(cfg, greedy_policy(fit.model, Group::foreground), z, env, seed, "fqi")});
      training.push_back({{"seed", seed}, {"algorithm", "fqi"}, {"group", as_int(z)}, {"report", fit.report}});
    }
    const auto nf = train_nfqi(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
    training.push_back({{"seed", seed}, {"algorithm", "nfqi"}, {"report", nf.report}});
    out.evals.push_back({seed, env.foreground_force, 0.0, "network", "nfqi",
                         evaluate(cfg, nf.background_policy, Group::background, env, seed, "nfqi")});
    out.evals.push_back({seed, env.foreground_force, 0.0, "network", "nfqi",
                         evaluate(cfg, nf.foreground_policy, Group::foreground, env, seed, "nfqi")});
  }
  out.files["benchmark.csv"] = eval_csv(out.evals, {"seed", "algorithm", "group", "mean", "ci_low", "ci_high", "n"});
  out.summary = {{"experiment", "benchmark"}, {"c", env.foreground_force}, {"training", training}};
  return out;
}

/// NFQI, group-agnostic FQI and transfer learning for each foreground force c.
inline ExperimentResult run_force_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "sweep-force";
  nlohmann::json training = nlohmann::json::array();
  for (double c : cfg.c_grid) {
    const auto env = with_force(cfg.environment, c);
    for (std::uint64_t seed : cfg.seeds) {
      const auto ds = cartpole::collect_dataset(static_cast<std::size_t>(cfg.n_background),
                                                static_cast<std::size_t>(cfg.n_foreground), env, stream(seed, kData));
      const auto train = training_split(ds, cfg, seed);
      const auto all = flatten(train);

      const auto nf = train_nfqi(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
      const auto joint = train_fqi(all, probe(cfg, env, seed, {Group::background, Group::foreground}),
                                   train_config(cfg, seed, 4));
      const auto tl = train_transfer(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 5));
      const Policy joint_pi = greedy_policy(joint.model, Group::foreground);
      for (Group z : {Group::background, Group::foreground}) {
        const Policy& nf_pi = z == Group::foreground ? nf.foreground_policy : nf.background_policy;
        out.evals.push_back({seed, c, 0.0, "network", "nfqi", evaluate(cfg, nf_pi, z, env, seed, "nfqi")});
        out.evals.push_back({seed, c, 0.0, "network", "fqi_joint", evaluate(cfg, joint_pi, z, env, seed, "fqi_joint")});
        out.evals.push_back({seed, c, 0.0, "network", "transfer", evaluate(cfg, tl.policy, z, env, seed, "transfer")});
      }
      training.push_back({{"seed", seed}, {"c", c}, {"nfqi", nf.report}, {"fqi_joint", joint.report},
                          {"transfer", tl.report}});
    }
  }
  out.files["force_sweep.csv"] =
      eval_csv(out.evals, {"seed", "c", "algorithm", "group", "mean", "ci_low", "ci_high", "n"});
  out.summary = {{"experiment", "sweep-force"}, {"c_grid", cfg.c_grid}, {"training", training}};
  return out;
}

/// NFQI versus group-agnostic FQI with a fixed total of trajectories and a
/// varying foreground share. Every generated trajectory is used for training.
inline ExperimentResult run_imbalance_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "sweep-imbalance";
  const auto& env = cfg.environment;
  nlohmann::json sizes = nlohmann::json::array();
  nlohmann::json training = nlohmann::json::array();
  for (double fraction : cfg.fractions) {
    const auto n_fg = static_cast<std::size_t>(std::llround(fraction * cfg.total_trajectories));
    const std::size_t n_bg = static_cast<std::size_t>(cfg.total_trajectories) - n_fg;
    sizes.push_back({{"fraction", fraction}, {"background", n_bg}, {"foreground", n_fg}});
    for (std::uint64_t seed : cfg.seeds) {
      const auto train = cartpole::collect_dataset(n_bg, n_fg, env, stream(seed, kData));
      const auto nf = train_nfqi(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
      const auto joint = train_fqi(flatten(train), probe(cfg, env, seed, {Group::background, Group::foreground}),
                                   train_config(cfg, seed, 4));
      const Policy joint_pi = greedy_policy(joint.model, Group::foreground);
      for (Group z : {Group::background, Group::foreground}) {
        const Policy& nf_pi = z == Group::foreground ? nf.foreground_policy : nf.background_policy;
        out.evals.push_back({seed, env.foreground_force, fraction, "network", "nfqi",
                             evaluate(cfg, nf_pi, z, env, seed, "nfqi")});
        out.evals.push_back({seed, env.foreground_force, fraction, "network", "fqi_joint",
                             evaluate(cfg, joint_pi, z, env, seed, "fqi_joint")});
      }
      training.push_back({{"seed", seed}, {"fraction", fraction}, {"nfqi", nf.report}, {"fqi_joint", joint.report}});
    }
  }
  out.files["imbalance_sweep.csv"] =
      eval_csv(out.evals, {"seed", "fraction", "algorithm", "group", "mean", "ci_low", "ci_high", "n"});
  out.summary = {{"experiment", "sweep-imbalance"}, {"total_trajectories", cfg.total_trajectories}, {"splits", sizes},
                 {"training", training}};
  return out;
}

/// Attribution of a nested model on held-out transitions of each group, with
/// the mean background training input as reference.
inline std::vector<AttributionReport> attribute_groups(const NestedQModel& model, const NestedDataset& train,
                                                       const NestedDataset& test, const AttributionSettings& s,
                                                       std::uint64_t seed) {
  AttributionConfig ac;
  ac.estimator = s.estimator;
  ac.target = s.target;
  ac.n_permutations = s.n_permutations;
  ac.seed = seed;
  ac.references = {mean_reference(flatten(train.background), model.num_actions())};
  const auto layout = model.state_dim() == cartpole::kStateDim && model.num_actions() == cartpole::kNumActions
                          ? cartpole_features()
                          : FeatureLayout::state_and_action(model.state_dim(), model.num_actions());
  std::vector<AttributionReport> reports;
  for (Group z : {Group::background, Group::foreground}) {
    auto samples = s.pooled ? flatten(test) : flatten(test.part(z));
    if (samples.empty()) samples = s.pooled ? flatten(train) : flatten(train.part(z));
    if (s.max_samples > 0 && samples.size() > static_cast<std::size_t>(s.max_samples)) {
      samples.resize(static_cast<std::size_t>(s.max_samples));
    }
    reports.push_back(attribute_dataset(model, samples, z, ac, layout));
  }
  return reports;
}

/// Single-environment data with randomly permuted group labels, fitted with NFQI.
inline ExperimentResult run_structureless(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "structureless";
  const auto env = with_force(cfg.environment, 0.0);
  std::vector<AttributionReport> all_reports;
  std::string attribution_rows = "seed,sample_id,group,feature,value\n";
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    // Both "groups" are drawn from the background simulator.
    NestedDataset single;
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n_background + cfg.n_foreground); ++i) {
      SeedStream rng(derive_seed(stream(seed, kData), i));
      auto traj = cartpole::collect_random_trajectory(Group::background, env, rng);
      if (i >= static_cast<std::size_t>(cfg.n_background)) {
        traj.group = Group::foreground;
        for (auto& t : traj.steps) t.group = Group::foreground;
      }
      single.part(traj.group).push_back(std::move(traj));
    }
    const auto ds = structureless_relabel(single, stream(seed, kRelabel));
    NestedDataset test;
    const auto train = training_split(ds, cfg, seed, &test);
    const auto nf = train_nfqi(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
    // Both policies run in the same (background) simulator.
    out.evals.push_back({seed, 0.0, 0.0, "network", "nfqi",
                         evaluate(cfg, nf.background_policy, Group::background, env, seed, "nfqi_background")});
    EvalReport fg = evaluate(cfg, nf.foreground_policy, Group::background, env, seed, "nfqi_foreground");
    fg.group = Group::foreground;
    out.evals.push_back({seed, 0.0, 0.0, "network", "nfqi", fg});

    const auto reports = attribute_groups(nf.model, train, test, cfg.attribution, stream(seed, kAttrib));
    RankingRow rank{seed, {}, {}};
    for (const auto& r : reports) {
      std::vector<std::string> names;
      for (std::size_t j : r.ranking()) names.push_back(r.feature_names[j]);
      (r.group == Group::background ? rank.background : rank.foreground) = names;
      for (std::size_t i = 0; i < r.values.size(); ++i) {
        for (std::size_t j = 0; j < r.values[i].size(); ++j) {
          attribution_rows += std::to_string(seed) + "," + std::to_string(i) + "," + std::to_string(as_int(r.group)) +
                              "," + r.feature_names[j] + "," + fmt(r.values[i][j]) + "\n";
        }
      }
    }
    per_seed.push_back({{"seed", seed},
                        {"attribution", attribution_summary(reports)},
                        {"rankings_identical", rank.background == rank.foreground},
                        {"training", nf.report}});
    out.rankings.push_back(std::move(rank));
  }
  out.files["structureless_eval.csv"] =
      eval_csv(out.evals, {"seed", "group", "mean", "ci_low", "ci_high", "n"});
  out.files["structureless_attribution.csv"] = attribution_rows;
  out.summary = {{"experiment", "structureless"}, {"seeds", per_seed}};
  return out;
}

/// FQI with the linear model versus the network on identical background
/// data, plus NFQI with both models on nested data.
inline ExperimentResult run_model_comparison(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "compare-models";
  const auto& env = cfg.environment;
  nlohmann::json training = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const auto ds = cartpole::collect_dataset(static_cast<std::size_t>(cfg.n_background),
                                              static_cast<std::size_t>(cfg.n_foreground), env, stream(seed, kData));
    const auto train = training_split(ds, cfg, seed);
    const auto bg = flatten(train.background);
    const auto bg_probe = probe(cfg, env, seed, {Group::background});

    const auto lin = train_fqi(LinearQModel(cartpole::kStateDim, cartpole::kNumActions), bg, bg_probe,
                               train_config(cfg, seed, 1));
    const auto net = train_fqi(bg, bg_probe, train_config(cfg, seed, 1));
    out.evals.push_back({seed, env.foreground_force, 0.0, "linear", "fqi",
                         evaluate(cfg, greedy_policy(lin.model, Group::foreground), Group::background, env, seed, "fqi")});
    out.evals.push_back({seed, env.foreground_force, 0.0, "network", "fqi",
                         evaluate(cfg, greedy_policy(net.model, Group::foreground), Group::background, env, seed, "fqi")});

    const auto nf_lin = train_nfqi(LinearQModel(cartpole::kStateDim, cartpole::kNumActions), train,
                                   probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
    const auto nf_net = train_nfqi(train, probe(cfg, env, seed, {}), train_config(cfg, seed, 3));
    for (Group z : {Group::background, Group::foreground}) {
      out.evals.push_back({seed, env.foreground_force, 0.0, "linear", "nfqi",
                           evaluate(cfg, z == Group::foreground ? nf_lin.foreground_policy : nf_lin.background_policy, z,
                                    env, seed, "nfqi")});
      out.evals.push_back({seed, env.foreground_force, 0.0, "network", "nfqi",
                           evaluate(cfg, z == Group::foreground ? nf_net.foreground_policy : nf_net.background_policy, z,
                                    env, seed, "nfqi")});
    }
    training.push_back({{"seed", seed}, {"fqi_linear", lin.report}, {"fqi_network", net.report}});
  }
  out.files["model_comparison.csv"] =
      eval_csv(out.evals, {"seed", "model", "algorithm", "group", "mean", "ci_low", "ci_high", "n"});
  out.summary = {{"experiment", "compare-models"}, {"training", training}};
  return out;
}

/// Synthetic cohort -> NFQI and group-agnostic FQI -> action matching on
/// held-out transitions and potassium x creatinine policy heatmaps.
inline ExperimentResult run_clinical_demo(const ExperimentConfig& cfg) {
  validate(cfg);
  using namespace detail;
  ExperimentResult out;
  out.command = "clinical-demo";
  const auto& cs = cfg.clinical;
  clinical::CohortOptions opt{cs.steps, cs.reward};
  NestedArch arch{clinical::kStateDim, clinical::kNumActions};
  std::string match_rows = "seed,algorithm,group,accuracy,macro_f1,n\n";
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const auto ds = clinical::synth_cohort(static_cast<std::size_t>(cs.n_background),
                                           static_cast<std::size_t>(cs.n_foreground), stream(seed, kData), opt);
    NestedDataset test;
    const auto train = training_split(ds, cfg, seed, &test);
    const auto nf = train_nfqi(train, std::nullopt, train_config(cfg, seed, 3), arch);
    const auto joint = train_fqi(flatten(train), std::nullopt, train_config(cfg, seed, 4), arch);
    const Policy nf_pi = nested_policy(nf.model);
    const Policy joint_pi = greedy_policy(joint.model, Group::foreground);

    // Heatmap background features held at the training-set mean.
    const auto mean = mean_reference(flatten(train), clinical::kNumActions);
    const State fixed(mean.begin(), mean.begin() + clinical::kStateDim);

    for (const auto& [name, pi] : {std::pair<std::string, const Policy*>{"nfqi", &nf_pi}, {"fqi_joint", &joint_pi}}) {
      for (Group z : {Group::background, Group::foreground}) {
        const auto held_out = flatten(test.part(z));
        MatchRow row{seed, name, z, held_out.size(), action_matching(*pi, held_out, clinical::kNumActions)};
        match_rows += std::to_string(seed) + "," + name + "," + std::to_string(as_int(z)) + "," +
                      fmt(row.report.accuracy) + "," + fmt(row.report.macro_f1) + "," + std::to_string(row.n) + "\n";
        out.matches.push_back(std::move(row));
        const auto cells = clinical::policy_heatmap(*pi, z, cs.grid, fixed);
        out.files["heatmap_" + name + "_group" + std::to_string(as_int(z)) + "_seed" + std::to_string(seed) + ".csv"] =
            clinical::heatmap_csv(cells);
      }
    }
    per_seed.push_back({{"seed", seed}, {"nfqi", nf.report}, {"fqi_joint", joint.report}});
  }
  out.files["action_matching.csv"] = match_rows;
  out.summary = {{"experiment", "clinical-demo"}, {"synthetic", true}, {"training", per_seed}};
  return out;
}

}  // namespace nfqi::experiments
