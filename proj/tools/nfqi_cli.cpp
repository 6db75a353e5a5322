#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nfqi/nfqi.hpp"

namespace ex = nfqi::experiments;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nfqi::Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw nfqi::Error("invalid JSON in " + path + ": " + e.what());
  }
}

ex::ExperimentConfig load_config(const Globals& g) {
  ex::ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    try {
      cfg = read_json_file(g.config_path).get<ex::ExperimentConfig>();
    } catch (const json::exception& e) {
      throw nfqi::Error("invalid config: " + std::string(e.what()));
    }
  }
  if (g.seed) {
    cfg.seeds = {*g.seed};
    cfg.train.seed = *g.seed;
  }
  if (!g.out.empty()) cfg.output_dir = g.out;
  ex::validate(cfg);
  return cfg;
}

/// Calls f with the model stored in a checkpoint, whichever kind it is.
template <class F>
void with_model(const json& checkpoint, F&& f) {
  const auto kind = checkpoint.at("kind").get<std::string>();
  if (kind == "nested_mlp") {
    f(nfqi::nested_model_from_json(checkpoint));
  } else if (kind == "linear") {
    f(nfqi::linear_model_from_json(checkpoint));
  } else {
    throw nfqi::Error("unknown model kind " + kind);
  }
}

template <class M>
nfqi::Policy policy_for(const M& model) {
  return model.stage == "nfqi" ? nfqi::nested_policy(model) : nfqi::greedy_policy(model, nfqi::Group::foreground);
}

void finish(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  ex::write_outputs(r, cfg, cfg.output_dir);
  std::cout << json{{"status", "ok"}, {"command", r.command}, {"out", cfg.output_dir}}.dump() << "\n";
}

std::uint64_t first_seed(const ex::ExperimentConfig& cfg) { return cfg.seeds.front(); }

nfqi::NestedDataset generate(const ex::ExperimentConfig& cfg, const std::string& env) {
  const auto seed = nfqi::derive_seed(first_seed(cfg), 1);
  if (env == "cartpole") {
    return nfqi::cartpole::collect_dataset(static_cast<std::size_t>(cfg.n_background),
                                           static_cast<std::size_t>(cfg.n_foreground), cfg.environment, seed);
  }
  if (env == "clinical") {
    return nfqi::clinical::synth_cohort(static_cast<std::size_t>(cfg.clinical.n_background),
                                        static_cast<std::size_t>(cfg.clinical.n_foreground), seed,
                                        {cfg.clinical.steps, cfg.clinical.reward});
  }
  throw nfqi::Error("unknown environment " + env);
}

template <class M>
void train_and_store(M model, const nfqi::NestedDataset& ds, const std::string& algorithm,
                     const std::optional<nfqi::EnvProbe>& probe, const nfqi::TrainConfig& tc,
                     ex::ExperimentResult& r) {
  nfqi::TrainReport report;
  json checkpoint;
  if (algorithm == "fqi") {
    auto fit = nfqi::train_fqi(std::move(model), nfqi::flatten(ds), probe, tc);
    report = fit.report;
    checkpoint = to_json(fit.model);
  } else if (algorithm == "nfqi") {
    auto fit = nfqi::train_nfqi(std::move(model), ds, probe, tc);
    report = fit.report;
    checkpoint = to_json(fit.model);
  } else if (algorithm == "transfer") {
    auto fit = nfqi::train_transfer(std::move(model), ds, probe, tc);
    report = fit.report;
    checkpoint = to_json(fit.model);
  } else {
    throw nfqi::Error("unknown algorithm " + algorithm);
  }
  r.files["model.json"] = checkpoint.dump(2) + "\n";
  r.files["loss_trace.csv"] = nfqi::loss_trace_csv(report);
  r.summary = {{"algorithm", algorithm}, {"report", report}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested-policy fitted Q-iteration experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON experiment config");
  app.add_option("--seed", g.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", g.out, "Output directory");

  std::string env = "cartpole";
  std::string data_path, model_path, algorithm = "nfqi", model_kind = "network";

  auto* gen = app.add_subcommand("generate", "Collect a nested dataset as JSONL");
  gen->add_option("--env", env, "cartpole or clinical")->check(CLI::IsMember({"cartpole", "clinical"}));

  auto* train = app.add_subcommand("train", "Fit a model to a dataset");
  train->add_option("--data", data_path, "Dataset JSONL")->required();
  train->add_option("--algorithm", algorithm, "fqi, nfqi or transfer")
      ->check(CLI::IsMember({"fqi", "nfqi", "transfer"}));
  train->add_option("--model", model_kind, "network or linear")->check(CLI::IsMember({"network", "linear"}));
  train->add_option("--env", env, "Simulator for the convergence probe (cartpole) or none (clinical)")
      ->check(CLI::IsMember({"cartpole", "clinical"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  eval->add_option("--model", model_path, "Checkpoint JSON")->required();
  eval->add_option("--data", data_path, "Held-out dataset for action matching");
  eval->add_option("--env", env, "cartpole (rollouts) or clinical (action matching)")
      ->check(CLI::IsMember({"cartpole", "clinical"}));

  auto* attribute = app.add_subcommand("attribute", "Shapley attribution of a trained model");
  attribute->add_option("--model", model_path, "Checkpoint JSON")->required();
  attribute->add_option("--data", data_path, "Dataset JSONL to explain")->required();

  auto* benchmark = app.add_subcommand("benchmark", "FQI-separate versus NFQI");
  auto* sweep_force = app.add_subcommand("sweep-force", "NFQI, FQI-joint and transfer over the force grid");
  auto* sweep_imbalance = app.add_subcommand("sweep-imbalance", "NFQI versus FQI-joint over foreground fractions");
  auto* structureless = app.add_subcommand("structureless", "NFQI on randomly labelled single-environment data");
  auto* compare = app.add_subcommand("compare-models", "Linear versus network Q-functions");
  auto* clinical = app.add_subcommand("clinical-demo", "Synthetic repletion cohort end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
    return 2;
  }

  try {
    const auto cfg = load_config(g);
    ex::ExperimentResult r;
    if (*benchmark) {
      r = ex::run_benchmark(cfg);
    } else if (*sweep_force) {
      r = ex::run_force_sweep(cfg);
    } else if (*sweep_imbalance) {
      r = ex::run_imbalance_sweep(cfg);
    } else if (*structureless) {
      r = ex::run_structureless(cfg);
    } else if (*compare) {
      r = ex::run_model_comparison(cfg);
    } else if (*clinical) {
      r = ex::run_clinical_demo(cfg);
    } else if (*gen) {
      r.command = "generate";
      const auto ds = generate(cfg, env);
      std::ostringstream out;
      nfqi::write_jsonl(out, ds);
      r.files["dataset.jsonl"] = out.str();
      r.summary = {{"environment", env},
                   {"background_trajectories", ds.background.size()},
                   {"foreground_trajectories", ds.foreground.size()},
                   {"transitions", ds.num_transitions()}};
    } else if (*train) {
      r.command = "train";
      const auto ds = nfqi::load_dataset(data_path);
      const int state_dim = static_cast<int>(ds.background.at(0).steps.at(0).state.size());
      const int actions = env == "clinical" ? nfqi::clinical::kNumActions : nfqi::cartpole::kNumActions;
      std::optional<nfqi::EnvProbe> probe;
      if (env == "cartpole" && cfg.use_probe) {
        std::vector<nfqi::Group> groups{nfqi::Group::background};
        if (algorithm == "fqi") groups.push_back(nfqi::Group::foreground);
        probe = nfqi::EnvProbe{cfg.environment, groups, nfqi::derive_seed(first_seed(cfg), 4)};
      }
      auto tc = cfg.train;
      tc.seed = first_seed(cfg);
      if (model_kind == "linear") {
        train_and_store(nfqi::LinearQModel(state_dim, actions), ds, algorithm, probe, tc, r);
      } else {
        nfqi::NestedArch arch;
        arch.state_dim = state_dim;
        arch.num_actions = actions;
        train_and_store(nfqi::default_model(tc, arch), ds, algorithm, probe, tc, r);
      }
    } else if (*eval) {
      r.command = "eval";
      with_model(read_json_file(model_path), [&](const auto& model) {
        const auto pi = policy_for(model);
        if (env == "clinical" || !data_path.empty()) {
          if (data_path.empty()) throw nfqi::Error("action matching needs --data");
          const auto ds = nfqi::load_dataset(data_path);
          std::string csv = "group,accuracy,macro_f1,n\n";
          json reports = json::array();
          for (auto z : {nfqi::Group::background, nfqi::Group::foreground}) {
            const auto ts = nfqi::flatten(ds.part(z));
            if (ts.empty()) continue;
            const auto m = nfqi::action_matching(pi, ts, model.num_actions());
            csv += std::to_string(nfqi::as_int(z)) + "," + ex::fmt(m.accuracy) + "," + ex::fmt(m.macro_f1) + "," +
                   std::to_string(ts.size()) + "\n";
            reports.push_back({{"group", nfqi::as_int(z)}, {"report", m}});
          }
          r.files["action_matching.csv"] = csv;
          r.summary = {{"action_matching", reports}};
        } else {
          json reports = json::array();
          for (auto z : {nfqi::Group::background, nfqi::Group::foreground}) {
            auto rep = nfqi::evaluate_policy(pi, z, cfg.environment, cfg.eval_repetitions,
                                             nfqi::derive_seed(first_seed(cfg), 5 + nfqi::as_int(z)), model.stage,
                                             cfg.ci_method);
            r.evals.push_back({first_seed(cfg), cfg.environment.foreground_force, 0.0, "", model.stage, rep});
            reports.push_back(rep);
          }
          r.files["eval.csv"] = ex::detail::eval_csv(r.evals, {"algorithm", "group", "mean", "ci_low", "ci_high", "n"});
          r.summary = {{"evaluations", reports}};
        }
      });
    } else if (*attribute) {
      r.command = "attribute";
      const auto ds = nfqi::load_dataset(data_path);
      with_model(read_json_file(model_path), [&](const auto& model) {
        nfqi::AttributionConfig ac;
        ac.estimator = cfg.attribution.estimator;
        ac.target = cfg.attribution.target;
        ac.n_permutations = cfg.attribution.n_permutations;
        ac.seed = first_seed(cfg);
        const auto bg = nfqi::flatten(ds.background);
        ac.references = {nfqi::mean_reference(bg.empty() ? nfqi::flatten(ds) : bg, model.num_actions())};
        const auto layout = model.state_dim() == nfqi::cartpole::kStateDim &&
                                    model.num_actions() == nfqi::cartpole::kNumActions
                                ? nfqi::cartpole_features()
                                : nfqi::FeatureLayout::state_and_action(model.state_dim(), model.num_actions());
        std::vector<nfqi::AttributionReport> reports;
        for (auto z : {nfqi::Group::background, nfqi::Group::foreground}) {
          auto ts = nfqi::flatten(ds.part(z));
          if (ts.empty()) continue;
          const auto cap = static_cast<std::size_t>(cfg.attribution.max_samples);
          if (cap > 0 && ts.size() > cap) ts.resize(cap);
          reports.push_back(nfqi::attribute_dataset(model, ts, z, ac, layout));
        }
        r.files["attribution.csv"] = nfqi::attribution_csv(reports);
        r.summary = nfqi::attribution_summary(reports);
      });
    }
    finish(r, cfg);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "runtime"}}.dump() << "\n";
    return 1;
  }
  return 0;
}
