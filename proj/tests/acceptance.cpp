// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "nfqi/nfqi.hpp"
#include "oracles.hpp"

using namespace nfqi;
namespace ex = nfqi::experiments;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Settings {
  fs::path configs;
  fs::path work;
  std::string cli;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ex::ExperimentConfig load(const Settings& st, const std::string& name) {
  std::ifstream in(st.configs / (name + ".json"));
  if (!in) throw Error("missing config " + (st.configs / (name + ".json")).string());
  return ex::parse_config(nlohmann::json::parse(in));
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string count(int k, std::size_t n) { return std::to_string(k) + "/" + std::to_string(n); }

Verdict within(Verdict v, double seconds, double budget) {
  if (seconds > budget) {
    v.pass = false;
    v.detail += "; over runtime budget of " + fmt1(budget) + " s";
  }
  return v;
}

// 1. Analytic gradients against central differences.
Verdict gradients() {
  SeedStream rng(11);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto nested = oracle::random_nested(rng);
    LinearQModel linear(4, 2);
    oracle::randomise(linear, rng);
    const NormStats norm{{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                         {rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2)}};
    nested.norm = norm;
    linear.norm = norm;
    const auto s = oracle::random_state(rng);
    const int a = static_cast<int>(rng.below(2));
    const Group z = rng.below(2) ? Group::foreground : Group::background;
    const double y = rng.uniform(-2, 2);
    const auto check = [&](const auto& m) {
      const auto g = gradient(m, s, a, z, y);
      const auto fd = oracle::fd_gradient(m, s, a, z, y);
      for (std::size_t k = 0; k < g.size(); ++k) worst = std::max(worst, oracle::relative_error(g[k], fd[k]));
    };
    check(nested);
    check(linear);
  }
  return {worst < 1e-4, "max relative error " + sci(worst) + " over 100 draws x 2 models"};
}

// 2. Additive decomposition and the augmented-state form.
Verdict additivity() {
  SeedStream rng(12);
  double worst = 0.0;
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto m = oracle::random_nested(rng);
    const auto s = oracle::random_state(rng);
    const int a = static_cast<int>(rng.below(2));
    const auto x = encode_input(s, a, 2);
    const double gf = m.foreground_value(x);
    const double diff = forward(m, s, a, Group::foreground) - forward(m, s, a, Group::background);
    worst = std::max(worst, std::abs(diff - gf) / std::max(1.0, std::abs(gf)));
    const AugmentedStateQ<NestedQModel> aug(m);
    for (Group z : {Group::background, Group::foreground}) {
      auto sa = s;
      sa.push_back(indicator(z));
      if (aug(sa, a) != forward(m, s, a, z)) ++mismatches;
    }
  }
  return {worst <= 1e-12 && mismatches == 0,
          "max relative additivity error " + sci(worst) + ", augmented mismatches " +
              std::to_string(mismatches) + " over 10000 draws"};
}

// 3. Bellman targets against exhaustive enumeration.
Verdict bellman() {
  SeedStream rng(13);
  double worst = 0.0;
  bool terminal_ok = true;
  int terminals = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::random_nested(rng);
    std::vector<Transition> ts;
    for (int i = 0; i < 10; ++i) {
      ts.push_back({oracle::random_state(rng), static_cast<int>(rng.below(2)), oracle::random_state(rng),
                    rng.uniform(-1, 1), i % 3 == 2, i % 2 ? Group::foreground : Group::background});
    }
    const auto got = bellman_targets(m, ts, 0.9);
    const auto want = oracle::bellman_targets(m, ts, 0.9);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      worst = std::max(worst, std::abs(got[i] - want[i]));
      if (ts[i].terminal) {
        ++terminals;
        terminal_ok = terminal_ok && got[i] == ts[i].reward;
      }
    }
  }
  return {worst <= 1e-9 && terminal_ok,
          "max abs error " + sci(worst) + ", " + std::to_string(terminals) + " terminal targets equal r: " +
              (terminal_ok ? "yes" : "no")};
}

// 4. Simulator against an independent step oracle.
Verdict physics() {
  SeedStream rng(14);
  double worst = 0.0;
  int c0_mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 4> s{rng.uniform(-2.4, 2.4), rng.uniform(-3, 3), rng.uniform(-0.2, 0.2),
                                  rng.uniform(-3, 3)};
    const std::vector<double> sv(s.begin(), s.end());
    const int a = static_cast<int>(rng.below(2));
    const bool fg = rng.below(2) == 1;
    cartpole::Params p;
    p.foreground_force = rng.uniform(0, 10);
    const auto want = oracle::cartpole_step(s, a, fg, p.foreground_force);
    const auto got = cartpole::step(sv, a, fg ? Group::foreground : Group::background, p);
    for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(got.next_state[k] - want.next[k]));

    cartpole::Params zero;
    zero.foreground_force = 0.0;
    const auto b = cartpole::step(sv, a, Group::background, zero);
    const auto f = cartpole::step(sv, a, Group::foreground, zero);
    if (b.next_state != f.next_state || b.terminal != f.terminal || b.reward != f.reward) ++c0_mismatches;
  }
  return {worst <= 1e-9 && c0_mismatches == 0, "max abs error " + sci(worst) +
                                                   ", c=0 foreground/background mismatches " +
                                                   std::to_string(c0_mismatches) + " over 1000 draws"};
}

// 5. Tabular MDP against value iteration.
Verdict tabular() {
  const auto mdp = oracle::two_state_mdp();
  const double gamma = 0.5;
  const auto q = oracle::value_iteration(mdp, gamma);
  TrainConfig cfg;
  cfg.gamma = gamma;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 4;
  cfg.epochs_per_iteration = 20;
  cfg.max_fqi_iterations = 200;
  cfg.plateau_tolerance = 1e-9;
  cfg.seed = 1;
  NestedArch arch;
  arch.state_dim = 2;
  const auto fit = train_fqi(oracle::tabular_transitions(mdp, 4), std::nullopt, cfg, arch);
  double worst = 0.0;
  for (int s = 0; s < 2; ++s) {
    const State x{s == 0 ? 1.0 : 0.0, s == 1 ? 1.0 : 0.0};
    for (int a = 0; a < 2; ++a) {
      worst = std::max(worst, std::abs(forward(fit.model, x, a, Group::foreground) -
                                       q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]));
    }
  }
  return {worst <= 0.05, "max abs deviation from value iteration " + sci(worst)};
}

// 6. Benchmark ordering.
Verdict benchmark(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  int fg = 0, bg = 0;
  std::string per;
  for (auto seed : cfg.seeds) {
    const auto& nf = r.find(seed, "nfqi", Group::foreground).report;
    const auto& ff = r.find(seed, "fqi", Group::foreground).report;
    const auto& nb = r.find(seed, "nfqi", Group::background).report;
    const auto& fb = r.find(seed, "fqi", Group::background).report;
    fg += nf.mean >= 1.5 * ff.mean && !nf.overlaps(ff);
    bg += nb.mean >= fb.mean;
    per += " [" + fmt1(nf.mean) + " vs " + fmt1(ff.mean) + " fg, " + fmt1(nb.mean) + " vs " + fmt1(fb.mean) + " bg]";
  }
  return {fg >= 4 && bg >= 3,
          "foreground " + count(fg, cfg.seeds.size()) + " (need 4), background " + count(bg, cfg.seeds.size()) +
              " (need 3);" + per};
}

// 7. Force sweep ordering at c=10 and agreement at c=0.
Verdict force_sweep(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  int high = 0, low = 0;
  std::string per;
  for (auto seed : cfg.seeds) {
    const auto& n = r.find(seed, "nfqi", Group::foreground, 10.0).report;
    const auto& j = r.find(seed, "fqi_joint", Group::foreground, 10.0).report;
    const auto& t = r.find(seed, "transfer", Group::foreground, 10.0).report;
    high += n.mean > j.mean && n.mean > t.mean;
    std::vector<const EvalReport*> bg;
    for (const char* alg : {"nfqi", "fqi_joint", "transfer"}) bg.push_back(&r.find(seed, alg, Group::background, 0.0).report);
    bool overlap = true;
    for (std::size_t a = 0; a < bg.size(); ++a) {
      for (std::size_t b = a + 1; b < bg.size(); ++b) overlap = overlap && bg[a]->overlaps(*bg[b]);
    }
    low += overlap;
    per += " [c10 fg " + fmt1(n.mean) + "/" + fmt1(j.mean) + "/" + fmt1(t.mean) + "; c0 bg " +
           (overlap ? "overlap" : "disjoint") + "]";
  }
  const auto n = cfg.seeds.size();
  return {high >= 2 && low == static_cast<int>(n),
          "c=10 nfqi best " + count(high, n) + " (need 2), c=0 background CIs overlap " + count(low, n) + " (need " +
              count(static_cast<int>(n), n) + ");" + per};
}

// 8. Imbalance sweep ordering.
Verdict imbalance(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  int ok = 0;
  std::string per;
  for (auto seed : cfg.seeds) {
    bool all = true;
    per += " [";
    for (double f : cfg.fractions) {
      const auto& n = r.find(seed, "nfqi", Group::foreground, -1, f).report;
      const auto& j = r.find(seed, "fqi_joint", Group::foreground, -1, f).report;
      all = all && n.mean >= j.mean;
      per += fmt1(n.mean) + "/" + fmt1(j.mean) + " ";
    }
    per.back() = ']';
    ok += all;
  }
  return {ok >= 2, "nfqi >= fqi_joint at every fraction in " + count(ok, cfg.seeds.size()) + " (need 2);" + per};
}

// 9. Structureless test.
Verdict structureless(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  int overlap = 0, same_rank = 0;
  for (auto seed : cfg.seeds) {
    const auto& b = r.find(seed, "nfqi", Group::background).report;
    const auto& f = r.find(seed, "nfqi", Group::foreground).report;
    overlap += b.overlaps(f);
  }
  std::string per;
  for (const auto& rank : r.rankings) {
    same_rank += rank.background == rank.foreground;
    per += " [" + std::accumulate(rank.background.begin(), rank.background.end(), std::string(),
                                  [](std::string a, const std::string& b) { return a.empty() ? b : a + ">" + b; }) +
           (rank.background == rank.foreground ? " same" : " differs") + "]";
  }
  const auto n = cfg.seeds.size();
  return {overlap >= 4 && same_rank >= 4,
          "CIs overlap " + count(overlap, n) + " (need 4), rankings identical " + count(same_rank, n) + " (need 4);" + per};
}

// 10. Shapley estimators.
Verdict shapley() {
  SeedStream rng(15);
  const auto layout = cartpole_features();
  double worst_sampled = 0.0, worst_eff = 0.0, worst_add = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto m = oracle::random_nested(rng);
    const auto x = encode_input(oracle::random_state(rng), 1, 2);
    const auto ref = encode_input(oracle::random_state(rng), 0, 2);
    const Group z = i % 2 ? Group::foreground : Group::background;
    const auto exact = shapley_exact(m, x, z, ref, layout);
    const auto approx = shapley_sampled(m, x, z, ref, layout, 20000, 100 + static_cast<std::uint64_t>(i));
    double scale = 0.0;
    for (double v : exact) scale = std::max(scale, std::abs(v));
    for (std::size_t k = 0; k < exact.size(); ++k) worst_sampled = std::max(worst_sampled, std::abs(approx[k] - exact[k]) / scale);
    const double total = std::accumulate(exact.begin(), exact.end(), 0.0);
    worst_eff = std::max(worst_eff, std::abs(total - (m.value(x, z) - m.value(ref, z))));
  }
  const std::vector<double> c{0.5, -2.0, 3.0, 0.0, 1.25};
  const auto additive = [&](std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += c[i] * v[i];
    return s;
  };
  const std::vector<double> x{1, 2, 3, 4, 5}, ref{0.5, 0.5, 0.5, 0.5, 0.5};
  const auto phi = shapley_exact(additive, x, ref, FeatureLayout::per_column(5));
  for (std::size_t i = 0; i < 5; ++i) worst_add = std::max(worst_add, std::abs(phi[i] - c[i] * (x[i] - ref[i])));
  return {worst_sampled <= 0.02 && worst_eff <= 1e-9 && worst_add <= 1e-12,
          "sampled error " + sci(worst_sampled) + " x max|exact|, efficiency error " +
              sci(worst_eff) + ", additive error " + sci(worst_add)};
}

// 11. Clinical reward components.
Verdict clinical_reward() {
  namespace cl = nfqi::clinical;
  const cl::RewardParams p;
  const std::vector<double> s{4.0, 1.0, 80.0, 60.0};
  const auto at = [&](double k, int a) {
    auto s2 = s;
    s2[0] = k;
    return cl::phi(s, a, s2, p);
  };
  const double sig = -10.0 / (1.0 + std::exp(-0.5));
  std::vector<std::string> failed;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  expect(at(4.0, 0) == std::array<double, 4>{0, 0, 0, 0}, "in-range zero");
  expect(at(4.0, 1)[0] == -1.0 && at(4.0, 1)[1] == 0.0, "oral indicator");
  expect(at(4.0, 2)[1] == -1.0 && at(4.0, 2)[0] == 0.0, "intravenous indicator");
  expect(near(at(6.0, 0)[2], sig) && at(6.0, 0)[3] == 0.0, "high-potassium sigmoid at K=6");
  expect(near(at(2.0, 0)[3], sig) && at(2.0, 0)[2] == 0.0, "low-potassium sigmoid at K=2");
  expect(near(cl::reward(s, 1, std::vector<double>{6.0, 1.0, 80.0, 60.0}, p), -1.0 + sig), "weighted sum");
  std::string detail = "K=6 component " + sci(at(6.0, 0)[2]) + " expected " + sci(sig);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

// 12. Linear against network Q-function.
Verdict models(const ex::ExperimentResult& r, const ex::ExperimentConfig& cfg) {
  int ok = 0;
  std::string per;
  for (auto seed : cfg.seeds) {
    const double lin = r.find(seed, "fqi", Group::background, -1, -1, "linear").report.mean;
    const double net = r.find(seed, "fqi", Group::background, -1, -1, "network").report.mean;
    ok += lin < 200 && net >= 400;
    per += " [" + fmt1(lin) + " vs " + fmt1(net) + "]";
  }
  return {ok >= 2, "linear < 200 and network >= 400 in " + count(ok, cfg.seeds.size()) + " (need 2);" + per};
}

// 13. CLI determinism.
bool run_cli(const Settings& st, const ex::ExperimentConfig& cfg, const std::string& cmd, const fs::path& out) {
  fs::remove_all(out);
  fs::create_directories(out);
  const auto cfg_path = out / "config.json";
  std::ofstream(cfg_path) << nlohmann::json(cfg).dump(2);
  const std::string line = "\"" + st.cli + "\" --config \"" + cfg_path.string() + "\" --out \"" + out.string() + "\" " +
                           cmd + " > \"" + (out / "stdout.txt").string() + "\" 2>&1";
  return std::system(line.c_str()) == 0;
}

std::map<std::string, std::string> csvs(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") m[e.path().filename().string()] = slurp(e.path());
  }
  return m;
}

ex::ExperimentConfig smoke(ex::ExperimentConfig c) {
  c.seeds = {c.seeds.front()};
  c.train.max_fqi_iterations = std::min(c.train.max_fqi_iterations, 25);
  c.train.selection_rollouts = std::min(c.train.selection_rollouts, 5);
  c.eval_repetitions = std::min(c.eval_repetitions, 5);
  c.attribution.max_samples = std::min(c.attribution.max_samples, 20);
  return c;
}

Verdict determinism(const Settings& st, const ex::ExperimentResult& bench, const ex::ExperimentConfig& bench_cfg) {
  if (st.cli.empty()) return {false, "no --cli binary given"};
  std::vector<std::string> problems;
  // The full benchmark through the CLI must reproduce the in-process run.
  const auto full = st.work / "determinism" / "benchmark_full";
  if (!run_cli(st, bench_cfg, "benchmark", full)) {
    problems.push_back("benchmark run failed");
  } else {
    const auto got = csvs(full);
    for (const auto& [name, body] : bench.files) {
      if (name.ends_with(".csv") && (!got.contains(name) || got.at(name) != body)) problems.push_back("benchmark " + name);
    }
  }
  // Every runner twice at reduced scale.
  const std::vector<std::pair<std::string, std::string>> runners{
      {"benchmark", "benchmark"},         {"sweep_force", "sweep-force"},       {"sweep_imbalance", "sweep-imbalance"},
      {"structureless", "structureless"}, {"compare_models", "compare-models"}, {"clinical_demo", "clinical-demo"}};
  std::size_t compared = 0;
  for (const auto& [name, cmd] : runners) {
    const auto cfg = smoke(load(st, name));
    const auto a = st.work / "determinism" / (name + "_a");
    const auto b = st.work / "determinism" / (name + "_b");
    if (!run_cli(st, cfg, cmd, a) || !run_cli(st, cfg, cmd, b)) {
      problems.push_back(cmd + " failed");
      continue;
    }
    const auto ca = csvs(a), cb = csvs(b);
    if (ca.empty() || ca != cb) problems.push_back(cmd);
    compared += ca.size();
  }
  std::string detail = "full benchmark plus 6 runners twice, " + std::to_string(compared) + " CSVs compared";
  for (const auto& p : problems) detail += "; differs or failed: " + p;
  return {problems.empty(), detail};
}

template <class F>
std::pair<Verdict, double> timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  return {v, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nfqi acceptance checks"};
  Settings st;
  std::string configs = std::string(NFQI_SOURCE_DIR) + "/configs";
  std::string work = (fs::temp_directory_path() / "nfqi_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", st.cli, "Path to the nfqi command-line binary");
  app.add_option("--configs", configs, "Directory holding the desk-scale configs");
  app.add_option("--work", work, "Scratch directory for CLI outputs");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  st.configs = configs;
  st.work = work;

  const auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  int failures = 0;
  const auto report = [&](int k, const std::string& name, double budget, const std::function<Verdict()>& f) {
    if (!wanted(k)) return;
    auto [v, secs] = timed(f);
    v = within(v, secs, budget);
    failures += !v.pass;
    std::cout << "criterion " << k << " " << (v.pass ? "PASS" : "FAIL") << " " << name << ": " << v.detail << " ("
              << fmt1(secs) << " s)" << std::endl;
  };

  report(1, "gradient correctness", 10, gradients);
  report(2, "nested additivity and augmented form", 5, additivity);
  report(3, "Bellman target oracle", 1, bellman);
  report(4, "physics oracle", 1, physics);
  report(5, "tabular sanity", 30, tabular);

  ex::ExperimentConfig bench_cfg;
  ex::ExperimentResult bench;
  double bench_secs = 0.0;
  report(6, "benchmark ordering", 30 * 60, [&] {
    bench_cfg = load(st, "benchmark");
    const auto t0 = std::chrono::steady_clock::now();
    bench = ex::run_benchmark(bench_cfg);
    bench_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return benchmark(bench, bench_cfg);
  });
  report(7, "force sweep ordering", 45 * 60, [&] {
    const auto cfg = load(st, "sweep_force");
    return force_sweep(ex::run_force_sweep(cfg), cfg);
  });
  report(8, "imbalance sweep ordering", 45 * 60, [&] {
    const auto cfg = load(st, "sweep_imbalance");
    return imbalance(ex::run_imbalance_sweep(cfg), cfg);
  });
  report(9, "structureless test", 30 * 60, [&] {
    const auto cfg = load(st, "structureless");
    return structureless(ex::run_structureless(cfg), cfg);
  });
  report(10, "Shapley estimators", 60, shapley);
  report(11, "clinical reward", 1, clinical_reward);
  report(12, "linear vs network Q-function", 20 * 60, [&] {
    const auto cfg = load(st, "compare_models");
    return models(ex::run_model_comparison(cfg), cfg);
  });
  // Budget: one more run of the benchmark config, plus slack for the
  // reduced-scale reruns of the other runners.
  report(13, "end-to-end determinism", 30 * 60, [&] {
    if (bench.files.empty()) {
      bench_cfg = load(st, "benchmark");
      bench = ex::run_benchmark(bench_cfg);
    }
    auto v = determinism(st, bench, bench_cfg);
    if (bench_secs > 0) v.detail += "; benchmark in-process run took " + fmt1(bench_secs) + " s";
    return v;
  });
  return failures == 0 ? 0 : 1;
}
