#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/cartpole.hpp"
#include "nfqi/mdp.hpp"

namespace nfqi {

enum class CiMethod { normal, bootstrap };

NLOHMANN_JSON_SERIALIZE_ENUM(CiMethod, {{CiMethod::normal, "normal"}, {CiMethod::bootstrap, "bootstrap"}})

struct EvalReport {
  std::string policy;
  Group group = Group::background;
  std::vector<int> steps;
  double mean = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;

  std::size_t n() const { return steps.size(); }
  bool overlaps(const EvalReport& o) const { return ci95_low <= o.ci95_high && o.ci95_low <= ci95_high; }
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"policy", r.policy}, {"group", as_int(r.group)}, {"steps", r.steps},
       {"mean", r.mean},     {"ci95_low", r.ci95_low},   {"ci95_high", r.ci95_high}};
}

inline double mean_of(const std::vector<int>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (int x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// mean +- 1.96 s / sqrt(n) with the n - 1 sample standard deviation.
inline std::pair<double, double> normal_ci95(const std::vector<int>& v) {
  const double m = mean_of(v);
  if (v.size() < 2) return {m, m};
  double ss = 0.0;
  for (int x : v) ss += (x - m) * (x - m);
  const double half = 1.96 * std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  return {m - half, m + half};
}

/// Percentile bootstrap of the mean.
inline std::pair<double, double> bootstrap_ci95(const std::vector<int>& v, std::uint64_t seed, int resamples = 2000) {
  const double m = mean_of(v);
  if (v.size() < 2) return {m, m};
  SeedStream rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& out : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[rng.below(v.size())];
    out = s / static_cast<double>(v.size());
  }
  std::sort(means.begin(), means.end());
  const auto at = [&](double q) { return means[static_cast<std::size_t>(q * static_cast<double>(resamples - 1))]; };
  return {std::min(m, at(0.025)), std::max(m, at(0.975))};
}

/// `repetitions` rollouts in environment z; rollout i starts from a random
/// state drawn from its own stream derive_seed(seed, i).
inline EvalReport evaluate_policy(const Policy& policy, Group z, const cartpole::Params& params, int repetitions,
                                  std::uint64_t seed, std::string tag = "policy", CiMethod ci = CiMethod::normal) {
  if (repetitions < 1) throw Error("repetitions must be at least 1");
  EvalReport r;
  r.policy = std::move(tag);
  r.group = z;
  for (int i = 0; i < repetitions; ++i) {
    SeedStream rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    r.steps.push_back(cartpole::rollout_policy(policy, z, params, rng));
  }
  r.mean = mean_of(r.steps);
  const auto [lo, hi] = ci == CiMethod::normal ? normal_ci95(r.steps) : bootstrap_ci95(r.steps, derive_seed(seed, 0xb007));
  r.ci95_low = lo;
  r.ci95_high = hi;
  return r;
}

// ---------------------------------------------------------------------------
// Action matching
// ---------------------------------------------------------------------------

struct MatchReport {
  double accuracy = 0.0;  // percent
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::size_t> support;
  /// confusion[truth][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

inline void to_json(nlohmann::json& j, const MatchReport& r) {
  j = {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"precision", r.precision}, {"recall", r.recall},
       {"f1", r.f1},             {"support", r.support},   {"confusion", r.confusion}};
}

/// Accuracy and macro-F1 from a confusion matrix. Classes that appear in
/// neither truth nor predictions are left out of the macro average.
inline MatchReport match_report(std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t k = confusion.size();
  MatchReport r;
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  r.support.assign(k, 0);
  std::vector<std::size_t> predicted(k, 0);
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < k; ++t) {
    if (confusion[t].size() != k) throw Error("confusion matrix must be square");
    for (std::size_t p = 0; p < k; ++p) {
      r.support[t] += confusion[t][p];
      predicted[p] += confusion[t][p];
      total += confusion[t][p];
    }
    correct += confusion[t][t];
  }
  if (total == 0) throw Error("action matching needs at least one sample");
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  double f1_sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (r.support[c] == 0 && predicted[c] == 0) continue;
    const double tp = static_cast<double>(confusion[c][c]);
    r.precision[c] = predicted[c] ? tp / static_cast<double>(predicted[c]) : 0.0;
    r.recall[c] = r.support[c] ? tp / static_cast<double>(r.support[c]) : 0.0;
    const double denom = r.precision[c] + r.recall[c];
    r.f1[c] = denom > 0 ? 2.0 * r.precision[c] * r.recall[c] / denom : 0.0;
    f1_sum += r.f1[c];
    ++classes;
  }
  r.macro_f1 = f1_sum / static_cast<double>(classes);
  r.confusion = std::move(confusion);
  return r;
}

/// Agreement between the policy's action and the logged action of each
/// transition, evaluated with the transition's own group label.
inline MatchReport action_matching(const Policy& policy, std::span<const Transition> transitions, int num_actions) {
  if (transitions.empty()) throw Error("action matching needs at least one sample");
  const auto k = static_cast<std::size_t>(num_actions);
  std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
  for (const auto& t : transitions) {
    const int p = policy(t.state, t.group);
    if (t.action < 0 || t.action >= num_actions || p < 0 || p >= num_actions) throw Error("action id out of range");
    ++confusion[static_cast<std::size_t>(t.action)][static_cast<std::size_t>(p)];
  }
  return match_report(std::move(confusion));
}

}  // namespace nfqi
