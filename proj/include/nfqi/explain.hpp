#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/qfunction.hpp"
#include "nfqi/training.hpp"

namespace nfqi {

// Shapley attribution over a value function v(S) = f(x_S, reference_{-S}):
// features in the coalition S take the sample's values, the rest take the
// reference's. A feature may span several input columns (the one-hot action
// block is one feature).

inline constexpr std::size_t kMaxExactFeatures = 12;

struct FeatureLayout {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> columns;

  std::size_t size() const { return columns.size(); }

  /// One feature per input column.
  static FeatureLayout per_column(std::size_t n) {
    FeatureLayout l;
    for (std::size_t i = 0; i < n; ++i) {
      l.names.push_back("x" + std::to_string(i));
      l.columns.push_back({i});
    }
    return l;
  }

  /// Each state dimension is a feature; the whole action block is one more.
  static FeatureLayout state_and_action(int state_dim, int num_actions, std::vector<std::string> names = {}) {
    FeatureLayout l;
    for (int i = 0; i < state_dim; ++i) l.columns.push_back({static_cast<std::size_t>(i)});
    std::vector<std::size_t> action;
    for (int a = 0; a < num_actions; ++a) action.push_back(static_cast<std::size_t>(state_dim + a));
    l.columns.push_back(std::move(action));
    if (names.empty()) {
      for (int i = 0; i < state_dim; ++i) names.push_back("s" + std::to_string(i));
      names.push_back("action");
    }
    if (names.size() != l.columns.size()) throw Error("feature name count does not match layout");
    l.names = std::move(names);
    return l;
  }
};

inline FeatureLayout cartpole_features() {
  return FeatureLayout::state_and_action(
      cartpole::kStateDim, cartpole::kNumActions,
      {"cart_position", "cart_velocity", "pole_angle", "pole_velocity", "action"});
}

namespace detail {

inline void check_shapes(std::span<const double> sample, std::span<const double> reference,
                         const FeatureLayout& layout) {
  if (sample.size() != reference.size()) throw Error("sample and reference sizes differ");
  for (const auto& cols : layout.columns) {
    for (std::size_t c : cols) {
      if (c >= sample.size()) throw Error("feature column out of range");
    }
  }
}

inline void set_feature(std::vector<double>& x, std::span<const double> from, const std::vector<std::size_t>& cols) {
  for (std::size_t c : cols) x[c] = from[c];
}

}  // namespace detail

/// Exact Shapley values by enumerating all 2^d coalitions.
template <class ValueFn>
std::vector<double> shapley_exact(const ValueFn& f, std::span<const double> sample, std::span<const double> reference,
                                  const FeatureLayout& layout) {
  const std::size_t d = layout.size();
  if (d > kMaxExactFeatures) {
    throw Error("too many features for exact enumeration (" + std::to_string(d) + " > " +
                std::to_string(kMaxExactFeatures) + "); use shapley_sampled");
  }
  detail::check_shapes(sample, reference, layout);
  const std::size_t n_coalitions = std::size_t{1} << d;
  std::vector<double> v(n_coalitions);
  std::vector<double> x(reference.begin(), reference.end());
  for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
    std::copy(reference.begin(), reference.end(), x.begin());
    for (std::size_t i = 0; i < d; ++i) {
      if (mask & (std::size_t{1} << i)) detail::set_feature(x, sample, layout.columns[i]);
    }
    v[mask] = f(std::span<const double>(x));
  }
  // weight[s] = s! (d - s - 1)! / d!
  std::vector<double> weight(d, 0.0);
  for (std::size_t s = 0; s < d; ++s) {
    double w = 1.0 / static_cast<double>(d);
    // 1 / (d * C(d-1, s))
    for (std::size_t k = 1; k <= s; ++k) w *= static_cast<double>(k) / static_cast<double>(d - k);
    weight[s] = w;
  }
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
      if (mask & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
  }
  return phi;
}

/// Monte Carlo permutation estimator: the average marginal contribution of
/// each feature over `n_permutations` seeded random orderings.
template <class ValueFn>
std::vector<double> shapley_sampled(const ValueFn& f, std::span<const double> sample,
                                    std::span<const double> reference, const FeatureLayout& layout,
                                    int n_permutations, std::uint64_t seed) {
  if (n_permutations < 1) throw Error("n_permutations must be at least 1");
  detail::check_shapes(sample, reference, layout);
  const std::size_t d = layout.size();
  SeedStream rng(seed);
  std::vector<std::size_t> order(d);
  std::vector<double> phi(d, 0.0);
  std::vector<double> x(reference.size());
  const double base = f(reference);
  for (int p = 0; p < n_permutations; ++p) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::copy(reference.begin(), reference.end(), x.begin());
    double prev = base;
    for (std::size_t i : order) {
      detail::set_feature(x, sample, layout.columns[i]);
      const double cur = f(std::span<const double>(x));
      phi[i] += cur - prev;
      prev = cur;
    }
  }
  for (auto& v : phi) v /= static_cast<double>(n_permutations);
  return phi;
}

template <QFunction M>
std::vector<double> shapley_exact(const M& model, std::span<const double> sample, Group z,
                                  std::span<const double> reference, const FeatureLayout& layout) {
  return shapley_exact([&](std::span<const double> x) { return model.value(x, z); }, sample, reference, layout);
}

template <QFunction M>
std::vector<double> shapley_sampled(const M& model, std::span<const double> sample, Group z,
                                    std::span<const double> reference, const FeatureLayout& layout,
                                    int n_permutations, std::uint64_t seed) {
  return shapley_sampled([&](std::span<const double> x) { return model.value(x, z); }, sample, reference, layout,
                         n_permutations, seed);
}

// ---------------------------------------------------------------------------
// Dataset attribution
// ---------------------------------------------------------------------------

enum class AttributionTarget { greedy_action, logged_action };
enum class ShapleyEstimator { exact, sampled };

NLOHMANN_JSON_SERIALIZE_ENUM(AttributionTarget, {{AttributionTarget::greedy_action, "greedy"},
                                                 {AttributionTarget::logged_action, "logged"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ShapleyEstimator, {{ShapleyEstimator::exact, "exact"},
                                                {ShapleyEstimator::sampled, "sampled"}})

struct AttributionConfig {
  AttributionTarget target = AttributionTarget::greedy_action;
  ShapleyEstimator estimator = ShapleyEstimator::exact;
  int n_permutations = 2000;
  std::uint64_t seed = 0;
  /// Raw input vectors; values are averaged over them. Usually a single mean
  /// background sample (see mean_reference).
  std::vector<std::vector<double>> references;
};

struct AttributionReport {
  std::vector<std::string> feature_names;
  /// values[sample][feature]
  std::vector<std::vector<double>> values;
  /// Model output at each explained input.
  std::vector<double> outputs;
  /// Model output at the reference (averaged over references).
  double baseline = 0.0;
  Group group = Group::background;

  std::vector<double> mean_abs() const {
    std::vector<double> m(feature_names.size(), 0.0);
    for (const auto& row : values) {
      for (std::size_t j = 0; j < row.size(); ++j) m[j] += std::abs(row[j]);
    }
    if (!values.empty()) {
      for (auto& v : m) v /= static_cast<double>(values.size());
    }
    return m;
  }

  /// Feature indices by decreasing mean |value|.
  std::vector<std::size_t> ranking() const {
    const auto m = mean_abs();
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
    return idx;
  }
};

/// Mean raw input [state ; one-hot action] over `transitions`.
inline std::vector<double> mean_reference(std::span<const Transition> transitions, int num_actions) {
  if (transitions.empty()) throw Error("cannot build a reference from no transitions");
  const std::size_t p = transitions.front().state.size();
  std::vector<double> ref(p + static_cast<std::size_t>(num_actions), 0.0);
  for (const auto& t : transitions) {
    const auto x = encode_input(t.state, t.action, num_actions);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += x[i];
  }
  for (auto& v : ref) v /= static_cast<double>(transitions.size());
  return ref;
}

/// One attribution row per transition, explaining f(s, a, z) where a is the
/// greedy action (default) or the logged one.
template <QFunction M>
AttributionReport attribute_dataset(const M& model, std::span<const Transition> transitions, Group z,
                                    const AttributionConfig& cfg, const FeatureLayout& layout) {
  if (transitions.empty()) throw Error("cannot attribute an empty transition set");
  if (cfg.references.empty()) throw Error("attribution needs at least one reference");
  AttributionReport r;
  r.feature_names = layout.names;
  r.group = z;
  for (const auto& ref : cfg.references) r.baseline += model.value(ref, z);
  r.baseline /= static_cast<double>(cfg.references.size());
  const auto value_fn = [&](std::span<const double> x) { return model.value(x, z); };
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const auto& t = transitions[i];
    const int a = cfg.target == AttributionTarget::greedy_action ? greedy_action(model, t.state, z) : t.action;
    const auto x = encode_input(t.state, a, model.num_actions());
    std::vector<double> phi(layout.size(), 0.0);
    for (std::size_t k = 0; k < cfg.references.size(); ++k) {
      const auto part = cfg.estimator == ShapleyEstimator::exact
                            ? shapley_exact(value_fn, x, cfg.references[k], layout)
                            : shapley_sampled(value_fn, x, cfg.references[k], layout, cfg.n_permutations,
                                              derive_seed(derive_seed(cfg.seed, i), k));
      for (std::size_t j = 0; j < phi.size(); ++j) phi[j] += part[j];
    }
    for (auto& v : phi) v /= static_cast<double>(cfg.references.size());
    r.values.push_back(std::move(phi));
    r.outputs.push_back(model.value(x, z));
  }
  return r;
}

template <QFunction M>
AttributionReport attribute_dataset(const M& model, std::span<const Transition> transitions, Group z,
                                    const AttributionConfig& cfg) {
  return attribute_dataset(model, transitions, z, cfg,
                           FeatureLayout::state_and_action(model.state_dim(), model.num_actions()));
}

/// Long-form rows: sample_id,group,feature,value.
inline std::string attribution_csv(const std::vector<AttributionReport>& reports) {
  std::string out = "sample_id,group,feature,value\n";
  char buf[64];
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      for (std::size_t j = 0; j < r.values[i].size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", r.values[i][j]);
        out += std::to_string(i) + "," + std::to_string(as_int(r.group)) + "," + r.feature_names[j] + "," + buf + "\n";
      }
    }
  }
  return out;
}

/// {"groups": [{"group": z, "baseline": b, "mean_abs": {feature: value}, "ranking": [...]}]}
inline nlohmann::json attribution_summary(const std::vector<AttributionReport>& reports) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json mean_abs = nlohmann::json::object();
    const auto m = r.mean_abs();
    for (std::size_t j = 0; j < m.size(); ++j) mean_abs[r.feature_names[j]] = m[j];
    nlohmann::json ranking = nlohmann::json::array();
    for (std::size_t j : r.ranking()) ranking.push_back(r.feature_names[j]);
    groups.push_back({{"group", as_int(r.group)},
                      {"samples", r.values.size()},
                      {"baseline", r.baseline},
                      {"mean_abs", mean_abs},
                      {"ranking", ranking}});
  }
  return {{"groups", groups}};
}

}  // namespace nfqi
