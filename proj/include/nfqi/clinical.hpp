#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/mdp.hpp"

namespace nfqi::clinical {

// Electrolyte-repletion reward r = w . phi(s, a, s') and a synthetic,
// explicitly non-clinical patient cohort for exercising the pipeline.
//
// State layout: [potassium (mmol/L), creatinine (mg/dL), heart_rate (bpm), age (years)].
inline constexpr int kStateDim = 4;
inline constexpr std::size_t kPotassium = 0;
inline constexpr std::size_t kCreatinine = 1;
inline constexpr std::size_t kHeartRate = 2;
inline constexpr std::size_t kAge = 3;

// Actions: 0 = no repletion [0, 0], 1 = low [0, 10], 2 = high [10, 0],
// with the dose vector read as [intravenous, oral].
inline constexpr int kNumActions = 3;

/// Which form of the low-potassium penalty to use. `mirrored` penalises
/// K < K_min symmetrically to the high side; `printed` reproduces the
/// published formula verbatim (indicator K > K_max, which duplicates the
/// high-side term).
enum class LowPenaltyForm { mirrored, printed };

NLOHMANN_JSON_SERIALIZE_ENUM(LowPenaltyForm, {{LowPenaltyForm::mirrored, "mirrored"}, {LowPenaltyForm::printed, "printed"}})

struct RewardParams {
  std::array<double, 4> w{1.0, 1.0, 1.0, 1.0};
  double k_min = 3.5;
  double k_max = 4.5;
  double sigma = 1.0;
  LowPenaltyForm low_form = LowPenaltyForm::mirrored;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardParams, w, k_min, k_max, sigma, low_form)

inline void validate(const RewardParams& p) {
  if (!(p.k_min < p.k_max)) throw Error("k_min must be below k_max");
  if (!(p.sigma > 0)) throw Error("sigma must be positive");
}

struct RepletionAction {
  double oral_dose = 0.0;
  double iv_dose = 0.0;

  bool oral() const { return oral_dose > 0.0; }
  bool intravenous() const { return iv_dose > 0.0; }
};

inline RepletionAction repletion(int action) {
  switch (action) {
    case 0:
      return {0.0, 0.0};
    case 1:
      return {10.0, 0.0};
    case 2:
      return {0.0, 10.0};
    default:
      throw Error("invalid repletion action");
  }
}

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

/// Components: oral cost, intravenous cost, high-potassium penalty,
/// low-potassium penalty. Only s_next's potassium is read.
inline std::array<double, 4> phi(std::span<const double> /*state*/, int action, std::span<const double> next_state,
                                 const RewardParams& p) {
  validate(p);
  if (next_state.size() <= kPotassium) throw Error("state has no potassium entry");
  const double k = next_state[kPotassium];
  if (!std::isfinite(k)) throw Error("non-finite potassium");
  const RepletionAction a = repletion(action);
  std::array<double, 4> f{};
  f[0] = a.oral() ? -1.0 : 0.0;
  f[1] = a.intravenous() ? -1.0 : 0.0;
  f[2] = k > p.k_max ? -10.0 * logistic(p.sigma * (k - p.k_max - 1.0)) : 0.0;
  if (p.low_form == LowPenaltyForm::mirrored) {
    f[3] = k < p.k_min ? -10.0 * logistic(p.sigma * (p.k_min - k - 1.0)) : 0.0;
  } else {
    f[3] = k > p.k_max ? -10.0 * (1.0 - logistic(p.sigma * (k - p.k_max - 1.0))) : 0.0;
  }
  return f;
}

inline double reward(std::span<const double> state, int action, std::span<const double> next_state,
                     const RewardParams& p) {
  const auto f = phi(state, action, next_state, p);
  double r = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) r += p.w[i] * f[i];
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

struct CohortOptions {
  int steps = 12;  // 6-hour intervals
  RewardParams reward;
};

namespace detail {

/// Logged clinician behaviour: repletion more likely when potassium is low,
/// and the renal group is treated more aggressively.
inline int clinician_action(double k, Group z, SeedStream& rng) {
  const double shift = z == Group::foreground ? 0.2 : 0.0;
  std::array<double, 3> p;
  if (k < 3.5 + shift) {
    p = {0.15, 0.35, 0.50};
  } else if (k < 4.0 + shift) {
    p = {0.50, 0.35, 0.15};
  } else {
    p = {0.85, 0.10, 0.05};
  }
  const double u = rng.uniform();
  return u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
}

inline double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace detail

/// Foreground (renal) patients have higher creatinine, lose potassium faster
/// as creatinine rises, regulate it less and respond less to repletion.
inline Trajectory synth_patient(Group z, const CohortOptions& opt, SeedStream& rng) {
  const bool renal = z == Group::foreground;
  double k = detail::clamp(rng.normal(renal ? 3.8 : 4.0, 0.5), 2.5, 5.8);
  double creat = renal ? detail::clamp(rng.normal(3.0, 0.8), 1.2, 8.0) : detail::clamp(rng.normal(1.0, 0.2), 0.5, 1.5);
  const double hr_base = rng.normal(80.0, 8.0);
  const double age = rng.uniform(30.0, 85.0);
  double hr = hr_base;

  Trajectory traj;
  traj.group = z;
  State s{k, creat, hr, age};
  for (int t = 0; t < opt.steps; ++t) {
    const int a = detail::clinician_action(k, z, rng);
    const double effect = a == 0 ? 0.0 : (a == 1 ? 0.25 : 0.5) * (renal ? 0.6 : 1.0);
    const double drift = renal ? -0.10 - 0.05 * (creat - 1.0) : -0.10;
    const double regulation = (renal ? 0.03 : 0.10) * (4.0 - k);
    k = detail::clamp(k + drift + regulation + effect + rng.normal(0.0, 0.15), 1.5, 7.5);
    creat = detail::clamp(creat + rng.normal(0.0, renal ? 0.15 : 0.03), 0.4, 10.0);
    hr = 0.7 * hr + 0.3 * hr_base + rng.normal(0.0, 3.0);
    State next{k, creat, hr, age};
    const double r = reward(s, a, next, opt.reward);
    const bool last = t + 1 == opt.steps;
    traj.steps.push_back({s, a, next, r, last, z});
    s = std::move(next);
  }
  return traj;
}

inline NestedDataset synth_cohort(std::size_t n_background, std::size_t n_foreground, std::uint64_t seed,
                                  const CohortOptions& opt = {}) {
  if (n_background < 1 || n_foreground < 1) throw Error("cohort sizes must be at least 1");
  if (opt.steps < 1) throw Error("cohort trajectories need at least one step");
  NestedDataset ds;
  for (Group z : {Group::background, Group::foreground}) {
    const std::size_t n = z == Group::foreground ? n_foreground : n_background;
    const std::uint64_t group_seed = derive_seed(seed, static_cast<std::uint64_t>(as_int(z)));
    for (std::size_t i = 0; i < n; ++i) {
      SeedStream rng(derive_seed(group_seed, i));
      ds.part(z).push_back(synth_patient(z, opt, rng));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Policy heatmap over a potassium x creatinine grid
// ---------------------------------------------------------------------------

struct HeatmapGrid {
  double potassium_min = 2.5;
  double potassium_max = 5.5;
  int potassium_steps = 31;
  double creatinine_min = 0.5;
  double creatinine_max = 6.0;
  int creatinine_steps = 23;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HeatmapGrid, potassium_min, potassium_max, potassium_steps,
                                                creatinine_min, creatinine_max, creatinine_steps)

struct HeatmapCell {
  double potassium;
  double creatinine;
  int action;
};

inline double grid_point(double lo, double hi, int steps, int i) {
  return steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
}

/// Scores every grid cell with `policy`; other state features are held at `fixed`.
inline std::vector<HeatmapCell> policy_heatmap(const Policy& policy, Group z, const HeatmapGrid& grid,
                                               const State& fixed) {
  if (grid.potassium_steps < 1 || grid.creatinine_steps < 1) throw Error("heatmap grid needs at least one cell");
  if (fixed.size() != kStateDim) throw Error("fixed state has wrong dimension");
  std::vector<HeatmapCell> cells;
  State s = fixed;
  for (int i = 0; i < grid.potassium_steps; ++i) {
    for (int j = 0; j < grid.creatinine_steps; ++j) {
      s[kPotassium] = grid_point(grid.potassium_min, grid.potassium_max, grid.potassium_steps, i);
      s[kCreatinine] = grid_point(grid.creatinine_min, grid.creatinine_max, grid.creatinine_steps, j);
      cells.push_back({s[kPotassium], s[kCreatinine], policy(s, z)});
    }
  }
  return cells;
}

inline std::string heatmap_csv(const std::vector<HeatmapCell>& cells) {
  std::string out = "potassium,creatinine,recommended_action\n";
  char buf[96];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", c.potassium, c.creatinine, c.action);
    out += buf;
  }
  return out;
}

}  // namespace nfqi::clinical
