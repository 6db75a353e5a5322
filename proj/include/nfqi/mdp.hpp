#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "nfqi/error.hpp"
#include "nfqi/rng.hpp"

namespace nfqi {

using State = std::vector<double>;

/// Environment group label z.
enum class Group : int { background = 0, foreground = 1 };

inline int as_int(Group z) { return static_cast<int>(z); }

inline Group group_from_int(int z) {
  if (z != 0 && z != 1) throw Error("group label must be 0 or 1");
  return static_cast<Group>(z);
}

inline double indicator(Group z) { return z == Group::foreground ? 1.0 : 0.0; }

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

/// One-hot encoding of action `id` among `num_actions`.
inline std::vector<double> one_hot(int id, int num_actions) {
  if (id < 0 || id >= num_actions) throw Error("action id out of range");
  std::vector<double> v(static_cast<std::size_t>(num_actions), 0.0);
  v[static_cast<std::size_t>(id)] = 1.0;
  return v;
}

/// Maps a state observed in environment group z to an action id.
using Policy = std::function<int(const State&, Group)>;

struct Transition {
  State state;
  int action = 0;
  State next_state;
  double reward = 0.0;
  bool terminal = false;
  Group group = Group::background;

  bool operator==(const Transition&) const = default;
};

struct Trajectory {
  std::vector<Transition> steps;
  Group group = Group::background;

  std::size_t size() const { return steps.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// Throws if chaining, terminal placement, group or finiteness invariants fail.
inline void validate(const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Transition& t = traj.steps[i];
    if (t.group != traj.group) throw Error("transition group differs from trajectory group");
    if (!all_finite(t.state) || !all_finite(t.next_state) || !std::isfinite(t.reward)) {
      throw Error("non-finite value in trajectory");
    }
    if (t.state.size() != t.next_state.size()) throw Error("state dimension mismatch");
    if (t.terminal && i + 1 != traj.steps.size()) throw Error("terminal transition before end of trajectory");
    if (i + 1 < traj.steps.size() && t.next_state != traj.steps[i + 1].state) {
      throw Error("trajectory chaining broken");
    }
  }
}

struct NestedDataset {
  std::vector<Trajectory> background;
  std::vector<Trajectory> foreground;

  const std::vector<Trajectory>& part(Group z) const { return z == Group::foreground ? foreground : background; }
  std::vector<Trajectory>& part(Group z) { return z == Group::foreground ? foreground : background; }

  std::size_t num_trajectories() const { return background.size() + foreground.size(); }

  std::size_t num_transitions() const {
    std::size_t n = 0;
    for (const auto& t : background) n += t.size();
    for (const auto& t : foreground) n += t.size();
    return n;
  }

  bool operator==(const NestedDataset&) const = default;
};

inline void validate(const NestedDataset& ds) {
  std::size_t dim = 0;
  bool have_dim = false;
  for (Group z : {Group::background, Group::foreground}) {
    for (const auto& traj : ds.part(z)) {
      if (traj.group != z) throw Error("trajectory stored in wrong partition");
      validate(traj);
      for (const auto& t : traj.steps) {
        if (!have_dim) {
          dim = t.state.size();
          have_dim = true;
        } else if (t.state.size() != dim) {
          throw Error("state dimension differs across dataset");
        }
      }
    }
  }
}

/// Background trajectories first, then foreground, each in stored order.
inline std::vector<Transition> flatten(const NestedDataset& ds) {
  std::vector<Transition> out;
  out.reserve(ds.num_transitions());
  for (const auto& traj : ds.background) out.insert(out.end(), traj.steps.begin(), traj.steps.end());
  for (const auto& traj : ds.foreground) out.insert(out.end(), traj.steps.begin(), traj.steps.end());
  return out;
}

inline std::vector<Transition> flatten(const std::vector<Trajectory>& trajs) {
  std::vector<Transition> out;
  for (const auto& traj : trajs) out.insert(out.end(), traj.steps.begin(), traj.steps.end());
  return out;
}

/// Stratified trajectory-level split. Each group of n trajectories contributes
/// round(train_fraction * n) to the train side, chosen by a seeded shuffle;
/// both sides keep the original relative order.
inline std::pair<NestedDataset, NestedDataset> split_train_test(const NestedDataset& ds, double train_fraction,
                                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("train_fraction must lie in (0, 1)");
  NestedDataset train;
  NestedDataset test;
  for (Group z : {Group::background, Group::foreground}) {
    const auto& src = ds.part(z);
    if (src.size() < 2) throw Error("group too small to split");
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(src.size())));
    std::vector<std::size_t> order(src.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SeedStream rng(derive_seed(seed, static_cast<std::uint64_t>(as_int(z))));
    rng.shuffle(order);
    std::vector<bool> in_train(src.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
    for (std::size_t i = 0; i < src.size(); ++i) {
      (in_train[i] ? train : test).part(z).push_back(src[i]);
    }
  }
  return {std::move(train), std::move(test)};
}

/// Reassigns group labels by permuting the existing multiset of trajectory
/// labels, so group sizes are preserved. Output partitions keep the relative
/// order of trajectories in flatten(ds).
inline NestedDataset structureless_relabel(const NestedDataset& ds, std::uint64_t seed) {
  std::vector<const Trajectory*> all;
  std::vector<Group> labels;
  for (Group z : {Group::background, Group::foreground}) {
    for (const auto& traj : ds.part(z)) {
      all.push_back(&traj);
      labels.push_back(z);
    }
  }
  SeedStream rng(seed);
  rng.shuffle(labels);
  NestedDataset out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    Trajectory traj = *all[i];
    traj.group = labels[i];
    for (auto& t : traj.steps) t.group = labels[i];
    out.part(labels[i]).push_back(std::move(traj));
  }
  return out;
}

}  // namespace nfqi
