#pragma once

#include <cmath>

#include "json.hpp"
#include "nfqi/mdp.hpp"

namespace nfqi::cartpole {

// State layout: [x (m), x_dot (m/s), theta (rad, 0 = upright), theta_dot (rad/s)].
inline constexpr int kStateDim = 4;
inline constexpr int kNumActions = 2;
inline constexpr int kPushLeft = 0;
inline constexpr int kPushRight = 1;

struct Params {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double action_force = 10.0;
  double time_step = 0.02;
  double theta_threshold = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
  double x_threshold = 2.4;
  /// Constant leftward force present only in the foreground environment.
  double foreground_force = 0.0;
  int max_steps = 1000;

  bool operator==(const Params&) const = default;
};

inline void validate(const Params& p) {
  if (!(p.gravity > 0 && p.cart_mass > 0 && p.pole_mass > 0 && p.pole_half_length > 0 && p.action_force > 0 &&
        p.time_step > 0 && p.theta_threshold > 0 && p.x_threshold > 0)) {
    throw Error("cartpole parameters must be strictly positive");
  }
  if (p.foreground_force < 0) throw Error("foreground_force must be non-negative");
  if (p.max_steps < 1) throw Error("max_steps must be at least 1");
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Params, gravity, cart_mass, pole_mass, pole_half_length, action_force,
                                                time_step, theta_threshold, x_threshold, foreground_force, max_steps)

struct Outcome {
  State next_state;
  double reward = 0.0;
  bool terminal = false;
};

/// Signed horizontal force for `action` in group `z`: left is -(F + c), right is
/// +(F - c) in the foreground; c is ignored for the background.
inline double applied_force(int action, Group z, const Params& p) {
  const double bias = z == Group::foreground ? p.foreground_force : 0.0;
  if (action == kPushLeft) return -(p.action_force + bias);
  if (action == kPushRight) return p.action_force - bias;
  throw Error("invalid cartpole action");
}

inline bool out_of_bounds(std::span<const double> s, const Params& p) {
  return std::abs(s[2]) > p.theta_threshold || std::abs(s[0]) > p.x_threshold;
}

/// One step of the classic cart-pole update: accelerations from the pre-step
/// state, then explicit Euler on (x, theta) with the old velocities and on
/// (x_dot, theta_dot) with the new accelerations.
inline Outcome step(std::span<const double> state, int action, Group z, const Params& p) {
  if (state.size() != kStateDim || !all_finite(state)) throw Error("invalid state");
  const double force = applied_force(action, z, p);
  const double x = state[0], x_dot = state[1], theta = state[2], theta_dot = state[3];

  const double total_mass = p.cart_mass + p.pole_mass;
  const double polemass_length = p.pole_mass * p.pole_half_length;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                           (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  Outcome out;
  out.next_state = {x + p.time_step * x_dot, x_dot + p.time_step * x_acc, theta + p.time_step * theta_dot,
                    theta_dot + p.time_step * theta_acc};
  out.terminal = out_of_bounds(out.next_state, p);
  out.reward = out.terminal ? -1.0 : 0.0;
  return out;
}

/// Each component uniform on [-0.05, 0.05].
inline State random_start(SeedStream& rng) {
  State s(kStateDim);
  for (auto& v : s) v = rng.uniform(-0.05, 0.05);
  return s;
}

/// Uniform-random behaviour policy until the first terminal step or max_steps.
inline Trajectory collect_random_trajectory(Group z, const Params& p, SeedStream& rng) {
  Trajectory traj;
  traj.group = z;
  State s = random_start(rng);
  for (int t = 0; t < p.max_steps; ++t) {
    const int a = static_cast<int>(rng.below(kNumActions));
    Outcome o = step(s, a, z, p);
    traj.steps.push_back({s, a, o.next_state, o.reward, o.terminal, z});
    if (o.terminal) break;
    s = std::move(o.next_state);
  }
  return traj;
}

/// `n_background` and `n_foreground` random trajectories; trajectory i of group
/// z draws from its own stream derived from (seed, z, i).
inline NestedDataset collect_dataset(std::size_t n_background, std::size_t n_foreground, const Params& p,
                                     std::uint64_t seed) {
  NestedDataset ds;
  for (Group z : {Group::background, Group::foreground}) {
    const std::size_t n = z == Group::foreground ? n_foreground : n_background;
    const std::uint64_t group_seed = derive_seed(seed, static_cast<std::uint64_t>(as_int(z)));
    for (std::size_t i = 0; i < n; ++i) {
      SeedStream rng(derive_seed(group_seed, i));
      ds.part(z).push_back(collect_random_trajectory(z, p, rng));
    }
  }
  return ds;
}

/// Number of non-terminal steps from `start`, capped at max_steps.
inline int rollout_policy(const Policy& policy, Group z, const Params& p, State start) {
  if (out_of_bounds(start, p)) return 0;
  int survived = 0;
  while (survived < p.max_steps) {
    Outcome o = step(start, policy(start, z), z, p);
    if (o.terminal) break;
    ++survived;
    start = std::move(o.next_state);
  }
  return survived;
}

inline int rollout_policy(const Policy& policy, Group z, const Params& p, SeedStream& rng) {
  return rollout_policy(policy, z, p, random_start(rng));
}

}  // namespace nfqi::cartpole
