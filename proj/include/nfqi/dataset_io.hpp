#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"
#include "nfqi/mdp.hpp"

namespace nfqi {

// JSON Lines, one trajectory per line:
//   {"group": 0|1, "steps": [{"s": [...], "a": 0, "s2": [...], "r": -1.0, "done": true}, ...]}
// Doubles are written in shortest round-trip form, so reading back is bit-exact.

inline nlohmann::json to_json(const Trajectory& traj) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& t : traj.steps) {
    steps.push_back({{"s", t.state}, {"a", t.action}, {"s2", t.next_state}, {"r", t.reward}, {"done", t.terminal}});
  }
  return {{"group", as_int(traj.group)}, {"steps", std::move(steps)}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory traj;
  traj.group = group_from_int(j.at("group").get<int>());
  for (const auto& step : j.at("steps")) {
    Transition t;
    t.state = step.at("s").get<State>();
    t.action = step.at("a").get<int>();
    t.next_state = step.at("s2").get<State>();
    t.reward = step.at("r").get<double>();
    t.terminal = step.at("done").get<bool>();
    t.group = traj.group;
    traj.steps.push_back(std::move(t));
  }
  return traj;
}

inline void write_jsonl(std::ostream& out, const NestedDataset& ds) {
  for (const auto& traj : ds.background) out << to_json(traj).dump() << '\n';
  for (const auto& traj : ds.foreground) out << to_json(traj).dump() << '\n';
}

inline NestedDataset read_jsonl(std::istream& in) {
  NestedDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Trajectory traj = trajectory_from_json(nlohmann::json::parse(line));
      ds.part(traj.group).push_back(std::move(traj));
    } catch (const nlohmann::json::exception& e) {
      throw Error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(ds);
  return ds;
}

inline void save_dataset(const std::string& path, const NestedDataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_jsonl(out, ds);
}

inline NestedDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_jsonl(in);
}

}  // namespace nfqi
