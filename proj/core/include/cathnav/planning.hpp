#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cathnav/environment.hpp"

namespace cathnav {

inline constexpr int kPathFormatVersion = 1;

struct PathRecord {
  TipPose pose;    // pose after the step (record 0 is the start pose)
  Action action;   // action that produced the pose; zero for record 0
  Vec3 target = Vec3::Zero();

  friend bool operator==(const PathRecord&, const PathRecord&) = default;
};

/// Greedy rollout exported for guidance. `complete` is false when the
/// rollout ended without reaching the target.
struct PlannedPath {
  std::string scenario;
  std::string config_hash;
  std::string schema_hash;
  std::size_t start_index = 0;
  std::size_t target_particle = 0;
  bool complete = false;
  std::string termination;
  std::vector<PathRecord> records;

  std::vector<Vec3> waypoints() const;

  friend bool operator==(const PlannedPath&, const PlannedPath&) = default;
};

std::string path_to_json(const PlannedPath& p);
PlannedPath path_from_json(const std::string& text);
void save_path(const PlannedPath& p, const std::filesystem::path& file);
PlannedPath load_path(const std::filesystem::path& file);

/// Runs `policy` from the environment's current state (call reset first)
/// and records every pose.
PlannedPath plan_path(Policy& policy, Environment& env, std::mt19937_64& rng);

}  // namespace cathnav
