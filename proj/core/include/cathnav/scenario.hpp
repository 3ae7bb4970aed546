#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cathnav/environment.hpp"

namespace cathnav {

/// Heartbeat field: displacement amplitude, period, and a linear weight
/// falloff around `center` (weight 1 at the center, 0 beyond `falloff`).
struct HeartbeatSpec {
  Vec3 amplitude = Vec3::Zero();
  double period = 1.0;
  Vec3 center = Vec3::Zero();
  double falloff = 100.0;
};

/// Everything needed to instantiate an Environment. Loaded from a JSON
/// scenario file or produced by a preset.
struct Scenario {
  std::string name;
  TriangleMesh mesh;
  std::filesystem::path mesh_file;                // as written in the scenario file
  std::optional<std::vector<Vec3>> centerline;    // precomputed; extracted from the mesh otherwise
  std::filesystem::path centerline_file;          // empty when auto-extracted or inline
  CenterlineOptions centerline_options;
  std::vector<TipPose> start_poses;
  TargetRegion target_region;
  Plane exit_plane;
  std::optional<Plane> outlet_plane;
  EnvironmentConfig env;
  SoftBodyParams softbody;
  HeartbeatSpec heartbeat;
  bool pin_open_ends = true;
  double target_spacing = 0.0;  // carrier lattice spacing, 0 = max(radius / 3, 1 mm)
  double target_clearance = 0.5;  // minimum carrier distance to the wall, mm
};

/// Parses a scenario document. Relative file references resolve against
/// `base_dir`.
Scenario parse_scenario(std::string_view json_text, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

/// Serializes the scenario. The mesh is referenced by `mesh_file` and is not
/// embedded; inline centerlines are embedded.
std::string scenario_to_json(const Scenario& s);

/// Writes `<dir>/<name>.json` and `<dir>/<name>.obj`.
std::filesystem::path save_scenario(Scenario s, const std::filesystem::path& dir);

/// Built-in toy anatomies: "straight_tube" and "curved_tube".
Scenario preset_scenario(std::string_view name);
std::vector<std::string> preset_names();

/// Preset name or path to a scenario file.
Scenario resolve_scenario(const std::string& name_or_path);

/// Fingerprint of everything that shapes observations and rewards.
std::string scenario_hash(const Scenario& s);

/// Fingerprint of the observation/action schema (ray fan and catheter).
std::string schema_hash(const EnvironmentConfig& env);

struct BuildOptions {
  std::optional<bool> heartbeat;
  std::optional<bool> contact_deformation;
  std::optional<int> max_steps;
};

/// Builds the soft-body world, target carriers, spaces and environment.
Environment build_environment(const Scenario& s, const BuildOptions& options = {});

/// Spaces and world without the environment wrapper.
std::pair<SoftBodyWorld, Spaces> build_world(const Scenario& s);

}  // namespace cathnav
