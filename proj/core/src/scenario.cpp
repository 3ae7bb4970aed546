#include "cathnav/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cathnav {

using nlohmann::json;

namespace {

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + ": expected a 3-element array");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(what) + ": expected numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("scenario field '") + key + "': " + e.what());
    }
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError(std::string(where) + ": unknown field '" + it.key() + "'");
  }
}

Plane plane_from(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  check_keys(j, {"point", "normal"}, what);
  Plane p;
  p.point = vec3_from(j.at("point"), what);
  p.normal = vec3_from(j.at("normal"), what);
  if (p.normal.norm() == 0.0) throw ConfigError(std::string(what) + ": zero normal");
  // Leave unit normals bit-exact so that save/load keeps the scenario hash.
  if (std::abs(p.normal.norm() - 1.0) > 1e-12) p.normal.normalize();
  return p;
}

json plane_to(const Plane& p) { return {{"point", vec3_to(p.point)}, {"normal", vec3_to(p.normal)}}; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& file) {
  std::filesystem::path p(file);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

Scenario parse_scenario(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError("scenario: expected a JSON object");
  check_keys(j,
             {"name", "mesh", "centerline", "centerline_spacing", "start_poses", "target", "exit_plane",
              "outlet_plane", "catheter", "reward", "rays", "max_steps", "heartbeat", "contact_deformation",
              "softbody", "pin_open_ends", "target_spacing", "target_clearance"},
             "scenario");

  Scenario s;
  read_opt(j, "name", s.name);
  if (!j.contains("mesh")) throw ConfigError("scenario: missing 'mesh'");
  s.mesh_file = j.at("mesh").get<std::string>();
  s.mesh = load_obj(resolve(base_dir, s.mesh_file.string()));

  read_opt(j, "centerline_spacing", s.centerline_options.spacing);
  if (auto it = j.find("centerline"); it != j.end()) {
    if (it->is_string()) {
      const auto v = it->get<std::string>();
      if (v != "auto") {
        s.centerline_file = v;
        s.centerline = load_centerline(resolve(base_dir, v));
      }
    } else if (it->is_array()) {
      std::vector<Vec3> pts;
      for (const auto& p : *it) pts.push_back(vec3_from(p, "centerline"));
      if (pts.empty()) throw ConfigError("scenario: empty inline centerline");
      s.centerline = std::move(pts);
    } else {
      throw ConfigError("scenario: 'centerline' must be \"auto\", a file name or a waypoint array");
    }
  }

  if (!j.contains("start_poses") || !j["start_poses"].is_array() || j["start_poses"].empty()) {
    throw ConfigError("scenario: 'start_poses' must be a non-empty array");
  }
  for (const auto& p : j["start_poses"]) {
    check_keys(p, {"position", "alpha", "gamma"}, "start pose");
    TipPose pose;
    pose.position = vec3_from(p.at("position"), "start pose position");
    read_opt(p, "alpha", pose.alpha);
    read_opt(p, "gamma", pose.gamma);
    if (!pose.finite()) throw ConfigError("scenario: non-finite start pose");
    s.start_poses.push_back(pose);
  }

  if (!j.contains("target")) throw ConfigError("scenario: missing 'target'");
  {
    const auto& t = j["target"];
    check_keys(t, {"center", "radius"}, "target");
    s.target_region.center = vec3_from(t.at("center"), "target center");
    read_opt(t, "radius", s.target_region.radius);
    if (!(s.target_region.radius >= 0.0)) throw ConfigError("scenario: target radius must be >= 0");
  }
  if (!j.contains("exit_plane")) throw ConfigError("scenario: missing 'exit_plane'");
  s.exit_plane = plane_from(j["exit_plane"], "exit_plane");
  if (j.contains("outlet_plane") && !j["outlet_plane"].is_null()) s.outlet_plane = plane_from(j["outlet_plane"], "outlet_plane");

  if (auto it = j.find("catheter"); it != j.end()) {
    check_keys(*it, {"segment_length", "theta_max", "outer_diameter", "v_max", "dt"}, "catheter");
    auto& c = s.env.catheter;
    read_opt(*it, "segment_length", c.segment_length);
    read_opt(*it, "theta_max", c.theta_max);
    read_opt(*it, "outer_diameter", c.outer_diameter);
    read_opt(*it, "v_max", c.v_max);
    read_opt(*it, "dt", c.dt);
  }
  if (auto it = j.find("reward"); it != j.end()) {
    check_keys(*it,
               {"r_obst", "r_exit", "r_target", "r_step", "r_centerline", "r_bending", "epsilon",
                "bend_threshold_fraction", "waypoint_radius"},
               "reward");
    auto& r = s.env.reward;
    read_opt(*it, "r_obst", r.r_obst);
    read_opt(*it, "r_exit", r.r_exit);
    read_opt(*it, "r_target", r.r_target);
    read_opt(*it, "r_step", r.r_step);
    read_opt(*it, "r_centerline", r.r_centerline);
    read_opt(*it, "r_bending", r.r_bending);
    read_opt(*it, "epsilon", r.epsilon);
    read_opt(*it, "bend_threshold_fraction", r.bend_threshold_fraction);
    read_opt(*it, "waypoint_radius", r.waypoint_radius);
  }
  if (auto it = j.find("rays"); it != j.end()) {
    check_keys(*it, {"length", "directions"}, "rays");
    double length = 30.0;
    read_opt(*it, "length", length);
    s.env.rays = RayFan::standard(length);
    if (it->contains("directions")) {
      s.env.rays.directions.clear();
      for (const auto& d : (*it)["directions"]) s.env.rays.directions.push_back(vec3_from(d, "ray direction"));
    }
  }
  read_opt(j, "max_steps", s.env.max_steps);
  read_opt(j, "contact_deformation", s.env.contact_deformation);
  if (auto it = j.find("heartbeat"); it != j.end()) {
    check_keys(*it, {"enabled", "amplitude", "period", "center", "falloff"}, "heartbeat");
    read_opt(*it, "enabled", s.env.heartbeat);
    if (it->contains("amplitude")) s.heartbeat.amplitude = vec3_from((*it)["amplitude"], "heartbeat amplitude");
    if (it->contains("center")) s.heartbeat.center = vec3_from((*it)["center"], "heartbeat center");
    read_opt(*it, "period", s.heartbeat.period);
    read_opt(*it, "falloff", s.heartbeat.falloff);
  }
  if (auto it = j.find("softbody"); it != j.end()) {
    check_keys(*it,
               {"solver_iterations", "stiffness", "contact_stiffness", "force_cap", "shape_stiffness",
                "velocity_damping"},
               "softbody");
    auto& p = s.softbody;
    read_opt(*it, "solver_iterations", p.solver_iterations);
    read_opt(*it, "stiffness", p.stiffness);
    read_opt(*it, "contact_stiffness", p.contact_stiffness);
    read_opt(*it, "force_cap", p.force_cap);
    read_opt(*it, "shape_stiffness", p.shape_stiffness);
    read_opt(*it, "velocity_damping", p.velocity_damping);
  }
  read_opt(j, "pin_open_ends", s.pin_open_ends);
  read_opt(j, "target_spacing", s.target_spacing);
  read_opt(j, "target_clearance", s.target_clearance);

  s.env.catheter.validate();
  s.env.reward.validate();
  s.softbody.validate();
  if (!(s.heartbeat.period > 0.0)) throw ConfigError("scenario: heartbeat period must be > 0");
  if (!(s.heartbeat.falloff > 0.0)) throw ConfigError("scenario: heartbeat falloff must be > 0");
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["mesh"] = s.mesh_file.string();
  if (!s.centerline_file.empty()) {
    j["centerline"] = s.centerline_file.string();
  } else if (s.centerline) {
    json pts = json::array();
    for (const auto& p : *s.centerline) pts.push_back(vec3_to(p));
    j["centerline"] = pts;
  } else {
    j["centerline"] = "auto";
  }
  j["centerline_spacing"] = s.centerline_options.spacing;
  json starts = json::array();
  for (const auto& p : s.start_poses) {
    starts.push_back({{"position", vec3_to(p.position)}, {"alpha", p.alpha}, {"gamma", p.gamma}});
  }
  j["start_poses"] = starts;
  j["target"] = {{"center", vec3_to(s.target_region.center)}, {"radius", s.target_region.radius}};
  j["exit_plane"] = plane_to(s.exit_plane);
  if (s.outlet_plane) j["outlet_plane"] = plane_to(*s.outlet_plane);
  const auto& c = s.env.catheter;
  j["catheter"] = {{"segment_length", c.segment_length}, {"theta_max", c.theta_max},
                   {"outer_diameter", c.outer_diameter}, {"v_max", c.v_max}, {"dt", c.dt}};
  const auto& r = s.env.reward;
  j["reward"] = {{"r_obst", r.r_obst},
                 {"r_exit", r.r_exit},
                 {"r_target", r.r_target},
                 {"r_step", r.r_step},
                 {"r_centerline", r.r_centerline},
                 {"r_bending", r.r_bending},
                 {"epsilon", r.epsilon},
                 {"bend_threshold_fraction", r.bend_threshold_fraction},
                 {"waypoint_radius", r.waypoint_radius}};
  json dirs = json::array();
  for (const auto& d : s.env.rays.directions) dirs.push_back(vec3_to(d));
  j["rays"] = {{"length", s.env.rays.length}, {"directions", dirs}};
  j["max_steps"] = s.env.max_steps;
  j["heartbeat"] = {{"enabled", s.env.heartbeat},
                    {"amplitude", vec3_to(s.heartbeat.amplitude)},
                    {"period", s.heartbeat.period},
                    {"center", vec3_to(s.heartbeat.center)},
                    {"falloff", s.heartbeat.falloff}};
  j["contact_deformation"] = s.env.contact_deformation;
  const auto& p = s.softbody;
  j["softbody"] = {{"solver_iterations", p.solver_iterations}, {"stiffness", p.stiffness},
                   {"contact_stiffness", p.contact_stiffness}, {"force_cap", p.force_cap},
                   {"shape_stiffness", p.shape_stiffness}, {"velocity_damping", p.velocity_damping}};
  j["pin_open_ends"] = s.pin_open_ends;
  j["target_spacing"] = s.target_spacing;
  j["target_clearance"] = s.target_clearance;
  return j.dump(2);
}

std::filesystem::path save_scenario(Scenario s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = s.name.empty() ? "scenario" : s.name;
  s.mesh_file = stem + ".obj";
  save_obj(s.mesh, dir / s.mesh_file);
  if (!s.centerline_file.empty() && s.centerline) {
    s.centerline_file = stem + "_centerline.txt";
    save_centerline(*s.centerline, dir / s.centerline_file);
  }
  const auto path = dir / (stem + ".json");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write scenario file " + path.string());
  out << scenario_to_json(s) << '\n';
  return path;
}

namespace {

Scenario curved_tube() {
  constexpr double radius = 10.0;
  constexpr double sweep = 60.0;
  const double angle = deg2rad(120.0);
  auto arc = [&](double phi) { return Vec3(sweep * (1.0 - std::cos(phi)), sweep * std::sin(phi), 0.0); };
  auto tangent = [&](double phi) { return Vec3(std::sin(phi), std::cos(phi), 0.0); };

  Scenario s;
  s.name = "curved_tube";
  s.mesh = make_curved_tube(radius, sweep, angle, 16, 32);
  s.mesh_file = "curved_tube.obj";
  for (double arc_len : {5.0, 10.0, 15.0}) {
    const double phi = arc_len / sweep;
    s.start_poses.push_back({arc(phi), 0.0, -phi});
  }
  s.target_region = {arc(deg2rad(105.0)), 6.0};
  s.exit_plane = {Vec3::Zero(), Vec3::UnitY()};
  s.outlet_plane = Plane{arc(angle), -tangent(angle)};
  s.env.max_steps = 800;
  s.heartbeat.amplitude = Vec3(3.0, 0.0, 0.0);
  s.heartbeat.period = 1.0;
  s.heartbeat.center = arc(deg2rad(90.0));
  s.heartbeat.falloff = 80.0;
  return s;
}

Scenario straight_tube() {
  Scenario s;
  s.name = "straight_tube";
  s.mesh = make_straight_tube(10.0, 120.0, 16, 30);
  s.mesh_file = "straight_tube.obj";
  for (double y : {5.0, 10.0, 15.0}) s.start_poses.push_back({Vec3(0.0, y, 0.0), 0.0, 0.0});
  s.target_region = {Vec3(0.0, 100.0, 0.0), 5.0};
  s.exit_plane = {Vec3::Zero(), Vec3::UnitY()};
  s.outlet_plane = Plane{Vec3(0.0, 120.0, 0.0), -Vec3::UnitY()};
  s.env.max_steps = 800;
  s.heartbeat.amplitude = Vec3(3.0, 0.0, 0.0);
  s.heartbeat.center = Vec3(0.0, 60.0, 0.0);
  s.heartbeat.falloff = 80.0;
  return s;
}

}  // namespace

Scenario preset_scenario(std::string_view name) {
  if (name == "curved_tube") return curved_tube();
  if (name == "straight_tube") return straight_tube();
  throw ConfigError("unknown scenario preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"curved_tube", "straight_tube"}; }

Scenario resolve_scenario(const std::string& name_or_path) {
  for (const auto& n : preset_names()) {
    if (n == name_or_path) return preset_scenario(n);
  }
  return load_scenario(name_or_path);
}

std::string scenario_hash(const Scenario& s) {
  std::ostringstream mesh;
  mesh.precision(17);
  // + 0.0 folds -0 into 0 so that a file round trip keeps the hash.
  for (const auto& v : s.mesh.vertices) mesh << v.x() + 0.0 << ' ' << v.y() + 0.0 << ' ' << v.z() + 0.0 << '\n';
  for (const auto& t : s.mesh.triangles) mesh << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  auto h = fnv1a64(mesh.str());
  json j = json::parse(scenario_to_json(s));
  j.erase("mesh");
  j.erase("name");
  h = fnv1a64(j.dump(), h);
  return hash_to_hex(h);
}

std::string schema_hash(const EnvironmentConfig& env) {
  json j;
  const auto& c = env.catheter;
  j["catheter"] = {c.segment_length, c.theta_max, c.outer_diameter, c.v_max, c.dt};
  json dirs = json::array();
  for (const auto& d : env.rays.directions) dirs.push_back(vec3_to(d.normalized()));
  j["rays"] = {{"length", env.rays.length}, {"directions", dirs}};
  j["features"] = Observation::feature_size(env.rays.directions.size());
  return hash_to_hex(fnv1a64(j.dump()));
}

std::pair<SoftBodyWorld, Spaces> build_world(const Scenario& s) {
  SoftBodyWorld world = SoftBodyWorld::from_mesh(s.mesh, s.softbody);
  if (world.triangles.empty()) throw ConfigError("scenario mesh has no triangles");

  std::vector<bool> pinned(world.surface_count, false);
  if (s.pin_open_ends) {
    for (const auto& loop : boundary_loops(s.mesh)) {
      for (auto v : loop) {
        world.pin(v);
        pinned[v] = true;
      }
    }
  }
  world.heartbeat.period = s.heartbeat.period;
  world.heartbeat.weights.resize(world.surface_count);
  for (std::size_t k = 0; k < world.surface_count; ++k) {
    const double d = (world.particles[k].rest_position - s.heartbeat.center).norm();
    world.heartbeat.weights[k] = pinned[k] ? 0.0 : std::clamp(1.0 - d / s.heartbeat.falloff, 0.0, 1.0);
  }

  Spaces spaces;
  spaces.start_poses = s.start_poses;
  spaces.target_region = s.target_region;
  spaces.exit_plane = s.exit_plane;
  spaces.outlet_plane = s.outlet_plane;
  if (s.centerline) {
    spaces.centerline = *s.centerline;
  } else {
    CenterlineOptions opts = s.centerline_options;
    opts.spacing = std::min(opts.spacing, s.env.reward.waypoint_radius);
    if (!opts.inlet_hint && !s.start_poses.empty()) opts.inlet_hint = s.start_poses.front().position;
    spaces.centerline = extract_centerline(s.mesh, opts);
  }
  for (const auto& w : spaces.centerline) {
    auto sc = world.signed_clearance(w);
    if (!sc || !(sc->second > 0.0)) throw ConfigError("centerline waypoint lies outside the lumen");
  }

  // Carrier lattice inside the target sphere and the lumen.
  const auto& region = s.target_region;
  const double spacing = s.target_spacing > 0.0 ? s.target_spacing : std::max(region.radius / 3.0, 1.0);
  std::vector<Vec3> lattice{region.center};
  const int n = static_cast<int>(std::floor(region.radius / spacing));
  for (int i = -n; i <= n; ++i) {
    for (int j = -n; j <= n; ++j) {
      for (int k = -n; k <= n; ++k) {
        if (i == 0 && j == 0 && k == 0) continue;
        const Vec3 off = spacing * Vec3(i, j, k);
        if (off.norm() <= region.radius + 1e-12) lattice.push_back(region.center + off);
      }
    }
  }
  for (const auto& p : lattice) {
    auto sc = world.signed_clearance(p);
    if (sc && sc->second >= s.target_clearance) spaces.target_candidates.push_back(world.add_carrier(p));
  }
  if (spaces.target_candidates.empty()) throw ConfigError("no particle within the target region");
  world.target_particle = spaces.target_candidates.front();

  double d_max = 0.0;
  for (const auto& w : spaces.centerline) d_max = std::max(d_max, (w - region.center).norm());
  for (const auto& p : spaces.start_poses) d_max = std::max(d_max, (p.position - region.center).norm());
  spaces.d_max = d_max + region.radius;
  if (!(spaces.d_max > 0.0)) spaces.d_max = 1.0;

  world.heartbeat.amplitude = s.heartbeat.amplitude;
  world.validate();
  world.refresh_surface();
  return {std::move(world), std::move(spaces)};
}

Environment build_environment(const Scenario& s, const BuildOptions& options) {
  auto [world, spaces] = build_world(s);
  EnvironmentConfig cfg = s.env;
  if (options.heartbeat) cfg.heartbeat = *options.heartbeat;
  if (options.contact_deformation) cfg.contact_deformation = *options.contact_deformation;
  if (options.max_steps) cfg.max_steps = *options.max_steps;
  if (!cfg.heartbeat) world.heartbeat.amplitude = Vec3::Zero();
  return Environment(std::move(world), std::move(spaces), std::move(cfg));
}

}  // namespace cathnav
