#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cathnav/scenario.hpp"

using namespace cathnav;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "cathnav_test_scenario" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Minimal valid document around a mesh file.
std::string minimal(const std::string& extra = "") {
  return std::string("{\"mesh\": \"tube.obj\", \"start_poses\": [{\"position\": [0, 5, 0]}],"
                     " \"target\": {\"center\": [0, 40, 0], \"radius\": 3},"
                     " \"exit_plane\": {\"point\": [0, 0, 0], \"normal\": [0, 1, 0]}") +
         extra + "}";
}

fs::path dir_with_tube() {
  const fs::path d = scratch_dir("minimal");
  save_obj(make_straight_tube(8.0, 60.0, 12, 12), d / "tube.obj");
  return d;
}

}  // namespace

TEST(Presets, NamesAndUnknown) {
  EXPECT_EQ(preset_names(), (std::vector<std::string>{"curved_tube", "straight_tube"}));
  EXPECT_THROW(preset_scenario("aorta"), ConfigError);
  EXPECT_EQ(resolve_scenario("straight_tube").name, "straight_tube");
  EXPECT_THROW(resolve_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST(Presets, BuildConsistentWorlds) {
  for (const auto& name : preset_names()) {
    const Scenario s = preset_scenario(name);
    auto [world, spaces] = build_world(s);
    EXPECT_EQ(spaces.start_poses.size(), 3u) << name;
    ASSERT_FALSE(spaces.centerline.empty()) << name;
    for (const auto& w : spaces.centerline) {
      const auto sc = world.signed_clearance(w);
      ASSERT_TRUE(sc);
      EXPECT_GT(sc->second, 0.0) << name;
    }
    // Consecutive waypoints no further apart than the credit radius allows.
    for (std::size_t i = 1; i < spaces.centerline.size(); ++i) {
      EXPECT_LE((spaces.centerline[i] - spaces.centerline[i - 1]).norm(), 2.0 * s.env.reward.waypoint_radius + 1e-9);
    }
    ASSERT_FALSE(spaces.target_candidates.empty());
    for (auto c : spaces.target_candidates) {
      const Vec3 p = world.particles[c].position;
      EXPECT_LE((p - s.target_region.center).norm(), s.target_region.radius + 1e-9) << name;
      EXPECT_GE(world.signed_clearance(p)->second, s.target_clearance - 1e-9) << name;
    }
    EXPECT_GE(spaces.d_max, (spaces.start_poses[0].position - s.target_region.center).norm());
    // Open ends are pinned.
    int pinned = 0;
    for (std::size_t k = 0; k < world.surface_count; ++k) pinned += world.particles[k].inverse_mass == 0.0;
    EXPECT_EQ(pinned, 32) << name;
  }
}

TEST(Presets, ShippedFilesMatchPresets) {
  for (const auto& name : preset_names()) {
    const Scenario file = load_scenario(fs::path(CATHNAV_SOURCE_DIR) / "scenarios" / (name + ".json"));
    EXPECT_EQ(scenario_hash(file), scenario_hash(preset_scenario(name))) << name;
  }
}

TEST(ScenarioFile, SaveLoadRoundTrip) {
  Scenario s = preset_scenario("curved_tube");
  s.env.reward.r_step = -2e-5;
  s.heartbeat.period = 0.75;
  s.centerline = std::vector<Vec3>{{0, 1, 0}, {0.5, 10, 0}, {2, 20, 0}};
  const fs::path d = scratch_dir("roundtrip");
  const fs::path json = save_scenario(s, d);
  EXPECT_TRUE(fs::exists(d / "curved_tube.obj"));
  const Scenario r = load_scenario(json);
  EXPECT_EQ(r.name, s.name);
  EXPECT_EQ(scenario_hash(r), scenario_hash(s));
  EXPECT_EQ(r.env.reward.r_step, -2e-5);
  EXPECT_EQ(r.heartbeat.period, 0.75);
  ASSERT_TRUE(r.centerline);
  EXPECT_EQ(*r.centerline, *s.centerline);
  ASSERT_TRUE(r.outlet_plane);
  EXPECT_LT((r.outlet_plane->normal - s.outlet_plane->normal).norm(), 1e-12);
  EXPECT_EQ(r.start_poses.size(), s.start_poses.size());
  EXPECT_EQ(r.start_poses[2].gamma, s.start_poses[2].gamma);
}

TEST(ScenarioFile, CenterlineFileReference) {
  const fs::path d = dir_with_tube();
  save_centerline({{0, 5, 0}, {0, 20, 0}, {0, 35, 0}}, d / "cl.txt");
  std::ofstream(d / "s.json") << minimal(", \"centerline\": \"cl.txt\"");
  const Scenario s = load_scenario(d / "s.json");
  ASSERT_TRUE(s.centerline);
  EXPECT_EQ(s.centerline->size(), 3u);
  EXPECT_EQ(s.centerline_file, "cl.txt");
  const Environment env = build_environment(s);
  EXPECT_EQ(env.spaces().centerline.size(), 3u);
}

TEST(ScenarioFile, MinimalDocumentUsesDefaults) {
  const fs::path d = dir_with_tube();
  const Scenario s = parse_scenario(minimal(), d);
  EXPECT_EQ(s.env.catheter.segment_length, 50.0);
  EXPECT_EQ(s.env.reward.epsilon, 10.0);
  EXPECT_EQ(s.env.rays.directions.size(), 14u);
  EXPECT_FALSE(s.env.heartbeat);
  EXPECT_FALSE(s.outlet_plane);
  EXPECT_FALSE(s.centerline);
  const Environment env = build_environment(s);
  EXPECT_FALSE(env.spaces().centerline.empty());
  EXPECT_FALSE(env.config().heartbeat || env.config().contact_deformation);
}

TEST(ScenarioFile, Errors) {
  const fs::path d = dir_with_tube();
  try {
    parse_scenario("{\"mesh\": \"tube.obj\",, }", d);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), 21u);
  }
  EXPECT_THROW(parse_scenario("[1, 2]", d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"colour\": 1"), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"reward\": {\"r_stepp\": 1}"), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"max_steps\": \"many\""), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"catheter\": {\"dt\": -1}"), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"heartbeat\": {\"period\": 0}"), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"centerline\": 3"), d), ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"centerline\": []"), d), ConfigError);
  EXPECT_THROW(parse_scenario(
                   "{\"mesh\": \"tube.obj\", \"start_poses\": [], \"target\": {\"center\": [0,0,0]}, "
                   "\"exit_plane\": {\"point\": [0,0,0], \"normal\": [0,1,0]}}",
                   d),
               ConfigError);
  EXPECT_THROW(parse_scenario(minimal(", \"outlet_plane\": {\"point\": [0,0,0], \"normal\": [0,0,0]}"), d),
               ConfigError);

  // A missing mesh names the file.
  try {
    parse_scenario(minimal(), d / "elsewhere");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("tube.obj"), std::string::npos);
  }
}

TEST(ScenarioFile, BuildErrors) {
  const fs::path d = dir_with_tube();
  // Target outside the lumen: no carrier can be placed.
  Scenario s = parse_scenario(minimal(), d);
  s.target_region = {Vec3(30, 30, 0), 2.0};
  EXPECT_THROW(build_environment(s), ConfigError);
  // Centerline through the wall.
  s = parse_scenario(minimal(", \"centerline\": [[0, 5, 0], [20, 20, 0]]"), d);
  EXPECT_THROW(build_environment(s), ConfigError);
}

TEST(Hashes, SensitiveToWhatShapesObservationsAndRewards) {
  const Scenario base = preset_scenario("straight_tube");
  const std::string h = scenario_hash(base);
  EXPECT_EQ(h, scenario_hash(preset_scenario("straight_tube")));
  EXPECT_NE(h, scenario_hash(preset_scenario("curved_tube")));

  Scenario renamed = base;
  renamed.name = "other";
  renamed.mesh_file = "elsewhere.obj";
  EXPECT_EQ(scenario_hash(renamed), h);

  Scenario reward = base;
  reward.env.reward.r_target = 2.0;
  EXPECT_NE(scenario_hash(reward), h);

  Scenario mesh = base;
  mesh.mesh.vertices[7].x() += 1e-9;
  EXPECT_NE(scenario_hash(mesh), h);

  const std::string sh = schema_hash(base.env);
  EnvironmentConfig env = base.env;
  env.reward.r_target = 2.0;
  env.max_steps = 5;
  EXPECT_EQ(schema_hash(env), sh);
  env.rays = RayFan::standard(25.0);
  EXPECT_NE(schema_hash(env), sh);
  env = base.env;
  env.catheter.theta_max = 1.0;
  EXPECT_NE(schema_hash(env), sh);
}

TEST(BuildOptions, Overrides) {
  const Scenario s = preset_scenario("curved_tube");
  EXPECT_FALSE(build_environment(s).config().heartbeat);
  const Environment hb = build_environment(s, {true, std::nullopt, std::nullopt});
  EXPECT_TRUE(hb.config().heartbeat);
  const Environment cd = build_environment(s, {std::nullopt, true, 17});
  EXPECT_TRUE(cd.config().contact_deformation);
  EXPECT_EQ(cd.config().max_steps, 17);
  EXPECT_EQ(build_environment(s).config().max_steps, 800);
  // Heartbeat disabled zeroes the amplitude.
  EXPECT_EQ(build_environment(s).world().heartbeat.amplitude, Vec3::Zero());
  EXPECT_EQ(hb.world().heartbeat.amplitude, Vec3(3, 0, 0));
}
