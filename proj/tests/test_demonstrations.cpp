#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cathnav/demonstrations.hpp"
#include "cathnav/scenario.hpp"

using namespace cathnav;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cathnav_test_demos";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Demonstration record(Environment& env, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  env.reset(rng);
  ScriptedExpert expert(env.spaces().centerline, env.config().catheter, noise);
  DemoMeta meta;
  meta.anatomy = "test";
  meta.schema_hash = schema_hash(env.config());
  meta.seed = seed;
  return record_demonstration(env, expert, rng, meta, {});
}

Demonstration small_demo() {
  Demonstration d;
  d.meta.anatomy = "straight_tube";
  d.meta.schema_hash = "h1";
  d.meta.recorder = "unit";
  d.meta.date = "2026-01-01";
  d.meta.ray_count = 3;
  d.meta.start_index = 2;
  d.meta.target_particle = 17;
  d.meta.seed = 99;
  for (int i = 0; i < 4; ++i) {
    DemoStep s;
    s.obs.pose.position = Vec3(0.1 * i, 1.0 / 3.0 + i, -2.0);
    s.obs.pose.alpha = 0.01 * i;
    s.obs.pose.gamma = -0.02 * i;
    s.obs.u = 0.5 - 0.1 * i;
    s.obs.v = Vec3(1, 2, 3) * (i + 1);
    s.obs.rays = {0.1, 0.2 * i, 1.0};
    s.action = {0.001 * i, -0.002, 0.5};
    d.steps.push_back(s);
  }
  d.success = true;
  return d;
}

}  // namespace

TEST(DemoFile, RoundTripIsExact) {
  const Demonstration d = small_demo();
  const fs::path p = scratch("roundtrip.jsonl");
  save_demonstration(d, p);
  const Demonstration r = load_demonstration(p);
  EXPECT_EQ(r.meta.anatomy, d.meta.anatomy);
  EXPECT_EQ(r.meta.schema_hash, d.meta.schema_hash);
  EXPECT_EQ(r.meta.recorder, d.meta.recorder);
  EXPECT_EQ(r.meta.date, d.meta.date);
  EXPECT_EQ(r.meta.ray_count, 3u);
  EXPECT_EQ(r.meta.start_index, 2u);
  EXPECT_EQ(r.meta.target_particle, 17u);
  EXPECT_EQ(r.meta.seed, 99u);
  EXPECT_TRUE(r.success);
  ASSERT_EQ(r.steps.size(), d.steps.size());
  for (std::size_t i = 0; i < d.steps.size(); ++i) {
    EXPECT_EQ(r.steps[i].obs.pose.position, d.steps[i].obs.pose.position);
    EXPECT_EQ(r.steps[i].obs.pose.alpha, d.steps[i].obs.pose.alpha);
    EXPECT_EQ(r.steps[i].obs.pose.gamma, d.steps[i].obs.pose.gamma);
    EXPECT_EQ(r.steps[i].obs.u, d.steps[i].obs.u);
    EXPECT_EQ(r.steps[i].obs.v, d.steps[i].obs.v);
    EXPECT_EQ(r.steps[i].obs.rays, d.steps[i].obs.rays);
    EXPECT_EQ(r.steps[i].action.alpha, d.steps[i].action.alpha);
    EXPECT_EQ(r.steps[i].action.gamma, d.steps[i].action.gamma);
    EXPECT_EQ(r.steps[i].action.insertion, d.steps[i].action.insertion);
  }
  // Saving the loaded copy reproduces the bytes.
  const fs::path q = scratch("roundtrip2.jsonl");
  save_demonstration(r, q);
  EXPECT_EQ(slurp(p), slurp(q));
}

TEST(DemoFile, TruncatedFileReportsOffset) {
  const fs::path p = scratch("full.jsonl");
  save_demonstration(small_demo(), p);
  const std::string text = slurp(p);
  // Cut in the middle of the third line.
  std::size_t third = text.find('\n', text.find('\n') + 1) + 1;
  const fs::path t = scratch("truncated.jsonl");
  std::ofstream(t, std::ios::binary) << text.substr(0, third + 10);
  try {
    load_demonstration(t);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), third);
  }
  // Whole lines but no outcome record.
  const std::size_t last_line = text.rfind('\n', text.size() - 2) + 1;
  std::ofstream(t, std::ios::binary | std::ios::trunc) << text.substr(0, last_line);
  try {
    load_demonstration(t);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), last_line);
  }
  // Garbage inside a line points into that line.
  std::string bad = text;
  bad[third + 1] = '#';
  std::ofstream(t, std::ios::binary | std::ios::trunc) << bad;
  try {
    load_demonstration(t);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GE(e.byte_offset(), third);
    EXPECT_LE(e.byte_offset(), third + 1);
  }
}

TEST(DemoFile, SchemaChecks) {
  const fs::path p = scratch("schema.jsonl");
  save_demonstration(small_demo(), p);
  EXPECT_THROW(load_demonstration(p, {std::nullopt, 14}), SchemaError);
  EXPECT_THROW(load_demonstration(p, {std::string("other"), std::nullopt}), HashMismatch);
  EXPECT_NO_THROW(load_demonstration(p, {std::string("h1"), 3}));
  EXPECT_THROW(load_demonstration(scratch("missing.jsonl")), ConfigError);

  std::string text = slurp(p);
  const auto pos = text.find("\"step\"");
  text.replace(pos, 6, "\"stop\"");
  const fs::path q = scratch("schema_bad.jsonl");
  std::ofstream(q, std::ios::binary) << text;
  EXPECT_THROW(load_demonstration(q), SchemaError);

  DemoRecorder rec(scratch("wrong_rays.jsonl"), small_demo().meta);
  Observation o;
  o.rays = {1.0};
  EXPECT_THROW(rec.add(o, {}), SchemaError);
}

TEST(DemoFile, RecorderWritesFailedOutcomeWhenAbandoned) {
  const fs::path p = scratch("abandoned.jsonl");
  {
    DemoRecorder rec(p, small_demo().meta);
    rec.add(small_demo().steps[0].obs, small_demo().steps[0].action);
    EXPECT_EQ(rec.size(), 1u);
  }
  const Demonstration d = load_demonstration(p);
  EXPECT_FALSE(d.success);
  EXPECT_EQ(d.steps.size(), 1u);

  DemoRecorder rec(scratch("twice.jsonl"), small_demo().meta);
  rec.finish(true);
  EXPECT_TRUE(rec.finished());
  EXPECT_THROW(rec.finish(true), ContractViolation);
  EXPECT_THROW(rec.add(small_demo().steps[0].obs, {}), ContractViolation);
}

TEST(DemoFile, DirectoryLoadIsSorted) {
  const fs::path dir = scratch("dir");
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (int i : {2, 0, 1}) {
    Demonstration d = small_demo();
    d.meta.seed = static_cast<std::uint64_t>(i);
    save_demonstration(d, dir / ("demo_" + std::to_string(i) + ".jsonl"));
  }
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto demos = load_demonstrations(dir);
  ASSERT_EQ(demos.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(demos[i].meta.seed, i);
  EXPECT_THROW(load_demonstrations(dir / "nope"), ConfigError);
}

TEST(PursuitBend, PointsTheTipAtTheAim) {
  const CatheterSpec spec;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    TipPose pose;
    pose.position = Vec3(n(rng), n(rng), n(rng));
    pose.alpha = 0.5 * n(rng);
    pose.gamma = 0.5 * n(rng);
    // Small offsets keep the bend inside the per-step bound.
    const Vec3 local(0.003 * n(rng), 1.0, 0.003 * n(rng));
    const Vec3 aim = pose.position + pose.rotation() * local;
    Action a = pursuit_bend(pose, aim);
    a.insertion = spec.max_insertion();
    ASSERT_TRUE(is_clamped(spec, a)) << i;
    const TipPose next = apply_action(spec, pose, a);
    const Vec3 heading = next.rotation() * Vec3::UnitY();
    EXPECT_GT(heading.dot((aim - pose.position).normalized()), 1.0 - 1e-9) << i;
  }
  EXPECT_EQ(pursuit_bend(TipPose{}, Vec3::Zero()).alpha, 0.0);
}

TEST(ScriptedExpert, Validation) {
  const std::vector<Vec3> cl = {{0, 0, 0}, {0, 1, 0}};
  EXPECT_THROW(ScriptedExpert({}, CatheterSpec{}, 0.0), ConfigError);
  EXPECT_THROW(ScriptedExpert(cl, CatheterSpec{}, -0.1), ConfigError);
  EXPECT_THROW(ScriptedExpert(cl, CatheterSpec{}, 0.0, 0.0), ConfigError);
}

TEST(ScriptedExpert, NoiseFreeExpertReachesTargetsInStraightTube) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Demonstration d = record(env, seed, 0.0);
    EXPECT_TRUE(d.success) << seed;
    EXPECT_EQ(d.meta.ray_count, env.config().rays.directions.size());
    EXPECT_EQ(d.meta.start_index, env.start_index());
    EXPECT_FALSE(d.steps.empty());
  }
}

TEST(ScriptedExpert, SeededRecordingsAreIdentical) {
  Environment env = build_environment(preset_scenario("curved_tube"));
  const fs::path a = scratch("seeded_a.jsonl"), b = scratch("seeded_b.jsonl");
  save_demonstration(record(env, 11, 0.1), a);
  save_demonstration(record(env, 11, 0.1), b);
  EXPECT_EQ(slurp(a), slurp(b));
  save_demonstration(record(env, 12, 0.1), b);
  EXPECT_NE(slurp(a), slurp(b));
}

TEST(ScriptedExpert, NoiseDoesNotShortenEpisodes) {
  Environment env = build_environment(preset_scenario("curved_tube"));
  std::size_t clean = 0, noisy = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    clean += record(env, seed, 0.0).steps.size();
    noisy += record(env, seed, 0.2).steps.size();
  }
  EXPECT_GE(noisy, clean);
}

TEST(ScriptedExpert, EveryActionRespectsTheBendBound) {
  Environment env = build_environment(preset_scenario("curved_tube"));
  const CatheterSpec& spec = env.config().catheter;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& s : record(env, seed, 0.3).steps) {
      EXPECT_TRUE(is_clamped(spec, s.action));
      const double bound = max_bend_at_step(spec, s.action.insertion);
      EXPECT_LE(std::abs(s.action.alpha), bound + 1e-12);
      EXPECT_LE(std::abs(s.action.gamma), bound + 1e-12);
      EXPECT_GE(s.action.insertion, 0.0);
      EXPECT_LE(s.action.insertion, spec.max_insertion() + 1e-12);
    }
  }
}
