#include "cathnav/demonstrations.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cathnav {

using nlohmann::json;

namespace {

json header_record(const DemoMeta& m) {
  return {{"type", "header"},
          {"format", "cathnav-demo"},
          {"version", kDemoFormatVersion},
          {"meta",
           {{"anatomy", m.anatomy},
            {"schema_hash", m.schema_hash},
            {"recorder", m.recorder},
            {"date", m.date},
            {"start_index", m.start_index},
            {"target_particle", m.target_particle},
            {"seed", m.seed}}},
          {"ray_count", m.ray_count},
          {"obs_dim", Observation::feature_size(m.ray_count)}};
}

json step_record(std::size_t i, const Observation& o, const Action& a) {
  const auto& p = o.pose;
  return {{"type", "step"},
          {"i", i},
          {"obs",
           {{"p", {p.position.x(), p.position.y(), p.position.z()}},
            {"alpha", p.alpha},
            {"gamma", p.gamma},
            {"u", o.u},
            {"v", {o.v.x(), o.v.y(), o.v.z()}},
            {"rays", o.rays}}},
          {"action", {a.alpha, a.gamma, a.insertion}}};
}

json outcome_record(bool success, std::size_t steps) {
  return {{"type", "outcome"}, {"success", success}, {"steps", steps}};
}

Vec3 vec3_of(const json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("demonstration: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

DemoRecorder::DemoRecorder(const std::filesystem::path& path, DemoMeta meta) : meta_(std::move(meta)) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw ConfigError("cannot write demonstration " + path.string());
  out_ << header_record(meta_).dump() << '\n';
  out_.flush();
}

DemoRecorder::~DemoRecorder() {
  if (!finished_) {
    try {
      finish(false);
    } catch (...) {
    }
  }
}

void DemoRecorder::add(const Observation& obs, const Action& action) {
  if (finished_) throw ContractViolation("demonstration already finished");
  if (obs.rays.size() != meta_.ray_count) {
    throw SchemaError("observation has " + std::to_string(obs.rays.size()) + " rays, recording expects " +
                      std::to_string(meta_.ray_count));
  }
  out_ << step_record(steps_++, obs, action).dump() << '\n';
  out_.flush();
}

void DemoRecorder::finish(bool success) {
  if (finished_) throw ContractViolation("demonstration already finished");
  finished_ = true;
  out_ << outcome_record(success, steps_).dump() << '\n';
  out_.close();
}

void save_demonstration(const Demonstration& demo, const std::filesystem::path& path) {
  DemoRecorder rec(path, demo.meta);
  for (const auto& s : demo.steps) rec.add(s.obs, s.action);
  rec.finish(demo.success);
}

Demonstration load_demonstration(const std::filesystem::path& path, const DemoExpectations& expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open demonstration " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  Demonstration demo;
  bool have_header = false;
  bool have_outcome = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      throw ParseError(path.string() + ": truncated record (no line terminator)", line_start);
    }
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (have_outcome) throw ParseError(path.string() + ": record after the outcome", line_start);

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": " + e.what(), line_start + (e.byte > 0 ? e.byte - 1 : 0));
    }
    const std::string type = j.value("type", "");
    try {
      if (!have_header) {
        if (type != "header" || j.value("format", "") != "cathnav-demo") {
          throw SchemaError(path.string() + ": missing demonstration header");
        }
        const int version = j.value("version", -1);
        if (version != kDemoFormatVersion) {
          throw SchemaError(path.string() + ": unsupported format version " + std::to_string(version));
        }
        const auto& m = j.at("meta");
        demo.meta.anatomy = m.value("anatomy", "");
        demo.meta.schema_hash = m.value("schema_hash", "");
        demo.meta.recorder = m.value("recorder", "");
        demo.meta.date = m.value("date", "");
        demo.meta.start_index = m.value("start_index", std::size_t{0});
        demo.meta.target_particle = m.value("target_particle", std::size_t{0});
        demo.meta.seed = m.value("seed", std::uint64_t{0});
        demo.meta.ray_count = j.at("ray_count").get<std::size_t>();
        if (j.value("obs_dim", std::size_t{0}) != Observation::feature_size(demo.meta.ray_count)) {
          throw SchemaError(path.string() + ": observation dimension does not match the ray count");
        }
        if (expect.schema_hash && *expect.schema_hash != demo.meta.schema_hash) {
          throw HashMismatch(path.string() + ": schema hash " + demo.meta.schema_hash + " does not match " +
                             *expect.schema_hash);
        }
        if (expect.ray_count && *expect.ray_count != demo.meta.ray_count) {
          throw SchemaError(path.string() + ": recorded with " + std::to_string(demo.meta.ray_count) +
                            " rays, expected " + std::to_string(*expect.ray_count));
        }
        have_header = true;
      } else if (type == "step") {
        if (j.at("i").get<std::size_t>() != demo.steps.size()) {
          throw SchemaError(path.string() + ": step records out of order");
        }
        DemoStep s;
        const auto& o = j.at("obs");
        s.obs.pose.position = vec3_of(o.at("p"));
        s.obs.pose.alpha = o.at("alpha").get<double>();
        s.obs.pose.gamma = o.at("gamma").get<double>();
        s.obs.u = o.at("u").get<double>();
        s.obs.v = vec3_of(o.at("v"));
        s.obs.rays = o.at("rays").get<std::vector<double>>();
        if (s.obs.rays.size() != demo.meta.ray_count) {
          throw SchemaError(path.string() + ": step " + std::to_string(demo.steps.size()) + " has " +
                            std::to_string(s.obs.rays.size()) + " rays, header declares " +
                            std::to_string(demo.meta.ray_count));
        }
        const Vec3 a = vec3_of(j.at("action"));
        s.action = {a.x(), a.y(), a.z()};
        demo.steps.push_back(std::move(s));
      } else if (type == "outcome") {
        demo.success = j.at("success").get<bool>();
        if (j.value("steps", demo.steps.size()) != demo.steps.size()) {
          throw SchemaError(path.string() + ": outcome step count does not match the records");
        }
        have_outcome = true;
      } else {
        throw SchemaError(path.string() + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": malformed record at byte " + std::to_string(line_start) + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError(path.string() + ": empty demonstration file", text.size());
  if (!have_outcome) throw ParseError(path.string() + ": truncated, no outcome record", text.size());
  return demo;
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& dir, const DemoExpectations& expect) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("demonstration directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Demonstration> demos;
  for (const auto& f : files) demos.push_back(load_demonstration(f, expect));
  return demos;
}

Action pursuit_bend(const TipPose& pose, const Vec3& aim) {
  const Vec3 d = pose.rotation().transpose() * (aim - pose.position);
  if (d.norm() < 1e-12) return {};
  Action a;
  a.alpha = std::atan2(d.z(), std::hypot(d.x(), d.y()));
  a.gamma = std::atan2(-d.x(), d.y());
  return a;
}

ScriptedExpert::ScriptedExpert(std::vector<Vec3> centerline, CatheterSpec spec, double noise, double lookahead)
    : centerline_(std::move(centerline)), spec_(spec), noise_(noise), lookahead_(lookahead) {
  spec_.validate();
  if (centerline_.empty()) throw ConfigError("scripted expert needs a centerline");
  if (!(noise_ >= 0.0)) throw ConfigError("scripted expert noise must be >= 0");
  if (!(lookahead_ > 0.0)) throw ConfigError("scripted expert lookahead must be > 0");
}

Action ScriptedExpert::act(const Observation& obs, std::mt19937_64& rng) {
  const Vec3& p = obs.pose.position;
  const Vec3 target = p + obs.v;

  const std::size_t last = centerline_.size() - 1;
  const std::size_t window_end = std::min(last, progress_ + 10);
  std::size_t nearest = progress_;
  for (std::size_t i = progress_; i <= window_end; ++i) {
    if ((centerline_[i] - p).squaredNorm() < (centerline_[nearest] - p).squaredNorm()) nearest = i;
  }
  progress_ = nearest;

  std::size_t target_idx = 0;
  for (std::size_t i = 0; i <= last; ++i) {
    if ((centerline_[i] - target).squaredNorm() < (centerline_[target_idx] - target).squaredNorm()) target_idx = i;
  }

  std::size_t aim_idx = progress_;
  while (aim_idx < last && (centerline_[aim_idx] - p).norm() < lookahead_) ++aim_idx;
  const bool go_for_target = aim_idx >= target_idx || obs.v.norm() < 1.5 * lookahead_;
  const Vec3 aim = go_for_target ? target : centerline_[aim_idx];

  Action a = pursuit_bend(obs.pose, aim);
  a.insertion = spec_.max_insertion();
  if (noise_ > 0.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double bound = max_bend_at_step(spec_, a.insertion);
    a.alpha += noise_ * bound * n01(rng);
    a.gamma += noise_ * bound * n01(rng);
    a.insertion *= 1.0 - std::min(1.0, std::abs(noise_ * n01(rng)));
  }
  return clamp_action(spec_, a);
}

Demonstration record_demonstration(Environment& env, Policy& policy, std::mt19937_64& rng, DemoMeta meta,
                                   const EpisodeLimits& limits) {
  Demonstration demo;
  meta.ray_count = env.config().rays.directions.size();
  meta.start_index = env.start_index();
  meta.target_particle = env.world().target_particle;
  demo.meta = std::move(meta);
  const EpisodeResult ep = run_episode(policy, env, rng, limits);
  demo.steps.reserve(ep.transitions.size());
  for (const auto& t : ep.transitions) demo.steps.push_back({t.obs, t.action});
  demo.success = ep.success;
  return demo;
}

}  // namespace cathnav
