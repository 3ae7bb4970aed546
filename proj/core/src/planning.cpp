#include "cathnav/planning.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cathnav {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("path: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::vector<Vec3> PlannedPath::waypoints() const {
  std::vector<Vec3> w;
  w.reserve(records.size());
  for (const auto& r : records) w.push_back(r.pose.position);
  return w;
}

std::string path_to_json(const PlannedPath& p) {
  json records = json::array();
  for (std::size_t i = 0; i < p.records.size(); ++i) {
    const auto& r = p.records[i];
    records.push_back({{"i", i},
                       {"position", vec(r.pose.position)},
                       {"alpha", r.pose.alpha},
                       {"gamma", r.pose.gamma},
                       {"action", {r.action.alpha, r.action.gamma, r.action.insertion}},
                       {"target", vec(r.target)}});
  }
  json j = {{"format", "cathnav-path"},
            {"version", kPathFormatVersion},
            {"scenario", p.scenario},
            {"config_hash", p.config_hash},
            {"schema_hash", p.schema_hash},
            {"start_index", p.start_index},
            {"target_particle", p.target_particle},
            {"complete", p.complete},
            {"termination", p.termination},
            {"records", records}};
  return j.dump(1);
}

PlannedPath path_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("path: ") + e.what(), e.byte);
  }
  if (!j.is_object() || j.value("format", "") != "cathnav-path") throw SchemaError("not a cathnav path file");
  if (j.value("version", -1) != kPathFormatVersion) throw SchemaError("unsupported path file version");
  PlannedPath p;
  try {
    p.scenario = j.at("scenario").get<std::string>();
    p.config_hash = j.at("config_hash").get<std::string>();
    p.schema_hash = j.at("schema_hash").get<std::string>();
    p.start_index = j.at("start_index").get<std::size_t>();
    p.target_particle = j.at("target_particle").get<std::size_t>();
    p.complete = j.at("complete").get<bool>();
    p.termination = j.at("termination").get<std::string>();
    for (const auto& r : j.at("records")) {
      if (r.at("i").get<std::size_t>() != p.records.size()) throw SchemaError("path records out of order");
      PathRecord rec;
      rec.pose.position = vec_from(r.at("position"));
      rec.pose.alpha = r.at("alpha").get<double>();
      rec.pose.gamma = r.at("gamma").get<double>();
      const Vec3 a = vec_from(r.at("action"));
      rec.action = {a.x(), a.y(), a.z()};
      rec.target = vec_from(r.at("target"));
      p.records.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("path: ") + e.what());
  }
  return p;
}

void save_path(const PlannedPath& p, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write path file " + file.string());
  out << path_to_json(p) << '\n';
}

PlannedPath load_path(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open path file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return path_from_json(ss.str());
}

PlannedPath plan_path(Policy& policy, Environment& env, std::mt19937_64& rng) {
  PlannedPath p;
  p.start_index = env.start_index();
  p.target_particle = env.world().target_particle;
  p.records.push_back({env.pose(), Action{}, env.target()});
  policy.reset();
  Observation obs = env.observe();
  Termination term = Termination::none;
  while (term == Termination::none) {
    const StepResult sr = env.step(policy.act(obs, rng));
    p.records.push_back({env.pose(), sr.applied, env.target()});
    obs = sr.observation;
    term = sr.termination;
  }
  p.complete = term == Termination::target;
  p.termination = to_string(term);
  return p;
}

}  // namespace cathnav
