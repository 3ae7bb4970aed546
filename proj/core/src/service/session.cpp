#include "cathnav/service/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cathnav::service {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("frame: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

bool valid_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

Environment make_environment(const Scenario& scenario, const SessionOptions& o, long limit_ticks) {
  Scenario s = scenario;
  s.env.catheter.dt = o.tick_dt / o.substeps;
  s.env.catheter.v_max = o.max_insertion_speed;
  BuildOptions b;
  b.heartbeat = o.heartbeat;
  b.contact_deformation = o.contact_deformation;
  b.max_steps = static_cast<int>(limit_ticks * o.substeps + 1);
  return build_environment(s, b);
}

}  // namespace

const char* to_string(SessionState s) {
  switch (s) {
    case SessionState::ready: return "ready";
    case SessionState::running: return "running";
    case SessionState::succeeded: return "succeeded";
    case SessionState::failed_timeout: return "failed_timeout";
    case SessionState::failed_collision: return "failed_collision";
    case SessionState::failed_error: return "failed_error";
  }
  return "unknown";
}

const char* to_string(Guidance g) { return g == Guidance::cgail ? "cgail" : "centerline"; }

SessionState session_state_from(const std::string& s) {
  for (auto st : {SessionState::ready, SessionState::running, SessionState::succeeded, SessionState::failed_timeout,
                  SessionState::failed_collision, SessionState::failed_error}) {
    if (s == to_string(st)) return st;
  }
  throw SchemaError("unknown session state '" + s + "'");
}

Guidance guidance_from(const std::string& s) {
  if (s == "centerline") return Guidance::centerline;
  if (s == "cgail") return Guidance::cgail;
  throw ConfigError("unknown guidance '" + s + "' (expected centerline or cgail)");
}

void SessionOptions::validate() const {
  if (!(tick_dt > 0.0)) throw ConfigError("tick_dt must be > 0");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(time_limit > 0.0)) throw ConfigError("time_limit must be > 0");
  if (!(max_insertion_speed > 0.0)) throw ConfigError("max_insertion_speed must be > 0");
  if (!(vertex_delta_threshold >= 0.0)) throw ConfigError("vertex_delta_threshold must be >= 0");
}

std::string frame_to_json(const StateFrame& f) {
  json body = json::array();
  for (const auto& p : f.body) body.push_back(vec(p));
  json deltas = json::array();
  for (const auto& d : f.deltas) deltas.push_back({d.index, d.position.x(), d.position.y(), d.position.z()});
  json j = {{"type", "frame"},
            {"tick", f.tick},
            {"clock", f.clock},
            {"state", to_string(f.state)},
            {"tip", {{"position", vec(f.tip.position)}, {"alpha", f.tip.alpha}, {"gamma", f.tip.gamma}}},
            {"body", body},
            {"deltas", deltas},
            {"target", vec(f.target)},
            {"next_waypoint", f.next_waypoint},
            {"next_waypoint_position", vec(f.next_waypoint_position)},
            {"suggested_bend", vec(f.suggested_bend)},
            {"distance_to_target", f.distance_to_target},
            {"wall_distance", f.wall_distance}};
  return j.dump();
}

StateFrame frame_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("frame: ") + e.what(), e.byte);
  }
  StateFrame f;
  try {
    if (j.at("type").get<std::string>() != "frame") throw SchemaError("not a frame message");
    f.tick = j.at("tick").get<long>();
    f.clock = j.at("clock").get<double>();
    f.state = session_state_from(j.at("state").get<std::string>());
    f.tip.position = vec_from(j.at("tip").at("position"));
    f.tip.alpha = j.at("tip").at("alpha").get<double>();
    f.tip.gamma = j.at("tip").at("gamma").get<double>();
    for (const auto& p : j.at("body")) f.body.push_back(vec_from(p));
    for (const auto& d : j.at("deltas")) {
      if (!d.is_array() || d.size() != 4) throw SchemaError("frame: malformed vertex delta");
      f.deltas.push_back({d[0].get<std::uint32_t>(), {d[1].get<double>(), d[2].get<double>(), d[3].get<double>()}});
    }
    f.target = vec_from(j.at("target"));
    f.next_waypoint = j.at("next_waypoint").get<long>();
    f.next_waypoint_position = vec_from(j.at("next_waypoint_position"));
    f.suggested_bend = vec_from(j.at("suggested_bend"));
    f.distance_to_target = j.at("distance_to_target").get<double>();
    f.wall_distance = j.at("wall_distance").get<double>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("frame: ") + e.what());
  }
  return f;
}

Session::Session(std::string id, const Scenario& scenario, Guidance guidance, std::vector<Vec3> guidance_path,
                 SessionOptions options)
    : id_(std::move(id)),
      scenario_name_(scenario.name),
      scenario_hash_(scenario_hash(scenario)),
      guidance_(guidance),
      options_((options.validate(), options)),
      limit_ticks_(std::lround(options.time_limit / options.tick_dt)),
      env_(make_environment(scenario, options_, limit_ticks_)) {
  if (guidance_ == Guidance::centerline) {
    guidance_path_ = env_.spaces().centerline;
  } else {
    guidance_path_ = std::move(guidance_path);
  }
  if (guidance_path_.empty()) throw ConfigError("session needs a guidance path");
  desired_ = resample_path(guidance_path_);

  const auto& spaces = env_.spaces();
  if (options_.start_index || options_.target_particle) {
    const std::size_t start = options_.start_index.value_or(0);
    const std::size_t target = options_.target_particle.value_or(spaces.target_candidates.front());
    env_.reset(start, target);
  } else {
    std::mt19937_64 rng(options_.seed);
    env_.reset(rng);
  }
  const auto surface = env_.world().surface_positions();
  sent_vertices_.assign(surface.begin(), surface.end());
  trajectory_.push_back(env_.pose().position);
  targets_.push_back(env_.target());
}

void Session::start() {
  if (state_ != SessionState::ready) throw ContractViolation("session " + id_ + " is " + to_string(state_));
  state_ = SessionState::running;
}

CommandAck Session::command(const BendCommand& cmd) {
  CommandAck ack;
  ack.state = state_;
  if (state_ != SessionState::running) {
    ack.reason = std::string("session is ") + to_string(state_);
    return ack;
  }
  for (double v : {cmd.alpha_rate, cmd.gamma_rate, cmd.insertion_velocity}) {
    if (!std::isfinite(v)) {
      ack.reason = "non-finite command";
      return ack;
    }
  }
  const auto& spec = env_.config().catheter;
  const double v_cap = options_.max_insertion_speed;
  const double bend_cap = spec.theta_max * v_cap / spec.segment_length;
  latched_.insertion_velocity = std::clamp(cmd.insertion_velocity, -v_cap, v_cap);
  latched_.alpha_rate = std::clamp(cmd.alpha_rate, -bend_cap, bend_cap);
  latched_.gamma_rate = std::clamp(cmd.gamma_rate, -bend_cap, bend_cap);
  ack.accepted = true;
  ack.latched = latched_;
  return ack;
}

StateFrame Session::tick() {
  if (state_ != SessionState::running) throw ContractViolation("tick on a session that is " + std::string(to_string(state_)));
  const double dt = env_.config().catheter.dt;
  // The tick counts once it starts, so a trial ending on it reports its full clock.
  ++ticks_;
  try {
    for (int k = 0; k < options_.substeps && state_ == SessionState::running; ++k) {
      StepResult sr;
      if (latched_.insertion_velocity < 0.0) {
        sr = env_.retract(-latched_.insertion_velocity * dt);
      } else {
        sr = env_.step({latched_.alpha_rate * dt, latched_.gamma_rate * dt, latched_.insertion_velocity * dt});
      }
      trajectory_.push_back(env_.pose().position);
      targets_.push_back(env_.target());
      switch (sr.termination) {
        case Termination::target: finish(SessionState::succeeded, "target"); break;
        case Termination::collision: finish(SessionState::failed_collision, "collision"); break;
        case Termination::exit: finish(SessionState::failed_collision, "exit"); break;
        case Termination::step_limit:
        case Termination::none: break;
      }
    }
  } catch (const SimulationDiverged& e) {
    finish(SessionState::failed_error, e.what());
    return make_frame();
  }
  if (state_ == SessionState::running && ticks_ >= limit_ticks_) finish(SessionState::failed_timeout, "timeout");
  return make_frame();
}

void Session::finish(SessionState s, std::string reason) {
  state_ = s;
  reason_ = std::move(reason);
  report_ = MetricsReport{};
  report_.label = id_;
  report_.config_hash = scenario_hash_;
  const long steps = static_cast<long>(trajectory_.size()) - 1;
  add_episode(report_, s == SessionState::succeeded, 1, steps, 0.0, clock(), trajectory_, targets_, desired_);
  report_.finalize();
}

const MetricsReport& Session::report() const {
  if (!terminal()) throw ContractViolation("session " + id_ + " has not finished");
  return report_;
}

StateFrame Session::make_frame() {
  StateFrame f;
  f.tick = ticks_;
  f.clock = clock();
  f.state = state_;
  f.tip = env_.pose();
  f.body = env_.body().polyline();
  const auto surface = env_.world().surface_positions();
  for (std::size_t i = 0; i < surface.size(); ++i) {
    if ((surface[i] - sent_vertices_[i]).norm() > options_.vertex_delta_threshold) {
      f.deltas.push_back({static_cast<std::uint32_t>(i), surface[i]});
      sent_vertices_[i] = surface[i];
    }
  }
  f.target = env_.target();
  f.distance_to_target = (f.target - f.tip.position).norm();
  if (auto c = env_.world().signed_clearance(f.tip.position)) f.wall_distance = c->second;

  // Next guidance waypoint: past the closest one and outside the credit radius.
  const Vec3& p = f.tip.position;
  const double radius = env_.config().reward.waypoint_radius;
  std::size_t nearest = guide_next_ == 0 ? 0 : guide_next_ - 1;
  for (std::size_t i = nearest; i < guidance_path_.size(); ++i) {
    if ((guidance_path_[i] - p).squaredNorm() < (guidance_path_[nearest] - p).squaredNorm()) nearest = i;
  }
  guide_next_ = std::max(guide_next_, nearest + 1);
  while (guide_next_ < guidance_path_.size() && (guidance_path_[guide_next_] - p).norm() < radius) ++guide_next_;
  if (guide_next_ < guidance_path_.size()) {
    f.next_waypoint = static_cast<long>(guide_next_);
    f.next_waypoint_position = guidance_path_[guide_next_];
    const Vec3 local = f.tip.rotation().transpose() * (f.next_waypoint_position - p);
    if (local.norm() > 1e-12) f.suggested_bend = local.normalized();
  }
  return f;
}

std::string Session::session_message() const {
  json path = json::array();
  for (const auto& p : guidance_path_) path.push_back(vec(p));
  json j = {{"type", "session"},
            {"version", kProtocolVersion},
            {"id", id_},
            {"scenario", scenario_name_},
            {"guidance", to_string(guidance_)},
            {"state", to_string(state_)},
            {"tick_dt", options_.tick_dt},
            {"time_limit", options_.time_limit},
            {"max_insertion_speed", options_.max_insertion_speed},
            {"epsilon", env_.config().reward.epsilon},
            {"guidance_path", path},
            {"start", {{"position", vec(env_.pose().position)}, {"alpha", env_.pose().alpha}, {"gamma", env_.pose().gamma}}},
            {"target", vec(env_.target())}};
  return j.dump();
}

std::string Session::mesh_message() const {
  const auto& w = env_.world();
  json vertices = json::array();
  for (const auto& v : w.surface_positions()) vertices.push_back(vec(v));
  json triangles = json::array();
  for (const auto& t : w.triangles) triangles.push_back({t[0], t[1], t[2]});
  return json{{"type", "mesh"}, {"vertices", vertices}, {"triangles", triangles}}.dump();
}

ReportStore::ReportStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  for (const auto& e : std::filesystem::directory_iterator(dir_)) {
    if (e.path().extension() != ".json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    reports_[e.path().stem().string()] = ss.str();
  }
}

void ReportStore::put(const std::string& id, const MetricsReport& report) {
  if (!valid_id(id)) throw ContractViolation("invalid report id '" + id + "'");
  const std::string text = report_to_json(report);
  std::lock_guard lock(mutex_);
  reports_[id] = text;
  if (!dir_.empty()) {
    std::ofstream out(dir_ / (id + ".json"), std::ios::binary | std::ios::trunc);
    out << text << '\n';
  }
}

std::optional<std::string> ReportStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = reports_.find(id);
  if (it == reports_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> ReportStore::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [k, v] : reports_) out.push_back(k);
  return out;
}

}  // namespace cathnav::service
