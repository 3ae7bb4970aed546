#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cathnav/metrics.hpp"
#include "cathnav/scenario.hpp"

namespace cathnav::service {

inline constexpr int kProtocolVersion = 1;

enum class SessionState { ready, running, succeeded, failed_timeout, failed_collision, failed_error };
enum class Guidance { centerline, cgail };

const char* to_string(SessionState s);
const char* to_string(Guidance g);
SessionState session_state_from(const std::string& s);
/// Throws ConfigError for an unknown name.
Guidance guidance_from(const std::string& s);

inline bool is_terminal(SessionState s) { return s != SessionState::ready && s != SessionState::running; }

struct SessionOptions {
  double tick_dt = 0.05;          // s, service clock step
  int substeps = 1;               // environment steps per tick
  double time_limit = 180.0;      // s of trial clock
  double max_insertion_speed = 5.0;  // mm/s
  double vertex_delta_threshold = 0.05;  // mm
  bool heartbeat = false;
  bool contact_deformation = false;
  std::optional<std::size_t> start_index;
  std::optional<std::size_t> target_particle;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Velocity command: bend rates in rad/s, signed insertion speed in mm/s.
struct BendCommand {
  double alpha_rate = 0.0;
  double gamma_rate = 0.0;
  double insertion_velocity = 0.0;

  friend bool operator==(const BendCommand&, const BendCommand&) = default;
};

struct CommandAck {
  bool accepted = false;
  BendCommand latched;
  SessionState state = SessionState::ready;
  std::string reason;
};

struct VertexDelta {
  std::uint32_t index = 0;
  Vec3 position = Vec3::Zero();

  friend bool operator==(const VertexDelta&, const VertexDelta&) = default;
};

struct StateFrame {
  long tick = 0;
  double clock = 0.0;  // s
  SessionState state = SessionState::running;
  TipPose tip;
  std::vector<Vec3> body;
  std::vector<VertexDelta> deltas;
  Vec3 target = Vec3::Zero();
  long next_waypoint = -1;  // index into the guidance path, -1 when past the end
  Vec3 next_waypoint_position = Vec3::Zero();
  Vec3 suggested_bend = Vec3::Zero();  // unit vector toward the next waypoint, tip frame
  double distance_to_target = 0.0;
  double wall_distance = 0.0;  // signed tip clearance

  friend bool operator==(const StateFrame&, const StateFrame&) = default;
};

std::string frame_to_json(const StateFrame& f);
StateFrame frame_from_json(const std::string& text);

/// One teleoperation trial: owns its environment and trial clock. Not
/// thread-safe; the server serializes access per session.
class Session {
 public:
  Session(std::string id, const Scenario& scenario, Guidance guidance, std::vector<Vec3> guidance_path,
          SessionOptions options);

  const std::string& id() const { return id_; }
  const std::string& scenario_name() const { return scenario_name_; }
  Guidance guidance() const { return guidance_; }
  const std::vector<Vec3>& guidance_path() const { return guidance_path_; }
  const SessionOptions& options() const { return options_; }
  SessionState state() const { return state_; }
  bool terminal() const { return is_terminal(state_); }
  const std::string& terminal_reason() const { return reason_; }
  long ticks() const { return ticks_; }
  double clock() const { return static_cast<double>(ticks_) * options_.tick_dt; }
  const Environment& environment() const { return env_; }
  const std::vector<Vec3>& trajectory() const { return trajectory_; }

  /// ready -> running. Throws ContractViolation in any other state.
  void start();

  /// Latches the command for the next tick. Rejected unless running.
  CommandAck command(const BendCommand& cmd);

  /// Applies the latched command and advances the trial. Throws
  /// ContractViolation unless running.
  StateFrame tick();

  /// Metrics of a finished trial. Throws ContractViolation before that.
  const MetricsReport& report() const;

  /// The `session` and `mesh` protocol messages.
  std::string session_message() const;
  std::string mesh_message() const;

 private:
  StateFrame make_frame();
  void finish(SessionState s, std::string reason);

  std::string id_;
  std::string scenario_name_;
  std::string scenario_hash_;
  Guidance guidance_;
  std::vector<Vec3> guidance_path_;
  std::vector<Vec3> desired_;  // resampled guidance path
  SessionOptions options_;
  long limit_ticks_ = 0;
  Environment env_;
  SessionState state_ = SessionState::ready;
  std::string reason_;
  BendCommand latched_;
  long ticks_ = 0;
  std::size_t guide_next_ = 0;
  std::vector<Vec3> sent_vertices_;
  std::vector<Vec3> trajectory_;
  std::vector<Vec3> targets_;
  MetricsReport report_;
};

/// Stored trial reports keyed by session id; backed by a directory when one
/// is given. Thread-safe.
class ReportStore {
 public:
  explicit ReportStore(std::filesystem::path dir = {});

  void put(const std::string& id, const MetricsReport& report);
  std::optional<std::string> get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> reports_;
};

}  // namespace cathnav::service
