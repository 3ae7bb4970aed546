#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "cathnav/service/session.hpp"

namespace cathnav::service {

struct ServerOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::filesystem::path reports_dir;    // empty keeps reports in memory only
  std::filesystem::path scenarios_dir;  // extra <name>.json scenarios besides the presets
  std::filesystem::path plans_dir;      // <scenario>.json path files for cgail guidance
  SessionOptions session;
  std::size_t frame_queue = 16;  // pending frames per client before the oldest is dropped
};

/// WebSocket session endpoint at /ws plus REST routes on the same port:
///   GET /api/scenarios, GET /api/reports, GET /api/reports/<id>.
/// Runs on a single I/O thread.
class Server {
 public:
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Bound port (useful with port 0).
  unsigned short port() const;

  /// Serves until stop() is called.
  void run();
  /// Thread-safe.
  void stop();

  const ReportStore& reports() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

/// Scenario names visible to clients: presets plus files in `scenarios_dir`.
std::vector<std::string> list_scenarios(const std::filesystem::path& scenarios_dir);

/// Resolves a client-supplied scenario name. Names are restricted to
/// [A-Za-z0-9_-]; throws ConfigError when unknown.
Scenario lookup_scenario(const std::string& name, const std::filesystem::path& scenarios_dir);

}  // namespace cathnav::service
