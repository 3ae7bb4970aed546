#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cathnav/learner.hpp"
#include "cathnav/metrics.hpp"
#include "cathnav/planning.hpp"
#include "cathnav/scenario.hpp"
#include "cathnav/service/server.hpp"

namespace cathnav::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDiverged = 3, kHashMismatch = 4 };

/// Maps library errors onto process exit codes.
int exit_code_for(const std::exception& e);

/// World dynamics switch shared by the commands.
struct Dynamics {
  bool dynamic = false;  // heartbeat + contact deformation
  bool rigid = false;    // both off
  BuildOptions build_options() const;
};

struct TrainArgs {
  std::string scenario;
  fs::path demos;
  fs::path config;  // optional TrainConfig JSON
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  fs::path init_from;  // phase-2 weight initialization
  fs::path resume;     // full-state resume
  Dynamics dynamics;
};

/// Writes <out>/checkpoint.json, <out>/train_log.csv and <out>/train_config.json.
/// The checkpoint is rewritten after every iteration, so a divergence leaves
/// the last finite state on disk.
std::vector<TrainLogRow> cmd_train(const TrainArgs& args, std::ostream& log);

struct EvaluateArgs {
  fs::path checkpoint;
  std::string scenario;
  int n = 100;
  std::uint64_t seed = 0;
  bool greedy = false;
  bool any_scenario = false;  // skip the scenario hash check
  std::string label;
  fs::path out;
  Dynamics dynamics;
};

MetricsReport cmd_evaluate(const EvaluateArgs& args, std::ostream& log);

struct PlanArgs {
  fs::path checkpoint;
  std::string scenario;
  std::optional<std::size_t> start_index;
  std::optional<std::size_t> target_particle;
  std::uint64_t seed = 0;
  bool any_scenario = false;
  fs::path out;
  Dynamics dynamics;
};

PlannedPath cmd_plan(const PlanArgs& args, std::ostream& log);

struct GenDemosArgs {
  std::string scenario;
  fs::path out;
  int n = 30;
  double noise = 0.1;
  std::uint64_t seed = 1000;
  Dynamics dynamics;
};

/// Records scripted demonstrations until `n` successful ones are on disk.
int cmd_gen_demos(const GenDemosArgs& args, std::ostream& log);

struct ReplayArgs {
  fs::path demo;
  std::string scenario;
  fs::path out;  // optional CSV of recorded vs replayed tip positions
  Dynamics dynamics;
};

struct ReplaySummary {
  std::size_t steps = 0;
  double max_deviation = 0.0;  // mm, recorded vs replayed tip position
  bool recorded_success = false;
  bool replayed_success = false;
};

ReplaySummary cmd_replay(const ReplayArgs& args, std::ostream& log);

/// Formatted per-metric Kruskal-Wallis table.
std::string cmd_compare(const fs::path& a, const fs::path& b, double alpha);

void cmd_plot_log(const fs::path& csv, const fs::path& out);
void cmd_plot_reports(const std::vector<fs::path>& reports, const std::string& metric, const fs::path& out);
void cmd_plot_path(const std::string& scenario, const std::vector<fs::path>& paths, const fs::path& out);

/// Writes a preset tube scenario (JSON + OBJ) into `out`.
fs::path cmd_make_tube(const std::string& preset, const fs::path& out, const std::string& name);

std::string read_file(const fs::path& p);
/// Writes through a temporary file and renames it into place.
void write_file_atomic(const fs::path& p, const std::string& text);

}  // namespace cathnav::cli
