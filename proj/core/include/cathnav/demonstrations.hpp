#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cathnav/environment.hpp"

namespace cathnav {

struct DemoMeta {
  std::string anatomy;
  std::string schema_hash;
  std::string recorder;
  std::string date;  // free-form; left empty by scripted generation so files stay reproducible
  std::size_t ray_count = 0;
  std::size_t start_index = 0;
  std::size_t target_particle = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const DemoMeta&, const DemoMeta&) = default;
};

struct DemoStep {
  Observation obs;
  Action action;  // clamped environment action

  friend bool operator==(const DemoStep&, const DemoStep&) = default;
};

struct Demonstration {
  DemoMeta meta;
  std::vector<DemoStep> steps;
  bool success = false;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

inline constexpr int kDemoFormatVersion = 1;

/// Streams one demonstration to a JSON-lines file: a header record, one
/// record per step, then an outcome record. Steps are flushed as they are
/// added. Destroying an unfinished recorder writes a failed outcome.
class DemoRecorder {
 public:
  DemoRecorder(const std::filesystem::path& path, DemoMeta meta);
  ~DemoRecorder();
  DemoRecorder(const DemoRecorder&) = delete;
  DemoRecorder& operator=(const DemoRecorder&) = delete;

  /// Throws SchemaError when the ray count differs from the header and
  /// ContractViolation after finish().
  void add(const Observation& obs, const Action& action);
  void finish(bool success);
  void abort() { finish(false); }
  bool finished() const { return finished_; }
  std::size_t size() const { return steps_; }

 private:
  std::ofstream out_;
  DemoMeta meta_;
  std::size_t steps_ = 0;
  bool finished_ = false;
};

void save_demonstration(const Demonstration& demo, const std::filesystem::path& path);

struct DemoExpectations {
  std::optional<std::string> schema_hash;
  std::optional<std::size_t> ray_count;
};

/// Throws ParseError (with the byte offset) for malformed or truncated
/// files, SchemaError for version or shape mismatches and HashMismatch when
/// the schema hash differs from the expectation.
Demonstration load_demonstration(const std::filesystem::path& path, const DemoExpectations& expect = {});

/// All `*.jsonl` files of a directory, in file-name order.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& dir, const DemoExpectations& expect = {});

/// Pure pursuit along the centerline, then straight for the target. Bends
/// respect the catheter's physical bound; `noise` scales Gaussian
/// perturbations relative to the per-step bend bound and the insertion.
class ScriptedExpert : public Policy {
 public:
  ScriptedExpert(std::vector<Vec3> centerline, CatheterSpec spec, double noise = 0.0, double lookahead = 10.0);

  void reset() override { progress_ = 0; }
  Action act(const Observation& obs, std::mt19937_64& rng) override;

 private:
  std::vector<Vec3> centerline_;
  CatheterSpec spec_;
  double noise_;
  double lookahead_;
  std::size_t progress_ = 0;
};

/// Bend increments that turn the tip heading toward `aim`, unclamped.
Action pursuit_bend(const TipPose& pose, const Vec3& aim);

/// Runs one episode from the environment's current state and records it.
Demonstration record_demonstration(Environment& env, Policy& policy, std::mt19937_64& rng, DemoMeta meta,
                                   const EpisodeLimits& limits = {});

}  // namespace cathnav
