#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cathnav/demonstrations.hpp"

namespace cathnav::cli {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const HashMismatch*>(&e)) return kHashMismatch;
  if (dynamic_cast<const TrainingDiverged*>(&e) || dynamic_cast<const SimulationDiverged*>(&e)) return kDiverged;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const DomainError*>(&e)) {
    return kConfigError;
  }
  return kFailure;
}

BuildOptions Dynamics::build_options() const {
  if (dynamic && rigid) throw ConfigError("--dynamic and --rigid are mutually exclusive");
  BuildOptions o;
  if (dynamic) o.heartbeat = o.contact_deformation = true;
  if (rigid) o.heartbeat = o.contact_deformation = false;
  return o;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ConfigError("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

namespace {

void check_scenario(const CheckpointInfo& info, const Scenario& s, bool any_scenario) {
  if (!any_scenario && !info.scenario_hash.empty() && info.scenario_hash != scenario_hash(s)) {
    throw HashMismatch("checkpoint was trained on a different scenario (hash " + info.scenario_hash + ", got " +
                       scenario_hash(s) + "); pass --any-scenario to override");
  }
}

}  // namespace

std::vector<TrainLogRow> cmd_train(const TrainArgs& args, std::ostream& log) {
  if (args.out.empty()) throw ConfigError("train: --out is required");
  if (!args.init_from.empty() && !args.resume.empty()) {
    throw ConfigError("train: --init-from and --resume are mutually exclusive");
  }
  const Scenario s = resolve_scenario(args.scenario);
  Environment env = build_environment(s, args.dynamics.build_options());

  std::string resume_text;
  TrainConfig cfg;
  if (!args.resume.empty()) {
    resume_text = read_file(args.resume);
    cfg = read_checkpoint_info(resume_text).config;
  }
  if (!args.config.empty()) cfg = TrainConfig::from_json(read_file(args.config));
  if (args.seed) cfg.seed = *args.seed;
  if (args.steps) cfg.max_steps = *args.steps;
  cfg.validate();

  DemoExpectations expect;
  expect.schema_hash = schema_hash(env.config());
  expect.ray_count = env.config().rays.directions.size();
  auto demos = load_demonstrations(args.demos, expect);
  if (demos.empty()) throw ConfigError("no demonstrations (*.jsonl) in " + args.demos.string());

  Trainer trainer(env, std::move(demos), cfg, scenario_hash(s));
  std::vector<TrainLogRow> rows;
  const fs::path log_path = args.out / "train_log.csv";
  if (!resume_text.empty()) {
    trainer.restore(resume_text);
    if (fs::exists(log_path)) {
      for (const auto& r : parse_train_log(read_file(log_path))) {
        if (r.iteration <= trainer.iteration()) rows.push_back(r);
      }
    }
    log << "resumed at iteration " << trainer.iteration() << " (" << trainer.env_steps() << " steps)\n";
  } else if (!args.init_from.empty()) {
    trainer.load_weights(read_file(args.init_from));
    log << "initialized weights from " << args.init_from.string() << '\n';
  }

  fs::create_directories(args.out);
  write_file_atomic(args.out / "train_config.json", cfg.to_json() + '\n');
  std::ofstream csv(log_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + log_path.string());
  csv << train_log_header() << '\n';
  for (const auto& r : rows) csv << train_log_line(r) << '\n';
  csv.flush();

  log << "training on " << s.name << " (config " << cfg.hash() << ", schema " << schema_hash(env.config())
      << ")\n";
  while (!trainer.done()) {
    const TrainLogRow row = trainer.iterate();
    rows.push_back(row);
    csv << train_log_line(row) << '\n';
    csv.flush();
    write_file_atomic(args.out / "checkpoint.json", trainer.checkpoint_json());
    log << "iter " << row.iteration << " steps " << row.env_steps << " episodes " << row.episodes << " success "
        << std::fixed << std::setprecision(2) << row.success_rate << " reward " << row.mean_reward << " theta_max "
        << std::setprecision(3) << row.theta_max_current << std::defaultfloat << '\n';
  }
  return rows;
}

MetricsReport cmd_evaluate(const EvaluateArgs& args, std::ostream& log) {
  if (args.n < 1) throw DomainError("evaluate: n must be >= 1");
  const std::string text = read_file(args.checkpoint);
  const CheckpointInfo info = read_checkpoint_info(text);
  const Scenario s = resolve_scenario(args.scenario);
  check_scenario(info, s, args.any_scenario);
  Environment env = build_environment(s, args.dynamics.build_options());
  LearnedPolicy policy = load_policy(text, schema_hash(env.config()), args.greedy);

  MetricsReport report;
  report.label = args.label.empty() ? args.checkpoint.parent_path().filename().string() : args.label;
  report.config_hash = info.config_hash;
  const std::vector<Vec3> desired = resample_path(env.spaces().centerline);
  for (int i = 0; i < args.n; ++i) {
    std::mt19937_64 rng(args.seed + static_cast<std::uint64_t>(i));
    env.reset(rng);
    const EpisodeResult ep = run_episode(policy, env, rng);
    add_episode(report, ep.success, ep.n0, ep.ng, ep.t0, ep.tg, ep.trajectory, ep.target_trajectory, desired);
  }
  report.finalize();
  if (!args.out.empty()) write_file_atomic(args.out, report_to_json(report) + '\n');
  log << "episodes " << report.n << " successes " << report.n_s << " success rate " << report.delta << '\n';
  return report;
}

PlannedPath cmd_plan(const PlanArgs& args, std::ostream& log) {
  const std::string text = read_file(args.checkpoint);
  const CheckpointInfo info = read_checkpoint_info(text);
  const Scenario s = resolve_scenario(args.scenario);
  check_scenario(info, s, args.any_scenario);
  Environment env = build_environment(s, args.dynamics.build_options());
  LearnedPolicy policy = load_policy(text, schema_hash(env.config()), true);

  std::mt19937_64 rng(args.seed);
  if (args.start_index || args.target_particle) {
    const std::size_t start = args.start_index.value_or(0);
    if (start >= env.spaces().start_poses.size()) throw ConfigError("plan: start index out of range");
    std::size_t target = env.spaces().target_candidates.front();
    if (args.target_particle) {
      const auto& c = env.spaces().target_candidates;
      if (std::find(c.begin(), c.end(), *args.target_particle) == c.end()) {
        throw ConfigError("plan: particle " + std::to_string(*args.target_particle) + " is not a target carrier");
      }
      target = *args.target_particle;
    }
    env.reset(start, target);
  } else {
    env.reset(rng);
  }
  PlannedPath path = plan_path(policy, env, rng);
  path.scenario = s.name;
  path.config_hash = info.config_hash;
  path.schema_hash = info.schema_hash;
  if (!args.out.empty()) save_path(path, args.out);
  log << "planned " << path.records.size() << " poses, " << (path.complete ? "reached the target" : "INCOMPLETE")
      << " (" << path.termination << ")\n";
  return path;
}

int cmd_gen_demos(const GenDemosArgs& args, std::ostream& log) {
  if (args.n < 1) throw DomainError("gen-demos: n must be >= 1");
  const Scenario s = resolve_scenario(args.scenario);
  Environment env = build_environment(s, args.dynamics.build_options());
  fs::create_directories(args.out);
  std::ostringstream recorder;
  recorder << "scripted-expert noise=" << args.noise;
  int saved = 0;
  const int max_attempts = 5 * args.n;
  int attempt = 0;
  for (; attempt < max_attempts && saved < args.n; ++attempt) {
    const std::uint64_t seed = args.seed + static_cast<std::uint64_t>(attempt);
    std::mt19937_64 rng(seed);
    env.reset(rng);
    ScriptedExpert expert(env.spaces().centerline, env.config().catheter, args.noise);
    DemoMeta meta;
    meta.anatomy = s.name;
    meta.schema_hash = schema_hash(env.config());
    meta.recorder = recorder.str();
    meta.seed = seed;
    const Demonstration demo = record_demonstration(env, expert, rng, meta, {});
    if (!demo.success) continue;
    std::ostringstream name;
    name << "demo_" << std::setw(3) << std::setfill('0') << saved << ".jsonl";
    save_demonstration(demo, args.out / name.str());
    ++saved;
  }
  log << "saved " << saved << " demonstrations after " << attempt << " attempts\n";
  if (saved < args.n) throw ConfigError("scripted expert succeeded only " + std::to_string(saved) + " times");
  return saved;
}

ReplaySummary cmd_replay(const ReplayArgs& args, std::ostream& log) {
  const Scenario s = resolve_scenario(args.scenario);
  Environment env = build_environment(s, args.dynamics.build_options());
  DemoExpectations expect;
  expect.schema_hash = schema_hash(env.config());
  expect.ray_count = env.config().rays.directions.size();
  const Demonstration demo = load_demonstration(args.demo, expect);
  env.reset(demo.meta.start_index, demo.meta.target_particle);

  ReplaySummary sum;
  sum.recorded_success = demo.success;
  std::ostringstream csv;
  csv << "i,recorded_x,recorded_y,recorded_z,replayed_x,replayed_y,replayed_z\n";
  Termination term = Termination::none;
  for (const auto& step : demo.steps) {
    const Vec3 rec = step.obs.pose.position;
    const Vec3 rep = env.pose().position;
    sum.max_deviation = std::max(sum.max_deviation, (rec - rep).norm());
    csv << sum.steps << ',' << rec.x() << ',' << rec.y() << ',' << rec.z() << ',' << rep.x() << ',' << rep.y() << ','
        << rep.z() << '\n';
    ++sum.steps;
    if (term != Termination::none) break;
    term = env.step(step.action).termination;
  }
  sum.replayed_success = term == Termination::target;
  if (!args.out.empty()) write_file_atomic(args.out, csv.str());
  log << "replayed " << sum.steps << " steps, max deviation " << sum.max_deviation << " mm, recorded "
      << (sum.recorded_success ? "success" : "failure") << ", replayed " << to_string(term) << '\n';
  return sum;
}

std::string cmd_compare(const fs::path& a, const fs::path& b, double alpha) {
  const MetricsReport ra = report_from_json(read_file(a));
  const MetricsReport rb = report_from_json(read_file(b));
  const auto rows = compare_reports(ra, rb, alpha);
  std::ostringstream os;
  os << "A: " << ra.label << " (n=" << ra.n << ", config " << ra.config_hash << ")\n"
     << "B: " << rb.label << " (n=" << rb.n << ", config " << rb.config_hash << ")\n\n";
  os << std::left << std::setw(16) << "metric" << std::right << std::setw(12) << "median A" << std::setw(12)
     << "median B" << std::setw(10) << "H" << std::setw(10) << "p" << "  significant@" << alpha << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.metric << std::right << std::fixed << std::setprecision(4) << std::setw(12)
       << r.median_a << std::setw(12) << r.median_b << std::setw(10) << r.test.h << std::setw(10) << r.test.p_value
       << "  " << (r.test.significant ? "yes" : "no") << '\n';
  }
  return os.str();
}

fs::path cmd_make_tube(const std::string& preset, const fs::path& out, const std::string& name) {
  Scenario s = preset_scenario(preset);
  if (!name.empty()) s.name = name;
  return save_scenario(std::move(s), out);
}

}  // namespace cathnav::cli
