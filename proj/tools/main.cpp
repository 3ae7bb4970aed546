#include <csignal>
#include <iostream>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace cathnav;
using namespace cathnav::cli;

namespace {

void add_dynamics(CLI::App* cmd, Dynamics& d) {
  auto* dyn = cmd->add_flag("--dynamic", d.dynamic, "enable heartbeat and contact deformation");
  cmd->add_flag("--rigid", d.rigid, "disable heartbeat and contact deformation")->excludes(dyn);
}

int serve(service::ServerOptions opts) {
  // Block the signals before the I/O thread exists so only the waiter sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::Server server(std::move(opts));
  std::cerr << "listening on port " << server.port() << " (ws path /ws)\n";
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.run();
  // run() can also return without a signal; wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Catheter navigation simulator and imitation learner"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand all subcommand help");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  long train_steps = 0;
  auto* c_train = app.add_subcommand("train", "train a policy from demonstrations");
  c_train->add_option("--scenario", train.scenario, "preset name or scenario JSON")->required();
  c_train->add_option("--demos", train.demos, "directory of *.jsonl demonstrations")->required();
  c_train->add_option("--config", train.config, "training config JSON (defaults otherwise)");
  c_train->add_option("--out", train.out, "output directory")->required();
  auto* o_seed = c_train->add_option("--seed", train_seed, "overrides the config seed");
  auto* o_steps = c_train->add_option("--steps", train_steps, "overrides max_steps");
  auto* o_init = c_train->add_option("--init-from", train.init_from, "checkpoint to initialize weights from");
  c_train->add_option("--resume", train.resume, "checkpoint to resume from")->excludes(o_init);
  add_dynamics(c_train, train.dynamics);

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "run seeded episodes and write a metrics report");
  c_eval->add_option("--checkpoint", eval.checkpoint)->required();
  c_eval->add_option("--scenario", eval.scenario)->required();
  c_eval->add_option("-n,--episodes", eval.n, "number of episodes")->capture_default_str();
  c_eval->add_option("--seed", eval.seed, "episode i uses seed + i")->capture_default_str();
  c_eval->add_flag("--greedy", eval.greedy, "use the mean action instead of sampling");
  c_eval->add_flag("--any-scenario", eval.any_scenario, "skip the scenario hash check");
  c_eval->add_option("--label", eval.label, "report label (default: checkpoint directory name)");
  c_eval->add_option("--out", eval.out, "report JSON path");
  add_dynamics(c_eval, eval.dynamics);

  PlanArgs plan;
  std::size_t plan_start = 0, plan_target = 0;
  auto* c_plan = app.add_subcommand("plan", "export a greedy rollout as a guidance path");
  c_plan->add_option("--checkpoint", plan.checkpoint)->required();
  c_plan->add_option("--scenario", plan.scenario)->required();
  c_plan->add_option("--out", plan.out, "path JSON")->required();
  auto* o_start = c_plan->add_option("--start-index", plan_start);
  auto* o_target = c_plan->add_option("--target-particle", plan_target);
  c_plan->add_option("--seed", plan.seed, "picks start and target when not given")->capture_default_str();
  c_plan->add_flag("--any-scenario", plan.any_scenario, "skip the scenario hash check");
  add_dynamics(c_plan, plan.dynamics);

  GenDemosArgs gen;
  auto* c_gen = app.add_subcommand("gen-demos", "record scripted-expert demonstrations");
  c_gen->add_option("--scenario", gen.scenario)->required();
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("-n,--count", gen.n, "successful demonstrations to save")->capture_default_str();
  c_gen->add_option("--noise", gen.noise, "expert action noise")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "first episode seed")->capture_default_str();
  add_dynamics(c_gen, gen.dynamics);

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("replay", "replay a demonstration's actions in the simulator");
  c_replay->add_option("--demo", replay.demo)->required();
  c_replay->add_option("--scenario", replay.scenario)->required();
  c_replay->add_option("--out", replay.out, "CSV of recorded vs replayed tip positions");
  add_dynamics(c_replay, replay.dynamics);

  fs::path cmp_a, cmp_b;
  double alpha = 0.05;
  auto* c_cmp = app.add_subcommand("compare", "Kruskal-Wallis comparison of two reports");
  c_cmp->add_option("a", cmp_a)->required();
  c_cmp->add_option("b", cmp_b)->required();
  c_cmp->add_option("--alpha", alpha)->capture_default_str();

  auto* c_plot = app.add_subcommand("plot", "write SVG plots");
  c_plot->require_subcommand(1);
  fs::path plot_csv, plot_out;
  auto* p_log = c_plot->add_subcommand("log", "training curves from train_log.csv");
  p_log->add_option("csv", plot_csv)->required();
  p_log->add_option("--out", plot_out)->required();
  std::vector<fs::path> plot_reports;
  std::string plot_metric = "T_a";
  auto* p_rep = c_plot->add_subcommand("reports", "per-episode metric box plots");
  p_rep->add_option("reports", plot_reports)->required();
  p_rep->add_option("--metric", plot_metric, "T_a, T_s, T, T_r or curvature")->capture_default_str();
  p_rep->add_option("--out", plot_out)->required();
  std::string plot_scenario;
  std::vector<fs::path> plot_paths;
  auto* p_path = c_plot->add_subcommand("path", "planned paths over the anatomy (x-y projection)");
  p_path->add_option("--scenario", plot_scenario)->required();
  p_path->add_option("paths", plot_paths)->required();
  p_path->add_option("--out", plot_out)->required();

  service::ServerOptions srv;
  auto* c_serve = app.add_subcommand("serve", "run the teleoperation session server");
  c_serve->add_option("--host", srv.host)->capture_default_str();
  c_serve->add_option("--port", srv.port, "0 picks a free port")->capture_default_str();
  c_serve->add_option("--reports", srv.reports_dir, "directory for trial reports");
  c_serve->add_option("--scenarios", srv.scenarios_dir, "extra scenario JSON files");
  c_serve->add_option("--plans", srv.plans_dir, "<scenario>.json guidance paths");
  c_serve->add_option("--time-limit", srv.session.time_limit, "trial cap in seconds")->capture_default_str();
  c_serve->add_option("--tick", srv.session.tick_dt, "session clock step in seconds")->capture_default_str();

  std::string tube_preset, tube_name;
  fs::path tube_out;
  auto* c_tube = app.add_subcommand("make-tube", "write a preset toy anatomy as scenario files");
  c_tube->add_option("preset", tube_preset, "straight_tube or curved_tube")->required();
  c_tube->add_option("--out", tube_out, "output directory")->required();
  c_tube->add_option("--name", tube_name, "scenario name (default: preset name)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (c_train->parsed()) {
      if (*o_seed) train.seed = train_seed;
      if (*o_steps) train.steps = train_steps;
      cmd_train(train, std::cerr);
    } else if (c_eval->parsed()) {
      cmd_evaluate(eval, std::cerr);
    } else if (c_plan->parsed()) {
      if (*o_start) plan.start_index = plan_start;
      if (*o_target) plan.target_particle = plan_target;
      cmd_plan(plan, std::cerr);
    } else if (c_gen->parsed()) {
      cmd_gen_demos(gen, std::cerr);
    } else if (c_replay->parsed()) {
      cmd_replay(replay, std::cerr);
    } else if (c_cmp->parsed()) {
      std::cout << cmd_compare(cmp_a, cmp_b, alpha);
    } else if (p_log->parsed()) {
      cmd_plot_log(plot_csv, plot_out);
    } else if (p_rep->parsed()) {
      cmd_plot_reports(plot_reports, plot_metric, plot_out);
    } else if (p_path->parsed()) {
      cmd_plot_path(plot_scenario, plot_paths, plot_out);
    } else if (c_serve->parsed()) {
      return serve(srv);
    } else if (c_tube->parsed()) {
      std::cout << cmd_make_tube(tube_preset, tube_out, tube_name).string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}
