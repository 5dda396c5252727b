#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "railflow/cli_commands.hpp"

using namespace railflow;

int main(int argc, char** argv) {
  CLI::App app{"railflow: grid-railway rescheduling simulator and benchmark harness"};
  app.require_subcommand(1);

  GenOptions gen;
  std::string gen_seeds = "0";
  auto* cmd_g = app.add_subcommand("gen", "generate a scenario file");
  cmd_g->add_option("--level", gen.level, "benchmark level 0..4")->required();
  cmd_g->add_option("--seed", gen.seed, "generation seed");
  cmd_g->add_option("--out", gen.out, "output path (default: stdout)");
  cmd_g->add_option("--trains", gen.trains, "override train count");
  cmd_g->add_option("--width", gen.width, "override map width");
  cmd_g->add_option("--height", gen.height, "override map height");
  cmd_g->add_option("--cities", gen.cities, "override city count");
  cmd_g->add_option("--speed-profile", gen.speed_profile,
                    "constant | fractional:num/den@frac,...");
  cmd_g->add_option("--beta", gen.tuning.beta, "horizon coefficient");

  RunOptions run;
  auto* cmd_r = app.add_subcommand("run", "run one episode");
  cmd_r->add_option("--scenario", run.scenario_file, "scenario file");
  cmd_r->add_option("--level", run.level, "benchmark level 0..4");
  cmd_r->add_option("--seed", run.seed, "episode seed");
  cmd_r->add_option("--controller", run.controller,
                    "full | greedy | mads-greedy | greedy-mapf | random | mcts | pp | "
                    "deadlock-avoidance");
  cmd_r->add_option("--budget", run.budget, "tree-search simulations per decision");
  cmd_r->add_option("--out", run.out, "trace output path");
  cmd_r->add_option("--speed-profile", run.speed_profile, "speed profile");
  cmd_r->add_option("--conflict-window", run.conflict_window, "dispatch hold window");
  cmd_r->add_option("--stop-window", run.stop_window, "routing stop window");
  cmd_r->add_option("--malfunction-rate", run.malfunction_rate,
                    "override the level's malfunction rate");
  cmd_r->add_option("--beta", run.tuning.beta, "horizon coefficient");

  BenchOptions bench;
  std::string bench_levels = "0,1,2", bench_methods = "full,greedy", bench_seeds = "0..9";
  auto* cmd_b = app.add_subcommand("bench", "run a benchmark matrix");
  cmd_b->add_option("--levels", bench_levels, "comma list of levels");
  cmd_b->add_option("--methods", bench_methods, "comma list of methods");
  cmd_b->add_option("--seeds", bench_seeds, "seed list, e.g. 0..49");
  cmd_b->add_option("--out", bench.out_dir, "output directory")->required();
  cmd_b->add_option("--budget", bench.budget, "tree-search budget");
  cmd_b->add_option("--speed-profile", bench.speed_profile, "speed profile");
  cmd_b->add_option("--beta", bench.tuning.beta, "horizon coefficient");

  ReplayOptions replay;
  auto* cmd_p = app.add_subcommand("replay", "validate a trace by re-simulation");
  cmd_p->add_option("trace", replay.trace_file, "trace file")->required();

  CollectOptions collect;
  std::string collect_levels, collect_seeds = "0";
  auto* cmd_c = app.add_subcommand("collect", "export a decision dataset");
  cmd_c->add_option("--level", collect_levels, "comma list of levels");
  cmd_c->add_option("--scenario", collect.scenario_files, "scenario file(s)");
  cmd_c->add_option("--seeds", collect_seeds, "seed list");
  cmd_c->add_option("--controller", collect.controller, "decision policy pair");
  cmd_c->add_option("--budget", collect.budget, "tree-search budget");
  cmd_c->add_flag("--filter-failed", collect.filter_failed,
                  "drop samples from trains that never arrive");
  cmd_c->add_option("--out", collect.out, "dataset path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsageError;
  }

  try {
    if (cmd_g->parsed()) return cmd_gen(gen);
    if (cmd_r->parsed()) return cmd_run(run);
    if (cmd_b->parsed()) {
      for (uint64_t s : parse_seed_list(bench_seeds)) bench.seeds.push_back(s);
      {
        std::stringstream ss(bench_levels);
        std::string part;
        while (std::getline(ss, part, ',')) bench.levels.push_back(std::stoi(part));
      }
      {
        std::stringstream ss(bench_methods);
        std::string part;
        while (std::getline(ss, part, ',')) bench.methods.push_back(part);
      }
      return cmd_bench(bench);
    }
    if (cmd_p->parsed()) return cmd_replay(replay);
    if (cmd_c->parsed()) {
      if (!collect_levels.empty()) {
        std::stringstream ss(collect_levels);
        std::string part;
        while (std::getline(ss, part, ',')) collect.levels.push_back(std::stoi(part));
      }
      collect.seeds = parse_seed_list(collect_seeds);
      return cmd_collect(collect);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitUsageError;
}
