#include "railflow/cli_commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "railflow/util.hpp"

namespace railflow {

namespace fs = std::filesystem;

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    auto dots = part.find("..");
    if (dots != std::string::npos) {
      uint64_t lo = std::stoull(part.substr(0, dots));
      uint64_t hi = std::stoull(part.substr(dots + 2));
      if (hi < lo) fail("seed range is inverted: " + part);
      for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(std::stoull(part));
    }
  }
  if (seeds.empty()) fail("no seeds given");
  return seeds;
}

std::vector<SpeedClass> parse_speed_profile(const std::string& text) {
  if (text.empty() || text == "constant") return {};
  if (text.rfind("fractional:", 0) != 0)
    fail("speed profile must be 'constant' or 'fractional:num/den@frac,...'");
  std::vector<SpeedClass> classes;
  std::stringstream ss(text.substr(std::string("fractional:").size()));
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto at = part.find('@');
    auto slash = part.find('/');
    if (at == std::string::npos || slash == std::string::npos || slash > at)
      fail("bad speed class: " + part);
    SpeedClass c;
    c.speed.num = std::stoi(part.substr(0, slash));
    c.speed.den = std::stoi(part.substr(slash + 1, at - slash - 1));
    c.fraction = std::stod(part.substr(at + 1));
    classes.push_back(c);
  }
  if (classes.empty()) fail("empty speed profile");
  return classes;
}

namespace {

LevelSpec level_for(const GenOptions& opt) {
  LevelSpec level = table_level(opt.level);
  if (opt.trains || opt.width || opt.height || opt.cities) level.custom = true;
  if (opt.trains) level.n_trains = *opt.trains;
  if (opt.width) level.width = *opt.width;
  if (opt.height) level.height = *opt.height;
  if (opt.cities) level.n_cities = *opt.cities;
  level.speed_profile = parse_speed_profile(opt.speed_profile);
  return level;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path);
  out << text;
}

}  // namespace

int cmd_gen(const GenOptions& opt) {
  Scenario scenario = make_scenario(level_for(opt), opt.seed, opt.tuning);
  std::string text = scenario_to_json(scenario);
  if (opt.out.empty()) {
    std::cout << text << "\n";
  } else {
    write_text(opt.out, text + "\n");
  }
  std::cout << "scenario_hash " << to_hex(scenario_hash(scenario)) << "\n";
  std::cout << "grid_hash " << to_hex(grid_hash(scenario.grid)) << "\n";
  return kExitOk;
}

namespace {

MethodConfig method_for(const std::string& controller, int budget, int conflict_window,
                        int stop_window) {
  MethodConfig method = method_by_name(controller);
  method.controller.mcts.budget = budget;
  method.controller.conflict_window = conflict_window;
  method.controller.stop_window = stop_window;
  return method;
}

void print_metrics(const EpisodeMetrics& m) {
  std::cout << "trains " << m.n_trains << "\n"
            << "success_rate " << m.success_rate << "\n"
            << "deadlock_rate " << m.deadlock_rate << "\n"
            << "cancelled_rate " << m.cancelled_rate << "\n"
            << "other_rate " << m.other_rate << "\n"
            << "arrival_delay " << m.arrival_delay << "\n"
            << "episode_length " << m.episode_length << "\n"
            << "operational_window " << m.operational_window() << "\n";
}

}  // namespace

int cmd_run(const RunOptions& opt) {
  Scenario scenario;
  if (!opt.scenario_file.empty()) {
    std::ifstream in(opt.scenario_file, std::ios::binary);
    if (!in) fail("cannot read " + opt.scenario_file);
    std::stringstream buf;
    buf << in.rdbuf();
    scenario = scenario_from_json(buf.str());
  } else if (opt.level >= 0) {
    LevelSpec level = table_level(opt.level);
    level.speed_profile = parse_speed_profile(opt.speed_profile);
    if (opt.malfunction_rate >= 0) level.malfunction_rate = opt.malfunction_rate;
    scenario = make_scenario(level, opt.seed, opt.tuning);
  } else {
    fail("run needs --scenario or --level");
  }
  MethodConfig method =
      method_for(opt.controller, opt.budget, opt.conflict_window, opt.stop_window);
  RunResult result = run_episode(scenario, method, opt.seed, opt.tuning);
  if (!opt.out.empty()) {
    std::ofstream out(opt.out, std::ios::binary);
    if (!out) fail("cannot write " + opt.out);
    write_trace(result.trace, out);
  }
  print_metrics(result.metrics);
  return kExitOk;
}

int cmd_bench(const BenchOptions& opt) {
  if (opt.levels.empty() || opt.methods.empty()) fail("bench needs levels and methods");
  fs::create_directories(opt.out_dir);
  std::vector<LevelReport> all;
  bool any_failed = false;
  for (const std::string& method_name : opt.methods) {
    MethodConfig method = method_for(method_name, opt.budget, 10, 5);
    fs::path method_dir = fs::path(opt.out_dir) / method_name;
    fs::create_directories(method_dir);
    std::vector<LevelReport> rows;
    for (int level_id : opt.levels) {
      LevelSpec level = table_level(level_id);
      level.speed_profile = parse_speed_profile(opt.speed_profile);
      try {
        std::vector<TraceDocument> traces;
        LevelReport report = run_level(level, method, opt.seeds, opt.tuning, &traces);
        std::vector<EpisodeMetrics> eps = report.episodes;
        write_text((method_dir / ("concurrency_level" + std::to_string(level_id) + ".csv"))
                       .string(),
                   concurrency_csv(concurrency_trace(eps)));
        rows.push_back(std::move(report));
      } catch (const std::exception& e) {
        std::cerr << "bench: level " << level_id << " method " << method_name
                  << " failed: " << e.what() << "\n";
        any_failed = true;
      }
    }
    write_text((method_dir / "report.csv").string(), report_csv(rows));
    write_text((method_dir / "report.json").string(), report_json(rows).dump(2) + "\n");
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_text((fs::path(opt.out_dir) / "combined.csv").string(), report_csv(all));
  write_text((fs::path(opt.out_dir) / "combined.json").string(),
             report_json(all).dump(2) + "\n");
  std::cout << report_csv(all);
  return any_failed ? kExitDomainError : kExitOk;
}

int cmd_replay(const ReplayOptions& opt) {
  std::ifstream in(opt.trace_file, std::ios::binary);
  if (!in) fail("cannot read " + opt.trace_file);
  TraceDocument doc = read_trace(in);
  ReplayVerdict verdict = replay_trace(doc);
  if (verdict.ok) {
    std::cout << "OK\n";
    return kExitOk;
  }
  std::cout << "DIVERGED at tick " << verdict.first_divergent_tick << ": "
            << verdict.detail << "\n";
  return kExitDomainError;
}

int cmd_collect(const CollectOptions& opt) {
  std::vector<Scenario> scenarios;
  for (int level_id : opt.levels) {
    LevelSpec level = table_level(level_id);
    scenarios.push_back(make_scenario(level, opt.seeds.empty() ? 0 : opt.seeds.front(),
                                      opt.tuning));
  }
  for (const std::string& file : opt.scenario_files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail("cannot read " + file);
    std::stringstream buf;
    buf << in.rdbuf();
    scenarios.push_back(scenario_from_json(buf.str()));
  }
  if (scenarios.empty()) fail("collect needs --level or --scenario");
  if (opt.out.empty()) fail("collect needs --out");

  fs::path manifest_path = fs::path(opt.out).string() + ".manifest.json";
  bool append = fs::exists(opt.out);
  if (append) {
    if (!fs::exists(manifest_path))
      fail("existing dataset has no manifest; refusing to append");
    std::ifstream in(manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.at("layout").get<std::string>() != kObsLayoutVersion)
      fail("dataset layout version mismatch: " +
           manifest.at("layout").get<std::string>() + " vs " + kObsLayoutVersion);
  }
  std::ofstream out(opt.out, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) fail("cannot write " + opt.out);

  MethodConfig method = method_for(opt.controller, opt.budget, 10, 5);
  BcCollectStats stats =
      collect_bc_dataset(scenarios, method.controller, opt.seeds, opt.filter_failed, out);

  nlohmann::json manifest;
  manifest["layout"] = kObsLayoutVersion;
  manifest["kept"] = stats.kept;
  manifest["dropped"] = stats.dropped;
  manifest["dispatch_samples"] = stats.dispatch_samples;
  manifest["routing_samples"] = stats.routing_samples;
  manifest["episodes"] = stats.episodes;
  manifest["filter_failed"] = opt.filter_failed;
  write_text(manifest_path.string(), manifest.dump(2) + "\n");

  std::cout << "kept " << stats.kept << "\n"
            << "dropped " << stats.dropped << "\n";
  if (stats.kept == 0)
    std::cerr << "warning: dataset is empty"
              << (opt.filter_failed ? " (every sampled train failed)" : "") << "\n";
  return kExitOk;
}

}  // namespace railflow
