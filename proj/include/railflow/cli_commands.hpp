#pragma once

#include <optional>
#include <string>
#include <vector>

#include "railflow/eval_harness.hpp"

namespace railflow {

// Exit codes: 0 success, 1 domain error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsageError = 2;

// "a,b,c" and "lo..hi" forms, combinable with commas.
std::vector<uint64_t> parse_seed_list(const std::string& text);

// "constant" or "fractional:num/den@fraction,num/den@fraction,...".
std::vector<SpeedClass> parse_speed_profile(const std::string& text);

struct GenOptions {
  int level = 0;
  uint64_t seed = 0;
  std::string out;  // empty: print to stdout
  std::optional<int> trains, width, height, cities;
  std::string speed_profile = "constant";
  ScenarioTuning tuning;
};
int cmd_gen(const GenOptions& opt);

struct RunOptions {
  std::string scenario_file;  // either a file or a (level, seed) pair
  int level = -1;
  uint64_t seed = 0;
  std::string controller = "full";
  int budget = 100;
  std::string out;  // trace path; empty skips the trace file
  std::string speed_profile = "constant";
  int conflict_window = 10;
  int stop_window = 5;
  double malfunction_rate = -1;  // >= 0 overrides the level's rate
  ScenarioTuning tuning;
};
int cmd_run(const RunOptions& opt);

struct BenchOptions {
  std::vector<int> levels;
  std::vector<std::string> methods;
  std::vector<uint64_t> seeds;
  std::string out_dir;
  int budget = 100;
  std::string speed_profile = "constant";
  ScenarioTuning tuning;
};
int cmd_bench(const BenchOptions& opt);

struct ReplayOptions {
  std::string trace_file;
};
int cmd_replay(const ReplayOptions& opt);

struct CollectOptions {
  std::vector<int> levels;
  std::vector<std::string> scenario_files;
  std::vector<uint64_t> seeds;
  std::string controller = "mcts";
  int budget = 100;
  bool filter_failed = false;
  std::string out;  // dataset path; manifest written alongside
  ScenarioTuning tuning;
};
int cmd_collect(const CollectOptions& opt);

}  // namespace railflow
