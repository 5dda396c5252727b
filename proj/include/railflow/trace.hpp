#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "railflow/sim_core.hpp"

namespace railflow {

inline constexpr const char* kTraceVersion = "trace-v1";
inline constexpr const char* kScenarioVersion = "scn-v1";

std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& text);
uint64_t scenario_hash(const Scenario& scenario);

struct TraceTick {
  int t = 0;
  JointAction actions;
  StepEvents events;  // simulator events plus deadlock flags, in emit order
  friend bool operator==(const TraceTick&, const TraceTick&) = default;
};

// Line-delimited on disk: header record, one record per tick, footer record.
struct TraceDocument {
  std::string version = kTraceVersion;
  uint64_t seed = 0;
  Scenario scenario;
  nlohmann::json run_config;
  std::vector<TraceTick> ticks;
  nlohmann::json footer;
};

void write_trace(const TraceDocument& doc, std::ostream& out);
TraceDocument read_trace(std::istream& in);

struct ReplayVerdict {
  bool ok = false;
  int first_divergent_tick = -1;
  std::string detail;
};

// Re-simulates the recorded joint actions from (scenario, seed), regenerating
// the event stream including deadlock flags, and compares tick by tick.
ReplayVerdict replay_trace(const TraceDocument& doc);

// Appends first-flag deadlock events for the tick just stepped and returns
// the currently flagged trains; `first_flag` carries -1 per train until
// flagged. Shared by every trace producer so live runs and replays emit
// identical streams.
std::vector<int> append_deadlock_flags(const RailGrid& grid, const SimState& state,
                                       std::vector<int>& first_flag, StepEvents& events);

}  // namespace railflow
