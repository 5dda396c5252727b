#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "railflow/control.hpp"
#include "railflow/trace.hpp"

namespace railflow {

struct SpeedClass {
  Speed speed;
  double fraction = 1.0;
};

struct LevelSpec {
  int id = -1;
  int n_trains = 0;
  int width = 0;
  int height = 0;
  int n_cities = 0;
  double malfunction_rate = 0.0;
  int malf_min = 20;
  int malf_max = 50;
  std::vector<SpeedClass> speed_profile;  // empty: every train at speed 1
  bool custom = false;
};

// The five benchmark levels (7 to 80 trains).
LevelSpec table_level(int id);

struct ScenarioTuning {
  double beta = 8.0;
  double slack = 0.25;            // scheduled-arrival slack over pure travel time
  double departure_window = 2.0;  // factor of (w + h) * slowest ticks-per-cell
};

// Deterministic map + timetable from (level, seed). Fractional profiles
// stretch the horizon and the departure window by the slowest class.
Scenario make_scenario(const LevelSpec& level, uint64_t seed,
                       const ScenarioTuning& tuning = {});

struct EpisodeMetrics {
  int n_trains = 0;
  int arrived = 0;
  int deadlocked = 0;  // flagged at any tick and never arrived
  int cancelled = 0;   // never dispatched
  int other = 0;       // dispatched, mobile, unarrived at the horizon
  double success_rate = 0;
  double deadlock_rate = 0;
  double cancelled_rate = 0;
  double other_rate = 0;
  double arrival_delay = 0;  // mean over non-cancelled trains, in [0, t_max]
  int episode_length = 0;
  int t_max = 0;
  std::vector<int> active_per_tick;
  // [context][action]: context 0 = off-map, 1 = on-map at the start of the tick.
  std::array<std::array<int64_t, kRawActionCount>, 2> histogram{};
  int64_t dispatches = 0;
  int first_departure = -1;
  int last_arrival = -1;
  int operational_window() const {
    return (first_departure >= 0 && last_arrival >= 0) ? last_arrival - first_departure
                                                       : 0;
  }
};

// Replays the recorded actions and derives every metric from the regenerated
// state sequence, so stored traces and live runs always agree.
EpisodeMetrics compute_metrics(const TraceDocument& trace);

struct MethodConfig {
  std::string name = "full";
  ControllerConfig controller;
  bool prioritized_planning = false;
  bool deadlock_avoidance = false;
};

// full | greedy | mads-greedy | greedy-mapf | random | mcts | pp |
// deadlock-avoidance. Throws on unknown names.
MethodConfig method_by_name(const std::string& name);

struct RunResult {
  TraceDocument trace;
  EpisodeMetrics metrics;
};

RunResult run_episode(const Scenario& scenario, const MethodConfig& method,
                      uint64_t seed, const ScenarioTuning& tuning = {});

struct MetricStats {
  double mean = 0;
  double ci95 = 0;  // Student-t half-width over per-episode values
  int n = 0;
};

MetricStats summarize(const std::vector<double>& values);

struct LevelReport {
  int level_id = -1;
  std::string method;
  std::vector<uint64_t> seeds;
  std::vector<EpisodeMetrics> episodes;  // seed order
  MetricStats success, deadlock, cancelled, delay;
  uint64_t config_hash = 0;
};

// One scenario per seed, one episode each; episodes run in parallel up to
// RAILFLOW_THREADS and fold deterministically in seed order.
LevelReport run_level(const LevelSpec& level, const MethodConfig& method,
                      const std::vector<uint64_t>& seeds,
                      const ScenarioTuning& tuning = {},
                      std::vector<TraceDocument>* traces_out = nullptr);

struct ConcurrencySummary {
  std::vector<double> mean_active;  // per tick, averaged over episodes
  std::vector<double> ci95;
  double peak_mean = 0;
  int peak_tick = -1;
  double mean_window = 0;
  double mean_length = 0;
};

ConcurrencySummary concurrency_trace(const std::vector<EpisodeMetrics>& episodes);

struct HistogramSummary {
  std::array<std::array<int64_t, kRawActionCount>, 2> counts{};
  int64_t total = 0;
  int64_t forward_total = 0;
  int64_t dispatches = 0;
  double departures_share = 0;  // dispatches / forward actions
};

HistogramSummary action_histogram(const std::vector<EpisodeMetrics>& episodes);

// Side-by-side reports for {full, mads-greedy, greedy-mapf, greedy} on
// identical scenarios and seeds.
std::vector<LevelReport> ablation_suite(const std::vector<LevelSpec>& levels,
                                        const std::vector<uint64_t>& seeds,
                                        const ScenarioTuning& tuning = {});

std::string report_csv(const std::vector<LevelReport>& reports);
nlohmann::json report_json(const std::vector<LevelReport>& reports);
std::string concurrency_csv(const ConcurrencySummary& summary);

int parallel_episode_limit();  // RAILFLOW_THREADS, defaulting to the hardware

}  // namespace railflow
