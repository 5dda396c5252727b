#include "railflow/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "railflow/baselines.hpp"
#include "railflow/util.hpp"

namespace railflow {

LevelSpec table_level(int id) {
  LevelSpec s;
  s.id = id;
  s.malf_min = 20;
  s.malf_max = 50;
  switch (id) {
    case 0: s.n_trains = 7;  s.width = 30; s.height = 30; s.n_cities = 2; s.malfunction_rate = 1.0 / 540; break;
    case 1: s.n_trains = 10; s.width = 30; s.height = 30; s.n_cities = 2; s.malfunction_rate = 1.0 / 900; break;
    case 2: s.n_trains = 20; s.width = 30; s.height = 30; s.n_cities = 3; s.malfunction_rate = 1.0 / 1800; break;
    case 3: s.n_trains = 50; s.width = 30; s.height = 35; s.n_cities = 3; s.malfunction_rate = 1.0 / 4500; break;
    case 4: s.n_trains = 80; s.width = 35; s.height = 30; s.n_cities = 5; s.malfunction_rate = 1.0 / 7200; break;
    default: fail("unknown level " + std::to_string(id));
  }
  return s;
}

namespace {

int slowest_ticks_per_cell(const LevelSpec& level) {
  int m = 1;
  for (const auto& c : level.speed_profile) m = std::max(m, c.speed.den);
  return m;
}

// Largest-remainder apportionment of trains over speed classes, assigned in
// id-order blocks.
std::vector<Speed> assign_speeds(const LevelSpec& level) {
  std::vector<Speed> speeds(level.n_trains, Speed{1, 1});
  if (level.speed_profile.empty()) return speeds;
  std::vector<int> counts(level.speed_profile.size(), 0);
  int assigned = 0;
  for (size_t c = 0; c < counts.size(); ++c) {
    counts[c] = static_cast<int>(std::floor(level.speed_profile[c].fraction * level.n_trains));
    assigned += counts[c];
  }
  for (size_t c = 0; assigned < level.n_trains; c = (c + 1) % counts.size()) {
    ++counts[c];
    ++assigned;
  }
  int id = 0;
  for (size_t c = 0; c < counts.size(); ++c)
    for (int i = 0; i < counts[c] && id < level.n_trains; ++i)
      speeds[id++] = level.speed_profile[c].speed;
  return speeds;
}

}  // namespace

Scenario make_scenario(const LevelSpec& level, uint64_t seed, const ScenarioTuning& tuning) {
  Scenario scenario;
  GeneratorParams params;
  params.width = level.width;
  params.height = level.height;
  params.n_cities = level.n_cities;
  params.max_parallel_rails = 2;
  params.seed = seed;
  scenario.grid = generate_map(params);

  scenario.config.beta = tuning.beta;
  scenario.config.malfunction_rate = level.malfunction_rate;
  scenario.config.malfunction_min = level.malf_min;
  scenario.config.malfunction_max = level.malf_max;

  const int slowest = slowest_ticks_per_cell(level);
  const int base_horizon = static_cast<int>(std::ceil(
      tuning.beta * (level.width + level.height +
                     static_cast<double>(level.n_trains) /
                         std::max(1, scenario.grid.city_count()))));
  // Slower fleets get a proportionally stretched horizon, recorded as an
  // explicit override so the scenario stays self-describing.
  if (slowest > 1) scenario.config.t_max_override = base_horizon * slowest;
  const int t_max = slowest > 1 ? base_horizon * slowest : base_horizon;

  Router router(scenario.grid);
  for (const auto& st : scenario.grid.stations) router.ensure_target(st.cell);

  Rng rng(seed ^ 0xd1b54a32d192ed03ull);
  std::vector<Speed> speeds = assign_speeds(level);
  const auto& stations = scenario.grid.stations;
  const int window = std::max(
      1, static_cast<int>(tuning.departure_window * (level.width + level.height) * slowest));

  for (int i = 0; i < level.n_trains; ++i) {
    TimetableEntry t;
    t.id = i;
    t.speed = speeds[i];
    const Station& origin = stations[rng.bounded(stations.size())];
    std::vector<const Station*> elsewhere;
    for (const auto& st : stations)
      if (st.city != origin.city) elsewhere.push_back(&st);
    const Station& target = *elsewhere[rng.bounded(elsewhere.size())];
    t.target = target.cell;

    // Face the direction with the shorter run to the target.
    std::optional<Pose> best;
    int best_d = -1;
    for (int d = 0; d < kHeadingCount; ++d) {
      auto h = static_cast<Heading>(d);
      if (scenario.grid.transitions(origin.cell).exit_count(h) == 0) continue;
      int dist = router.distance({origin.cell, h}, t.target);
      if (dist < 0) continue;
      if (!best || dist < best_d) {
        best = Pose{origin.cell, h};
        best_d = dist;
      }
    }
    if (!best) fail("make_scenario: origin cannot reach target");
    t.origin = *best;

    int travel = best_d * t.speed.den;
    int slackful = static_cast<int>(std::ceil(travel * (1.0 + tuning.slack)));
    int dep_cap = std::max(0, t_max - slackful - 1);
    t.earliest_departure = static_cast<int>(rng.bounded(
        static_cast<uint64_t>(std::min(window, dep_cap) + 1)));
    t.scheduled_arrival = std::min(t_max, t.earliest_departure + slackful);
    scenario.trains.push_back(t);
  }
  validate_scenario(scenario);
  return scenario;
}

// ---------------------------------------------------------------------------
// Metrics

EpisodeMetrics compute_metrics(const TraceDocument& trace) {
  const Scenario& scenario = trace.scenario;
  Simulator sim(scenario);
  SimState state = sim.reset(trace.seed);
  const int n = static_cast<int>(scenario.trains.size());

  EpisodeMetrics m;
  m.n_trains = n;
  m.t_max = sim.t_max();
  std::vector<int> first_flag(n, -1);

  for (const TraceTick& tick : trace.ticks) {
    if (sim.finished(state)) fail("compute_metrics: trace is truncated or overlong");
    if (static_cast<int>(tick.actions.size()) != n)
      fail("compute_metrics: malformed tick record");
    for (int i = 0; i < n; ++i) {
      int context = state.trains[i].status == TrainStatus::Active ? 1 : 0;
      ++m.histogram[context][static_cast<int>(tick.actions[i])];
    }
    StepEvents events = sim.step(state, tick.actions);
    append_deadlock_flags(scenario.grid, state, first_flag, events);
    for (const Event& e : events) {
      if (e.kind == EventKind::Dispatched) {
        ++m.dispatches;
        if (m.first_departure < 0) m.first_departure = state.clock - 1;
      } else if (e.kind == EventKind::Arrived) {
        m.last_arrival = std::max(m.last_arrival, state.clock - 1);
      }
    }
    m.active_per_tick.push_back(sim.active_count(state));
  }
  if (!sim.finished(state)) fail("compute_metrics: trace ends before the episode");

  m.episode_length = static_cast<int>(trace.ticks.size());
  double delay_sum = 0;
  int delay_n = 0;
  for (int i = 0; i < n; ++i) {
    const TrainState& ts = state.trains[i];
    if (ts.status == TrainStatus::Arrived) {
      ++m.arrived;
      delay_sum += std::max(0, ts.arrived_at - scenario.trains[i].scheduled_arrival);
      ++delay_n;
    } else if (ts.status == TrainStatus::CancelledAtEnd) {
      ++m.cancelled;
    } else if (first_flag[i] >= 0) {
      ++m.deadlocked;
      delay_sum += std::max(0, m.t_max - scenario.trains[i].scheduled_arrival);
      ++delay_n;
    } else {
      ++m.other;
      delay_sum += std::max(0, m.t_max - scenario.trains[i].scheduled_arrival);
      ++delay_n;
    }
  }
  m.success_rate = static_cast<double>(m.arrived) / n;
  m.deadlock_rate = static_cast<double>(m.deadlocked) / n;
  m.cancelled_rate = static_cast<double>(m.cancelled) / n;
  m.other_rate = static_cast<double>(m.other) / n;
  m.arrival_delay = delay_n > 0 ? delay_sum / delay_n : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Methods

MethodConfig method_by_name(const std::string& name) {
  MethodConfig m;
  m.name = name;
  if (name == "full") {
    m.controller.dispatch_policy = "heuristic";
    m.controller.routing_policy = "heuristic";
  } else if (name == "greedy") {
    m.controller.dispatch_policy = "greedy";
    m.controller.routing_policy = "greedy";
  } else if (name == "mads-greedy") {
    m.controller.dispatch_policy = "heuristic";
    m.controller.routing_policy = "greedy";
  } else if (name == "greedy-mapf") {
    m.controller.dispatch_policy = "greedy";
    m.controller.routing_policy = "heuristic";
  } else if (name == "random") {
    m.controller.dispatch_policy = "random";
    m.controller.routing_policy = "random";
  } else if (name == "mcts") {
    m.controller.dispatch_policy = "mcts";
    m.controller.routing_policy = "mcts";
  } else if (name == "pp") {
    m.prioritized_planning = true;
  } else if (name == "deadlock-avoidance") {
    m.deadlock_avoidance = true;
    m.controller.dispatch_policy = "deadlock-avoidance";
    m.controller.routing_policy = "deadlock-avoidance";
  } else {
    fail("unknown method: " + name);
  }
  return m;
}

namespace {

nlohmann::json run_config_json(const MethodConfig& method, const ScenarioTuning& tuning) {
  nlohmann::json j;
  j["method"] = method.name;
  j["dispatch_policy"] = method.controller.dispatch_policy;
  j["routing_policy"] = method.controller.routing_policy;
  j["skipping"] = method.controller.skipping;
  j["k"] = method.controller.k;
  j["conflict_window"] = method.controller.conflict_window;
  j["stop_window"] = method.controller.stop_window;
  j["mcts_budget"] = method.controller.mcts.budget;
  j["mcts_depth"] = method.controller.mcts.max_depth;
  j["beta"] = tuning.beta;
  j["slack"] = tuning.slack;
  j["departure_window"] = tuning.departure_window;
  j["layout"] = kObsLayoutVersion;
  j["cycle_policy"] = "reject-all";
  return j;
}

}  // namespace

RunResult run_episode(const Scenario& scenario, const MethodConfig& method, uint64_t seed,
                      const ScenarioTuning& tuning) {
  RunResult out;
  out.trace.seed = seed;
  out.trace.scenario = scenario;
  out.trace.run_config = run_config_json(method, tuning);

  Router router = make_router(scenario);
  if (method.prioritized_planning) {
    PlanSet plans = prioritized_plan(scenario, router);
    ExecutionResult exec = execute_plans(scenario, router, plans, seed);
    for (size_t i = 0; i < exec.ticks.size(); ++i)
      out.trace.ticks.push_back({static_cast<int>(i), std::move(exec.ticks[i].actions),
                                 std::move(exec.ticks[i].events)});
    out.trace.footer["replans"] = exec.replans;
    int cancelled_plans = 0;
    for (const auto& p : exec.final_plans.plans) cancelled_plans += p ? 0 : 1;
    out.trace.footer["unplanned"] = cancelled_plans;
  } else {
    std::unique_ptr<DispatchPolicy> dispatch_override;
    std::unique_ptr<RoutingPolicy> routing_override;
    if (method.deadlock_avoidance) {
      dispatch_override = make_deadlock_avoidance_dispatch(scenario, router);
      routing_override = make_deadlock_avoidance_routing(scenario, router);
    }
    Controller controller(scenario, router, method.controller,
                          std::move(dispatch_override), std::move(routing_override));
    ControllerState cs = controller.reset(seed);
    int decisions = 0;
    while (!controller.simulator().finished(cs.sim)) {
      int t = cs.sim.clock;
      Controller::TickRecord rec = controller.tick(cs);
      decisions += rec.decisions;
      out.trace.ticks.push_back({t, std::move(rec.actions), std::move(rec.events)});
    }
    out.trace.footer["decisions"] = decisions;
    out.trace.footer["replan_divergences"] = cs.replan_divergences;
  }
  out.metrics = compute_metrics(out.trace);
  out.trace.footer["success_rate"] = out.metrics.success_rate;
  out.trace.footer["deadlock_rate"] = out.metrics.deadlock_rate;
  out.trace.footer["cancelled_rate"] = out.metrics.cancelled_rate;
  out.trace.footer["arrival_delay"] = out.metrics.arrival_delay;
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

double t_quantile_975(int df) {
  static const double table[30] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                                   2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                                   2.131,  2.120, 2.110, 2.101, 2.093, 2.086, 2.080,
                                   2.074,  2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
                                   2.045,  2.042};
  if (df < 1) return 0;
  if (df <= 30) return table[df - 1];
  return 1.96 + 2.46 / df;
}

}  // namespace

MetricStats summarize(const std::vector<double>& values) {
  MetricStats s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n < 2) return s;
  double var = 0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  var /= (s.n - 1);
  s.ci95 = t_quantile_975(s.n - 1) * std::sqrt(var / s.n);
  return s;
}

int parallel_episode_limit() {
  if (const char* env = std::getenv("RAILFLOW_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 4;
}

LevelReport run_level(const LevelSpec& level, const MethodConfig& method,
                      const std::vector<uint64_t>& seeds, const ScenarioTuning& tuning,
                      std::vector<TraceDocument>* traces_out) {
  if (seeds.empty()) fail("run_level: no seeds");
  LevelReport report;
  report.level_id = level.id;
  report.method = method.name;
  report.seeds = seeds;
  report.episodes.resize(seeds.size());
  report.config_hash = fnv1a64(run_config_json(method, tuning).dump());
  std::vector<TraceDocument> traces(traces_out ? seeds.size() : 0);

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= seeds.size() || failed.load()) return;
      try {
        Scenario scenario = make_scenario(level, seeds[i], tuning);
        RunResult r = run_episode(scenario, method, seeds[i], tuning);
        report.episodes[i] = std::move(r.metrics);
        if (traces_out) traces[i] = std::move(r.trace);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        error = "seed " + std::to_string(seeds[i]) + ": " + e.what();
        failed.store(true);
        return;
      }
    }
  };
  int threads = std::min<int>(parallel_episode_limit(), static_cast<int>(seeds.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) fail("run_level: episode failed (" + error + ")");

  std::vector<double> success, deadlock, cancelled, delay;
  for (const auto& e : report.episodes) {
    success.push_back(e.success_rate);
    deadlock.push_back(e.deadlock_rate);
    cancelled.push_back(e.cancelled_rate);
    delay.push_back(e.arrival_delay);
  }
  report.success = summarize(success);
  report.deadlock = summarize(deadlock);
  report.cancelled = summarize(cancelled);
  report.delay = summarize(delay);
  if (traces_out) *traces_out = std::move(traces);
  return report;
}

ConcurrencySummary concurrency_trace(const std::vector<EpisodeMetrics>& episodes) {
  ConcurrencySummary s;
  if (episodes.empty()) return s;
  size_t max_len = 0;
  for (const auto& e : episodes) max_len = std::max(max_len, e.active_per_tick.size());
  s.mean_active.resize(max_len, 0.0);
  s.ci95.resize(max_len, 0.0);
  for (size_t t = 0; t < max_len; ++t) {
    std::vector<double> vals;
    vals.reserve(episodes.size());
    for (const auto& e : episodes)
      vals.push_back(t < e.active_per_tick.size() ? e.active_per_tick[t] : 0.0);
    MetricStats st = summarize(vals);
    s.mean_active[t] = st.mean;
    s.ci95[t] = st.ci95;
    if (st.mean > s.peak_mean) {
      s.peak_mean = st.mean;
      s.peak_tick = static_cast<int>(t);
    }
  }
  double wsum = 0, lsum = 0;
  for (const auto& e : episodes) {
    wsum += e.operational_window();
    lsum += e.episode_length;
  }
  s.mean_window = wsum / episodes.size();
  s.mean_length = lsum / episodes.size();
  return s;
}

HistogramSummary action_histogram(const std::vector<EpisodeMetrics>& episodes) {
  HistogramSummary s;
  for (const auto& e : episodes) {
    for (int ctx = 0; ctx < 2; ++ctx)
      for (int a = 0; a < kRawActionCount; ++a) {
        s.counts[ctx][a] += e.histogram[ctx][a];
        s.total += e.histogram[ctx][a];
      }
    s.dispatches += e.dispatches;
  }
  s.forward_total = s.counts[0][static_cast<int>(RawAction::Forward)] +
                    s.counts[1][static_cast<int>(RawAction::Forward)];
  s.departures_share =
      s.forward_total > 0 ? static_cast<double>(s.dispatches) / s.forward_total : 0.0;
  return s;
}

std::vector<LevelReport> ablation_suite(const std::vector<LevelSpec>& levels,
                                        const std::vector<uint64_t>& seeds,
                                        const ScenarioTuning& tuning) {
  static const char* kConfigs[] = {"full", "mads-greedy", "greedy-mapf", "greedy"};
  std::vector<LevelReport> out;
  for (const LevelSpec& level : levels)
    for (const char* name : kConfigs)
      out.push_back(run_level(level, method_by_name(name), seeds, tuning));
  return out;
}

std::string report_csv(const std::vector<LevelReport>& reports) {
  std::string csv = "level,method,metric,mean,ci95,n\n";
  char buf[160];
  for (const auto& r : reports) {
    auto row = [&](const char* metric, const MetricStats& s) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.6g,%.6g,%d\n", r.level_id,
                    r.method.c_str(), metric, s.mean, s.ci95, s.n);
      csv += buf;
    };
    row("success_rate", r.success);
    row("deadlock_rate", r.deadlock);
    row("cancelled_rate", r.cancelled);
    row("arrival_delay", r.delay);
  }
  return csv;
}

nlohmann::json report_json(const std::vector<LevelReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j;
    j["level"] = r.level_id;
    j["method"] = r.method;
    j["seeds"] = r.seeds;
    j["config_hash"] = to_hex(r.config_hash);
    auto stats = [](const MetricStats& s) {
      return nlohmann::json{{"mean", s.mean}, {"ci95", s.ci95}, {"n", s.n}};
    };
    j["success_rate"] = stats(r.success);
    j["deadlock_rate"] = stats(r.deadlock);
    j["cancelled_rate"] = stats(r.cancelled);
    j["arrival_delay"] = stats(r.delay);
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.episodes)
      eps.push_back({{"success_rate", e.success_rate},
                     {"deadlock_rate", e.deadlock_rate},
                     {"cancelled_rate", e.cancelled_rate},
                     {"arrival_delay", e.arrival_delay},
                     {"episode_length", e.episode_length}});
    j["episodes"] = eps;
    out.push_back(j);
  }
  return out;
}

std::string concurrency_csv(const ConcurrencySummary& summary) {
  std::string csv = "tick,mean_active,ci95\n";
  char buf[96];
  for (size_t t = 0; t < summary.mean_active.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g\n", t, summary.mean_active[t],
                  summary.ci95[t]);
    csv += buf;
  }
  return csv;
}

}  // namespace railflow
