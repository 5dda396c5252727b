#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "railflow/obs_builders.hpp"
#include "railflow/path_engine.hpp"
#include "railflow/sim_core.hpp"

namespace railflow {

enum class MadsAction : uint8_t { Dispatch = 0, Wait = 1 };
enum class MapfAction : uint8_t { Planned = 0, Deviate = 1, Stop = 2 };
enum class Phase : uint8_t { Dispatch = 0, Routing = 1 };

const char* to_string(MadsAction a);
const char* to_string(MapfAction a);

struct MapfMask {
  std::array<bool, 3> allowed{false, false, false};  // Planned, Deviate, Stop
};

struct MctsConfig {
  int budget = 100;          // simulations per decision
  int max_depth = 40;        // lookahead ticks past the root
  double exploration = 1.4;  // upper-confidence coefficient
  double lambda_deadlock = 1.0;
  double lambda_delay = 0.1;
};

struct ControllerConfig {
  std::string dispatch_policy = "heuristic";  // heuristic | greedy | random | mcts
  std::string routing_policy = "heuristic";
  bool skipping = true;    // query policies only where a genuine choice exists
  int k = 2;               // candidate paths per dispatch decision
  int conflict_window = 10;  // dispatch heuristic: hold on overlaps this close
  int stop_window = 5;       // routing heuristic: stop on opposing heads this close
  MctsConfig mcts;
};

// Per-episode mutable state. A plain value: copying it is the snapshot used
// by tree search, so plans, flags and rng streams restore together.
struct ControllerState {
  SimState sim;
  std::vector<TrainPlan> plans;
  std::vector<uint8_t> deadlocked;        // current detector flags
  std::vector<int> first_deadlock_tick;   // -1 until first flagged; sticky
  std::vector<std::optional<Pose>> pending_deviation;
  Rng policy_rng;
  int replan_divergences = 0;  // plan/state mismatches healed by replanning
};

class Controller;

struct DispatchDecision {
  const ObsContext& ctx;
  const ControllerState& full;
  int train;
  const DispatchObservation& obs;
  bool skip_eligible;  // the skip gate would have bypassed this query
  Rng& rng;
};

struct RoutingDecision {
  const ObsContext& ctx;
  const ControllerState& full;
  int train;
  const RoutingObservation& obs;
  MapfMask mask;
  bool skip_eligible;
  Rng& rng;
};

class DispatchPolicy {
 public:
  virtual ~DispatchPolicy() = default;
  virtual MadsAction decide(const DispatchDecision& d) = 0;
  virtual std::array<double, 2> priors(const DispatchDecision& d);
};

class RoutingPolicy {
 public:
  virtual ~RoutingPolicy() = default;
  virtual MapfAction decide(const RoutingDecision& d) = 0;
  virtual std::array<double, 3> priors(const RoutingDecision& d);
};

// Instrumentation hook; fires once per actual (non-skipped) decision.
class DecisionSink {
 public:
  virtual ~DecisionSink() = default;
  virtual void on_decision(Phase phase, int train, const std::vector<double>& flat_obs,
                           int action, int clock) = 0;
};

// Off-map gate: false means the decision is skipped (implied Wait) — before
// the departure time, while malfunctioning, or when no route fits into the
// remaining episode time at the train's speed.
bool mads_decision_needed(const ObsContext& ctx, int train);

// On-map gate and action mask. A decision is needed at a decision point or
// when an opposing train stands in the current segment; Deviate requires a
// branch at the current cell whose alternative still reaches the target in
// time; Stop is always available when a decision is needed.
std::pair<bool, MapfMask> mapf_decision(const ObsContext& ctx, int train);

// Semi-hierarchical per-tick driver: routes each off-map train through the
// dispatch path and each active train through the routing path, skipping
// no-choice states, translating phase actions into raw ones, tracking plans
// and deadlock flags.
class Controller {
 public:
  Controller(const Scenario& scenario, const Router& router, ControllerConfig config,
             std::unique_ptr<DispatchPolicy> dispatch_override = nullptr,
             std::unique_ptr<RoutingPolicy> routing_override = nullptr);

  const Simulator& simulator() const { return sim_; }
  const Scenario& scenario() const { return *scenario_; }
  const Router& router() const { return *router_; }
  const ControllerConfig& config() const { return config_; }
  const TopKPaths& candidates(int train) const { return candidates_[train]; }

  ControllerState reset(uint64_t seed) const;

  struct TickRecord {
    JointAction actions;
    StepEvents events;  // simulator events plus newly raised deadlock flags
    int decisions = 0;  // policy queries made this tick
  };

  TickRecord tick(ControllerState& cs) const;

  // Tree-search support: the forced train's pending decision is answered with
  // `action` instead of querying its policy. Throws if no decision pends.
  TickRecord tick_forced(ControllerState& cs, int train, Phase phase, int action) const;

  bool decision_needed(const ControllerState& cs, int train, Phase* phase_out = nullptr) const;
  MapfMask routing_mask(const ControllerState& cs, int train) const;
  std::vector<double> decision_priors(ControllerState& cs, int train, Phase phase) const;

  void set_decision_sink(DecisionSink* sink) { sink_ = sink; }

  ObsContext make_obs_context(const ControllerState& cs,
                              const std::vector<std::optional<Route>>* route_cache
                              = nullptr) const;

 private:
  JointAction compute_actions(ControllerState& cs, int forced_train, Phase forced_phase,
                              int forced_action, int* decisions) const;
  void sync_after_step(ControllerState& cs, StepEvents& events) const;
  RawAction planned_translation(const ControllerState& cs, int train) const;

  const Scenario* scenario_;
  const Router* router_;
  Simulator sim_;
  ControllerConfig config_;
  std::unique_ptr<DispatchPolicy> dispatch_;
  std::unique_ptr<RoutingPolicy> routing_;
  std::vector<TopKPaths> candidates_;  // per train, from its origin
  DecisionSink* sink_ = nullptr;
};

// Phase-action translation exposed for tests; Deviate additionally requires
// the chosen alternative exit.
RawAction translate_dispatch(MadsAction a);
RawAction translate_routing_step(Pose from, Pose to);

// Factories for the built-in policies: heuristic, greedy, random, mcts.
std::unique_ptr<DispatchPolicy> make_dispatch_policy(const std::string& name,
                                                     const ControllerConfig& config,
                                                     const Scenario& scenario,
                                                     const Router& router);
std::unique_ptr<RoutingPolicy> make_routing_policy(const std::string& name,
                                                   const ControllerConfig& config,
                                                   const Scenario& scenario,
                                                   const Router& router);

// Heuristic cores, usable directly on observations.
MadsAction heuristic_mads(const DispatchObservation& obs, int t_max, int conflict_window);
MapfAction heuristic_mapf(const RoutingObservation& obs, const MapfMask& mask, int t_max,
                          int stop_window);

struct MctsStats {
  std::vector<int> root_actions;  // legal action indices at the root
  std::vector<int> root_visits;   // aligned visit counts
  std::vector<double> root_values;  // aligned mean returns
};

// Fixed-budget tree search over the deciding train's own choices; co-players
// follow the rollout controller's policies. Returns the root action with the
// highest visit count (ties to the lexicographically first action).
int mcts_decide(const Controller& rollout_controller, const ControllerState& root,
                int train, Phase phase, const MctsConfig& config, uint64_t seed,
                MctsStats* stats = nullptr);

struct BcSample {
  Phase phase;
  std::vector<double> obs;
  int action;
  int train;
  std::string episode;
  int clock;
  bool success;
};

struct BcCollectStats {
  int64_t kept = 0;
  int64_t dropped = 0;
  int64_t dispatch_samples = 0;
  int64_t routing_samples = 0;
  int episodes = 0;
};

// Runs episodes under the given controller configuration and streams one
// JSON line per non-skipped decision. With filter_failed, samples from trains
// that never arrive are dropped.
BcCollectStats collect_bc_dataset(const std::vector<Scenario>& scenarios,
                                  const ControllerConfig& config,
                                  const std::vector<uint64_t>& seeds, bool filter_failed,
                                  std::ostream& out);

}  // namespace railflow
