#include "railflow/control.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "railflow/trace.hpp"
#include "railflow/util.hpp"

namespace railflow {

const char* to_string(MadsAction a) {
  return a == MadsAction::Dispatch ? "dispatch" : "wait";
}

const char* to_string(MapfAction a) {
  switch (a) {
    case MapfAction::Planned: return "planned";
    case MapfAction::Deviate: return "deviate";
    case MapfAction::Stop: return "stop";
  }
  return "?";
}

std::array<double, 2> DispatchPolicy::priors(const DispatchDecision&) {
  return {0.5, 0.5};
}

std::array<double, 3> RoutingPolicy::priors(const RoutingDecision& d) {
  std::array<double, 3> p{};
  int m = 0;
  for (bool b : d.mask.allowed) m += b ? 1 : 0;
  if (m == 0) return p;
  for (int i = 0; i < 3; ++i)
    if (d.mask.allowed[i]) p[i] = 1.0 / m;
  return p;
}

namespace {

// Ticks a train needs for `steps` cells at its speed.
int ticks_for(int steps, const Speed& sp) {
  return static_cast<int>((static_cast<int64_t>(steps) * sp.den + sp.num - 1) / sp.num);
}

// Distance features are stored normalised; recover the step count before
// comparing against integer windows.
bool within_window(double norm_dist, int t_max, int window) {
  return norm_dist * t_max <= window + 1e-9;
}

}  // namespace

bool mads_decision_needed(const ObsContext& ctx, int train) {
  const TrainState& ts = ctx.state.trains[train];
  const TimetableEntry& tt = ctx.scenario.trains[train];
  if (ctx.state.clock < tt.earliest_departure) return false;
  if (ts.malfunction_left > 0) return false;
  int d = ctx.router.has_target(tt.target) ? ctx.router.distance(tt.origin, tt.target) : -1;
  if (d < 0) return false;
  if (ticks_for(d, tt.speed) > ctx.t_max - ctx.state.clock) return false;
  return true;
}

std::pair<bool, MapfMask> mapf_decision(const ObsContext& ctx, int train) {
  const TrainPlan& plan = ctx.plans[train];
  MapfMask mask;
  if (!plan.engaged() || plan.index + 1 >= static_cast<int>(plan.route.poses.size())) {
    // No route to follow; hold position until the driver heals the plan.
    mask.allowed = {false, false, true};
    return {false, mask};
  }
  const Pose& pose = plan.route.poses[plan.index];
  bool at_dp = branch_count(ctx.grid, pose.cell, pose.heading) >= 2;

  auto dp = next_decision_point(ctx.grid, plan.route, plan.index);
  int seg_end = dp ? dp->index : static_cast<int>(plan.route.poses.size()) - 1;
  bool opposing_in_segment = false;
  for (int j = plan.index + 1; j <= seg_end; ++j) {
    const Pose& p = plan.route.poses[j];
    int occ = ctx.state.occupancy[p.cell];
    if (occ >= 0 && occ != train &&
        ctx.state.trains[occ].pose.heading == reverse(p.heading)) {
      opposing_in_segment = true;
      break;
    }
  }

  bool needed = at_dp || opposing_in_segment;
  mask.allowed[static_cast<int>(MapfAction::Planned)] = true;
  mask.allowed[static_cast<int>(MapfAction::Stop)] = true;
  if (at_dp) {
    auto alt = alternative_exit(ctx, train);
    if (alt) {
      const TimetableEntry& tt = ctx.scenario.trains[train];
      int cont = ctx.router.distance(*alt, tt.target);
      if (cont >= 0 &&
          ticks_for(1 + cont, tt.speed) <= ctx.t_max - ctx.state.clock)
        mask.allowed[static_cast<int>(MapfAction::Deviate)] = true;
    }
  }
  return {needed, mask};
}

RawAction translate_dispatch(MadsAction a) {
  return a == MadsAction::Dispatch ? RawAction::Forward : RawAction::Noop;
}

RawAction translate_routing_step(Pose from, Pose to) {
  if (to.heading == from.heading) return RawAction::Forward;
  if (to.heading == rotate_left(from.heading)) return RawAction::Left;
  if (to.heading == rotate_right(from.heading)) return RawAction::Right;
  return RawAction::Forward;  // dead-end turnaround rides the sole transition
}

// ---------------------------------------------------------------------------
// Built-in policies

MadsAction heuristic_mads(const DispatchObservation& obs, int t_max, int conflict_window) {
  for (size_t base = 0; base + 2 < obs.conflicts.size(); base += 3) {
    if (obs.conflicts[base] <= 0.0) continue;
    double nearest = std::min(obs.conflicts[base + 1], obs.conflicts[base + 2]);
    if (within_window(nearest, t_max, conflict_window)) return MadsAction::Wait;
  }
  return MadsAction::Dispatch;
}

MapfAction heuristic_mapf(const RoutingObservation& obs, const MapfMask& mask, int t_max,
                          int stop_window) {
  using L = FeatureLayout53;
  const auto& self = obs.rows[0];
  // Opposing heads along the planned path: nearest of the current segment and
  // the branch beyond the next decision point.
  bool seg_opposing = self[L::kOpposingOnSegment] > 0.5;
  bool branch_opposing =
      self[L::kShortestBranch + L::kBranchFirstConflictOpposing] > 0.5;
  double opp_dist = 1.0;
  if (seg_opposing) opp_dist = std::min(opp_dist, self[L::kNearestOpposingDistance]);
  if (branch_opposing)
    opp_dist =
        std::min(opp_dist, self[L::kShortestBranch + L::kBranchFirstConflictDistance]);
  bool opposing_ahead = seg_opposing || branch_opposing;
  bool deadlock_ahead = self[L::kShortestBranch + L::kBranchDeadlock] > 0.5;

  bool deviate_open = mask.allowed[static_cast<int>(MapfAction::Deviate)];
  if (opposing_ahead && within_window(opp_dist, t_max, stop_window) && !deviate_open)
    return MapfAction::Stop;
  if ((opposing_ahead || deadlock_ahead) && deviate_open) {
    bool alt_usable = self[L::kAlternativeBranch + L::kBranchUsable] > 0.5;
    bool alt_opposing =
        self[L::kAlternativeBranch + L::kBranchFirstConflictOpposing] > 0.5;
    if (alt_usable && !alt_opposing) return MapfAction::Deviate;
  }
  return MapfAction::Planned;
}

namespace {

class HeuristicDispatchPolicy final : public DispatchPolicy {
 public:
  explicit HeuristicDispatchPolicy(int window) : window_(window) {}
  MadsAction decide(const DispatchDecision& d) override {
    return heuristic_mads(d.obs, d.ctx.t_max, window_);
  }
  std::array<double, 2> priors(const DispatchDecision& d) override {
    std::array<double, 2> p{0.25, 0.25};
    p[static_cast<int>(decide(d))] = 0.75;
    return p;
  }

 private:
  int window_;
};

class HeuristicRoutingPolicy final : public RoutingPolicy {
 public:
  explicit HeuristicRoutingPolicy(int window) : window_(window) {}
  MapfAction decide(const RoutingDecision& d) override {
    return heuristic_mapf(d.obs, d.mask, d.ctx.t_max, window_);
  }
  std::array<double, 3> priors(const RoutingDecision& d) override {
    int m = 0;
    for (bool b : d.mask.allowed) m += b ? 1 : 0;
    std::array<double, 3> p{};
    if (m == 0) return p;
    double rest = m > 1 ? 0.25 / (m - 1) : 0.0;
    for (int i = 0; i < 3; ++i)
      if (d.mask.allowed[i]) p[i] = rest;
    p[static_cast<int>(decide(d))] = m > 1 ? 0.75 : 1.0;
    return p;
  }

 private:
  int window_;
};

class GreedyDispatchPolicy final : public DispatchPolicy {
 public:
  MadsAction decide(const DispatchDecision&) override { return MadsAction::Dispatch; }
};

class GreedyRoutingPolicy final : public RoutingPolicy {
 public:
  MapfAction decide(const RoutingDecision&) override { return MapfAction::Planned; }
};

class RandomDispatchPolicy final : public DispatchPolicy {
 public:
  MadsAction decide(const DispatchDecision& d) override {
    return static_cast<MadsAction>(d.rng.bounded(2));
  }
};

class RandomRoutingPolicy final : public RoutingPolicy {
 public:
  MapfAction decide(const RoutingDecision& d) override {
    std::vector<int> open;
    for (int i = 0; i < 3; ++i)
      if (d.mask.allowed[i]) open.push_back(i);
    if (open.empty()) return MapfAction::Stop;
    return static_cast<MapfAction>(open[d.rng.bounded(open.size())]);
  }
};

class MctsDispatchPolicy final : public DispatchPolicy {
 public:
  MctsDispatchPolicy(const ControllerConfig& config, const Scenario& scenario,
                     const Router& router);
  MadsAction decide(const DispatchDecision& d) override;

 private:
  std::unique_ptr<Controller> rollout_;
  MctsConfig mcts_;
};

class MctsRoutingPolicy final : public RoutingPolicy {
 public:
  MctsRoutingPolicy(const ControllerConfig& config, const Scenario& scenario,
                    const Router& router);
  MapfAction decide(const RoutingDecision& d) override;

 private:
  std::unique_ptr<Controller> rollout_;
  MctsConfig mcts_;
};

ControllerConfig rollout_config(const ControllerConfig& config) {
  ControllerConfig c = config;
  c.dispatch_policy = "heuristic";
  c.routing_policy = "heuristic";
  return c;
}

}  // namespace

std::unique_ptr<DispatchPolicy> make_dispatch_policy(const std::string& name,
                                                     const ControllerConfig& config,
                                                     const Scenario& scenario,
                                                     const Router& router) {
  if (name == "heuristic")
    return std::make_unique<HeuristicDispatchPolicy>(config.conflict_window);
  if (name == "greedy") return std::make_unique<GreedyDispatchPolicy>();
  if (name == "random") return std::make_unique<RandomDispatchPolicy>();
  if (name == "mcts")
    return std::make_unique<MctsDispatchPolicy>(config, scenario, router);
  fail("unknown dispatch policy: " + name);
}

std::unique_ptr<RoutingPolicy> make_routing_policy(const std::string& name,
                                                   const ControllerConfig& config,
                                                   const Scenario& scenario,
                                                   const Router& router) {
  if (name == "heuristic")
    return std::make_unique<HeuristicRoutingPolicy>(config.stop_window);
  if (name == "greedy") return std::make_unique<GreedyRoutingPolicy>();
  if (name == "random") return std::make_unique<RandomRoutingPolicy>();
  if (name == "mcts")
    return std::make_unique<MctsRoutingPolicy>(config, scenario, router);
  fail("unknown routing policy: " + name);
}

// ---------------------------------------------------------------------------
// Controller

Controller::Controller(const Scenario& scenario, const Router& router,
                       ControllerConfig config,
                       std::unique_ptr<DispatchPolicy> dispatch_override,
                       std::unique_ptr<RoutingPolicy> routing_override)
    : scenario_(&scenario), router_(&router), sim_(scenario), config_(std::move(config)) {
  dispatch_ = dispatch_override ? std::move(dispatch_override)
                                : make_dispatch_policy(config_.dispatch_policy, config_,
                                                       scenario, router);
  routing_ = routing_override ? std::move(routing_override)
                              : make_routing_policy(config_.routing_policy, config_,
                                                    scenario, router);
  candidates_.reserve(scenario.trains.size());
  for (const auto& t : scenario.trains) {
    if (!router.has_target(t.target))
      fail("Controller: router lacks a distance field for a target; use make_router");
    candidates_.push_back(router.top_k_routes(t.origin, t.target, config_.k));
  }
}

ControllerState Controller::reset(uint64_t seed) const {
  ControllerState cs;
  cs.sim = sim_.reset(seed);
  cs.plans.assign(scenario_->trains.size(), {});
  cs.deadlocked.assign(scenario_->trains.size(), 0);
  cs.first_deadlock_tick.assign(scenario_->trains.size(), -1);
  cs.pending_deviation.assign(scenario_->trains.size(), std::nullopt);
  cs.policy_rng = Rng(seed ^ 0x9e3779b97f4a7c15ull);
  return cs;
}

ObsContext Controller::make_obs_context(const ControllerState& cs,
                                        const std::vector<std::optional<Route>>* cache) const {
  return ObsContext{scenario_->grid, *router_,      *scenario_,   cs.sim,
                    cs.plans,        cs.deadlocked, sim_.t_max(), cache};
}

bool Controller::decision_needed(const ControllerState& cs, int train,
                                 Phase* phase_out) const {
  const TrainState& ts = cs.sim.trains[train];
  ObsContext ctx = make_obs_context(cs);
  if (ts.status == TrainStatus::WaitingOffMap || ts.status == TrainStatus::ReadyOffMap) {
    if (phase_out) *phase_out = Phase::Dispatch;
    return mads_decision_needed(ctx, train);
  }
  if (ts.status == TrainStatus::Active) {
    if (phase_out) *phase_out = Phase::Routing;
    return mapf_decision(ctx, train).first;
  }
  return false;
}

MapfMask Controller::routing_mask(const ControllerState& cs, int train) const {
  ObsContext ctx = make_obs_context(cs);
  return mapf_decision(ctx, train).second;
}

std::vector<double> Controller::decision_priors(ControllerState& cs, int train,
                                                Phase phase) const {
  std::vector<std::optional<Route>> cache;
  ObsContext ctx = make_obs_context(cs, &cache);
  if (phase == Phase::Dispatch) {
    DispatchObservation obs = build_dispatch_obs(ctx, train, candidates_[train]);
    DispatchDecision d{ctx, cs, train, obs, false, cs.policy_rng};
    auto p = dispatch_->priors(d);
    return {p.begin(), p.end()};
  }
  auto [needed, mask] = mapf_decision(ctx, train);
  (void)needed;
  RoutingObservation obs = build_routing_obs(ctx, train, mask.allowed);
  RoutingDecision d{ctx, cs, train, obs, mask, false, cs.policy_rng};
  auto p = routing_->priors(d);
  return {p.begin(), p.end()};
}

RawAction Controller::planned_translation(const ControllerState& cs, int train) const {
  const TrainPlan& plan = cs.plans[train];
  if (!plan.engaged() || plan.index + 1 >= static_cast<int>(plan.route.poses.size()))
    return RawAction::Stop;  // lost plan; hold until the sync pass replans
  return translate_routing_step(plan.route.poses[plan.index],
                                plan.route.poses[plan.index + 1]);
}

JointAction Controller::compute_actions(ControllerState& cs, int forced_train,
                                        Phase forced_phase, int forced_action,
                                        int* decisions) const {
  const int n = static_cast<int>(cs.sim.trains.size());
  JointAction actions(n, RawAction::Noop);

  // Current shortest routes of active trains, shared by dispatch observations.
  std::vector<std::optional<Route>> route_cache(n);
  for (int i = 0; i < n; ++i)
    if (cs.sim.trains[i].status == TrainStatus::Active)
      route_cache[i] =
          router_->shortest_route(cs.sim.trains[i].pose, scenario_->trains[i].target);

  ObsContext ctx = make_obs_context(cs, &route_cache);
  bool forced_used = false;

  for (int i = 0; i < n; ++i) {
    const TrainState& ts = cs.sim.trains[i];
    if (ts.status == TrainStatus::Arrived || ts.status == TrainStatus::CancelledAtEnd)
      continue;

    if (ts.status != TrainStatus::Active) {
      // Dispatch phase.
      bool needed = mads_decision_needed(ctx, i);
      MadsAction chosen = MadsAction::Wait;
      if (i == forced_train && forced_phase == Phase::Dispatch) {
        if (!needed) fail("tick_forced: no dispatch decision pending for the train");
        chosen = static_cast<MadsAction>(forced_action);
        forced_used = true;
      } else if (needed || !config_.skipping) {
        DispatchObservation obs = build_dispatch_obs(ctx, i, candidates_[i]);
        DispatchDecision d{ctx, cs, i, obs, !needed, cs.policy_rng};
        chosen = dispatch_->decide(d);
        if (needed) {
          if (decisions) ++*decisions;
          if (sink_)
            sink_->on_decision(Phase::Dispatch, i, flatten(obs),
                               static_cast<int>(chosen), cs.sim.clock);
        }
      }
      actions[i] = translate_dispatch(chosen);
      continue;
    }

    // Routing phase.
    auto [needed, mask] = mapf_decision(ctx, i);
    MapfAction chosen = MapfAction::Planned;
    bool queried = false;
    if (i == forced_train && forced_phase == Phase::Routing) {
      if (!needed) fail("tick_forced: no routing decision pending for the train");
      chosen = static_cast<MapfAction>(forced_action);
      if (!mask.allowed[forced_action]) fail("tick_forced: forced action is masked");
      forced_used = true;
      queried = true;
    } else if (needed || !config_.skipping) {
      RoutingObservation obs = build_routing_obs(ctx, i, mask.allowed);
      RoutingDecision d{ctx, cs, i, obs, mask, !needed, cs.policy_rng};
      chosen = routing_->decide(d);
      if (!mask.allowed[static_cast<int>(chosen)])
        fail("policy returned a masked routing action");
      queried = true;
      if (needed) {
        if (decisions) ++*decisions;
        if (sink_)
          sink_->on_decision(Phase::Routing, i, flatten(obs), static_cast<int>(chosen),
                             cs.sim.clock);
      }
    }
    (void)queried;

    switch (chosen) {
      case MapfAction::Planned:
        actions[i] = planned_translation(cs, i);
        break;
      case MapfAction::Stop:
        actions[i] = RawAction::Stop;
        break;
      case MapfAction::Deviate: {
        auto alt = alternative_exit(ctx, i);
        if (!alt) fail("deviate chosen without an alternative branch");
        cs.pending_deviation[i] = *alt;
        actions[i] = translate_routing_step(cs.sim.trains[i].pose, *alt);
        break;
      }
    }
  }
  if (forced_train >= 0 && !forced_used)
    fail("tick_forced: train saw no decision this tick");
  return actions;
}

void Controller::sync_after_step(ControllerState& cs, StepEvents& events) const {
  for (const Event& e : events) {
    switch (e.kind) {
      case EventKind::Dispatched: {
        auto route = router_->shortest_route(cs.sim.trains[e.train].pose,
                                             scenario_->trains[e.train].target);
        if (!route) fail("dispatched train has no route to its target");
        cs.plans[e.train] = {std::move(*route), 0};
        break;
      }
      case EventKind::Moved: {
        TrainPlan& plan = cs.plans[e.train];
        const Pose& now = cs.sim.trains[e.train].pose;
        if (cs.pending_deviation[e.train] &&
            now.cell == cs.pending_deviation[e.train]->cell) {
          auto route = replan_from(*router_, now, scenario_->trains[e.train].target);
          if (!route) fail("deviation left the train without a route");
          plan = {std::move(*route), 0};
        } else if (plan.engaged() &&
                   plan.index + 1 < static_cast<int>(plan.route.poses.size()) &&
                   plan.route.poses[plan.index + 1] == now) {
          ++plan.index;
        } else {
          // Plan/state divergence: heal by replanning from the current pose.
          ++cs.replan_divergences;
          auto route = router_->shortest_route(now, scenario_->trains[e.train].target);
          if (route)
            plan = {std::move(*route), 0};
          else
            plan = {};
        }
        break;
      }
      case EventKind::Arrived:
        cs.plans[e.train] = {};
        break;
      default:
        break;
    }
  }
  for (auto& p : cs.pending_deviation) p.reset();

  auto flagged =
      append_deadlock_flags(scenario_->grid, cs.sim, cs.first_deadlock_tick, events);
  std::fill(cs.deadlocked.begin(), cs.deadlocked.end(), 0);
  for (int i : flagged) cs.deadlocked[i] = 1;
}

Controller::TickRecord Controller::tick(ControllerState& cs) const {
  TickRecord rec;
  rec.actions = compute_actions(cs, -1, Phase::Dispatch, 0, &rec.decisions);
  rec.events = sim_.step(cs.sim, rec.actions);
  sync_after_step(cs, rec.events);
  return rec;
}

Controller::TickRecord Controller::tick_forced(ControllerState& cs, int train, Phase phase,
                                               int action) const {
  TickRecord rec;
  rec.actions = compute_actions(cs, train, phase, action, &rec.decisions);
  rec.events = sim_.step(cs.sim, rec.actions);
  sync_after_step(cs, rec.events);
  return rec;
}

// ---------------------------------------------------------------------------
// Tree search

namespace {

struct MctsNode {
  ControllerState state;  // pre-decision for the subject, or terminal
  bool terminal = false;
  Phase phase = Phase::Dispatch;
  std::vector<int> legal;     // action indices
  std::vector<double> prior;  // aligned with legal
  std::vector<int> child;     // node index, -1 unexpanded
  std::vector<int> n;         // visits per action
  std::vector<double> w;      // return sums per action
  int visits = 0;
};

double evaluate_state(const Controller& rc, const ControllerState& cs,
                      const MctsConfig& config) {
  const auto& trains = rc.scenario().trains;
  const int n = static_cast<int>(trains.size());
  const int t_max = rc.simulator().t_max();
  int arrived = 0, flagged = 0;
  double delay_sum = 0;
  int delay_n = 0;
  for (int i = 0; i < n; ++i) {
    const TrainState& ts = cs.sim.trains[i];
    if (ts.status == TrainStatus::Arrived) {
      ++arrived;
      delay_sum += std::max(0, ts.arrived_at - trains[i].scheduled_arrival);
      ++delay_n;
    } else if (ts.departed_at >= 0) {
      if (cs.first_deadlock_tick[i] >= 0) ++flagged;
      delay_sum += std::max(0, cs.sim.clock - trains[i].scheduled_arrival);
      ++delay_n;
    }
  }
  double mean_delay = delay_n > 0 ? delay_sum / delay_n / t_max : 0.0;
  return static_cast<double>(arrived) / n -
         config.lambda_deadlock * static_cast<double>(flagged) / n -
         config.lambda_delay * mean_delay;
}

// Runs the rollout controller until the subject faces a decision, the episode
// ends, or the lookahead budget is spent. Returns true when a decision pends.
bool advance_to_decision(const Controller& rc, ControllerState& cs, int train,
                         int clock_limit, Phase* phase_out) {
  while (true) {
    if (rc.simulator().finished(cs.sim)) return false;
    if (cs.sim.clock >= clock_limit) return false;
    if (rc.decision_needed(cs, train, phase_out)) return true;
    rc.tick(cs);
  }
}

void rollout_to_limit(const Controller& rc, ControllerState& cs, int clock_limit) {
  while (!rc.simulator().finished(cs.sim) && cs.sim.clock < clock_limit) rc.tick(cs);
}

}  // namespace

int mcts_decide(const Controller& rc, const ControllerState& root_state, int train,
                Phase phase, const MctsConfig& config, uint64_t seed, MctsStats* stats) {
  if (config.budget < 1 || config.max_depth < 1) fail("mcts: invalid config");
  (void)seed;  // the search is deterministic; rng streams live in the states
  const int clock_limit =
      std::min(rc.simulator().t_max(), root_state.sim.clock + config.max_depth);

  std::vector<MctsNode> nodes;
  nodes.reserve(config.budget + 1);

  auto init_node = [&](ControllerState&& state, bool terminal, Phase ph) {
    MctsNode node;
    node.state = std::move(state);
    node.terminal = terminal;
    node.phase = ph;
    if (!terminal) {
      if (ph == Phase::Dispatch) {
        node.legal = {0, 1};
      } else {
        MapfMask mask = rc.routing_mask(node.state, train);
        for (int a = 0; a < 3; ++a)
          if (mask.allowed[a]) node.legal.push_back(a);
      }
      std::vector<double> priors = rc.decision_priors(node.state, train, ph);
      double total = 0;
      for (int a : node.legal) total += priors[a];
      for (int a : node.legal)
        node.prior.push_back(total > 0 ? priors[a] / total
                                       : 1.0 / node.legal.size());
      node.child.assign(node.legal.size(), -1);
      node.n.assign(node.legal.size(), 0);
      node.w.assign(node.legal.size(), 0.0);
    }
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size()) - 1;
  };

  init_node(ControllerState(root_state), false, phase);

  for (int sim_i = 0; sim_i < config.budget; ++sim_i) {
    std::vector<std::pair<int, int>> path;  // (node, action slot)
    int cur = 0;
    double value = 0;
    while (true) {
      MctsNode& node = nodes[cur];
      if (node.terminal) {
        value = evaluate_state(rc, node.state, config);
        break;
      }
      int best = 0;
      double best_score = -1e18;
      for (size_t a = 0; a < node.legal.size(); ++a) {
        double q = node.n[a] > 0 ? node.w[a] / node.n[a] : 0.0;
        double u = config.exploration * node.prior[a] * std::sqrt(node.visits) /
                   (1.0 + node.n[a]);
        double score = q + u;
        if (score > best_score + 1e-12) {
          best_score = score;
          best = static_cast<int>(a);
        }
      }
      path.push_back({cur, best});
      if (node.child[best] < 0) {
        // One expansion per simulation, then a heuristic rollout.
        ControllerState next(node.state);
        rc.tick_forced(next, train, node.phase, node.legal[best]);
        Phase next_phase = Phase::Dispatch;
        bool pending = advance_to_decision(rc, next, train, clock_limit, &next_phase);
        int idx = init_node(std::move(next), !pending, next_phase);
        nodes[path.back().first].child[best] = idx;
        ControllerState scratch(nodes[idx].state);
        rollout_to_limit(rc, scratch, clock_limit);
        value = evaluate_state(rc, scratch, config);
        break;
      }
      cur = node.child[best];
    }
    for (auto [ni, ai] : path) {
      ++nodes[ni].visits;
      ++nodes[ni].n[ai];
      nodes[ni].w[ai] += value;
    }
  }

  const MctsNode& root = nodes[0];
  if (stats) {
    stats->root_actions = root.legal;
    stats->root_visits = root.n;
    stats->root_values.clear();
    for (size_t a = 0; a < root.legal.size(); ++a)
      stats->root_values.push_back(root.n[a] > 0 ? root.w[a] / root.n[a] : 0.0);
  }
  int best_slot = 0;
  for (size_t a = 1; a < root.legal.size(); ++a)
    if (root.n[a] > root.n[best_slot]) best_slot = static_cast<int>(a);
  return root.legal[best_slot];
}

namespace {

MctsDispatchPolicy::MctsDispatchPolicy(const ControllerConfig& config,
                                       const Scenario& scenario, const Router& router)
    : mcts_(config.mcts) {
  rollout_ = std::make_unique<Controller>(scenario, router, rollout_config(config));
}

MadsAction MctsDispatchPolicy::decide(const DispatchDecision& d) {
  int a = mcts_decide(*rollout_, d.full, d.train, Phase::Dispatch, mcts_, d.rng.next());
  return static_cast<MadsAction>(a);
}

MctsRoutingPolicy::MctsRoutingPolicy(const ControllerConfig& config,
                                     const Scenario& scenario, const Router& router)
    : mcts_(config.mcts) {
  rollout_ = std::make_unique<Controller>(scenario, router, rollout_config(config));
}

MapfAction MctsRoutingPolicy::decide(const RoutingDecision& d) {
  int a = mcts_decide(*rollout_, d.full, d.train, Phase::Routing, mcts_, d.rng.next());
  return static_cast<MapfAction>(a);
}

}  // namespace

// ---------------------------------------------------------------------------
// Behaviour-cloning dataset collection

namespace {

class BufferSink final : public DecisionSink {
 public:
  std::vector<BcSample> samples;
  std::string episode;
  void on_decision(Phase phase, int train, const std::vector<double>& obs, int action,
                   int clock) override {
    samples.push_back({phase, obs, action, train, episode, clock, false});
  }
};

}  // namespace

BcCollectStats collect_bc_dataset(const std::vector<Scenario>& scenarios,
                                  const ControllerConfig& config,
                                  const std::vector<uint64_t>& seeds, bool filter_failed,
                                  std::ostream& out) {
  BcCollectStats stats;
  for (size_t si = 0; si < scenarios.size(); ++si) {
    Router router(scenarios[si].grid);
    for (const auto& t : scenarios[si].trains) router.ensure_target(t.target);
    Controller controller(scenarios[si], router, config);
    for (uint64_t seed : seeds) {
      BufferSink sink;
      sink.episode = "s" + std::to_string(si) + "-" + std::to_string(seed);
      controller.set_decision_sink(&sink);
      ControllerState cs = controller.reset(seed);
      while (!controller.simulator().finished(cs.sim)) controller.tick(cs);
      controller.set_decision_sink(nullptr);
      ++stats.episodes;
      for (BcSample& s : sink.samples) {
        bool ok = cs.sim.trains[s.train].status == TrainStatus::Arrived;
        s.success = ok;
        if (filter_failed && !ok) {
          ++stats.dropped;
          continue;
        }
        nlohmann::json j;
        j["phase"] = s.phase == Phase::Dispatch ? "dispatch" : "routing";
        j["layout"] = kObsLayoutVersion;
        j["episode"] = s.episode;
        j["train"] = s.train;
        j["clock"] = s.clock;
        j["action"] = s.action;
        j["success"] = s.success;
        j["obs"] = s.obs;
        out << j.dump() << "\n";
        ++stats.kept;
        if (s.phase == Phase::Dispatch)
          ++stats.dispatch_samples;
        else
          ++stats.routing_samples;
      }
    }
  }
  return stats;
}

}  // namespace railflow
