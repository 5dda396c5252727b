#include "railflow/baselines.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <unordered_map>

#include "railflow/trace.hpp"
#include "railflow/util.hpp"

namespace railflow {

bool ReservationTable::cell_free(CellId cell, int t, int self) const {
  auto it = cells_.find({cell, t});
  return it == cells_.end() || it->second == self;
}

bool ReservationTable::edge_free(CellId a, CellId b, int t, int self) const {
  auto it = edges_.find({std::min(a, b), std::max(a, b), t});
  return it == edges_.end() || it->second == self;
}

void ReservationTable::reserve_cell(CellId cell, int t, int train) {
  auto [it, inserted] = cells_.insert({{cell, t}, train});
  if (!inserted && it->second != train) fail("reservation: cell double-booked");
}

void ReservationTable::reserve_edge(CellId a, CellId b, int t, int train) {
  auto [it, inserted] = edges_.insert({{std::min(a, b), std::max(a, b), t}, train});
  if (!inserted && it->second != train) fail("reservation: edge double-booked");
}

void ReservationTable::clear() {
  cells_.clear();
  edges_.clear();
}

namespace {

// Space-time search for one train against the table. Start states are either
// dispatch opportunities (off-map) or the current pose at start_t; moves take
// `den` ticks; waits one tick. Minimises arrival time.
struct SearchInput {
  const RailGrid* grid;
  const Router* router;
  const ReservationTable* table;
  int train;
  CellId target;
  int den;        // ticks per cell
  int t_max;      // plans must arrive before this
  // off-map start
  bool off_map = false;
  Pose origin;
  int earliest_dispatch = 0;
  // on-map start
  Pose pose;
  int start_t = 0;
};

struct SearchNode {
  int f;
  int t;
  int pose_idx;
  bool operator<(const SearchNode& o) const {
    return std::tie(f, t, pose_idx) > std::tie(o.f, o.t, o.pose_idx);  // min-heap
  }
};

constexpr int pose_key(Pose p) {
  return static_cast<int>(p.cell) * kHeadingCount + static_cast<int>(p.heading);
}

Pose pose_unkey(int k) {
  return {static_cast<CellId>(k / kHeadingCount), static_cast<Heading>(k % kHeadingCount)};
}

std::optional<SpaceTimePlan> space_time_search(const SearchInput& in) {
  const RailGrid& grid = *in.grid;
  const int last_t = in.t_max - 1;
  auto heuristic = [&](Pose p) {
    int d = in.router->distance(p, in.target);
    return d < 0 ? -1 : d * in.den;
  };

  // Visited state: (pose, t). Parents for reconstruction.
  std::unordered_map<int64_t, int64_t> parent;
  auto key = [&](int pose_idx, int t) {
    return static_cast<int64_t>(pose_idx) * (last_t + 2) + t;
  };
  std::priority_queue<SearchNode> open;
  std::set<std::pair<int, int>> seen;  // (pose_idx, t)

  auto push = [&](Pose p, int t, int64_t from) {
    int h = heuristic(p);
    if (h < 0 || t + h > last_t) return;
    int pi = pose_key(p);
    if (!seen.insert({pi, t}).second) return;
    parent[key(pi, t)] = from;
    open.push({t + h, t, pi});
  };

  if (in.off_map) {
    for (int t0 = in.earliest_dispatch; t0 <= last_t; ++t0)
      if (in.table->cell_free(in.origin.cell, t0, in.train)) push(in.origin, t0, -1);
  } else {
    push(in.pose, in.start_t, -1);
  }

  while (!open.empty()) {
    SearchNode node = open.top();
    open.pop();
    Pose p = pose_unkey(node.pose_idx);
    if (p.cell == in.target) {
      // Reconstruct: walk parents, then materialise contiguous timed poses.
      std::vector<std::pair<int, Pose>> waypoints;
      int64_t k = key(node.pose_idx, node.t);
      while (true) {
        int t = static_cast<int>(k % (last_t + 2));
        int pi = static_cast<int>(k / (last_t + 2));
        waypoints.push_back({t, pose_unkey(pi)});
        auto it = parent.find(k);
        if (it == parent.end() || it->second < 0) break;
        k = it->second;
      }
      std::reverse(waypoints.begin(), waypoints.end());
      SpaceTimePlan plan;
      plan.train = in.train;
      plan.first_t = waypoints.front().first;
      for (size_t i = 0; i < waypoints.size(); ++i) {
        plan.poses.push_back(waypoints[i].second);
        if (i + 1 < waypoints.size()) {
          // Hold the pose through the gap up to the next waypoint.
          for (int t = waypoints[i].first + 1; t < waypoints[i + 1].first; ++t)
            plan.poses.push_back(waypoints[i].second);
        }
      }
      return plan;
    }

    int64_t from = key(node.pose_idx, node.t);
    // Wait in place.
    if (node.t + 1 <= last_t && in.table->cell_free(p.cell, node.t + 1, in.train))
      push(p, node.t + 1, from);
    // Moves: land den ticks later; the cell entered must be free on the
    // previous tick as well, so simultaneous rotations never arise.
    int land = node.t + in.den;
    if (land > last_t) continue;
    bool source_clear = true;
    for (int t = node.t + 1; t < land; ++t)
      if (!in.table->cell_free(p.cell, t, in.train)) source_clear = false;
    if (!source_clear) continue;
    const CellTransitions& tr = grid.transitions(p.cell);
    for (int d = 0; d < kHeadingCount; ++d) {
      auto h = static_cast<Heading>(d);
      if (!tr.allows(p.heading, h)) continue;
      auto nb = grid.neighbor(p.cell, h);
      if (!nb) continue;
      if (!in.table->cell_free(*nb, land, in.train)) continue;
      if (!in.table->cell_free(*nb, land - 1, in.train)) continue;
      if (!in.table->edge_free(p.cell, *nb, land, in.train)) continue;
      push({*nb, h}, land, from);
    }
  }
  return std::nullopt;
}

void reserve_plan(ReservationTable& table, const SpaceTimePlan& plan) {
  for (size_t i = 0; i < plan.poses.size(); ++i) {
    int t = plan.first_t + static_cast<int>(i);
    table.reserve_cell(plan.poses[i].cell, t, plan.train);
    if (i > 0 && plan.poses[i].cell != plan.poses[i - 1].cell)
      table.reserve_edge(plan.poses[i - 1].cell, plan.poses[i].cell, t, plan.train);
  }
}

std::vector<int> priority_order(const Scenario& scenario, const Router& router) {
  std::vector<int> order(scenario.trains.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<int> cost(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& t = scenario.trains[i];
    cost[i] = router.distance(t.origin, t.target);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ta = scenario.trains[a];
    const auto& tb = scenario.trains[b];
    if (ta.earliest_departure != tb.earliest_departure)
      return ta.earliest_departure < tb.earliest_departure;
    if (cost[a] != cost[b]) return cost[a] > cost[b];
    return a < b;
  });
  return order;
}

void check_unit_speeds(const Scenario& scenario) {
  for (const auto& t : scenario.trains)
    if (t.speed.num != 1)
      fail("prioritized planning supports speeds 1/m only");
}

}  // namespace

PlanSet prioritized_plan(const Scenario& scenario, const Router& router) {
  check_unit_speeds(scenario);
  const int t_max = horizon(scenario);
  PlanSet out;
  out.plans.assign(scenario.trains.size(), std::nullopt);
  out.priority_order = priority_order(scenario, router);
  ReservationTable table;
  for (int id : out.priority_order) {
    const auto& t = scenario.trains[id];
    SearchInput in;
    in.grid = &scenario.grid;
    in.router = &router;
    in.table = &table;
    in.train = id;
    in.target = t.target;
    in.den = t.speed.den;
    in.t_max = t_max;
    in.off_map = true;
    in.origin = t.origin;
    in.earliest_dispatch = t.earliest_departure;
    auto plan = space_time_search(in);
    if (plan) {
      reserve_plan(table, *plan);
      out.plans[id] = std::move(plan);
    }
  }
  return out;
}

namespace {

// Per-train action script derived from a plan: movement intents occupy the
// last den ticks before each landing, everything else holds. Plans that start
// off-map open with the dispatching forward.
std::unordered_map<int, RawAction> script_actions(const SpaceTimePlan& plan, int den,
                                                  bool starts_off_map) {
  std::unordered_map<int, RawAction> actions;
  for (int t = plan.first_t; t <= plan.arrival_t(); ++t) actions[t] = RawAction::Stop;
  if (starts_off_map) actions[plan.first_t] = RawAction::Forward;
  for (size_t i = 1; i < plan.poses.size(); ++i) {
    if (plan.poses[i].cell == plan.poses[i - 1].cell) continue;
    int land = plan.first_t + static_cast<int>(i);
    RawAction a = translate_routing_step(plan.poses[i - 1], plan.poses[i]);
    for (int t = land - den + 1; t <= land; ++t)
      if (t > plan.first_t) actions[t] = a;
  }
  return actions;
}

struct Replanner {
  const Scenario& scenario;
  const Router& router;
  int t_max;

  // Rebuilds every unfinished train's plan from the current state. Every
  // active train physically holds its cell through the current tick (and its
  // malfunction window), so those bookings go in before any search runs. An
  // active train with no feasible continuation is pinned in place for the
  // rest of the episode and the pass restarts, so higher-priority plans never
  // route through a cell that turns out to be blocked for good.
  PlanSet replan(const SimState& state, const std::vector<int>& order) {
    const int now = state.clock;
    const int n = static_cast<int>(scenario.trains.size());
    std::vector<char> pinned(n, 0);
    while (true) {
      PlanSet out;
      out.plans.assign(n, std::nullopt);
      out.priority_order = order;
      ReservationTable table;
      for (int id = 0; id < n; ++id) {
        const TrainState& ts = state.trains[id];
        if (ts.status != TrainStatus::Active) continue;
        int held_until = std::max(now, now - 1 + ts.malfunction_left);
        for (int t = now - 1; t <= held_until; ++t)
          table.reserve_cell(ts.pose.cell, t, id);
        if (pinned[id]) {
          SpaceTimePlan hold;
          hold.train = id;
          hold.first_t = now;
          hold.poses.assign(std::max(1, t_max - now), ts.pose);
          reserve_plan(table, hold);
          out.plans[id] = std::move(hold);
        }
      }
      bool restart = false;
      for (int id : order) {
        if (pinned[id]) continue;
        const TrainState& ts = state.trains[id];
        const auto& tt = scenario.trains[id];
        if (ts.status == TrainStatus::Arrived || ts.status == TrainStatus::CancelledAtEnd)
          continue;
        SearchInput in;
        in.grid = &scenario.grid;
        in.router = &router;
        in.table = &table;
        in.train = id;
        in.target = tt.target;
        in.den = tt.speed.den;
        in.t_max = t_max;
        if (ts.status == TrainStatus::Active) {
          in.off_map = false;
          in.pose = ts.pose;
          in.start_t = std::max(now - 1 + ts.malfunction_left, now);
        } else {
          in.off_map = true;
          in.origin = tt.origin;
          in.earliest_dispatch =
              std::max(tt.earliest_departure, now + ts.malfunction_left);
        }
        auto plan = space_time_search(in);
        if (!plan) {
          if (ts.status == TrainStatus::Active) {
            pinned[id] = 1;
            restart = true;
            break;
          }
          continue;  // still off-map: stays unplanned (cancelled at the horizon)
        }
        if (ts.status == TrainStatus::Active && plan->first_t > now) {
          // Prepend the held ticks so the plan stays contiguous from now.
          SpaceTimePlan padded;
          padded.train = id;
          padded.first_t = now;
          padded.poses.assign(plan->first_t - now, ts.pose);
          padded.poses.insert(padded.poses.end(), plan->poses.begin(),
                              plan->poses.end());
          *plan = std::move(padded);
        }
        reserve_plan(table, *plan);
        out.plans[id] = std::move(plan);
      }
      if (!restart) return out;
    }
  }
};

}  // namespace

ExecutionResult execute_plans(const Scenario& scenario, const Router& router,
                              const PlanSet& plans, uint64_t seed) {
  const int t_max = horizon(scenario);
  Simulator sim(scenario);
  ExecutionResult result;
  result.final_plans = plans;
  SimState state = sim.reset(seed);
  const int n = static_cast<int>(scenario.trains.size());

  std::vector<std::unordered_map<int, RawAction>> scripts(n);
  auto rebuild_scripts = [&]() {
    for (int i = 0; i < n; ++i) {
      scripts[i].clear();
      if (result.final_plans.plans[i]) {
        bool off_map = state.trains[i].status == TrainStatus::WaitingOffMap ||
                       state.trains[i].status == TrainStatus::ReadyOffMap;
        scripts[i] = script_actions(*result.final_plans.plans[i],
                                    scenario.trains[i].speed.den, off_map);
      }
    }
  };
  rebuild_scripts();

  Replanner replanner{scenario, router, t_max};
  std::vector<int> first_flag(n, -1);
  while (!sim.finished(state)) {
    JointAction actions(n, RawAction::Noop);
    for (int i = 0; i < n; ++i) {
      auto it = scripts[i].find(state.clock);
      if (it != scripts[i].end()) actions[i] = it->second;
    }
    StepEvents events = sim.step(state, actions);
    append_deadlock_flags(scenario.grid, state, first_flag, events);
    bool malfunction = false;
    for (const Event& e : events) {
      if (e.kind == EventKind::MalfunctionBegan) malfunction = true;
      if (e.kind == EventKind::MoveRejected && !malfunction)
        fail("plan execution: move rejected without a malfunction at tick " +
             std::to_string(state.clock - 1));
    }
    if (malfunction && !sim.finished(state)) {
      result.final_plans =
          replanner.replan(state, result.final_plans.priority_order.empty()
                                      ? priority_order(scenario, router)
                                      : result.final_plans.priority_order);
      rebuild_scripts();
      ++result.replans;
    } else {
      // Divergence check: every active train must sit where its plan says.
      for (int i = 0; i < n; ++i) {
        const TrainState& ts = state.trains[i];
        if (ts.status != TrainStatus::Active) continue;
        const auto& plan = result.final_plans.plans[i];
        if (!plan) fail("plan execution: active train without a plan");
        int idx = state.clock - 1 - plan->first_t;
        if (idx < 0 || idx >= static_cast<int>(plan->poses.size()) ||
            plan->poses[idx].cell != ts.pose.cell)
          fail("plan execution: train " + std::to_string(i) +
               " diverged from its plan at tick " + std::to_string(state.clock - 1));
      }
    }
    result.ticks.push_back({std::move(actions), std::move(events)});
  }
  result.final_state = std::move(state);
  return result;
}

// ---------------------------------------------------------------------------
// Deadlock-avoidance policies

namespace {

// Shared machinery for the fixed-route avoidance policies. Entry into a route
// window is gated on two conditions: no occupant that is not travelling with
// the window, and no active train whose remaining fixed route crosses the
// window against it. A train already standing on a cell a rival still has to
// traverse is committed: it pushes through rather than wedging the shared
// stretch. Blocked trains hold at their gates, which can only produce
// livelocks, never blocking cycles.
struct AvoidanceCore {
  std::vector<Route> routes;  // fixed shortest routes from the origins

  explicit AvoidanceCore(const Scenario& scenario, const Router& router) {
    routes.reserve(scenario.trains.size());
    for (const auto& t : scenario.trains) {
      auto r = router.shortest_route(t.origin, t.target);
      routes.push_back(r ? std::move(*r) : Route{});
    }
  }

  static bool occupants_clear(const ObsContext& ctx, int self,
                              const std::vector<Pose>& poses, int first, int last) {
    for (int j = first; j <= last; ++j) {
      int occ = ctx.state.occupancy[poses[j].cell];
      if (occ < 0 || occ == self) continue;
      if (ctx.state.trains[occ].pose.heading == poses[j].heading) continue;
      return false;
    }
    return true;
  }

  // Does any pose of rival `other` from `from_index` on cross the window
  // cells against the window headings?
  bool rival_crosses(int other, int from_index, const std::vector<Pose>& window,
                     int first, int last) const {
    const auto& poses = routes[other].poses;
    for (size_t q = from_index; q < poses.size(); ++q)
      for (int w = first; w <= last; ++w)
        if (poses[q].cell == window[w].cell && poses[q].heading != window[w].heading)
          return true;
    return false;
  }

  bool rivals_clear(const ObsContext& ctx, int self, const std::vector<Pose>& window,
                    int first, int last, std::optional<Pose> committed_at) const {
    for (int other = 0; other < static_cast<int>(ctx.state.trains.size()); ++other) {
      if (other == self) continue;
      if (ctx.state.trains[other].status != TrainStatus::Active) continue;
      int progress = ctx.plans[other].engaged() ? ctx.plans[other].index : 0;
      if (progress >= static_cast<int>(routes[other].poses.size())) continue;
      if (committed_at) {
        bool inside = false;
        const auto& poses = routes[other].poses;
        for (size_t q = progress; q < poses.size() && !inside; ++q)
          if (poses[q].cell == committed_at->cell &&
              poses[q].heading != committed_at->heading)
            inside = true;
        if (inside) continue;  // already inside the shared stretch: push through
      }
      if (rival_crosses(other, progress, window, first, last)) return false;
    }
    return true;
  }

  // Moving onto a pose whose every exit is occupied would complete a blocking
  // structure; hold instead.
  static bool step_is_trap(const ObsContext& ctx, const Pose& next) {
    for (Heading h : allowed_exits(ctx.grid, next.cell, next.heading)) {
      auto nb = ctx.grid.neighbor(next.cell, h);
      if (nb && ctx.state.occupancy[*nb] < 0) return false;
    }
    return true;
  }
};

class DeadlockAvoidanceDispatch final : public DispatchPolicy {
 public:
  DeadlockAvoidanceDispatch(const Scenario& scenario, const Router& router)
      : core_(scenario, router) {}

  MadsAction decide(const DispatchDecision& d) override {
    const Route& route = core_.routes[d.train];
    if (route.empty()) return MadsAction::Wait;
    auto dp = next_decision_point(d.ctx.grid, route, 0);
    int seg_end = dp ? dp->index : route.cost();
    if (!AvoidanceCore::occupants_clear(d.ctx, d.train, route.poses, 0, seg_end))
      return MadsAction::Wait;
    // An off-map train blocks nobody; wait until crossing traffic is done.
    if (!core_.rivals_clear(d.ctx, d.train, route.poses, 0, seg_end, std::nullopt))
      return MadsAction::Wait;
    if (AvoidanceCore::step_is_trap(d.ctx, route.poses.front())) return MadsAction::Wait;
    return MadsAction::Dispatch;
  }

 private:
  AvoidanceCore core_;
};

class DeadlockAvoidanceRouting final : public RoutingPolicy {
 public:
  DeadlockAvoidanceRouting(const Scenario& scenario, const Router& router)
      : core_(scenario, router) {}

  MapfAction decide(const RoutingDecision& d) override {
    const TrainPlan& plan = d.ctx.plans[d.train];
    if (!plan.engaged() || plan.index + 1 >= static_cast<int>(plan.route.poses.size()))
      return MapfAction::Stop;
    const Pose& pose = plan.route.poses[plan.index];
    auto dp2 = next_decision_point(d.ctx.grid, plan.route, plan.index + 1);
    int seg_end = dp2 ? dp2->index : plan.route.cost();

    // Opposing traffic standing ahead in the current segment: hold where we
    // are, keeping at least the present gap.
    if (!AvoidanceCore::occupants_clear(d.ctx, d.train, plan.route.poses,
                                        plan.index + 1, seg_end))
      return MapfAction::Stop;
    if (branch_count(d.ctx.grid, pose.cell, pose.heading) >= 2) {
      // Decision point: gate entry into the next segment against crossing
      // fixed routes, unless already committed inside the shared stretch.
      if (!core_.rivals_clear(d.ctx, d.train, plan.route.poses, plan.index + 1, seg_end,
                              pose))
        return MapfAction::Stop;
    }
    if (AvoidanceCore::step_is_trap(d.ctx, plan.route.poses[plan.index + 1]))
      return MapfAction::Stop;
    return MapfAction::Planned;
  }

 private:
  AvoidanceCore core_;
};

}  // namespace

std::unique_ptr<DispatchPolicy> make_deadlock_avoidance_dispatch(const Scenario& scenario,
                                                                 const Router& router) {
  return std::make_unique<DeadlockAvoidanceDispatch>(scenario, router);
}

std::unique_ptr<RoutingPolicy> make_deadlock_avoidance_routing(const Scenario& scenario,
                                                               const Router& router) {
  return std::make_unique<DeadlockAvoidanceRouting>(scenario, router);
}

}  // namespace railflow
