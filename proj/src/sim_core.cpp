#include "railflow/sim_core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "railflow/util.hpp"

namespace railflow {

const char* to_string(RawAction a) {
  switch (a) {
    case RawAction::Noop: return "NOOP";
    case RawAction::Stop: return "STOP";
    case RawAction::Forward: return "FORWARD";
    case RawAction::Left: return "LEFT";
    case RawAction::Right: return "RIGHT";
  }
  return "?";
}

const char* to_string(TrainStatus s) {
  switch (s) {
    case TrainStatus::WaitingOffMap: return "waiting";
    case TrainStatus::ReadyOffMap: return "ready";
    case TrainStatus::Active: return "active";
    case TrainStatus::Arrived: return "arrived";
    case TrainStatus::CancelledAtEnd: return "cancelled";
  }
  return "?";
}

void validate_scenario(const Scenario& scenario) {
  const RailGrid& grid = scenario.grid;
  if (grid.width <= 0 || grid.height <= 0 ||
      grid.cells.size() != static_cast<size_t>(grid.width) * grid.height)
    fail("scenario: malformed grid");
  if (scenario.trains.empty()) fail("scenario: no trains");
  std::set<CellId> station_cells;
  for (const auto& s : grid.stations) station_cells.insert(s.cell);
  for (size_t i = 0; i < scenario.trains.size(); ++i) {
    const auto& t = scenario.trains[i];
    if (t.id != static_cast<int>(i)) fail("scenario: train ids must be dense and ordered");
    if (!grid.in_bounds(t.origin.cell) || !grid.in_bounds(t.target))
      fail("scenario: train " + std::to_string(t.id) + " references an off-grid cell");
    if (!station_cells.count(t.origin.cell) || !station_cells.count(t.target))
      fail("scenario: train " + std::to_string(t.id) + " must run station to station");
    if (t.origin.cell == t.target)
      fail("scenario: train " + std::to_string(t.id) + " origin equals target");
    if (grid.transitions(t.origin.cell).exit_count(t.origin.heading) == 0)
      fail("scenario: train " + std::to_string(t.id) + " origin heading has no exit");
    if (t.speed.num <= 0 || t.speed.den <= 0 || t.speed.num > t.speed.den)
      fail("scenario: train " + std::to_string(t.id) + " speed must be in (0, 1]");
    if (t.earliest_departure < 0 || t.earliest_departure >= t.scheduled_arrival)
      fail("scenario: train " + std::to_string(t.id) +
           " departure must precede scheduled arrival");
  }
  if (scenario.config.malfunction_rate < 0 || scenario.config.malfunction_rate > 1)
    fail("scenario: malfunction rate outside [0, 1]");
  if (scenario.config.malfunction_min > scenario.config.malfunction_max)
    fail("scenario: malfunction duration range inverted");
  if (!scenario.config.reject_all_motion_cycles)
    fail("scenario: only the reject-all motion-cycle policy is supported");
  int t_max = horizon(scenario);
  for (const auto& t : scenario.trains)
    if (t.scheduled_arrival > t_max)
      fail("scenario: train " + std::to_string(t.id) + " scheduled past the horizon");
}

int horizon(const Scenario& scenario) {
  if (scenario.config.t_max_override > 0) return scenario.config.t_max_override;
  if (scenario.config.beta <= 0) fail("horizon: beta must be positive");
  int cities = std::max(1, scenario.grid.city_count());
  double v = scenario.config.beta *
             (scenario.grid.width + scenario.grid.height +
              static_cast<double>(scenario.trains.size()) / cities);
  return static_cast<int>(std::ceil(v));
}

MotionResolution resolve_motion(const std::vector<int32_t>& occupancy,
                                const std::vector<std::pair<int, CellId>>& intents) {
  MotionResolution res;
  // Lowest id wins each contested cell.
  std::map<CellId, int> winner;
  std::map<int, CellId> target;
  for (const auto& [train, cell] : intents) {
    target[train] = cell;
    auto it = winner.find(cell);
    if (it == winner.end() || train < it->second) winner[cell] = train;
  }
  enum class Verdict : uint8_t { Pending, Accepted, Rejected };
  std::map<int, Verdict> verdict;
  std::map<int, RejectReason> reason;
  for (const auto& [train, cell] : intents) {
    if (winner[cell] != train) {
      verdict[train] = Verdict::Rejected;
      reason[train] = RejectReason::Contention;
    } else {
      verdict[train] = Verdict::Pending;
    }
  }
  // Each pending mover depends on at most one occupant; walk the chains,
  // rejecting any cycle wholly (covers swaps and longer rotations).
  for (const auto& [train, cell] : intents) {
    if (verdict[train] != Verdict::Pending) continue;
    std::vector<int> chain;
    std::set<int> on_chain;
    int cur = train;
    Verdict outcome = Verdict::Accepted;
    RejectReason why = RejectReason::TargetBlocked;
    while (true) {
      chain.push_back(cur);
      on_chain.insert(cur);
      int occupant = occupancy[target[cur]];
      if (occupant < 0) break;  // chain ends at a free cell
      if (occupant == cur) break;  // waits at own cell; treat as free
      auto it = verdict.find(occupant);
      if (it == verdict.end()) {
        outcome = Verdict::Rejected;  // blocked by a non-mover
        why = RejectReason::TargetBlocked;
        break;
      }
      if (it->second == Verdict::Accepted) break;  // occupant already vacates
      if (it->second == Verdict::Rejected) {
        outcome = Verdict::Rejected;
        why = RejectReason::TargetBlocked;
        break;
      }
      if (on_chain.count(occupant)) {
        outcome = Verdict::Rejected;
        why = RejectReason::CycleDependency;
        break;
      }
      cur = occupant;
    }
    for (int t : chain) {
      if (verdict[t] == Verdict::Pending) {
        verdict[t] = outcome;
        if (outcome == Verdict::Rejected) reason[t] = why;
      }
    }
  }
  for (const auto& [train, v] : verdict) {
    if (v == Verdict::Accepted)
      res.accepted.push_back(train);
    else
      res.rejected.push_back({train, reason[train]});
  }
  return res;
}

Simulator::Simulator(const Scenario& scenario) : scenario_(&scenario) {
  validate_scenario(scenario);
  t_max_ = horizon(scenario);
}

SimState Simulator::reset(uint64_t seed) const {
  SimState s;
  s.clock = 0;
  s.trains.assign(scenario_->trains.size(), {});
  s.occupancy.assign(scenario_->grid.cells.size(), -1);
  s.rng = Rng(seed);
  return s;
}

bool Simulator::finished(const SimState& state) const {
  if (state.clock >= t_max_) return true;
  for (const auto& t : state.trains)
    if (t.status != TrainStatus::Arrived) return false;
  return true;
}

int Simulator::active_count(const SimState& state) const {
  int n = 0;
  for (const auto& t : state.trains) n += t.status == TrainStatus::Active ? 1 : 0;
  return n;
}

StepEvents Simulator::step(SimState& state, const JointAction& actions) const {
  if (finished(state)) fail("step: episode already finished");
  if (actions.size() != state.trains.size()) fail("step: joint action size mismatch");
  const RailGrid& grid = scenario_->grid;
  StepEvents events;
  const int n = static_cast<int>(state.trains.size());

  // Phase 0: departure-time promotion.
  for (int i = 0; i < n; ++i) {
    TrainState& t = state.trains[i];
    if (t.status == TrainStatus::WaitingOffMap &&
        state.clock >= scenario_->trains[i].earliest_departure) {
      t.status = TrainStatus::ReadyOffMap;
      events.push_back({EventKind::BecameReady, i});
    }
  }

  // Phase 1: malfunctions. Scripted faults first, then the random process.
  for (const auto& o : scenario_->config.scripted_malfunctions) {
    if (o.tick != state.clock || o.train < 0 || o.train >= n) continue;
    TrainState& t = state.trains[o.train];
    if (t.status == TrainStatus::Arrived || t.malfunction_left > 0) continue;
    t.malfunction_left = o.duration;
    t.progress_num = 0;  // a failed train loses its partial motion
    events.push_back({EventKind::MalfunctionBegan, o.train, o.duration});
  }
  if (scenario_->config.malfunction_rate > 0) {
    for (int i = 0; i < n; ++i) {
      TrainState& t = state.trains[i];
      if (t.status == TrainStatus::Arrived || t.malfunction_left > 0) continue;
      if (state.rng.chance(scenario_->config.malfunction_rate)) {
        int d = state.rng.range(scenario_->config.malfunction_min,
                                scenario_->config.malfunction_max);
        t.malfunction_left = d;
        t.progress_num = 0;
        events.push_back({EventKind::MalfunctionBegan, i, d});
      }
    }
  }

  // Phase 2: motion of active trains.
  std::vector<std::pair<int, CellId>> intents;
  for (int i = 0; i < n; ++i) {
    TrainState& t = state.trains[i];
    if (t.status != TrainStatus::Active || t.malfunction_left > 0) continue;
    RawAction a = actions[i];
    if (a == RawAction::Stop) {
      t.progress_num = 0;  // stopping discards partial progress
      continue;
    }
    // Resolve the action into an outgoing heading.
    const CellTransitions& tr = grid.transitions(t.pose.cell);
    std::optional<Heading> out;
    switch (a) {
      case RawAction::Noop:
        // Maintain motion: follow the sole transition; on a branching cell
        // there is nothing implied, so hold position.
        if (tr.exit_count(t.pose.heading) == 1) {
          for (int d = 0; d < kHeadingCount; ++d)
            if (tr.allows(t.pose.heading, static_cast<Heading>(d)))
              out = static_cast<Heading>(d);
        }
        break;
      case RawAction::Forward:
        if (tr.allows(t.pose.heading, t.pose.heading)) {
          out = t.pose.heading;
        } else if (tr.exit_count(t.pose.heading) == 1) {
          for (int d = 0; d < kHeadingCount; ++d)
            if (tr.allows(t.pose.heading, static_cast<Heading>(d)))
              out = static_cast<Heading>(d);
        }
        break;
      case RawAction::Left:
      case RawAction::Right: {
        Heading h = a == RawAction::Left ? rotate_left(t.pose.heading)
                                         : rotate_right(t.pose.heading);
        if (tr.allows(t.pose.heading, h)) out = h;
        break;
      }
      default:
        break;
    }
    if (!out) {
      if (a == RawAction::Forward || a == RawAction::Left || a == RawAction::Right)
        events.push_back({EventKind::MoveRejected, i,
                          static_cast<int>(RejectReason::NoTransition)});
      continue;
    }
    // Fractional speed: accumulate, move only on a full unit.
    const Speed& sp = scenario_->trains[i].speed;
    t.progress_num = std::min(t.progress_num + sp.num, sp.den);
    if (t.progress_num < sp.den) continue;
    auto nb = grid.neighbor(t.pose.cell, *out);
    if (!nb) {
      events.push_back(
          {EventKind::MoveRejected, i, static_cast<int>(RejectReason::NoTransition)});
      continue;
    }
    intents.push_back({i, *nb});
  }
  MotionResolution motion = resolve_motion(state.occupancy, intents);
  std::map<int, CellId> intent_cell;
  std::map<int, Heading> intent_heading;
  for (const auto& [i, c] : intents) intent_cell[i] = c;
  for (const auto& [i, c] : intents) {
    const TrainState& t = state.trains[i];
    int ddx = grid.x_of(c) - grid.x_of(t.pose.cell);
    int ddy = grid.y_of(c) - grid.y_of(t.pose.cell);
    for (int d = 0; d < kHeadingCount; ++d)
      if (dx(static_cast<Heading>(d)) == ddx && dy(static_cast<Heading>(d)) == ddy)
        intent_heading[i] = static_cast<Heading>(d);
  }
  for (int i : motion.accepted) {
    TrainState& t = state.trains[i];
    CellId from = t.pose.cell;
    CellId to = intent_cell[i];
    if (state.occupancy[from] == i) state.occupancy[from] = -1;
    state.occupancy[to] = i;
    t.pose = {to, intent_heading[i]};
    t.progress_num -= scenario_->trains[i].speed.den;
    events.push_back({EventKind::Moved, i, from, to});
  }
  for (const auto& [i, why] : motion.rejected)
    events.push_back({EventKind::MoveRejected, i, static_cast<int>(why)});

  // Phase 3: dispatch attempts, lowest id first.
  for (int i = 0; i < n; ++i) {
    TrainState& t = state.trains[i];
    if (t.status != TrainStatus::ReadyOffMap || t.malfunction_left > 0) continue;
    if (actions[i] != RawAction::Forward) continue;
    CellId origin = scenario_->trains[i].origin.cell;
    if (state.occupancy[origin] != -1) continue;  // still occupied after motion
    t.status = TrainStatus::Active;
    t.pose = scenario_->trains[i].origin;
    t.progress_num = 0;
    t.departed_at = state.clock;
    state.occupancy[origin] = i;
    events.push_back({EventKind::Dispatched, i, origin});
  }

  // Phase 4: arrivals vacate their cell the same tick.
  for (int i = 0; i < n; ++i) {
    TrainState& t = state.trains[i];
    if (t.status != TrainStatus::Active) continue;
    if (t.pose.cell != scenario_->trains[i].target) continue;
    t.status = TrainStatus::Arrived;
    t.arrived_at = state.clock;
    state.occupancy[t.pose.cell] = -1;
    events.push_back({EventKind::Arrived, i, t.pose.cell});
  }

  // Phase 5: malfunction countdown.
  for (int i = 0; i < n; ++i) {
    TrainState& t = state.trains[i];
    if (t.malfunction_left > 0) {
      if (--t.malfunction_left == 0)
        events.push_back({EventKind::MalfunctionEnded, i});
    }
  }

  // Phase 6: clock advance; cancellations exist only at the horizon.
  ++state.clock;
  if (state.clock >= t_max_) {
    for (int i = 0; i < n; ++i) {
      TrainState& t = state.trains[i];
      if (t.status == TrainStatus::WaitingOffMap || t.status == TrainStatus::ReadyOffMap) {
        t.status = TrainStatus::CancelledAtEnd;
        events.push_back({EventKind::Cancelled, i});
      }
    }
  }

  // Occupancy exclusivity is the core safety invariant; verify every tick.
  std::set<CellId> seen;
  for (int i = 0; i < n; ++i) {
    const TrainState& t = state.trains[i];
    if (t.status != TrainStatus::Active) continue;
    if (!grid.is_rail(t.pose.cell)) fail("step: active train left the rails");
    if (!seen.insert(t.pose.cell).second) fail("step: two trains share a cell");
    if (state.occupancy[t.pose.cell] != i) fail("step: occupancy index out of sync");
  }
  return events;
}

}  // namespace railflow
