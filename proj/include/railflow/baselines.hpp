#pragma once

#include <map>
#include <optional>
#include <vector>

#include "railflow/control.hpp"
#include "railflow/path_engine.hpp"
#include "railflow/sim_core.hpp"

namespace railflow {

// Space-time bookings: cells per tick, plus traversed edges for swap
// prevention. A booking at time t means the train stands on the cell after
// step t has run.
class ReservationTable {
 public:
  bool cell_free(CellId cell, int t, int self) const;
  bool edge_free(CellId a, CellId b, int t, int self) const;
  void reserve_cell(CellId cell, int t, int train);
  void reserve_edge(CellId a, CellId b, int t, int train);
  void clear();
  size_t cell_bookings() const { return cells_.size(); }

 private:
  std::map<std::pair<CellId, int>, int> cells_;
  std::map<std::tuple<CellId, CellId, int>, int> edges_;
};

// Contiguous timed poses, waits included; entries[i] is the train's pose
// after step (first_t + i) has run.
struct SpaceTimePlan {
  int train = -1;
  int first_t = 0;
  std::vector<Pose> poses;
  int arrival_t() const { return first_t + static_cast<int>(poses.size()) - 1; }
  friend bool operator==(const SpaceTimePlan&, const SpaceTimePlan&) = default;
};

struct PlanSet {
  std::vector<std::optional<SpaceTimePlan>> plans;  // nullopt = cancelled
  std::vector<int> priority_order;
};

// Sequential prioritised planning: trains ordered by earliest departure, then
// descending shortest cost, then id; each planned by space-time search
// against the reservation table. Entering a cell additionally requires it
// free on the previous tick, which rules out rotations the simulator would
// reject. Trains that cannot reach their target within the horizon are
// cancelled. Requires unit-numerator speeds.
PlanSet prioritized_plan(const Scenario& scenario, const Router& router);

struct ExecutionResult {
  struct Tick {
    JointAction actions;
    StepEvents events;
  };
  std::vector<Tick> ticks;
  SimState final_state;
  int replans = 0;
  PlanSet final_plans;
};

// Drives the plans through the simulator. Any malfunction onset triggers a
// full sequential replan of unfinished trains from their current poses; a
// plan/state divergence without a malfunction is an error.
ExecutionResult execute_plans(const Scenario& scenario, const Router& router,
                              const PlanSet& plans, uint64_t seed);

// Fixed-path conflict-avoidance policies: each train holds its shortest route
// from the origin; dispatch waits while an opposing train stands in the entry
// segment, and on-map trains stop at decision points while the upcoming
// segment holds an opposing train. Never deviates.
std::unique_ptr<DispatchPolicy> make_deadlock_avoidance_dispatch(const Scenario& scenario,
                                                                 const Router& router);
std::unique_ptr<RoutingPolicy> make_deadlock_avoidance_routing(const Scenario& scenario,
                                                               const Router& router);

}  // namespace railflow
