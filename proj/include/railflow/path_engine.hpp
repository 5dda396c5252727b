#pragma once

#include <optional>
#include <unordered_map>
#include <vector>

#include "railflow/rail_net.hpp"
#include "railflow/sim_core.hpp"

namespace railflow {

// A route is a transition-valid pose sequence; poses[0] is where the train
// stands, the last pose is the first visit to the target cell.
struct Route {
  std::vector<Pose> poses;
  int cost() const { return static_cast<int>(poses.size()) - 1; }
  bool empty() const { return poses.empty(); }
  friend bool operator==(const Route&, const Route&) = default;
};

struct TopKPaths {
  std::vector<Route> routes;  // strictly increasing cost, pairwise distinct
  int k = 0;
};

struct ConflictProjection {
  int n_conflict_cells = 0;
  int dist_self = 0;   // steps along route a to the first shared cell
  int dist_other = 0;  // steps along route b to the first shared cell
  friend bool operator==(const ConflictProjection&, const ConflictProjection&) = default;
};

// Route search over the pose graph (cell x heading); heading determines the
// legal exits, so cell-level search would be wrong on switches. Distance
// fields are precomputed per target with ensure_target; queries are const and
// safe to run concurrently afterwards.
class Router {
 public:
  explicit Router(const RailGrid& grid) : grid_(&grid) {}

  const RailGrid& grid() const { return *grid_; }

  void ensure_target(CellId target);
  bool has_target(CellId target) const { return fields_.count(target) > 0; }

  // Steps from `from` to the target cell ignoring all trains; -1 if
  // unreachable. Requires ensure_target(target) to have run.
  int distance(Pose from, CellId target) const;

  // Minimum-cost route; ties broken lexicographically by pose sequence.
  std::optional<Route> shortest_route(Pose from, CellId target) const;

  // Deviation-based enumeration of the k best loop-free routes.
  TopKPaths top_k_routes(Pose from, CellId target, int k) const;

 private:
  const RailGrid* grid_;
  std::unordered_map<CellId, std::vector<int32_t>> fields_;
};

// One-shot conveniences that build a throwaway Router.
std::optional<Route> shortest_route(const RailGrid& grid, Pose from, CellId target);
TopKPaths top_k_routes(const RailGrid& grid, Pose from, CellId target, int k);

// Router with distance fields prepared for every train target in the scenario.
Router make_router(const Scenario& scenario);

// Replanning after a deviation: the shortest path from the current pose,
// ignoring obstacles.
inline std::optional<Route> replan_from(const Router& router, Pose pose, CellId target) {
  return router.shortest_route(pose, target);
}

struct DecisionPointHit {
  int index;  // pose index within the route
  int steps;  // index - current index
};

// First pose at or after current_index (excluding the final target pose)
// where the route's heading admits two or more exits.
std::optional<DecisionPointHit> next_decision_point(const RailGrid& grid,
                                                    const Route& route,
                                                    int current_index);

// Spatial overlap between two routes. Start offsets are accepted for context
// but the comparison is purely over cell sets; distances are step offsets
// along each route, with `horizon` as the no-conflict sentinel.
ConflictProjection project_conflicts(const Route& route_a, int start_a,
                                     const Route& route_b, int start_b, int horizon);

// Directed blocking structure over active trains: a train contributes edges
// only when every transition-valid next cell is occupied, one edge per
// distinct blocker. A train with any free exit has out-degree zero.
struct WaitForGraph {
  std::vector<int> nodes;                    // active train ids
  std::vector<std::pair<int, int>> edges;    // blocked -> blocker
};

WaitForGraph build_wait_for_graph(const RailGrid& grid, const SimState& state);

// Trains that can never move again under the no-rotation motion rule: members
// of mutually-blocking groups plus every train whose exits all lead into the
// group. Sound, not complete — late but mobile trains are never flagged.
std::vector<int> detect_deadlocks(const RailGrid& grid, const SimState& state);

}  // namespace railflow
