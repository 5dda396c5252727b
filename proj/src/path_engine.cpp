#include "railflow/path_engine.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <set>
#include <unordered_set>

#include "railflow/util.hpp"

namespace railflow {

namespace {

constexpr int32_t kUnreachable = std::numeric_limits<int32_t>::max();

inline int pose_index(const RailGrid& grid, Pose p) {
  (void)grid;
  return static_cast<int>(p.cell) * kHeadingCount + static_cast<int>(p.heading);
}

inline Pose pose_from_index(int idx) {
  return {static_cast<CellId>(idx / kHeadingCount),
          static_cast<Heading>(idx % kHeadingCount)};
}

using BannedPoses = std::unordered_set<int>;
using BannedEdges = std::unordered_set<int64_t>;

inline int64_t edge_key(int from_pose, int to_pose, size_t n_poses) {
  return static_cast<int64_t>(from_pose) * static_cast<int64_t>(n_poses) + to_pose;
}

// Steps-to-target over the reversed pose graph. Predecessors of (c, h) are
// the poses on cell c - delta(h) whose transitions allow turning into h.
std::vector<int32_t> backward_distance(const RailGrid& grid, CellId target,
                                       const BannedPoses* banned_poses,
                                       const BannedEdges* banned_edges) {
  const size_t n_poses = grid.cells.size() * kHeadingCount;
  std::vector<int32_t> dist(n_poses, kUnreachable);
  std::deque<int> queue;
  for (int d = 0; d < kHeadingCount; ++d) {
    int p = target * kHeadingCount + d;
    if (banned_poses && banned_poses->count(p)) continue;
    dist[p] = 0;
    queue.push_back(p);
  }
  while (!queue.empty()) {
    int q = queue.front();
    queue.pop_front();
    Pose qp = pose_from_index(q);
    int px = grid.x_of(qp.cell) - dx(qp.heading);
    int py = grid.y_of(qp.cell) - dy(qp.heading);
    if (!grid.in_bounds(px, py)) continue;
    CellId pc = grid.cell_at(px, py);
    const CellTransitions& tr = grid.transitions(pc);
    for (int hi = 0; hi < kHeadingCount; ++hi) {
      auto hin = static_cast<Heading>(hi);
      if (!tr.allows(hin, qp.heading)) continue;
      int p = pc * kHeadingCount + hi;
      if (dist[p] != kUnreachable) continue;
      if (banned_poses && banned_poses->count(p)) continue;
      if (banned_edges && banned_edges->count(edge_key(p, q, n_poses))) continue;
      dist[p] = dist[q] + 1;
      queue.push_back(p);
    }
  }
  return dist;
}

// Greedy forward walk over a distance field: always take the smallest
// qualifying next pose, which yields the lexicographically smallest shortest
// path. Distances strictly decrease, so the result is loop-free.
std::optional<Route> walk_field(const RailGrid& grid, Pose from, CellId target,
                                const std::vector<int32_t>& dist,
                                const BannedPoses* banned_poses,
                                const BannedEdges* banned_edges) {
  const size_t n_poses = grid.cells.size() * kHeadingCount;
  int start = pose_index(grid, from);
  if (banned_poses && banned_poses->count(start)) return std::nullopt;
  if (dist[start] == kUnreachable) return std::nullopt;
  Route route;
  route.poses.push_back(from);
  Pose cur = from;
  while (cur.cell != target) {
    int ci = pose_index(grid, cur);
    const CellTransitions& tr = grid.transitions(cur.cell);
    std::optional<Pose> best;
    for (int d = 0; d < kHeadingCount; ++d) {
      auto hout = static_cast<Heading>(d);
      if (!tr.allows(cur.heading, hout)) continue;
      auto nb = grid.neighbor(cur.cell, hout);
      if (!nb) continue;
      Pose q{*nb, hout};
      int qi = pose_index(grid, q);
      if (dist[qi] != dist[ci] - 1) continue;
      if (banned_poses && banned_poses->count(qi)) continue;
      if (banned_edges && banned_edges->count(edge_key(ci, qi, n_poses))) continue;
      if (!best || q < *best) best = q;
    }
    if (!best) return std::nullopt;  // field and bans disagree; treat as unreachable
    route.poses.push_back(*best);
    cur = *best;
  }
  return route;
}

std::optional<Route> shortest_with_bans(const RailGrid& grid, Pose from, CellId target,
                                        const BannedPoses& banned_poses,
                                        const BannedEdges& banned_edges) {
  auto dist = backward_distance(grid, target, &banned_poses, &banned_edges);
  return walk_field(grid, from, target, dist, &banned_poses, &banned_edges);
}

struct RouteOrder {
  bool operator()(const Route& a, const Route& b) const {
    if (a.poses.size() != b.poses.size()) return a.poses.size() < b.poses.size();
    return a.poses < b.poses;
  }
};

}  // namespace

void Router::ensure_target(CellId target) {
  if (!grid_->in_bounds(target)) fail("ensure_target: target out of bounds");
  if (fields_.count(target)) return;
  fields_.emplace(target, backward_distance(*grid_, target, nullptr, nullptr));
}

int Router::distance(Pose from, CellId target) const {
  auto it = fields_.find(target);
  if (it == fields_.end()) fail("Router::distance: target field not prepared");
  int32_t d = it->second[pose_index(*grid_, from)];
  return d == kUnreachable ? -1 : d;
}

std::optional<Route> Router::shortest_route(Pose from, CellId target) const {
  if (!grid_->is_rail(from.cell)) fail("shortest_route: pose is not on rail");
  auto it = fields_.find(target);
  if (it != fields_.end()) return walk_field(*grid_, from, target, it->second, nullptr, nullptr);
  auto dist = backward_distance(*grid_, target, nullptr, nullptr);
  return walk_field(*grid_, from, target, dist, nullptr, nullptr);
}

TopKPaths Router::top_k_routes(Pose from, CellId target, int k) const {
  if (k < 1) fail("top_k_routes: k must be >= 1");
  TopKPaths out;
  out.k = k;
  auto first = shortest_route(from, target);
  if (!first) return out;
  out.routes.push_back(std::move(*first));
  if (k == 1) return out;

  const size_t n_poses = grid_->cells.size() * kHeadingCount;
  std::set<Route, RouteOrder> candidates;
  while (static_cast<int>(out.routes.size()) < k) {
    const Route& prev = out.routes.back();
    for (size_t spur = 0; spur + 1 < prev.poses.size(); ++spur) {
      BannedPoses banned_poses;
      BannedEdges banned_edges;
      // Paths sharing the root prefix may not reuse their next edge.
      for (const Route& r : out.routes) {
        if (r.poses.size() <= spur + 1) continue;
        if (!std::equal(r.poses.begin(), r.poses.begin() + spur + 1, prev.poses.begin()))
          continue;
        banned_edges.insert(edge_key(pose_index(*grid_, r.poses[spur]),
                                     pose_index(*grid_, r.poses[spur + 1]), n_poses));
      }
      for (size_t i = 0; i < spur; ++i)
        banned_poses.insert(pose_index(*grid_, prev.poses[i]));
      auto spur_path =
          shortest_with_bans(*grid_, prev.poses[spur], target, banned_poses, banned_edges);
      if (!spur_path) continue;
      Route candidate;
      candidate.poses.assign(prev.poses.begin(), prev.poses.begin() + spur);
      candidate.poses.insert(candidate.poses.end(), spur_path->poses.begin(),
                             spur_path->poses.end());
      if (std::find(out.routes.begin(), out.routes.end(), candidate) == out.routes.end())
        candidates.insert(std::move(candidate));
    }
    if (candidates.empty()) break;
    out.routes.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  return out;
}

std::optional<Route> shortest_route(const RailGrid& grid, Pose from, CellId target) {
  Router router(grid);
  return router.shortest_route(from, target);
}

TopKPaths top_k_routes(const RailGrid& grid, Pose from, CellId target, int k) {
  Router router(grid);
  return router.top_k_routes(from, target, k);
}

Router make_router(const Scenario& scenario) {
  Router router(scenario.grid);
  for (const auto& t : scenario.trains) router.ensure_target(t.target);
  return router;
}

std::optional<DecisionPointHit> next_decision_point(const RailGrid& grid,
                                                    const Route& route,
                                                    int current_index) {
  if (current_index < 0 || current_index >= static_cast<int>(route.poses.size()))
    fail("next_decision_point: index outside route");
  for (int j = current_index; j + 1 < static_cast<int>(route.poses.size()); ++j) {
    const Pose& p = route.poses[j];
    if (branch_count(grid, p.cell, p.heading) >= 2)
      return DecisionPointHit{j, j - current_index};
  }
  return std::nullopt;
}

ConflictProjection project_conflicts(const Route& route_a, int start_a,
                                     const Route& route_b, int start_b, int horizon) {
  (void)start_a;
  (void)start_b;
  if (route_a.empty() || route_b.empty()) fail("project_conflicts: empty route");
  std::unordered_set<CellId> cells_a, cells_b;
  for (const Pose& p : route_a.poses) cells_a.insert(p.cell);
  for (const Pose& p : route_b.poses) cells_b.insert(p.cell);
  ConflictProjection out;
  for (CellId c : cells_a) out.n_conflict_cells += cells_b.count(c) ? 1 : 0;
  if (out.n_conflict_cells == 0) {
    out.dist_self = horizon;
    out.dist_other = horizon;
    return out;
  }
  for (size_t i = 0; i < route_a.poses.size(); ++i) {
    if (cells_b.count(route_a.poses[i].cell)) {
      out.dist_self = static_cast<int>(i);
      break;
    }
  }
  for (size_t i = 0; i < route_b.poses.size(); ++i) {
    if (cells_a.count(route_b.poses[i].cell)) {
      out.dist_other = static_cast<int>(i);
      break;
    }
  }
  return out;
}

WaitForGraph build_wait_for_graph(const RailGrid& grid, const SimState& state) {
  WaitForGraph wfg;
  for (int i = 0; i < static_cast<int>(state.trains.size()); ++i) {
    if (state.trains[i].status != TrainStatus::Active) continue;
    wfg.nodes.push_back(i);
    const Pose& p = state.trains[i].pose;
    std::set<int> blockers;
    bool all_blocked = true;
    for (Heading h : allowed_exits(grid, p.cell, p.heading)) {
      auto nb = grid.neighbor(p.cell, h);
      int occ = nb ? state.occupancy[*nb] : -1;
      if (!nb || occ < 0) {
        all_blocked = false;
        break;
      }
      blockers.insert(occ);
    }
    if (all_blocked)
      for (int b : blockers) wfg.edges.push_back({i, b});
  }
  return wfg;
}

std::vector<int> detect_deadlocks(const RailGrid& grid, const SimState& state) {
  // Greatest fixed point of "every valid exit is occupied by a member":
  // equivalently the wait-for cycles plus their blocked closure. Any member
  // can only ever move into a cell held by another member, and simultaneous
  // rotations are rejected, so no member moves first.
  std::set<int> flagged;
  for (int i = 0; i < static_cast<int>(state.trains.size()); ++i)
    if (state.trains[i].status == TrainStatus::Active) flagged.insert(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto it = flagged.begin(); it != flagged.end();) {
      const Pose& p = state.trains[*it].pose;
      bool stuck = true;
      for (Heading h : allowed_exits(grid, p.cell, p.heading)) {
        auto nb = grid.neighbor(p.cell, h);
        if (!nb) continue;  // boundary exits cannot be taken
        int occ = state.occupancy[*nb];
        if (occ < 0 || !flagged.count(occ)) {
          stuck = false;
          break;
        }
      }
      if (!stuck) {
        it = flagged.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }
  return {flagged.begin(), flagged.end()};
}

}  // namespace railflow
