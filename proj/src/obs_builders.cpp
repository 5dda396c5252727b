#include "railflow/obs_builders.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "railflow/util.hpp"

namespace railflow {

namespace {

using L = FeatureLayout53;

double norm_steps(int steps, int t_max) {
  if (steps < 0) return 1.0;  // unreachable or absent: horizon sentinel
  return std::min(1.0, static_cast<double>(steps) / t_max);
}

double norm_count(int count, int total) {
  if (total <= 0) return 0.0;
  return std::min(1.0, static_cast<double>(count) / total);
}

// Branch view local to the subject: poses[0] is the current pose, the last
// pose the target. entry is the index of the decision point the branch leaves
// from (0 when the remaining route never branches).
struct BranchView {
  std::vector<Pose> poses;
  int entry = 0;
  bool exists = false;
};

struct BranchPair {
  BranchView planned;
  BranchView alternative;
  int dp1_steps = -1;  // steps to the next decision point, -1 if none
  int dp1_branches = 0;
  Pose planned_exit;   // pose after the decision point on the planned route
  Pose alternative_exit;
};

// Derives both branch views from a train's plan. The alternative leaves the
// next decision point by the best other exit and continues along the shortest
// continuation, ignoring trains.
BranchPair derive_branches(const ObsContext& ctx, int train) {
  BranchPair out;
  const TrainPlan& plan = ctx.plans[train];
  if (!plan.engaged()) return out;
  const auto& poses = plan.route.poses;
  const int idx = plan.index;
  out.planned.poses.assign(poses.begin() + idx, poses.end());
  out.planned.exists = out.planned.poses.size() >= 1;
  auto dp = next_decision_point(ctx.grid, plan.route, idx);
  if (!dp) return out;
  out.dp1_steps = dp->steps;
  const Pose& at_dp = poses[dp->index];
  out.dp1_branches = branch_count(ctx.grid, at_dp.cell, at_dp.heading);
  out.planned.entry = dp->steps;
  out.planned_exit = poses[dp->index + 1];

  CellId target = ctx.scenario.trains[train].target;
  std::optional<Pose> best_exit = alternative_exit(ctx, train);
  if (!best_exit) return out;
  auto continuation = ctx.router.shortest_route(*best_exit, target);
  if (!continuation) return out;
  out.alternative.poses.assign(poses.begin() + idx, poses.begin() + dp->index + 1);
  out.alternative.poses.insert(out.alternative.poses.end(), continuation->poses.begin(),
                               continuation->poses.end());
  out.alternative.entry = dp->steps;
  out.alternative.exists = true;
  out.alternative_exit = *best_exit;
  return out;
}

int occupant_at(const ObsContext& ctx, CellId cell, int self) {
  int occ = ctx.state.occupancy[cell];
  return occ == self ? -1 : occ;
}

bool opposing(const ObsContext& ctx, int occ, const Pose& route_pose) {
  return ctx.state.trains[occ].pose.heading == reverse(route_pose.heading);
}

// Fills one 12-wide branch block plus its 6-wide beyond block.
void fill_branch(const ObsContext& ctx, int self, const BranchView& branch, bool usable,
                 std::array<double, kRoutingFeatureDim>& row, int block, int beyond) {
  if (!branch.exists || branch.poses.size() < 2) return;
  const int t_max = ctx.t_max;
  const int n_total = static_cast<int>(ctx.scenario.trains.size());
  const int last = static_cast<int>(branch.poses.size()) - 1;
  CellId target = branch.poses.back().cell;

  Route as_route{branch.poses};
  auto dp2 = branch.entry + 1 <= last
                 ? next_decision_point(ctx.grid, as_route, branch.entry + 1)
                 : std::nullopt;
  int window_end = dp2 ? dp2->index : last;

  row[block + L::kBranchExists] = 1.0;
  row[block + L::kBranchStepsToTarget] = norm_steps(last, t_max);
  row[block + L::kBranchStepsToDp] = norm_steps(dp2 ? dp2->index : -1, t_max);
  row[block + L::kBranchUsable] = usable ? 1.0 : 0.0;

  int conflicts = 0, occupied = 0;
  int first_conflict = -1, deadlock_at = -1, malfunction_seen = 0;
  bool first_opposing = false, target_in_window = false;
  for (int j = branch.entry + 1; j <= window_end; ++j) {
    const Pose& p = branch.poses[j];
    if (p.cell == target) target_in_window = true;
    int occ = occupant_at(ctx, p.cell, self);
    if (occ < 0) continue;
    ++occupied;
    ++conflicts;
    if (first_conflict < 0) {
      first_conflict = j;
      first_opposing = opposing(ctx, occ, p);
    }
    if (deadlock_at < 0 && ctx.deadlocked[occ]) deadlock_at = j;
    if (ctx.state.trains[occ].malfunction_left > 0) malfunction_seen = 1;
  }
  int window_len = window_end - branch.entry;
  row[block + L::kBranchDeadlock] = deadlock_at >= 0 ? 1.0 : 0.0;
  row[block + L::kBranchDeadlockDistance] = norm_steps(deadlock_at, t_max);
  row[block + L::kBranchConflictCount] = norm_count(conflicts, n_total);
  row[block + L::kBranchFirstConflictDistance] = norm_steps(first_conflict, t_max);
  row[block + L::kBranchFirstConflictOpposing] = first_opposing ? 1.0 : 0.0;
  row[block + L::kBranchTargetOnBranch] = target_in_window ? 1.0 : 0.0;
  row[block + L::kBranchOccupancyRatio] =
      window_len > 0 ? static_cast<double>(occupied) / window_len : 0.0;
  row[block + L::kBranchMalfunction] = malfunction_seen;

  // Beyond the branch's first decision point: sub-branch summaries only.
  if (!dp2) {
    row[beyond + L::kBeyondTargetReachable] = target_in_window || branch.poses.back().cell == target ? 1.0 : 0.0;
    row[beyond + L::kBeyondMinTravelCost] = norm_steps(last, t_max);
    row[beyond + L::kBeyondMaxTravelCost] = norm_steps(last, t_max);
    return;
  }
  const Pose& at_dp2 = branch.poses[dp2->index];
  int sub_count = 0, min_cost = -1, max_cost = -1, min_dead = -1;
  bool reachable = false, any_dead = false;
  for (Heading h : allowed_exits(ctx.grid, at_dp2.cell, at_dp2.heading)) {
    auto nb = ctx.grid.neighbor(at_dp2.cell, h);
    if (!nb) continue;
    ++sub_count;
    Pose exit{*nb, h};
    int d = ctx.router.has_target(target) ? ctx.router.distance(exit, target) : -1;
    if (d >= 0) {
      reachable = true;
      int total = dp2->index + 1 + d;
      if (min_cost < 0 || total < min_cost) min_cost = total;
      if (total > max_cost) max_cost = total;
    }
    // Collapse the sub-branch segment: walk the shortest continuation up to
    // its own next decision point, recording deadlocked occupants.
    auto cont = d >= 0 ? ctx.router.shortest_route(exit, target) : std::nullopt;
    if (cont) {
      auto dp3 = next_decision_point(ctx.grid, *cont, 0);
      int stop = dp3 ? dp3->index : static_cast<int>(cont->poses.size()) - 1;
      for (int j = 0; j <= stop; ++j) {
        int occ = occupant_at(ctx, cont->poses[j].cell, self);
        if (occ >= 0 && ctx.deadlocked[occ]) {
          any_dead = true;
          int dist = dp2->index + 1 + j;
          if (min_dead < 0 || dist < min_dead) min_dead = dist;
        }
      }
    }
  }
  row[beyond + L::kBeyondAnyDeadlock] = any_dead ? 1.0 : 0.0;
  row[beyond + L::kBeyondMinDeadlockDistance] = norm_steps(min_dead, t_max);
  row[beyond + L::kBeyondMinTravelCost] = norm_steps(min_cost, t_max);
  row[beyond + L::kBeyondMaxTravelCost] = norm_steps(max_cost, t_max);
  row[beyond + L::kBeyondSubBranchCount] = norm_count(sub_count, 3);
  row[beyond + L::kBeyondTargetReachable] = reachable ? 1.0 : 0.0;
}

std::array<double, kRoutingFeatureDim> render_row(const ObsContext& ctx, int train,
                                                  int depth_indicator) {
  std::array<double, kRoutingFeatureDim> row{};
  const TrainState& ts = ctx.state.trains[train];
  const TimetableEntry& tt = ctx.scenario.trains[train];
  const int t_max = ctx.t_max;
  const int n_total = static_cast<int>(ctx.scenario.trains.size());

  row[L::kValid] = 1.0;
  row[L::kIsSelf] = depth_indicator == 0 ? 1.0 : 0.0;
  row[L::kOnMap] = ts.status == TrainStatus::Active ? 1.0 : 0.0;
  row[L::kMalfunctioning] = ts.malfunction_left > 0 ? 1.0 : 0.0;
  row[L::kMalfunctionLeft] = std::min(1.0, ts.malfunction_left / 50.0);
  int dist = ctx.router.has_target(tt.target) && ts.status == TrainStatus::Active
                 ? ctx.router.distance(ts.pose, tt.target)
                 : -1;
  row[L::kDistanceToTarget] = norm_steps(dist, t_max);
  row[L::kRemainingTime] = norm_steps(t_max - ctx.state.clock, t_max);
  if (ts.status == TrainStatus::Active)
    row[L::kAtDecisionPoint] =
        branch_count(ctx.grid, ts.pose.cell, ts.pose.heading) >= 2 ? 1.0 : 0.0;

  BranchPair branches = derive_branches(ctx, train);
  row[L::kStepsToNextDp] = norm_steps(branches.dp1_steps, t_max);
  row[L::kNextDpBranchCount] = norm_count(branches.dp1_branches, 3);

  // Collapsed current segment: planned poses strictly ahead, up to the next
  // decision point (or the target when the route never branches again).
  if (branches.planned.exists) {
    const auto& poses = branches.planned.poses;
    int seg_end = branches.dp1_steps >= 0 ? branches.dp1_steps
                                          : static_cast<int>(poses.size()) - 1;
    int ahead = 0, opp_at = -1, same_at = -1;
    for (int j = 1; j <= seg_end; ++j) {
      int occ = occupant_at(ctx, poses[j].cell, train);
      if (occ < 0) continue;
      ++ahead;
      if (opposing(ctx, occ, poses[j])) {
        if (opp_at < 0) opp_at = j;
      } else if (ctx.state.trains[occ].pose.heading == poses[j].heading) {
        if (same_at < 0) same_at = j;
      }
    }
    row[L::kTrainsAheadOnSegment] = norm_count(ahead, n_total);
    row[L::kOpposingOnSegment] = opp_at >= 0 ? 1.0 : 0.0;
    row[L::kNearestOpposingDistance] = norm_steps(opp_at, t_max);
    row[L::kNearestSameDirDistance] = norm_steps(same_at, t_max);
  }

  fill_branch(ctx, train, branches.planned, true, row, L::kShortestBranch,
              L::kBeyondShortest);
  fill_branch(ctx, train, branches.alternative, branches.alternative.exists, row,
              L::kAlternativeBranch, L::kBeyondAlternative);

  row[L::kBias] = 1.0;
  row[L::kDepthIndicator] = depth_indicator;
  row[L::kReserved] = 0.0;
  return row;
}

// First train standing on the branch, scanning outward from the subject.
int first_agent_on(const ObsContext& ctx, int self, const BranchView& branch) {
  if (!branch.exists) return -1;
  for (size_t j = 1; j < branch.poses.size(); ++j) {
    int occ = occupant_at(ctx, branch.poses[j].cell, self);
    if (occ >= 0) return occ;
  }
  return -1;
}

}  // namespace

std::optional<Pose> alternative_exit(const ObsContext& ctx, int train) {
  const TrainPlan& plan = ctx.plans[train];
  if (!plan.engaged()) return std::nullopt;
  auto dp = next_decision_point(ctx.grid, plan.route, plan.index);
  if (!dp) return std::nullopt;
  const Pose& at_dp = plan.route.poses[dp->index];
  const Pose& planned_exit = plan.route.poses[dp->index + 1];
  CellId target = ctx.scenario.trains[train].target;
  std::optional<Pose> best;
  int best_cost = -1;
  for (Heading h : allowed_exits(ctx.grid, at_dp.cell, at_dp.heading)) {
    auto nb = ctx.grid.neighbor(at_dp.cell, h);
    if (!nb) continue;
    Pose exit{*nb, h};
    if (exit == planned_exit) continue;
    int d = ctx.router.has_target(target) ? ctx.router.distance(exit, target) : -1;
    if (d < 0) continue;
    if (!best || d < best_cost) {
      best = exit;
      best_cost = d;
    }
  }
  return best;
}

RoutingObservation build_routing_obs(const ObsContext& ctx, int train,
                                     const std::array<bool, 3>& action_mask) {
  if (ctx.state.trains[train].status != TrainStatus::Active)
    fail("build_routing_obs: train is not active");
  RoutingObservation obs;
  obs.action_mask = action_mask;
  obs.rows[0] = render_row(ctx, train, 0);
  BranchPair branches = derive_branches(ctx, train);
  int on_planned = first_agent_on(ctx, train, branches.planned);
  int on_alternative = first_agent_on(ctx, train, branches.alternative);
  if (on_planned >= 0) obs.rows[1] = render_row(ctx, on_planned, 1);
  if (on_alternative >= 0) obs.rows[2] = render_row(ctx, on_alternative, 1);
  return obs;
}

DispatchObservation build_dispatch_obs(const ObsContext& ctx, int train,
                                       const TopKPaths& candidates) {
  const TrainState& ts = ctx.state.trains[train];
  if (ts.status == TrainStatus::Active)
    fail("build_dispatch_obs: train is already on the map");
  DispatchObservation obs;
  const int n = static_cast<int>(ctx.scenario.trains.size());
  const int rail_cells = std::max(1, ctx.grid.rail_cell_count());
  int active = 0;
  for (const auto& t : ctx.state.trains) active += t.status == TrainStatus::Active;

  obs.n = n;
  obs.k = std::max(1, candidates.k);
  obs.global[0] = std::min(1.0, static_cast<double>(n) / rail_cells);
  obs.global[1] = std::min(1.0, static_cast<double>(active) / rail_cells);
  obs.global[2] = std::min(1.0, ctx.t_max / (8.0 * (ctx.grid.width + ctx.grid.height + n)));
  obs.global[3] = norm_steps(ctx.t_max - ctx.state.clock, ctx.t_max);
  obs.global[4] = norm_count(active, n);

  obs.conflicts.assign(static_cast<size_t>(n) * obs.k * 3, 0.0);
  obs.active_mask.assign(n, 0);

  std::vector<size_t> cand_cells(candidates.routes.size());
  std::vector<std::unordered_set<CellId>> cand_sets(candidates.routes.size());
  for (size_t c = 0; c < candidates.routes.size(); ++c) {
    for (const Pose& p : candidates.routes[c].poses) cand_sets[c].insert(p.cell);
    cand_cells[c] = cand_sets[c].size();
  }

  for (int j = 0; j < n; ++j) {
    if (j == train || ctx.state.trains[j].status != TrainStatus::Active) continue;
    obs.active_mask[j] = 1;
    std::optional<Route> best;
    if (ctx.active_route_cache && j < static_cast<int>(ctx.active_route_cache->size()))
      best = (*ctx.active_route_cache)[j];
    else
      best = ctx.router.shortest_route(ctx.state.trains[j].pose,
                                       ctx.scenario.trains[j].target);
    if (!best) continue;
    for (size_t c = 0; c < candidates.routes.size() && c < static_cast<size_t>(obs.k); ++c) {
      ConflictProjection proj =
          project_conflicts(candidates.routes[c], ctx.state.clock, *best,
                            ctx.state.clock, ctx.t_max);
      size_t base = (static_cast<size_t>(j) * obs.k + c) * 3;
      obs.conflicts[base + 0] =
          cand_cells[c] > 0
              ? std::min(1.0, static_cast<double>(proj.n_conflict_cells) / cand_cells[c])
              : 0.0;
      obs.conflicts[base + 1] = norm_steps(proj.dist_self, ctx.t_max);
      obs.conflicts[base + 2] = norm_steps(proj.dist_other, ctx.t_max);
    }
  }
  return obs;
}

DispatchObservation build_dispatch_obs(const ObsContext& ctx, int train, int k) {
  const TimetableEntry& tt = ctx.scenario.trains[train];
  TopKPaths candidates = ctx.router.top_k_routes(tt.origin, tt.target, k);
  return build_dispatch_obs(ctx, train, candidates);
}

std::vector<double> flatten(const RoutingObservation& obs) {
  std::vector<double> out;
  out.reserve(3 * kRoutingFeatureDim + 3);
  for (const auto& row : obs.rows) out.insert(out.end(), row.begin(), row.end());
  for (bool m : obs.action_mask) out.push_back(m ? 1.0 : 0.0);
  return out;
}

std::vector<double> flatten(const DispatchObservation& obs) {
  std::vector<double> out;
  out.reserve(5 + obs.active_mask.size() + obs.conflicts.size());
  out.insert(out.end(), obs.global.begin(), obs.global.end());
  for (uint8_t m : obs.active_mask) out.push_back(m);
  out.insert(out.end(), obs.conflicts.begin(), obs.conflicts.end());
  return out;
}

}  // namespace railflow
