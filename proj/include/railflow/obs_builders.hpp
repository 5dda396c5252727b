#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "railflow/path_engine.hpp"
#include "railflow/sim_core.hpp"

namespace railflow {

inline constexpr int kRoutingFeatureDim = 53;
inline constexpr const char* kObsLayoutVersion = "obs53-v1";

// Index map over the 53 routing features. Collapsed-segment features cover
// the cells up to the next decision point; each branch block covers the
// branch up to its own first downstream decision point; the beyond blocks
// summarise everything past that (depth cap 2). Distances normalise by the
// episode horizon, counts by the fleet size, branch degrees by 3.
struct FeatureLayout53 {
  // status block (8)
  static constexpr int kValid = 0;
  static constexpr int kIsSelf = 1;
  static constexpr int kOnMap = 2;
  static constexpr int kMalfunctioning = 3;
  static constexpr int kMalfunctionLeft = 4;
  static constexpr int kDistanceToTarget = 5;
  static constexpr int kRemainingTime = 6;
  static constexpr int kAtDecisionPoint = 7;
  // current-segment block (6)
  static constexpr int kStepsToNextDp = 8;
  static constexpr int kTrainsAheadOnSegment = 9;
  static constexpr int kOpposingOnSegment = 10;
  static constexpr int kNearestOpposingDistance = 11;
  static constexpr int kNearestSameDirDistance = 12;
  static constexpr int kNextDpBranchCount = 13;
  // branch blocks (12 each)
  static constexpr int kShortestBranch = 14;
  static constexpr int kAlternativeBranch = 26;
  // per-branch offsets within a branch block
  static constexpr int kBranchExists = 0;
  static constexpr int kBranchStepsToTarget = 1;
  static constexpr int kBranchStepsToDp = 2;
  static constexpr int kBranchDeadlock = 3;
  static constexpr int kBranchDeadlockDistance = 4;
  static constexpr int kBranchConflictCount = 5;
  static constexpr int kBranchFirstConflictDistance = 6;
  static constexpr int kBranchFirstConflictOpposing = 7;
  static constexpr int kBranchTargetOnBranch = 8;
  static constexpr int kBranchUsable = 9;
  static constexpr int kBranchOccupancyRatio = 10;
  static constexpr int kBranchMalfunction = 11;
  // beyond-first-dp blocks (6 each)
  static constexpr int kBeyondShortest = 38;
  static constexpr int kBeyondAlternative = 44;
  static constexpr int kBeyondAnyDeadlock = 0;
  static constexpr int kBeyondMinDeadlockDistance = 1;
  static constexpr int kBeyondMinTravelCost = 2;
  static constexpr int kBeyondMaxTravelCost = 3;
  static constexpr int kBeyondSubBranchCount = 4;
  static constexpr int kBeyondTargetReachable = 5;
  // padding (3)
  static constexpr int kBias = 50;
  static constexpr int kDepthIndicator = 51;
  static constexpr int kReserved = 52;
};

// Rows: 0 = the subject train, 1 = first train encountered along the planned
// branch, 2 = the same along the alternative branch. Absent rows are all
// zeros (valid flag 0).
struct RoutingObservation {
  std::array<std::array<double, kRoutingFeatureDim>, 3> rows{};
  std::array<bool, 3> action_mask{};  // Planned, Deviate, Stop
};

// Global scalars plus one 3-scalar conflict projection per
// (active-train slot, candidate path); inactive slots are zero and masked.
struct DispatchObservation {
  std::array<double, 5> global{};
  int n = 0;  // fleet size (fixed slot count)
  int k = 0;
  std::vector<double> conflicts;     // n * k * 3, ordered by train then candidate
  std::vector<uint8_t> active_mask;  // n entries
};

// Planned-route tracking; poses[index] is the train's current pose.
struct TrainPlan {
  Route route;
  int index = 0;
  bool engaged() const { return !route.poses.empty(); }
  int remaining_steps() const { return route.cost() - index; }
};

// Read-only bundle the builders work from. `plans` and `deadlocked` come from
// the decision layer (one entry per train); `active_route_cache`, when given,
// holds each active train's current shortest route for the dispatch builder.
struct ObsContext {
  const RailGrid& grid;
  const Router& router;
  const Scenario& scenario;
  const SimState& state;
  const std::vector<TrainPlan>& plans;
  const std::vector<uint8_t>& deadlocked;
  int t_max;
  const std::vector<std::optional<Route>>* active_route_cache = nullptr;
};

// The exit a Deviate would take at the planned route's next decision point:
// the best non-planned exit by continuation cost (heading-order tie-break),
// or nothing when the route never branches again or no other exit reaches
// the target. Shared between the mask logic and the observation builder so
// the advertised alternative matches the action taken.
std::optional<Pose> alternative_exit(const ObsContext& ctx, int train);

// Builds the dispatch observation for an off-map train; `candidates` are its
// top-k routes from the origin. Throws when called for an active train.
DispatchObservation build_dispatch_obs(const ObsContext& ctx, int train,
                                       const TopKPaths& candidates);
DispatchObservation build_dispatch_obs(const ObsContext& ctx, int train, int k);

// Builds the routing observation for an active train. The action mask is
// computed by the decision layer and embedded here. Throws for off-map trains.
RoutingObservation build_routing_obs(const ObsContext& ctx, int train,
                                     const std::array<bool, 3>& action_mask);

std::vector<double> flatten(const RoutingObservation& obs);
std::vector<double> flatten(const DispatchObservation& obs);

}  // namespace railflow
