#pragma once

#include <cstdint>
#include <vector>

#include "railflow/rail_net.hpp"
#include "railflow/rng.hpp"

namespace railflow {

// The raw per-train action space of the environment.
enum class RawAction : uint8_t { Noop = 0, Stop = 1, Forward = 2, Left = 3, Right = 4 };
inline constexpr int kRawActionCount = 5;
const char* to_string(RawAction a);

enum class TrainStatus : uint8_t {
  WaitingOffMap = 0,  // before earliest departure
  ReadyOffMap,        // may dispatch
  Active,             // on the rails
  Arrived,
  CancelledAtEnd,     // never dispatched by episode end
};
const char* to_string(TrainStatus s);

// Speeds are exact rationals; a train advances one cell each time its
// progress accumulator reaches a full unit.
struct Speed {
  int num = 1;
  int den = 1;
  double value() const { return static_cast<double>(num) / den; }
  friend bool operator==(const Speed&, const Speed&) = default;
};

struct TimetableEntry {
  int id = 0;
  Pose origin;
  CellId target = -1;
  int earliest_departure = 0;
  int scheduled_arrival = 0;
  Speed speed;
  friend bool operator==(const TimetableEntry&, const TimetableEntry&) = default;
};

// Scripted fault for reproducible experiments; applied on top of the random
// malfunction process.
struct MalfunctionOverride {
  int train = 0;
  int tick = 0;
  int duration = 0;
  friend bool operator==(const MalfunctionOverride&, const MalfunctionOverride&) = default;
};

struct EpisodeConfig {
  int t_max_override = -1;           // <= 0: use the horizon formula
  double beta = 8.0;                 // horizon formula coefficient
  double malfunction_rate = 0.0;     // per train per tick
  int malfunction_min = 20;
  int malfunction_max = 50;
  // Simultaneous rotations of occupied cells are always rejected; the flag is
  // recorded in trace headers so results are self-describing.
  bool reject_all_motion_cycles = true;
  std::vector<MalfunctionOverride> scripted_malfunctions;
  friend bool operator==(const EpisodeConfig&, const EpisodeConfig&) = default;
};

struct Scenario {
  RailGrid grid;
  std::vector<TimetableEntry> trains;
  EpisodeConfig config;
  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Throws on an inconsistent scenario (bad origins/targets, invalid speeds,
// ids out of order, departure not before scheduled arrival).
void validate_scenario(const Scenario& scenario);

// T_max = ceil(beta * (width + height + n_trains / n_cities)) unless the
// scenario carries an explicit override. Throws if beta <= 0.
int horizon(const Scenario& scenario);

struct TrainState {
  TrainStatus status = TrainStatus::WaitingOffMap;
  Pose pose;                 // meaningful only while Active
  int progress_num = 0;      // speed accumulator numerator
  int malfunction_left = 0;  // ticks still frozen
  int departed_at = -1;
  int arrived_at = -1;
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

// Copyable value; a snapshot is an ordinary copy and restoring is assignment,
// so rollout cost never depends on episode history.
struct SimState {
  int clock = 0;
  std::vector<TrainState> trains;
  std::vector<int32_t> occupancy;  // cell -> train id, -1 when free
  Rng rng;
  friend bool operator==(const SimState&, const SimState&) = default;
};

enum class EventKind : uint8_t {
  BecameReady = 0,
  MalfunctionBegan,  // a = duration
  MalfunctionEnded,
  Dispatched,        // a = origin cell
  Moved,             // a = from cell, b = to cell
  MoveRejected,      // a = reject reason
  Arrived,           // a = target cell
  Cancelled,
  DeadlockFlagged,   // emitted by episode drivers, not by the simulator
};

enum class RejectReason : uint8_t {
  NoTransition = 0,  // requested move not permitted by the rails
  Contention,        // lost a same-cell claim to a lower id
  TargetBlocked,     // target occupied by a train that does not move
  CycleDependency,   // part of a rotation or swap
};

struct Event {
  EventKind kind;
  int32_t train = -1;
  int32_t a = -1;
  int32_t b = -1;
  friend bool operator==(const Event&, const Event&) = default;
};

using StepEvents = std::vector<Event>;
using JointAction = std::vector<RawAction>;  // indexed by train id

struct MotionResolution {
  std::vector<int> accepted;                          // train ids, ascending
  std::vector<std::pair<int, RejectReason>> rejected;  // ascending by id
};

// Resolves simultaneous move intents against cell-exclusive occupancy.
// A move is accepted iff its target is free after resolution or vacated by
// another accepted move; rotations and swaps are rejected wholly; several
// claims on one cell go to the lowest id.
MotionResolution resolve_motion(const std::vector<int32_t>& occupancy,
                                const std::vector<std::pair<int, CellId>>& intents);

class Simulator {
 public:
  explicit Simulator(const Scenario& scenario);

  const Scenario& scenario() const { return *scenario_; }
  int t_max() const { return t_max_; }

  SimState reset(uint64_t seed) const;

  // One tick: malfunction bookkeeping, dispatch attempts, motion resolution,
  // arrival removal, clock advance. Throws if the episode already finished.
  StepEvents step(SimState& state, const JointAction& actions) const;

  bool finished(const SimState& state) const;
  int active_count(const SimState& state) const;

  static SimState snapshot(const SimState& s) { return s; }
  static SimState restore(const SimState& token) { return token; }

 private:
  const Scenario* scenario_;
  int t_max_;
};

}  // namespace railflow
