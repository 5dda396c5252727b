#pragma once

// Hand-built maps and scenarios shared across the test suites.

#include <vector>

#include "railflow/eval_harness.hpp"
#include "railflow/path_engine.hpp"
#include "railflow/sim_core.hpp"

namespace railflow::test {

inline void link(std::vector<uint8_t>& links, int width, int x, int y, Heading h) {
  links[y * width + x] |= static_cast<uint8_t>(1u << static_cast<int>(h));
  links[(y + dy(h)) * width + (x + dx(h))] |=
      static_cast<uint8_t>(1u << static_cast<int>(reverse(h)));
}

// 1 x n straight corridor with dead ends; stations at cells 1 and n-2.
inline RailGrid corridor_grid(int n) {
  std::vector<uint8_t> links(n, 0);
  for (int x = 0; x + 1 < n; ++x) link(links, n, x, 0, Heading::East);
  return grid_from_links(n, 1, links, {{1, 0}, {n - 2, 1}});
}

// Main line y=0 (x 0..6) with a passing loop dipping to y=1 between x=2 and
// x=4. Junctions at (2,0) and (4,0). Stations at the line ends.
inline RailGrid siding_grid() {
  const int w = 7, h = 2;
  std::vector<uint8_t> links(w * h, 0);
  for (int x = 0; x + 1 < w; ++x) link(links, w, x, 0, Heading::East);
  link(links, w, 2, 0, Heading::South);
  link(links, w, 2, 1, Heading::East);
  link(links, w, 3, 1, Heading::East);
  link(links, w, 4, 1, Heading::North);
  return grid_from_links(w, h, links, {{1, 0}, {w - 2, 1}});
}

// Horizontal line y=5 (x 0..8) crossing a vertical line x=3 (y 0..8).
inline RailGrid crossing_grid() {
  const int w = 9, h = 9;
  std::vector<uint8_t> links(w * h, 0);
  for (int x = 0; x + 1 < w; ++x) link(links, w, x, 5, Heading::East);
  for (int y = 0; y + 1 < h; ++y) link(links, w, 3, y, Heading::South);
  return grid_from_links(w, h, links, {{5 * w + 1, 0}, {5 * w + 7, 1}});
}

// Two parallel tracks from (1,0) to (11,0): cost 10 along the top row, cost
// 12 dipping to the bottom row. Stubs at both ends make the end poses valid.
inline RailGrid ladder_grid() {
  const int w = 13, h = 2;
  std::vector<uint8_t> links(w * h, 0);
  for (int x = 0; x + 1 < w; ++x) link(links, w, x, 0, Heading::East);
  for (int x = 1; x + 2 < w; ++x) link(links, w, x, 1, Heading::East);
  link(links, w, 1, 0, Heading::South);
  link(links, w, 11, 0, Heading::South);
  return grid_from_links(w, h, links, {{1, 0}, {11, 1}});
}

inline TimetableEntry train(int id, CellId origin, Heading h, CellId target, int dep,
                            int sched, Speed speed = {1, 1}) {
  TimetableEntry t;
  t.id = id;
  t.origin = {origin, h};
  t.target = target;
  t.earliest_departure = dep;
  t.scheduled_arrival = sched;
  t.speed = speed;
  return t;
}

// Opposing pair on a corridor of length n: train 0 west-to-east, train 1
// east-to-west.
inline Scenario head_on_scenario(int n = 12, int dep0 = 0, int dep1 = 0) {
  Scenario s;
  s.grid = corridor_grid(n);
  int sched = 4 * n;
  s.trains.push_back(train(0, 1, Heading::East, n - 2, dep0, sched));
  s.trains.push_back(train(1, n - 2, Heading::West, 1, dep1, sched));
  s.config.t_max_override = 8 * n;
  return s;
}

// Single train crossing a corridor; scheduled with zero slack so every waited
// tick turns into measurable delay.
inline Scenario lone_train_scenario(int n = 12) {
  Scenario s;
  s.grid = corridor_grid(n);
  s.trains.push_back(train(0, 1, Heading::East, n - 2, 0, n - 3));
  s.config.t_max_override = 8 * n;
  return s;
}

// Places active trains by hand; poses must be pairwise distinct rail cells.
inline SimState place_trains(const Scenario& scenario,
                             const std::vector<Pose>& poses) {
  Simulator sim(scenario);
  SimState state = sim.reset(0);
  for (size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].cell < 0) continue;  // leave this train off-map
    state.trains[i].status = TrainStatus::Active;
    state.trains[i].pose = poses[i];
    state.trains[i].departed_at = 0;
    state.occupancy[poses[i].cell] = static_cast<int>(i);
  }
  return state;
}

}  // namespace railflow::test
