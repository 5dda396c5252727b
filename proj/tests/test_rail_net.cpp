#include "doctest.h"

#include <set>

#include "fixtures.hpp"
#include "railflow/rail_net.hpp"

using namespace railflow;
using namespace railflow::test;

TEST_CASE("heading algebra") {
  for (int d = 0; d < kHeadingCount; ++d) {
    auto h = static_cast<Heading>(d);
    CHECK(reverse(reverse(h)) == h);
    CHECK(rotate_left(rotate_right(h)) == h);
    CHECK(rotate_right(rotate_right(h)) == reverse(h));
    CHECK(dx(h) + dx(reverse(h)) == 0);
    CHECK(dy(h) + dy(reverse(h)) == 0);
  }
}

TEST_CASE("cell transitions index independent bits") {
  CellTransitions t;
  t.set(Heading::East, Heading::East);
  t.set(Heading::East, Heading::South);
  CHECK(t.allows(Heading::East, Heading::East));
  CHECK(t.allows(Heading::East, Heading::South));
  CHECK(!t.allows(Heading::East, Heading::North));
  CHECK(!t.allows(Heading::West, Heading::West));
  CHECK(t.exit_count(Heading::East) == 2);
  CHECK(t.exit_count(Heading::West) == 0);
  t.set(Heading::East, Heading::South, false);
  CHECK(t.exit_count(Heading::East) == 1);
}

TEST_CASE("allowed_exits on a straight cell and an empty cell") {
  RailGrid grid = corridor_grid(6);
  auto exits = allowed_exits(grid, 3, Heading::East);
  REQUIRE(exits.size() == 1);
  CHECK(exits[0] == Heading::East);

  RailGrid empty;
  empty.width = 2;
  empty.height = 2;
  empty.cells.assign(4, {});
  for (int d = 0; d < kHeadingCount; ++d)
    CHECK(allowed_exits(empty, 0, static_cast<Heading>(d)).empty());

  CHECK_THROWS(allowed_exits(grid, 99, Heading::East));
}

TEST_CASE("dead end offers the turnaround as its sole exit") {
  RailGrid grid = corridor_grid(6);
  auto exits = allowed_exits(grid, 5, Heading::East);  // arrived at the east end
  REQUIRE(exits.size() == 1);
  CHECK(exits[0] == Heading::West);
}

TEST_CASE("branch_count distinguishes straights, switches, and 3-way junctions") {
  RailGrid grid = siding_grid();
  CHECK(branch_count(grid, grid.cell_at(1, 0), Heading::East) == 1);
  CHECK(branch_count(grid, grid.cell_at(2, 0), Heading::East) == 2);  // line or loop

  // Fully linked cell approached head-on: three ways out.
  std::vector<uint8_t> links(9, 0);
  link(links, 3, 1, 1, Heading::North);
  link(links, 3, 1, 1, Heading::East);
  link(links, 3, 1, 1, Heading::South);
  link(links, 3, 1, 1, Heading::West);
  RailGrid plus = grid_from_links(3, 3, links, {});
  CHECK(branch_count(plus, plus.cell_at(1, 1), Heading::East) == 3);
}

TEST_CASE("validate_grid passes generated maps and flags injected faults") {
  RailGrid grid = generate_map({30, 30, 2, 2, 7});
  CHECK(validate_grid(grid).empty());

  // One-way mismatch: cell 4 keeps its westbound pass-through but no longer
  // accepts eastbound entries, so cell 3's east exit dangles.
  RailGrid broken = corridor_grid(6);
  broken.cells[4].set(Heading::East, Heading::East, false);
  broken.stations.clear();  // isolate the transition fault
  auto violations = validate_grid(broken);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].kind == GridViolation::Kind::ExitIntoBlockedCell);
  CHECK(violations[0].cell == 3);
  CHECK(violations[0].other == 4);

  RailGrid bare;
  bare.width = 4;
  bare.height = 1;
  bare.cells.assign(4, {});
  bare.stations = {{0, 0}, {3, 1}};
  auto station_faults = validate_grid(bare);
  REQUIRE(station_faults.size() == 2);
  for (const auto& v : station_faults)
    CHECK(v.kind == GridViolation::Kind::StationOffRail);
}

TEST_CASE("generate_map is deterministic and honours city counts") {
  GeneratorParams small{30, 30, 2, 2, 7};
  RailGrid a = generate_map(small);
  RailGrid b = generate_map(small);
  CHECK(a == b);
  CHECK(a.city_count() == 2);
  CHECK(a.stations.size() == 4);  // two parallel rails expose two stations per city

  RailGrid big = generate_map({35, 30, 5, 2, 1});
  CHECK(big.city_count() == 5);
  CHECK(validate_grid(big).empty());

  RailGrid single = generate_map({30, 30, 3, 1, 5});
  CHECK(single.city_count() == 3);
  CHECK(single.stations.size() == 3);
  CHECK(validate_grid(single).empty());
}

TEST_CASE("transition reciprocity holds across sizes and seeds") {
  const std::pair<int, int> sizes[] = {{30, 30}, {30, 30}, {30, 30}, {30, 35}, {35, 30}};
  const int cities[] = {2, 2, 3, 3, 5};
  for (int variant = 0; variant < 5; ++variant) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      GeneratorParams p{sizes[variant].first, sizes[variant].second, cities[variant], 2,
                        seed};
      RailGrid grid = generate_map(p);
      auto violations = validate_grid(grid);
      if (!violations.empty())
        FAIL("violation at variant ", variant, " seed ", seed, ": ",
             violations.front().message());
    }
  }
}

namespace {

// Cells reachable from any valid start pose of `from`, by direct expansion.
std::set<CellId> reachable_cells(const RailGrid& grid, CellId from) {
  std::set<std::pair<CellId, int>> seen;
  std::vector<std::pair<CellId, int>> stack;
  for (int d = 0; d < kHeadingCount; ++d)
    if (grid.transitions(from).exit_count(static_cast<Heading>(d)) > 0)
      stack.push_back({from, d});
  std::set<CellId> cells;
  while (!stack.empty()) {
    auto [c, d] = stack.back();
    stack.pop_back();
    if (!seen.insert({c, d}).second) continue;
    cells.insert(c);
    for (Heading out : allowed_exits(grid, c, static_cast<Heading>(d))) {
      auto nb = grid.neighbor(c, out);
      if (nb) stack.push_back({*nb, static_cast<int>(out)});
    }
  }
  return cells;
}

}  // namespace

TEST_CASE("every station pair is connected by a directed path") {
  for (uint64_t seed : {0ull, 3ull, 11ull, 42ull}) {
    RailGrid grid = generate_map({30, 30, 3, 2, seed});
    for (const auto& from : grid.stations) {
      auto cells = reachable_cells(grid, from.cell);
      for (const auto& to : grid.stations)
        CHECK_MESSAGE(cells.count(to.cell) == 1, "seed ", seed, ": station ", from.cell,
                      " cannot reach ", to.cell);
    }
  }
}

TEST_CASE("grid json round-trips and hashes stably") {
  RailGrid grid = generate_map({30, 30, 2, 2, 7});
  RailGrid back = grid_from_json(grid_to_json(grid));
  CHECK(grid == back);
  CHECK(grid_hash(grid) == grid_hash(back));
  CHECK(grid_hash(grid) != grid_hash(generate_map({30, 30, 2, 2, 8})));
}

TEST_CASE("generator rejects impossible placements with the seed attached") {
  GeneratorParams cramped{9, 5, 4, 2, 123};
  try {
    generate_map(cramped);
    FAIL("expected a placement failure");
  } catch (const MapGenerationError& e) {
    CHECK(e.seed == 123);
  }
}
