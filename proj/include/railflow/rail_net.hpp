#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace railflow {

// A heading is the direction of travel that carried a train into its cell.
enum class Heading : uint8_t { North = 0, East = 1, South = 2, West = 3 };

inline constexpr int kHeadingCount = 4;

constexpr Heading reverse(Heading h) {
  return static_cast<Heading>((static_cast<int>(h) + 2) % 4);
}
constexpr Heading rotate_left(Heading h) {
  return static_cast<Heading>((static_cast<int>(h) + 3) % 4);
}
constexpr Heading rotate_right(Heading h) {
  return static_cast<Heading>((static_cast<int>(h) + 1) % 4);
}
constexpr int dx(Heading h) {
  constexpr int d[4] = {0, 1, 0, -1};
  return d[static_cast<int>(h)];
}
constexpr int dy(Heading h) {
  constexpr int d[4] = {-1, 0, 1, 0};
  return d[static_cast<int>(h)];
}
const char* to_string(Heading h);

// Row-major cell index: y * width + x.
using CellId = int32_t;

struct Pose {
  CellId cell = -1;
  Heading heading = Heading::North;
  friend bool operator==(const Pose&, const Pose&) = default;
  friend auto operator<=>(const Pose&, const Pose&) = default;
};

// 16 directed traversal flags, one per (incoming, outgoing) heading pair.
// A cell with no flag set carries no rail.
struct CellTransitions {
  uint16_t bits = 0;

  static constexpr int index(Heading in, Heading out) {
    return static_cast<int>(in) * 4 + static_cast<int>(out);
  }
  bool allows(Heading in, Heading out) const {
    return (bits >> index(in, out)) & 1;
  }
  void set(Heading in, Heading out, bool on = true) {
    uint16_t mask = static_cast<uint16_t>(1u << index(in, out));
    bits = on ? (bits | mask) : (bits & static_cast<uint16_t>(~mask));
  }
  int exit_count(Heading in) const {
    int nibble = (bits >> (static_cast<int>(in) * 4)) & 0xf;
    return ((nibble >> 0) & 1) + ((nibble >> 1) & 1) + ((nibble >> 2) & 1) +
           ((nibble >> 3) & 1);
  }
  bool is_rail() const { return bits != 0; }
  friend bool operator==(const CellTransitions&, const CellTransitions&) = default;
};

struct Station {
  CellId cell = -1;
  int city = -1;
  friend bool operator==(const Station&, const Station&) = default;
};

struct RailGrid {
  int width = 0;
  int height = 0;
  std::vector<CellTransitions> cells;  // row-major, width * height entries
  std::vector<Station> stations;

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  bool in_bounds(CellId c) const {
    return c >= 0 && c < static_cast<CellId>(cells.size());
  }
  CellId cell_at(int x, int y) const { return static_cast<CellId>(y) * width + x; }
  int x_of(CellId c) const { return static_cast<int>(c % width); }
  int y_of(CellId c) const { return static_cast<int>(c / width); }
  std::optional<CellId> neighbor(CellId c, Heading h) const;
  const CellTransitions& transitions(CellId c) const { return cells[c]; }
  bool is_rail(CellId c) const { return in_bounds(c) && cells[c].is_rail(); }
  int rail_cell_count() const;
  int city_count() const;

  friend bool operator==(const RailGrid&, const RailGrid&) = default;
};

// Outgoing headings permitted when entering `cell` moving in direction
// `incoming`. Throws on an out-of-bounds cell. Returned in heading order.
std::vector<Heading> allowed_exits(const RailGrid& grid, CellId cell, Heading incoming);

// Number of traversal options for a train standing on `cell` with the given
// heading. A cell is a decision point for that train iff this is >= 2.
int branch_count(const RailGrid& grid, CellId cell, Heading incoming);

struct GridViolation {
  enum class Kind {
    ExitIntoBlockedCell,  // cell permits an exit its neighbour cannot accept
    ExitOffGrid,          // cell permits an exit across the boundary
    StationOffRail,
    StationUnreachable,   // station not reachable from any other station
  };
  Kind kind;
  CellId cell = -1;
  CellId other = -1;
  std::string message() const;
  friend bool operator==(const GridViolation&, const GridViolation&) = default;
};

// Empty iff every permitted exit lands on a cell that accepts the entry and
// each station is a rail cell reachable from at least one other station.
std::vector<GridViolation> validate_grid(const RailGrid& grid);

struct GeneratorParams {
  int width = 30;
  int height = 30;
  int n_cities = 2;
  int max_parallel_rails = 2;  // tracks within each city; corridors are single-track
  uint64_t seed = 0;
};

struct MapGenerationError : std::runtime_error {
  uint64_t seed;
  MapGenerationError(const std::string& msg, uint64_t s)
      : std::runtime_error(msg), seed(s) {}
};

// City-corridor map generator. Deterministic in params; the result always
// passes validate_grid. Throws MapGenerationError (carrying the seed) when
// city placement fails after bounded retries.
RailGrid generate_map(const GeneratorParams& params);

// Builds a grid from per-cell undirected link sets (bit per heading toward a
// linked neighbour). Link sets must be symmetric. The transition rule:
// continue over any link except straight back, with turnaround permitted at
// dead ends. Handy for constructing fixtures.
RailGrid grid_from_links(int width, int height, const std::vector<uint8_t>& links,
                         std::vector<Station> stations);

std::string grid_to_json(const RailGrid& grid);
RailGrid grid_from_json(const std::string& text);

// FNV-1a over the serialised document; identifies maps in traces.
uint64_t grid_hash(const RailGrid& grid);

}  // namespace railflow
