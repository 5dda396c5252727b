#include "railflow/rail_net.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "railflow/rng.hpp"
#include "railflow/util.hpp"

namespace railflow {

const char* to_string(Heading h) {
  switch (h) {
    case Heading::North: return "N";
    case Heading::East: return "E";
    case Heading::South: return "S";
    case Heading::West: return "W";
  }
  return "?";
}

std::optional<CellId> RailGrid::neighbor(CellId c, Heading h) const {
  int x = x_of(c) + dx(h);
  int y = y_of(c) + dy(h);
  if (!in_bounds(x, y)) return std::nullopt;
  return cell_at(x, y);
}

int RailGrid::rail_cell_count() const {
  int n = 0;
  for (const auto& t : cells) n += t.is_rail() ? 1 : 0;
  return n;
}

int RailGrid::city_count() const {
  std::set<int> ids;
  for (const auto& s : stations) ids.insert(s.city);
  return static_cast<int>(ids.size());
}

std::vector<Heading> allowed_exits(const RailGrid& grid, CellId cell, Heading incoming) {
  if (!grid.in_bounds(cell)) fail("allowed_exits: cell out of bounds");
  std::vector<Heading> out;
  const CellTransitions& t = grid.transitions(cell);
  for (int d = 0; d < kHeadingCount; ++d) {
    auto h = static_cast<Heading>(d);
    if (t.allows(incoming, h)) out.push_back(h);
  }
  return out;
}

int branch_count(const RailGrid& grid, CellId cell, Heading incoming) {
  if (!grid.in_bounds(cell)) fail("branch_count: cell out of bounds");
  return grid.transitions(cell).exit_count(incoming);
}

std::string GridViolation::message() const {
  switch (kind) {
    case Kind::ExitIntoBlockedCell:
      return "cell " + std::to_string(cell) + " exits into cell " +
             std::to_string(other) + " which does not accept the entry";
    case Kind::ExitOffGrid:
      return "cell " + std::to_string(cell) + " permits an exit across the grid boundary";
    case Kind::StationOffRail:
      return "station cell " + std::to_string(cell) + " carries no rail";
    case Kind::StationUnreachable:
      return "station cell " + std::to_string(cell) +
             " is not reachable from any other station";
  }
  return "unknown violation";
}

namespace {

// Directed reachability over poses (cell x heading) starting from every valid
// pose of `from`. Marks reached cells.
void mark_reachable_cells(const RailGrid& grid, CellId from, std::vector<char>& cell_reached) {
  const size_t n_poses = grid.cells.size() * kHeadingCount;
  std::vector<char> seen(n_poses, 0);
  std::deque<int> queue;
  for (int d = 0; d < kHeadingCount; ++d) {
    auto h = static_cast<Heading>(d);
    if (grid.transitions(from).exit_count(h) > 0) {
      int p = from * kHeadingCount + d;
      seen[p] = 1;
      queue.push_back(p);
    }
  }
  while (!queue.empty()) {
    int p = queue.front();
    queue.pop_front();
    CellId c = p / kHeadingCount;
    auto h = static_cast<Heading>(p % kHeadingCount);
    cell_reached[c] = 1;
    const CellTransitions& t = grid.transitions(c);
    for (int d = 0; d < kHeadingCount; ++d) {
      auto out = static_cast<Heading>(d);
      if (!t.allows(h, out)) continue;
      auto nb = grid.neighbor(c, out);
      if (!nb) continue;
      int q = *nb * kHeadingCount + d;
      if (!seen[q]) {
        seen[q] = 1;
        queue.push_back(q);
      }
    }
  }
}

}  // namespace

std::vector<GridViolation> validate_grid(const RailGrid& grid) {
  std::vector<GridViolation> out;
  std::set<std::pair<CellId, CellId>> blocked_pairs;
  std::set<CellId> offgrid_cells;
  for (CellId c = 0; c < static_cast<CellId>(grid.cells.size()); ++c) {
    const CellTransitions& t = grid.cells[c];
    if (!t.is_rail()) continue;
    for (int in = 0; in < kHeadingCount; ++in) {
      for (int d = 0; d < kHeadingCount; ++d) {
        auto hin = static_cast<Heading>(in);
        auto hout = static_cast<Heading>(d);
        if (!t.allows(hin, hout)) continue;
        auto nb = grid.neighbor(c, hout);
        if (!nb) {
          if (offgrid_cells.insert(c).second)
            out.push_back({GridViolation::Kind::ExitOffGrid, c, -1});
          continue;
        }
        if (grid.transitions(*nb).exit_count(hout) == 0) {
          if (blocked_pairs.insert({c, *nb}).second)
            out.push_back({GridViolation::Kind::ExitIntoBlockedCell, c, *nb});
        }
      }
    }
  }
  for (const auto& s : grid.stations) {
    if (!grid.in_bounds(s.cell) || !grid.cells[s.cell].is_rail())
      out.push_back({GridViolation::Kind::StationOffRail, s.cell, -1});
  }
  // Station-to-station reachability, skipped when rail-level faults exist.
  if (out.empty() && grid.stations.size() > 1) {
    std::vector<std::vector<char>> reached;
    reached.reserve(grid.stations.size());
    for (const auto& s : grid.stations) {
      std::vector<char> cells(grid.cells.size(), 0);
      mark_reachable_cells(grid, s.cell, cells);
      reached.push_back(std::move(cells));
    }
    for (size_t i = 0; i < grid.stations.size(); ++i) {
      bool ok = false;
      for (size_t j = 0; j < grid.stations.size() && !ok; ++j)
        if (j != i && reached[j][grid.stations[i].cell]) ok = true;
      if (!ok)
        out.push_back({GridViolation::Kind::StationUnreachable, grid.stations[i].cell, -1});
    }
  }
  return out;
}

RailGrid grid_from_links(int width, int height, const std::vector<uint8_t>& links,
                         std::vector<Station> stations) {
  if (static_cast<int>(links.size()) != width * height)
    fail("grid_from_links: link array size mismatch");
  RailGrid grid;
  grid.width = width;
  grid.height = height;
  grid.cells.assign(links.size(), {});
  grid.stations = std::move(stations);
  for (CellId c = 0; c < static_cast<CellId>(links.size()); ++c) {
    uint8_t e = links[c];
    if (e == 0) continue;
    for (int in = 0; in < kHeadingCount; ++in) {
      auto hin = static_cast<Heading>(in);
      // Entry over the link behind the incoming direction.
      if (!((e >> static_cast<int>(reverse(hin))) & 1)) continue;
      bool any = false;
      for (int d = 0; d < kHeadingCount; ++d) {
        auto hout = static_cast<Heading>(d);
        if (!((e >> d) & 1)) continue;
        if (hout == reverse(hin)) continue;  // no mid-track reversal
        grid.cells[c].set(hin, hout);
        any = true;
      }
      if (!any) grid.cells[c].set(hin, reverse(hin));  // dead end: turn around
    }
  }
  return grid;
}

namespace {

struct CityFootprint {
  int x0, y0, len, rows;
  int cx() const { return x0 + len / 2; }
  int cy() const { return y0 + rows / 2; }
  // Corner cells in fixed order: NW, NE, SW, SE (collapsed when rows == 1).
  std::array<std::pair<int, int>, 4> corners() const {
    int y1 = y0 + rows - 1;
    int x1 = x0 + len - 1;
    return {{{x0, y0}, {x1, y0}, {x0, y1}, {x1, y1}}};
  }
};

void add_link(std::vector<uint8_t>& links, int width, int x, int y, Heading h) {
  links[y * width + x] |= static_cast<uint8_t>(1u << static_cast<int>(h));
  links[(y + dy(h)) * width + (x + dx(h))] |=
      static_cast<uint8_t>(1u << static_cast<int>(reverse(h)));
}

void carve_segment(std::vector<uint8_t>& links, int width, int x0, int y0, int x1, int y1) {
  if (x0 != x1 && y0 != y1) fail("carve_segment: not axis-aligned");
  int x = x0, y = y0;
  while (x != x1 || y != y1) {
    Heading h = x1 > x   ? Heading::East
                : x1 < x ? Heading::West
                : y1 > y ? Heading::South
                         : Heading::North;
    add_link(links, width, x, y, h);
    x += dx(h);
    y += dy(h);
  }
}

}  // namespace

RailGrid generate_map(const GeneratorParams& params) {
  if (params.n_cities < 2) fail("generate_map: n_cities must be >= 2");
  if (params.max_parallel_rails < 1 || params.max_parallel_rails > 2)
    fail("generate_map: max_parallel_rails must be 1 or 2");
  const int rows = params.max_parallel_rails;
  const int min_len = 5;
  if (params.width < min_len + 4 || params.height < rows + 4)
    throw MapGenerationError("generate_map: grid too small for a city footprint",
                             params.seed);

  Rng rng(params.seed);
  std::vector<CityFootprint> cities;
  const int max_len = std::min(9, params.width - 4);
  for (int i = 0; i < params.n_cities; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      CityFootprint f;
      f.len = rng.range(min_len, max_len);
      f.rows = rows;
      f.x0 = rng.range(2, params.width - f.len - 2);
      f.y0 = rng.range(2, params.height - f.rows - 2);
      bool overlap = false;
      for (const auto& c : cities) {
        // Keep an empty ring between footprints so tracks never touch by accident.
        if (f.x0 - 2 <= c.x0 + c.len + 1 && c.x0 - 2 <= f.x0 + f.len + 1 &&
            f.y0 - 2 <= c.y0 + c.rows + 1 && c.y0 - 2 <= f.y0 + f.rows + 1)
          overlap = true;
      }
      if (!overlap) {
        cities.push_back(f);
        placed = true;
      }
    }
    if (!placed)
      throw MapGenerationError("generate_map: city placement failed for seed " +
                                   std::to_string(params.seed),
                               params.seed);
  }

  std::vector<uint8_t> links(static_cast<size_t>(params.width) * params.height, 0);
  std::vector<Station> stations;
  for (int i = 0; i < params.n_cities; ++i) {
    const auto& f = cities[i];
    for (int r = 0; r < f.rows; ++r) {
      carve_segment(links, params.width, f.x0, f.y0 + r, f.x0 + f.len - 1, f.y0 + r);
      stations.push_back({static_cast<CellId>((f.y0 + r) * params.width + f.cx()), i});
    }
    if (f.rows == 2) {
      // End connectors turn the two tracks into a loop, so trains can reverse.
      carve_segment(links, params.width, f.x0, f.y0, f.x0, f.y0 + 1);
      carve_segment(links, params.width, f.x0 + f.len - 1, f.y0, f.x0 + f.len - 1,
                    f.y0 + 1);
    }
  }

  // Spanning tree over city centres (Prim, Manhattan metric, index tie-break).
  std::vector<char> in_tree(cities.size(), 0);
  in_tree[0] = 1;
  std::vector<std::pair<int, int>> tree_edges;
  for (size_t added = 1; added < cities.size(); ++added) {
    int best_a = -1, best_b = -1, best_d = 1 << 30;
    for (size_t a = 0; a < cities.size(); ++a) {
      if (!in_tree[a]) continue;
      for (size_t b = 0; b < cities.size(); ++b) {
        if (in_tree[b]) continue;
        int d = std::abs(cities[a].cx() - cities[b].cx()) +
                std::abs(cities[a].cy() - cities[b].cy());
        if (d < best_d) {
          best_d = d;
          best_a = static_cast<int>(a);
          best_b = static_cast<int>(b);
        }
      }
    }
    in_tree[best_b] = 1;
    tree_edges.push_back({best_a, best_b});
  }

  for (auto [a, b] : tree_edges) {
    auto ca = cities[a].corners();
    auto cb = cities[b].corners();
    int best_i = 0, best_j = 0, best_d = 1 << 30;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        int d = std::abs(ca[i].first - cb[j].first) + std::abs(ca[i].second - cb[j].second);
        if (d < best_d) {
          best_d = d;
          best_i = i;
          best_j = j;
        }
      }
    }
    auto [ax, ay] = ca[best_i];
    auto [bx, by] = cb[best_j];
    // L-shaped corridor; orientation chosen by the dominant axis.
    if (std::abs(bx - ax) >= std::abs(by - ay)) {
      carve_segment(links, params.width, ax, ay, bx, ay);
      carve_segment(links, params.width, bx, ay, bx, by);
    } else {
      carve_segment(links, params.width, ax, ay, ax, by);
      carve_segment(links, params.width, ax, by, bx, by);
    }
  }

  RailGrid grid = grid_from_links(params.width, params.height, links, stations);
  auto violations = validate_grid(grid);
  if (!violations.empty())
    throw MapGenerationError("generate_map: produced an inconsistent grid (seed " +
                                 std::to_string(params.seed) +
                                 "): " + violations.front().message(),
                             params.seed);
  return grid;
}

std::string grid_to_json(const RailGrid& grid) {
  nlohmann::json j;
  j["width"] = grid.width;
  j["height"] = grid.height;
  std::vector<int> bits;
  bits.reserve(grid.cells.size());
  for (const auto& t : grid.cells) bits.push_back(t.bits);
  j["cells"] = bits;
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : grid.stations) st.push_back({s.cell, s.city});
  j["stations"] = st;
  return j.dump();
}

RailGrid grid_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RailGrid grid;
  grid.width = j.at("width").get<int>();
  grid.height = j.at("height").get<int>();
  for (int b : j.at("cells")) grid.cells.push_back({static_cast<uint16_t>(b)});
  if (static_cast<int>(grid.cells.size()) != grid.width * grid.height)
    fail("grid_from_json: cell array size mismatch");
  for (const auto& s : j.at("stations"))
    grid.stations.push_back({s.at(0).get<CellId>(), s.at(1).get<int>()});
  return grid;
}

uint64_t grid_hash(const RailGrid& grid) { return fnv1a64(grid_to_json(grid)); }

}  // namespace railflow
