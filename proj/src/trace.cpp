#include "railflow/trace.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include "railflow/path_engine.hpp"
#include "railflow/rail_net.hpp"
#include "railflow/util.hpp"

namespace railflow {

namespace {

nlohmann::json grid_json(const RailGrid& grid) {
  return nlohmann::json::parse(grid_to_json(grid));
}

nlohmann::json config_json(const EpisodeConfig& c) {
  nlohmann::json j;
  j["t_max_override"] = c.t_max_override;
  j["beta"] = c.beta;
  j["malfunction_rate"] = c.malfunction_rate;
  j["malfunction_min"] = c.malfunction_min;
  j["malfunction_max"] = c.malfunction_max;
  j["cycle_policy"] = c.reject_all_motion_cycles ? "reject-all" : "unsupported";
  nlohmann::json faults = nlohmann::json::array();
  for (const auto& f : c.scripted_malfunctions)
    faults.push_back({f.train, f.tick, f.duration});
  j["faults"] = faults;
  return j;
}

EpisodeConfig config_from_json(const nlohmann::json& j) {
  EpisodeConfig c;
  c.t_max_override = j.at("t_max_override").get<int>();
  c.beta = j.at("beta").get<double>();
  c.malfunction_rate = j.at("malfunction_rate").get<double>();
  c.malfunction_min = j.at("malfunction_min").get<int>();
  c.malfunction_max = j.at("malfunction_max").get<int>();
  c.reject_all_motion_cycles = j.at("cycle_policy").get<std::string>() == "reject-all";
  for (const auto& f : j.at("faults"))
    c.scripted_malfunctions.push_back(
        {f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
  return c;
}

}  // namespace

std::string scenario_to_json(const Scenario& scenario) {
  nlohmann::json j;
  j["version"] = kScenarioVersion;
  j["grid"] = grid_json(scenario.grid);
  j["grid_hash"] = to_hex(grid_hash(scenario.grid));
  j["config"] = config_json(scenario.config);
  nlohmann::json trains = nlohmann::json::array();
  for (const auto& t : scenario.trains) {
    nlohmann::json e;
    e["id"] = t.id;
    e["origin"] = {t.origin.cell, static_cast<int>(t.origin.heading)};
    e["target"] = t.target;
    e["dep"] = t.earliest_departure;
    e["sched"] = t.scheduled_arrival;
    e["speed"] = {t.speed.num, t.speed.den};
    trains.push_back(e);
  }
  j["trains"] = trains;
  return j.dump();
}

Scenario scenario_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("version").get<std::string>() != kScenarioVersion)
    fail("scenario: unsupported version " + j.at("version").get<std::string>());
  Scenario s;
  s.grid = grid_from_json(j.at("grid").dump());
  s.config = config_from_json(j.at("config"));
  for (const auto& e : j.at("trains")) {
    TimetableEntry t;
    t.id = e.at("id").get<int>();
    t.origin = {e.at("origin").at(0).get<CellId>(),
                static_cast<Heading>(e.at("origin").at(1).get<int>())};
    t.target = e.at("target").get<CellId>();
    t.earliest_departure = e.at("dep").get<int>();
    t.scheduled_arrival = e.at("sched").get<int>();
    t.speed = {e.at("speed").at(0).get<int>(), e.at("speed").at(1).get<int>()};
    s.trains.push_back(t);
  }
  return s;
}

uint64_t scenario_hash(const Scenario& scenario) {
  return fnv1a64(scenario_to_json(scenario));
}

namespace {

nlohmann::json tick_json(const TraceTick& tick) {
  nlohmann::json j;
  j["type"] = "tick";
  j["t"] = tick.t;
  nlohmann::json acts = nlohmann::json::array();
  for (RawAction a : tick.actions) acts.push_back(static_cast<int>(a));
  j["a"] = acts;
  nlohmann::json evs = nlohmann::json::array();
  for (const Event& e : tick.events)
    evs.push_back({static_cast<int>(e.kind), e.train, e.a, e.b});
  j["e"] = evs;
  return j;
}

TraceTick tick_from_json(const nlohmann::json& j) {
  TraceTick tick;
  tick.t = j.at("t").get<int>();
  for (const auto& a : j.at("a"))
    tick.actions.push_back(static_cast<RawAction>(a.get<int>()));
  for (const auto& e : j.at("e"))
    tick.events.push_back({static_cast<EventKind>(e.at(0).get<int>()),
                           e.at(1).get<int32_t>(), e.at(2).get<int32_t>(),
                           e.at(3).get<int32_t>()});
  return tick;
}

}  // namespace

void write_trace(const TraceDocument& doc, std::ostream& out) {
  nlohmann::json header;
  header["type"] = "header";
  header["version"] = doc.version;
  header["seed"] = doc.seed;
  header["scenario_hash"] = to_hex(scenario_hash(doc.scenario));
  header["run_config"] = doc.run_config;
  header["scenario"] = nlohmann::json::parse(scenario_to_json(doc.scenario));
  out << header.dump() << "\n";
  for (const TraceTick& t : doc.ticks) out << tick_json(t).dump() << "\n";
  nlohmann::json footer;
  footer["type"] = "footer";
  footer["data"] = doc.footer;
  out << footer.dump() << "\n";
}

TraceDocument read_trace(std::istream& in) {
  TraceDocument doc;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    std::string type = j.at("type").get<std::string>();
    if (type == "header") {
      doc.version = j.at("version").get<std::string>();
      if (doc.version != kTraceVersion)
        fail("trace: unsupported version " + doc.version);
      doc.seed = j.at("seed").get<uint64_t>();
      doc.run_config = j.at("run_config");
      doc.scenario = scenario_from_json(j.at("scenario").dump());
      have_header = true;
    } else if (type == "tick") {
      doc.ticks.push_back(tick_from_json(j));
    } else if (type == "footer") {
      doc.footer = j.at("data");
    }
  }
  if (!have_header) fail("trace: missing header record");
  return doc;
}

std::vector<int> append_deadlock_flags(const RailGrid& grid, const SimState& state,
                                       std::vector<int>& first_flag, StepEvents& events) {
  std::vector<int> flagged = detect_deadlocks(grid, state);
  for (int i : flagged) {
    if (first_flag[i] < 0) {
      first_flag[i] = state.clock - 1;  // the tick just stepped
      events.push_back({EventKind::DeadlockFlagged, i});
    }
  }
  return flagged;
}

ReplayVerdict replay_trace(const TraceDocument& doc) {
  Simulator sim(doc.scenario);
  SimState state = sim.reset(doc.seed);
  std::vector<int> first_flag(doc.scenario.trains.size(), -1);
  for (size_t i = 0; i < doc.ticks.size(); ++i) {
    const TraceTick& rec = doc.ticks[i];
    if (sim.finished(state))
      return {false, rec.t, "episode finished before the recorded tick"};
    StepEvents events = sim.step(state, rec.actions);
    append_deadlock_flags(doc.scenario.grid, state, first_flag, events);
    if (events != rec.events) {
      std::ostringstream msg;
      msg << "event stream diverges at tick " << rec.t << " (regenerated "
          << events.size() << " events, recorded " << rec.events.size() << ")";
      return {false, rec.t, msg.str()};
    }
  }
  if (!sim.finished(state))
    return {false, static_cast<int>(doc.ticks.size()), "trace ends before the episode"};
  return {true, -1, "ok"};
}

}  // namespace railflow
