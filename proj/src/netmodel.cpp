#include "greenwave/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace greenwave {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw ScenarioError(what); }

bool is_integer_multiple(double value, double unit) {
  const double ratio = value / unit;
  return std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0;
}

const Lane* find_lane(const Network& net, const std::string& id) {
  for (const auto& lane : net.lanes) {
    if (lane.id == id) return &lane;
  }
  return nullptr;
}

void check_lane_ref(const Network& net, const std::string& id, const std::string& context) {
  if (find_lane(net, id) == nullptr) {
    fail("dangling lane reference '" + id + "' in " + context);
  }
}

bool connected(const Lane& from, const Lane& to) {
  if (from.successor && *from.successor == to.id) return true;
  return std::find(to.predecessors.begin(), to.predecessors.end(), from.id) !=
         to.predecessors.end();
}

}  // namespace

std::optional<DemandLevel> parse_demand_level(std::string_view text) {
  if (text == "low") return DemandLevel::Low;
  if (text == "moderate") return DemandLevel::Moderate;
  if (text == "high") return DemandLevel::High;
  return std::nullopt;
}

std::string_view to_string(DemandLevel level) {
  switch (level) {
    case DemandLevel::Low: return "low";
    case DemandLevel::Moderate: return "moderate";
    case DemandLevel::High: return "high";
  }
  return "unknown";
}

double total_demand(DemandLevel level) {
  switch (level) {
    case DemandLevel::Low: return 70.0;
    case DemandLevel::Moderate: return 500.0;
    case DemandLevel::High: return 2500.0;
  }
  return 0.0;
}

ScenarioConfig validate(ScenarioConfig config) {
  Network& net = config.network;

  std::set<std::string> lane_ids;
  for (auto& lane : net.lanes) {
    if (lane.id.empty()) fail("schema violation: lane 'id' must be non-empty");
    if (!lane_ids.insert(lane.id).second) fail("duplicate lane id '" + lane.id + "'");
    if (!(lane.length > 0.0)) fail("lane '" + lane.id + "': 'length' must be > 0");
    if (!(lane.speed_limit > 0.0)) fail("lane '" + lane.id + "': 'speed_limit' must be > 0");
    lane.is_short = lane.length < kShortLaneLength;
  }
  for (const auto& lane : net.lanes) {
    for (const auto& pred : lane.predecessors) {
      check_lane_ref(net, pred, "predecessors of lane '" + lane.id + "'");
    }
    if (lane.successor) check_lane_ref(net, *lane.successor, "successor of lane '" + lane.id + "'");
  }

  std::set<std::pair<std::string, std::string>> conflicts;
  for (const auto& [a, b] : net.conflicts) {
    check_lane_ref(net, a, "conflicts");
    check_lane_ref(net, b, "conflicts");
    conflicts.insert({a, b});
    conflicts.insert({b, a});
  }

  std::set<std::string> controlled;
  std::set<std::string> intersection_ids;
  for (const auto& node : net.intersections) {
    if (!intersection_ids.insert(node.id).second) {
      fail("duplicate intersection id '" + node.id + "'");
    }
    const std::string ctx = "intersection '" + node.id + "'";
    if (node.afferent_lanes.empty()) fail(ctx + ": 'afferent_lanes' must be non-empty");
    if (node.phases.size() < 2) fail(ctx + ": at least two phases are required");
    if (!(node.amber_duration >= 0.0)) fail(ctx + ": 'amber_duration' must be >= 0");
    if (!(node.min_green > node.amber_duration)) {
      fail(ctx + ": 'min_green' must exceed 'amber_duration'");
    }
    for (const auto& id : node.afferent_lanes) {
      check_lane_ref(net, id, ctx);
      if (!controlled.insert(id).second) {
        fail("lane '" + id + "' is controlled by more than one intersection");
      }
    }
    for (std::size_t p = 0; p < node.phases.size(); ++p) {
      const auto& signals = node.phases[p].signals;
      for (const auto& [lane, _] : signals) {
        if (std::find(node.afferent_lanes.begin(), node.afferent_lanes.end(), lane) ==
            node.afferent_lanes.end()) {
          fail(ctx + ": phase " + std::to_string(p) + " names non-afferent lane '" + lane + "'");
        }
      }
      std::vector<std::string> greens;
      for (const auto& id : node.afferent_lanes) {
        auto it = signals.find(id);
        if (it == signals.end()) {
          fail(ctx + ": phase " + std::to_string(p) + " lacks a signal for lane '" + id + "'");
        }
        if (it->second == Signal::Green) greens.push_back(id);
      }
      for (std::size_t i = 0; i < greens.size(); ++i) {
        for (std::size_t j = i + 1; j < greens.size(); ++j) {
          if (conflicts.count({greens[i], greens[j]})) {
            fail("conflicting-green: " + ctx + " phase " + std::to_string(p) + " greens '" +
                 greens[i] + "' and '" + greens[j] + "'");
          }
        }
      }
    }
  }

  std::set<std::string> route_ids;
  for (auto& route : net.routes) {
    if (!route_ids.insert(route.id).second) fail("duplicate route id '" + route.id + "'");
    const std::string ctx = "route '" + route.id + "'";
    if (route.lanes.empty()) fail(ctx + ": 'lanes' must be non-empty");
    std::set<std::string> seen;
    route.free_flow_time_base = 0.0;
    for (std::size_t i = 0; i < route.lanes.size(); ++i) {
      check_lane_ref(net, route.lanes[i], ctx);
      if (!seen.insert(route.lanes[i]).second) fail(ctx + " revisits lane '" + route.lanes[i] + "'");
      const Lane& lane = *find_lane(net, route.lanes[i]);
      if (i > 0 && !connected(*find_lane(net, route.lanes[i - 1]), lane)) {
        fail(ctx + ": lanes '" + route.lanes[i - 1] + "' and '" + lane.id + "' are not connected");
      }
      route.free_flow_time_base += lane.length / lane.speed_limit;
    }
    if (!find_lane(net, route.lanes.front())->entry) {
      fail(ctx + " does not start on an entry lane");
    }
  }

  for (const auto& [lane_id, vph] : config.demands) {
    check_lane_ref(net, lane_id, "demands");
    if (!(vph >= 0.0)) fail("demand for lane '" + lane_id + "' must be >= 0");
    if (!find_lane(net, lane_id)->entry) fail("demand on non-entry lane '" + lane_id + "'");
    const bool has_route = std::any_of(net.routes.begin(), net.routes.end(),
                                       [&](const RouteSpec& r) { return r.lanes.front() == lane_id; });
    if (vph > 0.0 && !has_route) fail("demand on lane '" + lane_id + "' with no route");
  }

  if (!(config.dt > 0.0)) fail("simulation 'dt' must be > 0");
  if (!is_integer_multiple(config.decision_interval, config.dt)) {
    fail("simulation 'decision_interval' must be an integer multiple of 'dt'");
  }
  if (!(config.episode_length >= config.decision_interval)) {
    fail("simulation 'episode_length' must be >= 'decision_interval'");
  }
  const auto& sf = config.speed_factor;
  if (!(sf.std >= 0.0) || !(sf.clip_lo > 0.0) || !(sf.clip_lo <= sf.mean) ||
      !(sf.mean <= sf.clip_hi)) {
    fail("speed_factor requires std >= 0 and 0 < clip_lo <= mean <= clip_hi");
  }
  const auto& d = config.driver;
  if (!(d.a_max > 0 && d.b > 0 && d.s0 > 0 && d.headway > 0 && d.b_emergency >= d.b &&
        d.delta > 0 && d.vehicle_length > 0 && d.halting_speed > 0)) {
    fail("driver parameters must be positive and b_emergency >= b");
  }
  return config;
}

// ---------------------------------------------------------------------------
// JSON document

namespace {

void check_keys(const json& obj, const std::string& ctx, std::initializer_list<const char*> allowed,
                std::initializer_list<const char*> required) {
  if (!obj.is_object()) fail("schema violation: '" + ctx + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      fail("schema violation: unknown key '" + key + "' in " + ctx);
    }
  }
  for (const char* key : required) {
    if (!obj.contains(key)) fail("schema violation: missing key '" + std::string(key) + "' in " + ctx);
  }
}

template <typename T>
T get_as(const json& obj, const char* key, const std::string& ctx) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail("schema violation: key '" + std::string(key) + "' in " + ctx + " has the wrong type");
  }
}

template <typename T>
void get_opt(const json& obj, const char* key, const std::string& ctx, T& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key, ctx);
}

Signal parse_signal(const json& value, const std::string& ctx) {
  if (value == "green") return Signal::Green;
  if (value == "red") return Signal::Red;
  fail("schema violation: signal in " + ctx + " must be \"green\" or \"red\"");
}

}  // namespace

ScenarioConfig load_scenario(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    fail(std::string("schema violation: malformed document: ") + e.what());
  }
  check_keys(doc, "document",
             {"name", "lanes", "intersections", "routes", "conflicts", "demands", "simulation",
              "speed_factor", "driver"},
             {"lanes", "intersections", "routes", "demands", "simulation"});

  ScenarioConfig cfg;
  get_opt(doc, "name", "document", cfg.name);

  if (!doc["lanes"].is_array()) fail("schema violation: key 'lanes' must be an array");
  for (const auto& item : doc["lanes"]) {
    check_keys(item, "lanes[]", {"id", "length", "speed_limit", "predecessors", "successor", "entry"},
               {"id", "length", "speed_limit"});
    Lane lane;
    lane.id = get_as<std::string>(item, "id", "lanes[]");
    const std::string ctx = "lane '" + lane.id + "'";
    lane.length = get_as<double>(item, "length", ctx);
    lane.speed_limit = get_as<double>(item, "speed_limit", ctx);
    get_opt(item, "predecessors", ctx, lane.predecessors);
    if (item.contains("successor") && !item["successor"].is_null()) {
      lane.successor = get_as<std::string>(item, "successor", ctx);
    }
    get_opt(item, "entry", ctx, lane.entry);
    cfg.network.lanes.push_back(std::move(lane));
  }

  if (!doc["intersections"].is_array()) fail("schema violation: key 'intersections' must be an array");
  for (const auto& item : doc["intersections"]) {
    check_keys(item, "intersections[]",
               {"id", "afferent_lanes", "phases", "min_green", "amber_duration"},
               {"id", "afferent_lanes", "phases", "min_green", "amber_duration"});
    Intersection node;
    node.id = get_as<std::string>(item, "id", "intersections[]");
    const std::string ctx = "intersection '" + node.id + "'";
    node.afferent_lanes = get_as<std::vector<std::string>>(item, "afferent_lanes", ctx);
    node.min_green = get_as<double>(item, "min_green", ctx);
    node.amber_duration = get_as<double>(item, "amber_duration", ctx);
    if (!item["phases"].is_array()) fail("schema violation: key 'phases' in " + ctx + " must be an array");
    for (const auto& phase_doc : item["phases"]) {
      if (!phase_doc.is_object()) fail("schema violation: phases in " + ctx + " must be objects");
      Phase phase;
      for (const auto& [lane, signal] : phase_doc.items()) {
        phase.signals[lane] = parse_signal(signal, ctx);
      }
      node.phases.push_back(std::move(phase));
    }
    cfg.network.intersections.push_back(std::move(node));
  }

  if (!doc["routes"].is_array()) fail("schema violation: key 'routes' must be an array");
  for (const auto& item : doc["routes"]) {
    check_keys(item, "routes[]", {"id", "lanes"}, {"id", "lanes"});
    RouteSpec route;
    route.id = get_as<std::string>(item, "id", "routes[]");
    route.lanes = get_as<std::vector<std::string>>(item, "lanes", "route '" + route.id + "'");
    cfg.network.routes.push_back(std::move(route));
  }

  if (doc.contains("conflicts")) {
    if (!doc["conflicts"].is_array()) fail("schema violation: key 'conflicts' must be an array");
    for (const auto& pair : doc["conflicts"]) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
        fail("schema violation: key 'conflicts' entries must be [lane, lane] pairs");
      }
      cfg.network.conflicts.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
    }
  }

  cfg.demands = get_as<std::map<std::string, double>>(doc, "demands", "document");

  const json& sim = doc["simulation"];
  check_keys(sim, "simulation", {"episode_length", "dt", "decision_interval", "seed"},
             {"episode_length", "dt", "decision_interval"});
  cfg.episode_length = get_as<double>(sim, "episode_length", "simulation");
  cfg.dt = get_as<double>(sim, "dt", "simulation");
  cfg.decision_interval = get_as<double>(sim, "decision_interval", "simulation");
  get_opt(sim, "seed", "simulation", cfg.seed);

  if (doc.contains("speed_factor")) {
    const json& sf = doc["speed_factor"];
    check_keys(sf, "speed_factor", {"mean", "std", "clip_lo", "clip_hi"}, {});
    get_opt(sf, "mean", "speed_factor", cfg.speed_factor.mean);
    get_opt(sf, "std", "speed_factor", cfg.speed_factor.std);
    get_opt(sf, "clip_lo", "speed_factor", cfg.speed_factor.clip_lo);
    get_opt(sf, "clip_hi", "speed_factor", cfg.speed_factor.clip_hi);
  }
  if (doc.contains("driver")) {
    const json& d = doc["driver"];
    check_keys(d, "driver",
               {"a_max", "b", "s0", "headway", "b_emergency", "delta", "vehicle_length",
                "halting_speed"},
               {});
    get_opt(d, "a_max", "driver", cfg.driver.a_max);
    get_opt(d, "b", "driver", cfg.driver.b);
    get_opt(d, "s0", "driver", cfg.driver.s0);
    get_opt(d, "headway", "driver", cfg.driver.headway);
    get_opt(d, "b_emergency", "driver", cfg.driver.b_emergency);
    get_opt(d, "delta", "driver", cfg.driver.delta);
    get_opt(d, "vehicle_length", "driver", cfg.driver.vehicle_length);
    get_opt(d, "halting_speed", "driver", cfg.driver.halting_speed);
  }
  return validate(std::move(cfg));
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open scenario file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_scenario(buffer.str());
}

std::string serialize_scenario(const ScenarioConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  doc["lanes"] = json::array();
  for (const auto& lane : cfg.network.lanes) {
    json item = {{"id", lane.id},
                 {"length", lane.length},
                 {"speed_limit", lane.speed_limit},
                 {"predecessors", lane.predecessors},
                 {"entry", lane.entry}};
    item["successor"] = lane.successor ? json(*lane.successor) : json(nullptr);
    doc["lanes"].push_back(std::move(item));
  }
  doc["intersections"] = json::array();
  for (const auto& node : cfg.network.intersections) {
    json phases = json::array();
    for (const auto& phase : node.phases) {
      json p = json::object();
      for (const auto& [lane, signal] : phase.signals) {
        p[lane] = signal == Signal::Green ? "green" : "red";
      }
      phases.push_back(std::move(p));
    }
    doc["intersections"].push_back({{"id", node.id},
                                    {"afferent_lanes", node.afferent_lanes},
                                    {"phases", std::move(phases)},
                                    {"min_green", node.min_green},
                                    {"amber_duration", node.amber_duration}});
  }
  doc["routes"] = json::array();
  for (const auto& route : cfg.network.routes) {
    doc["routes"].push_back({{"id", route.id}, {"lanes", route.lanes}});
  }
  doc["conflicts"] = json::array();
  for (const auto& [a, b] : cfg.network.conflicts) doc["conflicts"].push_back({a, b});
  doc["demands"] = cfg.demands;
  doc["simulation"] = {{"episode_length", cfg.episode_length},
                       {"dt", cfg.dt},
                       {"decision_interval", cfg.decision_interval},
                       {"seed", cfg.seed}};
  const auto& sf = cfg.speed_factor;
  doc["speed_factor"] = {{"mean", sf.mean}, {"std", sf.std}, {"clip_lo", sf.clip_lo}, {"clip_hi", sf.clip_hi}};
  const auto& d = cfg.driver;
  doc["driver"] = {{"a_max", d.a_max},
                   {"b", d.b},
                   {"s0", d.s0},
                   {"headway", d.headway},
                   {"b_emergency", d.b_emergency},
                   {"delta", d.delta},
                   {"vehicle_length", d.vehicle_length},
                   {"halting_speed", d.halting_speed}};
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

ScenarioConfig build_single_intersection(DemandLevel level, const SingleIntersectionOptions& opt) {
  ScenarioConfig cfg;
  cfg.name = "single-intersection-" + std::string(to_string(level));
  cfg.episode_length = opt.episode_length;
  cfg.dt = opt.dt;
  cfg.decision_interval = opt.decision_interval;

  const std::vector<std::string> streets = {"ns", "we"};
  const double per_lane = total_demand(level) / 4.0;
  for (const auto& street : streets) {
    for (int k = 0; k < 2; ++k) {
      const std::string in = street + "_in_" + std::to_string(k);
      const std::string out = street + "_out_" + std::to_string(k);
      cfg.network.lanes.push_back({in, opt.approach_length, opt.speed_limit, {}, out, true, false});
      cfg.network.lanes.push_back({out, opt.approach_length, opt.speed_limit, {in}, std::nullopt, false, false});
      cfg.network.routes.push_back({street + "_" + std::to_string(k), {in, out}, 0.0});
      cfg.demands[in] = per_lane;
    }
  }

  Intersection node;
  node.id = "center";
  node.afferent_lanes = {"ns_in_0", "ns_in_1", "we_in_0", "we_in_1"};
  node.min_green = 8.0;
  node.amber_duration = 2.0;
  for (const auto& green_street : streets) {
    Phase phase;
    for (const auto& lane : node.afferent_lanes) {
      phase.signals[lane] = lane.rfind(green_street, 0) == 0 ? Signal::Green : Signal::Red;
    }
    node.phases.push_back(std::move(phase));
  }
  cfg.network.intersections.push_back(std::move(node));
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      cfg.network.conflicts.emplace_back("ns_in_" + std::to_string(a), "we_in_" + std::to_string(b));
    }
  }
  return validate(std::move(cfg));
}

std::vector<SlotLane> effective_afferent_lanes(const Intersection& intersection,
                                               const Network& network) {
  std::vector<SlotLane> out;
  for (std::size_t slot = 0; slot < intersection.afferent_lanes.size(); ++slot) {
    const std::string& id = intersection.afferent_lanes[slot];
    out.push_back({id, slot});
    const Lane* lane = find_lane(network, id);
    if (lane != nullptr && lane->length < kShortLaneLength) {
      for (const auto& pred : lane->predecessors) out.push_back({pred, slot});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Scenario::Scenario(ScenarioConfig cfg) : config(validate(std::move(cfg))) {
  const Network& net = config.network;
  const double cell = config.driver.vehicle_length + config.driver.s0;

  for (std::size_t i = 0; i < net.lanes.size(); ++i) {
    const Lane& lane = net.lanes[i];
    topo.lane_index[lane.id] = static_cast<int>(i);
    topo.lanes.push_back({lane.id, lane.length, lane.speed_limit, lane.is_short, lane.entry, -1, -1});
  }

  topo.routes_from_lane.assign(net.lanes.size(), {});
  for (const auto& route : net.routes) {
    RouteInfo info;
    info.id = route.id;
    info.free_flow_time_base = route.free_flow_time_base;
    for (const auto& id : route.lanes) {
      const int idx = lane(id);
      info.lanes.push_back(idx);
      info.lane_offset.push_back(info.length);
      info.length += topo.lanes[idx].length;
    }
    topo.routes_from_lane[info.lanes.front()].push_back(static_cast<int>(topo.routes.size()));
    topo.routes.push_back(std::move(info));
  }
  topo.feeders.assign(net.lanes.size(), {});
  for (const auto& route : topo.routes) {
    for (std::size_t j = 1; j < route.lanes.size(); ++j) topo.feeders[route.lanes[j]].push_back(route.lanes[j - 1]);
  }
  for (auto& f : topo.feeders) {
    std::sort(f.begin(), f.end());
    f.erase(std::unique(f.begin(), f.end()), f.end());
  }

  topo.conflict.assign(net.lanes.size(), std::vector<bool>(net.lanes.size(), false));
  for (const auto& [a, b] : net.conflicts) {
    topo.conflict[lane(a)][lane(b)] = true;
    topo.conflict[lane(b)][lane(a)] = true;
  }

  for (std::size_t n = 0; n < net.intersections.size(); ++n) {
    const Intersection& node = net.intersections[n];
    IntersectionInfo info;
    info.id = node.id;
    info.min_green = node.min_green;
    info.amber_duration = node.amber_duration;
    for (std::size_t k = 0; k < node.afferent_lanes.size(); ++k) {
      const int idx = lane(node.afferent_lanes[k]);
      info.afferent.push_back(idx);
      topo.lanes[idx].intersection = static_cast<int>(n);
      topo.lanes[idx].afferent_index = static_cast<int>(k);
    }
    for (const auto& phase : node.phases) {
      std::vector<bool> row;
      for (const auto& id : node.afferent_lanes) row.push_back(phase.signals.at(id) == Signal::Green);
      info.green.push_back(std::move(row));
    }
    info.slots.resize(node.afferent_lanes.size());
    for (const auto& entry : effective_afferent_lanes(node, net)) {
      Slot& slot = info.slots[entry.slot];
      const int idx = lane(entry.lane);
      const LaneInfo& li = topo.lanes[idx];
      if (slot.lanes.empty()) {
        slot.controlled_lane = idx;
        slot.speed_limit = li.speed_limit;
        slot.is_short = li.is_short;
        slot.upstream.push_back(0.0);
        slot.geometry_length = li.length;
      } else {
        const double controlled_len = topo.lanes[slot.controlled_lane].length;
        slot.upstream.push_back(controlled_len);
        slot.geometry_length = std::max(slot.geometry_length, controlled_len + li.length);
      }
      slot.lanes.push_back(idx);
      slot.capacity += static_cast<int>(std::floor(li.length / cell));
    }
    for (auto& slot : info.slots) slot.capacity = std::max(slot.capacity, 1);
    topo.intersections.push_back(std::move(info));
  }

  for (std::size_t i = 0; i < net.lanes.size(); ++i) {
    auto it = config.demands.find(net.lanes[i].id);
    if (it != config.demands.end() && it->second > 0.0) {
      topo.entry_demands.emplace_back(static_cast<int>(i), it->second);
    }
  }
}

int Scenario::lane(const std::string& id) const {
  auto it = topo.lane_index.find(id);
  if (it == topo.lane_index.end()) throw ScenarioError("unknown lane id '" + id + "'");
  return it->second;
}

std::size_t Scenario::steps_per_decision() const {
  return static_cast<std::size_t>(std::llround(config.decision_interval / config.dt));
}

std::size_t Scenario::steps_per_episode() const {
  const auto ticks = static_cast<std::size_t>(std::floor(config.episode_length / config.decision_interval + 1e-9));
  return ticks * steps_per_decision();
}

}  // namespace greenwave
