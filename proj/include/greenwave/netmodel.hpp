#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace greenwave {

/// Lanes below this length are "short": their direct predecessors are merged
/// into the same observation/reward slot and they receive no speed advice.
inline constexpr double kShortLaneLength = 15.0;

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Signal { Green, Red };

struct Lane {
  std::string id;
  double length = 0.0;       // m
  double speed_limit = 0.0;  // m/s
  std::vector<std::string> predecessors;
  std::optional<std::string> successor;
  bool entry = false;
  bool is_short = false;  // derived: length < kShortLaneLength

  bool operator==(const Lane&) const = default;
};

/// Signal per afferent lane, keyed by lane id.
struct Phase {
  std::map<std::string, Signal> signals;

  bool operator==(const Phase&) const = default;
};

struct Intersection {
  std::string id;
  std::vector<std::string> afferent_lanes;  // order defines observation layout
  std::vector<Phase> phases;
  double min_green = 8.0;
  double amber_duration = 2.0;

  bool operator==(const Intersection&) const = default;
};

struct RouteSpec {
  std::string id;
  std::vector<std::string> lanes;
  double free_flow_time_base = 0.0;  // derived: sum of length / speed_limit

  bool operator==(const RouteSpec&) const = default;
};

struct SpeedFactorDistribution {
  double mean = 1.0;
  double std = 0.1;
  double clip_lo = 0.8;
  double clip_hi = 1.2;

  bool operator==(const SpeedFactorDistribution&) const = default;
};

/// Intelligent-driver-model parameters plus the vehicle geometry used for gaps.
struct DriverParams {
  double a_max = 2.6;
  double b = 4.5;
  double s0 = 2.5;
  double headway = 1.0;
  double b_emergency = 9.0;
  double delta = 4.0;
  double vehicle_length = 5.0;
  double halting_speed = 0.1;

  bool operator==(const DriverParams&) const = default;
};

struct Network {
  std::vector<Lane> lanes;
  std::vector<Intersection> intersections;
  std::vector<RouteSpec> routes;
  std::vector<std::pair<std::string, std::string>> conflicts;

  bool operator==(const Network&) const = default;
};

struct ScenarioConfig {
  std::string name;
  Network network;
  std::map<std::string, double> demands;  // entry lane id -> veh/h
  double episode_length = 3600.0;
  double dt = 0.5;
  double decision_interval = 5.0;
  SpeedFactorDistribution speed_factor;
  DriverParams driver;
  std::uint64_t seed = 0;

  bool operator==(const ScenarioConfig&) const = default;
};

enum class DemandLevel { Low, Moderate, High };

std::optional<DemandLevel> parse_demand_level(std::string_view text);
std::string_view to_string(DemandLevel level);

/// Total demand in veh/h of the built-in single-intersection scenario.
double total_demand(DemandLevel level);

/// Checks every invariant and fills the derived fields (is_short,
/// free_flow_time_base). Throws ScenarioError on the first violation.
ScenarioConfig validate(ScenarioConfig config);

/// Parses a JSON scenario document and validates it.
ScenarioConfig load_scenario(std::string_view document);
ScenarioConfig load_scenario_file(const std::string& path);
std::string serialize_scenario(const ScenarioConfig& config);

struct SingleIntersectionOptions {
  double approach_length = 300.0;
  double speed_limit = 13.89;
  double episode_length = 3600.0;
  double dt = 0.5;
  double decision_interval = 5.0;
};

/// Two perpendicular one-way, two-lane streets (north-south and west-east)
/// crossing at one signalized intersection; traffic goes straight only.
ScenarioConfig build_single_intersection(DemandLevel level,
                                         const SingleIntersectionOptions& options = {});

struct SlotLane {
  std::string lane;
  std::size_t slot = 0;
};

/// Afferent lanes of `intersection` with short lanes extended by their
/// direct predecessors. Each short lane is listed first, followed by its
/// predecessors in declaration order, all sharing the short lane's slot.
std::vector<SlotLane> effective_afferent_lanes(const Intersection& intersection,
                                               const Network& network);

// ---------------------------------------------------------------------------
// Index-based view used by the simulator and the observation builders.

struct LaneInfo {
  std::string id;
  double length = 0.0;
  double speed_limit = 0.0;
  bool is_short = false;
  bool entry = false;
  int intersection = -1;  // controlling intersection, -1 if unsignalized
  int afferent_index = -1;  // position in that intersection's afferent list
};

struct RouteInfo {
  std::string id;
  std::vector<int> lanes;
  std::vector<double> lane_offset;  // distance from route start to each lane start
  double length = 0.0;
  double free_flow_time_base = 0.0;
};

/// One observation slot: a controlled lane and, when short, its direct
/// predecessors laid out upstream of it.
struct Slot {
  int controlled_lane = -1;
  std::vector<int> lanes;          // controlled lane first
  std::vector<double> upstream;    // distance from lane end to the stop line
  double geometry_length = 0.0;    // controlled length + longest predecessor
  int capacity = 0;
  double speed_limit = 0.0;
  bool is_short = false;
};

struct IntersectionInfo {
  std::string id;
  std::vector<int> afferent;                // lane indices
  std::vector<std::vector<bool>> green;     // [phase][afferent position]
  std::vector<Slot> slots;                  // one per afferent lane
  double min_green = 0.0;
  double amber_duration = 0.0;

  std::size_t num_phases() const { return green.size(); }
  std::size_t num_slots() const { return slots.size(); }
};

struct Topology {
  std::vector<LaneInfo> lanes;
  std::map<std::string, int> lane_index;
  std::vector<RouteInfo> routes;
  std::vector<std::vector<int>> routes_from_lane;  // per lane: routes starting there
  std::vector<std::vector<int>> feeders;           // per lane: lanes some route continues from, ascending
  std::vector<IntersectionInfo> intersections;
  std::vector<std::vector<bool>> conflict;  // [lane][lane]
  std::vector<std::pair<int, double>> entry_demands;  // (lane, veh/h), lane order
};

/// Validated configuration plus its derived index tables. Immutable once built.
struct Scenario {
  ScenarioConfig config;
  Topology topo;

  explicit Scenario(ScenarioConfig cfg);

  int lane(const std::string& id) const;
  std::size_t steps_per_decision() const;
  std::size_t steps_per_episode() const;
};

}  // namespace greenwave
