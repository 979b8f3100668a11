#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "greenwave/netmodel.hpp"

namespace greenwave {

using Rng = std::mt19937_64;

/// How a vehicle treats the next non-green stop line ahead of it.
enum class StopIntent : std::uint8_t { Undecided, Stop, Pass };

struct Vehicle {
  std::uint64_t id = 0;
  int route = -1;
  int route_pos = 0;  // index into the route's lane list
  double pos = 0.0;   // front bumper, metres from lane start
  double speed = 0.0;
  double speed_factor = 1.0;
  double spawn_time = 0.0;
  double lane_entry_time = 0.0;
  std::optional<double> advice;  // m/s, cleared on lane change
  double halted_time = 0.0;      // continuous time below the halting speed
  double accel = 0.0;            // last applied acceleration
  StopIntent intent = StopIntent::Undecided;
  int intent_lane = -1;          // stop line the intent refers to
};

enum class LightState : std::uint8_t { Green, Amber, Red };

struct SignalController {
  int current_phase = 0;
  double phase_elapsed = 0.0;
  std::optional<int> pending_phase;
  double amber_remaining = 0.0;
  double amber_elapsed = 0.0;

  int num_phases = 2;
  double min_green = 8.0;
  double amber_duration = 2.0;

  static SignalController for_intersection(const IntersectionInfo& info);
  bool in_amber() const { return pending_phase.has_value(); }
};

/// Applies a phase request. Returns false (no state change) when the
/// current phase has not held for min_green or an amber is already running
/// toward a different phase.
bool request_phase(SignalController& controller, int target);

/// Light shown on afferent position `k` of the controlled intersection.
LightState light_for(const SignalController& controller, const IntersectionInfo& info, std::size_t k);

struct CompletedTrip {
  std::uint64_t vehicle_id = 0;
  int route = -1;
  double spawn_time = 0.0;
  double trip_time = 0.0;
  double free_flow_time = 0.0;
  double speed_factor = 1.0;

  bool operator==(const CompletedTrip&) const = default;
};

struct IntegrityCounters {
  std::uint64_t collisions = 0;           // follower-leader gap <= 0
  std::uint64_t speed_violations = 0;     // speed outside [0, cap]
  std::uint64_t conflicting_greens = 0;
  std::uint64_t amber_violations = 0;     // commit without exactly amber_duration of amber
  std::uint64_t min_green_violations = 0;
  std::uint64_t red_runs = 0;             // crossed a non-green line while intending to stop
  std::uint64_t phase_commits = 0;

  bool clean() const {
    return collisions == 0 && speed_violations == 0 && conflicting_greens == 0 &&
           amber_violations == 0 && min_green_violations == 0 && red_runs == 0;
  }
};

struct PendingSpawn {
  int route = -1;
  double speed_factor = 1.0;
};

struct SimState {
  std::shared_ptr<const Scenario> scenario;
  std::uint64_t step_count = 0;
  double time = 0.0;
  std::vector<std::vector<Vehicle>> lanes;  // per lane, sorted front (max pos) first
  std::vector<SignalController> controllers;
  Rng rng;
  std::vector<std::deque<PendingSpawn>> spawn_queue;  // per entry_demands entry
  std::vector<CompletedTrip> completed_trips;
  std::uint64_t next_vehicle_id = 0;
  std::uint64_t spawned = 0;
  IntegrityCounters integrity;

  std::size_t vehicles_on_network() const;
};

/// Empty network, all controllers at phase 0 with phase_elapsed = min_green.
SimState make_state(std::shared_ptr<const Scenario> scenario, std::uint64_t seed);

inline constexpr double kInfiniteGap = std::numeric_limits<double>::infinity();

/// IDM acceleration, clamped to [-b_emergency, a_max]. A non-positive gap
/// yields -b_emergency.
double idm_acceleration(double speed, double desired_speed, double gap, double approach_rate,
                        const DriverParams& params);

double effective_speed_cap(const Vehicle& vehicle, double lane_speed_limit);

struct Obstacle {
  double gap = 0.0;
  double approach_rate = 0.0;
};

/// Virtual standing obstacle at the stop line of a RED or amber lane.
/// `distance_to_line` is measured from the vehicle front to the stop line.
std::optional<Obstacle> red_light_as_obstacle(const Vehicle& vehicle, double distance_to_line,
                                              LightState light);

/// Per step, per entry lane Bernoulli draw probability.
double spawn_probability(double vehicles_per_hour, double dt);

/// Draws this step's arrivals and spawns at most one queued vehicle per entry
/// lane when the lane start is clear. Returns the ids of new vehicles.
std::vector<std::uint64_t> spawn_vehicles(SimState& state);

/// Advances the simulation by one dt.
void step(SimState& state);

// ---------------------------------------------------------------------------
// Queue and leader queries.

/// A vehicle seen from a stop line: distance from its front to the line.
struct ApproachVehicle {
  const Vehicle* vehicle = nullptr;
  double distance_to_line = 0.0;
};

struct QueueMetrics {
  int length = 0;
  double back_distance = 0.0;  // distance from the stop line to the rear of the last queued vehicle
  double total_wait = 0.0;
};

/// `approach` must be sorted by distance_to_line ascending.
QueueMetrics queue_metrics(std::span<const ApproachVehicle> approach, const DriverParams& params);
const Vehicle* lane_leader(std::span<const ApproachVehicle> approach, const DriverParams& params);

std::vector<ApproachVehicle> lane_approach(const SimState& state, int lane);

struct LaneQueue {
  int length = 0;
  double back_pos = 0.0;  // position along the lane; lane length when empty
  double total_wait = 0.0;
};

LaneQueue queue_metrics(const SimState& state, int lane);
const Vehicle* lane_leader(const SimState& state, int lane);

// ---------------------------------------------------------------------------
// Trace rows.

struct TraceRow {
  double time = 0.0;
  std::uint64_t vehicle_id = 0;
  std::string route_id;
  std::string lane_id;
  double pos = 0.0;
  double route_progress = 0.0;
  double speed = 0.0;
  double advice_norm = -1.0;  // advice / speed limit, -1 when absent
  int tl_phase = -1;          // phase of the controlling intersection, -1 if none
};

/// One row per vehicle currently on the network, sorted by vehicle id.
std::vector<TraceRow> trace_rows(const SimState& state);

}  // namespace greenwave
