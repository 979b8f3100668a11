#include "greenwave/simcore.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace greenwave {

namespace {

constexpr double kEps = 1e-9;
// Leaders and stop lines further ahead than this are ignored by car-following.
constexpr double kLookahead = 250.0;

}  // namespace

SignalController SignalController::for_intersection(const IntersectionInfo& info) {
  SignalController c;
  c.num_phases = static_cast<int>(info.num_phases());
  c.min_green = info.min_green;
  c.amber_duration = info.amber_duration;
  c.phase_elapsed = info.min_green;
  return c;
}

bool request_phase(SignalController& c, int target) {
  assert(target >= 0 && target < c.num_phases);
  if (c.pending_phase) return target == *c.pending_phase || target == c.current_phase;
  if (target == c.current_phase) return true;
  if (c.phase_elapsed < c.min_green - kEps) return false;
  c.pending_phase = target;
  c.amber_remaining = c.amber_duration;
  c.amber_elapsed = 0.0;
  return true;
}

namespace {

// Returns true when a phase change was committed on this tick.
bool tick(SignalController& c, double dt, IntegrityCounters& integrity) {
  bool committed = false;
  if (c.pending_phase && c.amber_remaining <= kEps) {
    if (std::abs(c.amber_elapsed - c.amber_duration) > 1e-6) ++integrity.amber_violations;
    if (c.phase_elapsed < c.min_green - kEps) ++integrity.min_green_violations;
    c.current_phase = *c.pending_phase;
    c.pending_phase.reset();
    c.phase_elapsed = 0.0;
    c.amber_elapsed = 0.0;
    ++integrity.phase_commits;
    committed = true;
  }
  c.phase_elapsed += dt;
  if (c.pending_phase) {
    c.amber_remaining = std::max(0.0, c.amber_remaining - dt);
    c.amber_elapsed += dt;
  }
  return committed;
}

}  // namespace

LightState light_for(const SignalController& c, const IntersectionInfo& info, std::size_t k) {
  const bool green_now = info.green[c.current_phase][k];
  if (!green_now) return LightState::Red;
  if (c.pending_phase && !info.green[*c.pending_phase][k]) return LightState::Amber;
  return LightState::Green;
}

std::size_t SimState::vehicles_on_network() const {
  std::size_t n = 0;
  for (const auto& lane : lanes) n += lane.size();
  return n;
}

SimState make_state(std::shared_ptr<const Scenario> scenario, std::uint64_t seed) {
  SimState s;
  s.lanes.assign(scenario->topo.lanes.size(), {});
  for (const auto& info : scenario->topo.intersections) {
    s.controllers.push_back(SignalController::for_intersection(info));
  }
  s.spawn_queue.assign(scenario->topo.entry_demands.size(), {});
  s.rng.seed(seed);
  s.scenario = std::move(scenario);
  return s;
}

double idm_acceleration(double speed, double desired_speed, double gap, double approach_rate,
                        const DriverParams& p) {
  if (!(gap > 0.0)) return -p.b_emergency;
  const double free_term = std::pow(speed / desired_speed, p.delta);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double dynamic = speed * p.headway + speed * approach_rate / (2.0 * std::sqrt(p.a_max * p.b));
    const double s_star = p.s0 + std::max(0.0, dynamic);
    interaction = (s_star / gap) * (s_star / gap);
  }
  const double a = p.a_max * (1.0 - free_term - interaction);
  return std::clamp(a, -p.b_emergency, p.a_max);
}

double effective_speed_cap(const Vehicle& v, double lane_speed_limit) {
  const double limit = v.advice ? std::min(lane_speed_limit, *v.advice) : lane_speed_limit;
  return v.speed_factor * limit;
}

std::optional<Obstacle> red_light_as_obstacle(const Vehicle& v, double distance_to_line, LightState light) {
  if (light == LightState::Green) return std::nullopt;
  return Obstacle{distance_to_line, v.speed};
}

double spawn_probability(double vehicles_per_hour, double dt) {
  return std::clamp(vehicles_per_hour * dt / 3600.0, 0.0, 1.0);
}

namespace {

const Vehicle* back_vehicle(const SimState& s, int lane) {
  return s.lanes[lane].empty() ? nullptr : &s.lanes[lane].back();
}

struct LeaderInfo {
  double gap = kInfiniteGap;
  double leader_speed = 0.0;
  bool found = false;
};

// Leader of the vehicle at index `i` of lane `lane`, looking across lane
// boundaries along its route.
LeaderInfo find_leader(const SimState& s, int lane, std::size_t i) {
  const auto& topo = s.scenario->topo;
  const double veh_len = s.scenario->config.driver.vehicle_length;
  const Vehicle& v = s.lanes[lane][i];
  if (i > 0) {
    const Vehicle& lead = s.lanes[lane][i - 1];
    return {lead.pos - veh_len - v.pos, lead.speed, true};
  }
  const RouteInfo& route = topo.routes[v.route];
  const double to_merge = topo.lanes[lane].length - v.pos;
  LeaderInfo best;
  double dist = to_merge;
  for (std::size_t j = v.route_pos + 1; j < route.lanes.size() && dist < kLookahead; ++j) {
    const int next = route.lanes[j];
    if (const Vehicle* lead = back_vehicle(s, next)) {
      best = {dist + lead->pos - veh_len, lead->speed, true};
      break;
    }
    dist += topo.lanes[next].length;
  }
  // Zipper merge: the closest vehicle ahead on a sibling feeder of the next
  // lane (by distance to the merge point, ties to the lower lane index) also
  // acts as a leader.
  if (v.route_pos + 1 < static_cast<int>(route.lanes.size()) && to_merge < kLookahead) {
    for (const int sibling : topo.feeders[route.lanes[v.route_pos + 1]]) {
      if (sibling == lane) continue;
      for (const Vehicle& other : s.lanes[sibling]) {
        const double other_dist = topo.lanes[sibling].length - other.pos;
        const bool ahead = other_dist < to_merge || (other_dist == to_merge && sibling < lane);
        if (!ahead) break;
        const double gap = to_merge - other_dist - veh_len;
        if (!best.found || gap < best.gap) best = {gap, other.speed, true};
      }
    }
  }
  return best;
}

struct StopLine {
  int lane = -1;
  double distance = 0.0;
  LightState light = LightState::Green;
};

std::optional<StopLine> next_stop_line(const SimState& s, const Vehicle& v, int lane) {
  const auto& topo = s.scenario->topo;
  const RouteInfo& route = topo.routes[v.route];
  double dist = topo.lanes[lane].length - v.pos;
  for (std::size_t j = v.route_pos; j < route.lanes.size(); ++j) {
    const int l = route.lanes[j];
    if (j > static_cast<std::size_t>(v.route_pos)) dist += topo.lanes[l].length;
    const LaneInfo& info = topo.lanes[l];
    if (info.intersection >= 0) {
      const auto& node = topo.intersections[info.intersection];
      return StopLine{l, dist, light_for(s.controllers[info.intersection], node, info.afferent_index)};
    }
    if (dist > kLookahead) break;
  }
  return std::nullopt;
}

double compute_acceleration(SimState& s, int lane, std::size_t i) {
  const auto& topo = s.scenario->topo;
  const DriverParams& p = s.scenario->config.driver;
  Vehicle& v = s.lanes[lane][i];
  const double desired = effective_speed_cap(v, topo.lanes[lane].speed_limit);

  const LeaderInfo leader = find_leader(s, lane, i);
  double a = leader.found ? idm_acceleration(v.speed, desired, leader.gap, v.speed - leader.leader_speed, p)
                          : idm_acceleration(v.speed, desired, kInfiniteGap, 0.0, p);

  if (auto line = next_stop_line(s, v, lane)) {
    if (line->light == LightState::Green) {
      v.intent = StopIntent::Undecided;
      v.intent_lane = -1;
    } else {
      if (v.intent == StopIntent::Undecided || v.intent_lane != line->lane) {
        // Commit once per non-green interval: stop if a comfortable brake suffices.
        const double braking = v.speed * v.speed / (2.0 * p.b);
        v.intent = braking <= line->distance ? StopIntent::Stop : StopIntent::Pass;
        v.intent_lane = line->lane;
      }
      if (v.intent == StopIntent::Stop) {
        if (auto obstacle = red_light_as_obstacle(v, line->distance, line->light)) {
          a = std::min(a, idm_acceleration(v.speed, desired, obstacle->gap, obstacle->approach_rate, p));
        }
      }
    }
  }
  return a;
}

void insert_sorted(std::vector<Vehicle>& lane, Vehicle v) {
  auto it = std::find_if(lane.begin(), lane.end(), [&](const Vehicle& o) { return o.pos < v.pos; });
  lane.insert(it, std::move(v));
}

void check_gaps(SimState& s) {
  const double veh_len = s.scenario->config.driver.vehicle_length;
  const auto& topo = s.scenario->topo;
  for (std::size_t l = 0; l < s.lanes.size(); ++l) {
    const auto& vs = s.lanes[l];
    for (std::size_t i = 1; i < vs.size(); ++i) {
      if (vs[i - 1].pos - veh_len - vs[i].pos <= 0.0) ++s.integrity.collisions;
    }
    if (vs.empty()) continue;
    const Vehicle& front = vs.front();
    const RouteInfo& route = topo.routes[front.route];
    if (front.route_pos + 1 < static_cast<int>(route.lanes.size())) {
      if (const Vehicle* lead = back_vehicle(s, route.lanes[front.route_pos + 1])) {
        const double gap = topo.lanes[l].length - front.pos + lead->pos - veh_len;
        if (gap <= 0.0) ++s.integrity.collisions;
      }
    }
  }
}

void check_signals(SimState& s) {
  const auto& topo = s.scenario->topo;
  for (std::size_t n = 0; n < topo.intersections.size(); ++n) {
    const auto& node = topo.intersections[n];
    for (std::size_t a = 0; a < node.afferent.size(); ++a) {
      if (light_for(s.controllers[n], node, a) != LightState::Green) continue;
      for (std::size_t b = a + 1; b < node.afferent.size(); ++b) {
        if (light_for(s.controllers[n], node, b) == LightState::Green &&
            topo.conflict[node.afferent[a]][node.afferent[b]]) {
          ++s.integrity.conflicting_greens;
        }
      }
    }
  }
}

void transfer_vehicles(SimState& s, double t_old, double t_new) {
  const auto& topo = s.scenario->topo;
  bool moved = true;
  while (moved) {
    moved = false;
    std::vector<std::pair<int, Vehicle>> incoming;
    for (std::size_t l = 0; l < s.lanes.size(); ++l) {
      auto& vs = s.lanes[l];
      const LaneInfo& lane = topo.lanes[l];
      while (!vs.empty() && vs.front().pos >= lane.length) {
        Vehicle v = std::move(vs.front());
        vs.erase(vs.begin());
        moved = true;
        if (lane.intersection >= 0) {
          const auto light = light_for(s.controllers[lane.intersection], topo.intersections[lane.intersection],
                                       lane.afferent_index);
          if (light != LightState::Green && v.intent == StopIntent::Stop && v.intent_lane == static_cast<int>(l)) {
            ++s.integrity.red_runs;
          }
          v.intent = StopIntent::Undecided;
          v.intent_lane = -1;
        }
        v.pos -= lane.length;
        v.advice.reset();
        const RouteInfo& route = topo.routes[v.route];
        if (++v.route_pos >= static_cast<int>(route.lanes.size())) {
          const double overshoot_time = v.speed > kEps ? v.pos / v.speed : 0.0;
          const double finish = std::max(t_old, t_new - overshoot_time);
          s.completed_trips.push_back({v.id, v.route, v.spawn_time, finish - v.spawn_time,
                                       route.free_flow_time_base / v.speed_factor, v.speed_factor});
          continue;
        }
        v.lane_entry_time = t_new;
        incoming.emplace_back(route.lanes[v.route_pos], std::move(v));
      }
    }
    for (auto& [lane, v] : incoming) insert_sorted(s.lanes[lane], std::move(v));
  }
}

}  // namespace

std::vector<std::uint64_t> spawn_vehicles(SimState& s) {
  const auto& cfg = s.scenario->config;
  const auto& topo = s.scenario->topo;
  const DriverParams& p = cfg.driver;
  std::vector<std::uint64_t> spawned;

  for (std::size_t e = 0; e < topo.entry_demands.size(); ++e) {
    const auto [lane, vph] = topo.entry_demands[e];
    std::bernoulli_distribution arrival(spawn_probability(vph, cfg.dt));
    if (arrival(s.rng)) {
      const auto& routes = topo.routes_from_lane[lane];
      std::uniform_int_distribution<std::size_t> pick(0, routes.size() - 1);
      const int route = routes[pick(s.rng)];
      std::normal_distribution<double> factor(cfg.speed_factor.mean, cfg.speed_factor.std);
      const double f = std::clamp(factor(s.rng), cfg.speed_factor.clip_lo, cfg.speed_factor.clip_hi);
      s.spawn_queue[e].push_back({route, f});
    }
    if (s.spawn_queue[e].empty()) continue;

    const PendingSpawn next = s.spawn_queue[e].front();
    const double cap = next.speed_factor * topo.lanes[lane].speed_limit;
    double speed = cap;
    if (const Vehicle* last = back_vehicle(s, lane)) {
      const double gap = last->pos - p.vehicle_length;
      const double closing = std::max(0.0, cap * cap - last->speed * last->speed) / (2.0 * p.b);
      if (gap < p.s0 + cap * p.headway + closing) {
        speed = std::min(cap, last->speed);
        if (gap < p.s0 + speed * p.headway + 1.0) continue;  // carried to the next step
      }
    }
    s.spawn_queue[e].pop_front();

    Vehicle v;
    v.id = s.next_vehicle_id++;
    v.route = next.route;
    v.speed = speed;
    v.speed_factor = next.speed_factor;
    v.spawn_time = s.time;
    v.lane_entry_time = s.time;
    s.lanes[lane].push_back(v);
    ++s.spawned;
    spawned.push_back(v.id);
  }
  return spawned;
}

void step(SimState& s) {
  const auto& cfg = s.scenario->config;
  const auto& topo = s.scenario->topo;
  const double dt = cfg.dt;
  const double t_old = s.time;
  const double t_new = static_cast<double>(s.step_count + 1) * dt;

  for (auto& c : s.controllers) tick(c, dt, s.integrity);
  check_signals(s);

  // Accelerations from one consistent snapshot.
  std::vector<std::vector<double>> accel(s.lanes.size());
  for (std::size_t l = 0; l < s.lanes.size(); ++l) {
    accel[l].resize(s.lanes[l].size());
    for (std::size_t i = 0; i < s.lanes[l].size(); ++i) {
      accel[l][i] = compute_acceleration(s, static_cast<int>(l), i);
    }
  }

  for (std::size_t l = 0; l < s.lanes.size(); ++l) {
    const double limit = topo.lanes[l].speed_limit;
    for (std::size_t i = 0; i < s.lanes[l].size(); ++i) {
      Vehicle& v = s.lanes[l][i];
      const double a = accel[l][i];
      const double cap = effective_speed_cap(v, limit);
      const double unclamped = v.speed + a * dt;
      double travel;
      double new_speed;
      if (unclamped < 0.0) {
        new_speed = 0.0;
        travel = a < 0.0 ? v.speed * v.speed / (-2.0 * a) : 0.0;
      } else {
        new_speed = std::min(unclamped, cap);
        travel = 0.5 * (v.speed + new_speed) * dt;
      }
      v.accel = (new_speed - v.speed) / dt;
      v.speed = new_speed;
      v.pos += travel;
      if (v.speed < 0.0 || v.speed > cap + 1e-9) ++s.integrity.speed_violations;
      v.halted_time = v.speed < cfg.driver.halting_speed ? v.halted_time + dt : 0.0;
    }
  }

  transfer_vehicles(s, t_old, t_new);
  check_gaps(s);

  s.time = t_new;
  ++s.step_count;
  spawn_vehicles(s);
}

// ---------------------------------------------------------------------------

QueueMetrics queue_metrics(std::span<const ApproachVehicle> approach, const DriverParams& p) {
  QueueMetrics q;
  for (const auto& a : approach) {
    if (a.vehicle->speed >= p.halting_speed) break;
    ++q.length;
    q.back_distance = a.distance_to_line + p.vehicle_length;
    q.total_wait += a.vehicle->halted_time;
  }
  return q;
}

const Vehicle* lane_leader(std::span<const ApproachVehicle> approach, const DriverParams& p) {
  for (const auto& a : approach) {
    if (a.vehicle->speed >= p.halting_speed) return a.vehicle;
  }
  return nullptr;
}

std::vector<ApproachVehicle> lane_approach(const SimState& s, int lane) {
  const double length = s.scenario->topo.lanes[lane].length;
  std::vector<ApproachVehicle> out;
  out.reserve(s.lanes[lane].size());
  for (const auto& v : s.lanes[lane]) out.push_back({&v, length - v.pos});
  return out;
}

LaneQueue queue_metrics(const SimState& s, int lane) {
  const auto approach = lane_approach(s, lane);
  const auto q = queue_metrics(approach, s.scenario->config.driver);
  return {q.length, s.scenario->topo.lanes[lane].length - q.back_distance, q.total_wait};
}

const Vehicle* lane_leader(const SimState& s, int lane) {
  const auto approach = lane_approach(s, lane);
  return lane_leader(approach, s.scenario->config.driver);
}

std::vector<TraceRow> trace_rows(const SimState& s) {
  const auto& topo = s.scenario->topo;
  std::vector<TraceRow> rows;
  for (std::size_t l = 0; l < s.lanes.size(); ++l) {
    const LaneInfo& lane = topo.lanes[l];
    for (const auto& v : s.lanes[l]) {
      const RouteInfo& route = topo.routes[v.route];
      TraceRow r;
      r.time = s.time;
      r.vehicle_id = v.id;
      r.route_id = route.id;
      r.lane_id = lane.id;
      r.pos = v.pos;
      r.route_progress = std::clamp((route.lane_offset[v.route_pos] + v.pos) / route.length, 0.0, 1.0);
      r.speed = v.speed;
      r.advice_norm = v.advice ? *v.advice / lane.speed_limit : -1.0;
      r.tl_phase = lane.intersection >= 0 ? s.controllers[lane.intersection].current_phase : -1;
      rows.push_back(std::move(r));
    }
  }
  std::sort(rows.begin(), rows.end(), [](const TraceRow& a, const TraceRow& b) { return a.vehicle_id < b.vehicle_id; });
  return rows;
}

}  // namespace greenwave
