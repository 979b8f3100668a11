#include "greenwave/observe.hpp"

#include <algorithm>
#include <cmath>

namespace greenwave {

namespace {

double unit(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

std::optional<Tier> parse_tier(std::string_view text) {
  if (text == "tlc") return Tier::Tlc;
  if (text == "tlc-v2x") return Tier::TlcV2x;
  if (text == "tlc-v2x-vsa") return Tier::TlcV2xVsa;
  return std::nullopt;
}

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::Tlc: return "tlc";
    case Tier::TlcV2x: return "tlc-v2x";
    case Tier::TlcV2xVsa: return "tlc-v2x-vsa";
  }
  return "unknown";
}

std::size_t observation_dim(ObsLayout layout, std::size_t np, std::size_t nl) {
  switch (layout) {
    case ObsLayout::Tlc: return np + 4 * nl + 2;
    case ObsLayout::TlcV2x: return np + 7 * nl + 2;
    case ObsLayout::TlcV2xVsaSignal:
    case ObsLayout::VsaAdvice: return np + 8 * nl + 2;
  }
  return 0;
}

std::size_t observation_dim(ObsLayout layout, const IntersectionInfo& info) {
  return observation_dim(layout, info.num_phases(), info.num_slots());
}

std::vector<FeatureRange> observation_schema(ObsLayout layout, const IntersectionInfo& info) {
  const std::size_t np = info.num_phases();
  const std::size_t nl = info.num_slots();
  std::vector<FeatureRange> out;
  std::size_t at = 0;
  auto add = [&](std::string name, std::size_t n) {
    out.push_back({std::move(name), at, at + n});
    at += n;
  };
  add("current_phase_onehot", np);
  for (std::size_t k = 0; k < nl; ++k) {
    const std::string lane = std::to_string(k);
    add("slot" + lane + ".density", 1);
    add("slot" + lane + ".queue_length", 1);
    add("slot" + lane + ".total_wait", 1);
    add("slot" + lane + ".mean_speed", 1);
  }
  add("min_green_passed", 1);
  add("phase_duration", 1);
  if (layout == ObsLayout::Tlc) return out;
  for (std::size_t k = 0; k < nl; ++k) {
    const std::string lane = std::to_string(k);
    add("slot" + lane + ".leader_dist_to_light", 1);
    add("slot" + lane + ".leader_dist_to_queue_back", 1);
    add("slot" + lane + ".leader_speed", 1);
  }
  if (layout == ObsLayout::TlcV2x) return out;
  for (std::size_t k = 0; k < nl; ++k) add("slot" + std::to_string(k) + ".advice", 1);
  return out;
}

std::vector<ApproachVehicle> slot_approach(const SimState& state, const Slot& slot) {
  const auto& topo = state.scenario->topo;
  std::vector<ApproachVehicle> out;
  for (std::size_t i = 0; i < slot.lanes.size(); ++i) {
    const int lane = slot.lanes[i];
    const double length = topo.lanes[lane].length;
    for (const auto& v : state.lanes[lane]) out.push_back({&v, slot.upstream[i] + length - v.pos});
  }
  if (slot.lanes.size() > 1) {
    std::stable_sort(out.begin(), out.end(), [](const ApproachVehicle& a, const ApproachVehicle& b) {
      return a.distance_to_line < b.distance_to_line;
    });
  }
  return out;
}

ObservationVector build_tlc_obs(const SimState& state, int intersection) {
  const auto& info = state.scenario->topo.intersections[intersection];
  const auto& params = state.scenario->config.driver;
  const SignalController& c = state.controllers[intersection];

  ObservationVector obs;
  obs.layout = ObsLayout::Tlc;
  auto& x = obs.values;
  x.reserve(observation_dim(ObsLayout::Tlc, info));
  for (std::size_t p = 0; p < info.num_phases(); ++p) x.push_back(static_cast<int>(p) == c.current_phase ? 1.0 : 0.0);

  for (const Slot& slot : info.slots) {
    const auto approach = slot_approach(state, slot);
    const auto queue = queue_metrics(approach, params);
    const double capacity = slot.capacity;
    double speed_sum = 0.0;
    for (const auto& a : approach) speed_sum += a.vehicle->speed;
    const double mean_speed = approach.empty() ? 1.0 : speed_sum / approach.size() / slot.speed_limit;
    x.push_back(unit(approach.size() / capacity));
    x.push_back(unit(queue.length / capacity));
    x.push_back(unit(queue.total_wait / kWaitScale));
    x.push_back(unit(mean_speed));
  }
  x.push_back(c.phase_elapsed >= c.min_green ? 1.0 : 0.0);
  x.push_back(unit(c.phase_elapsed / kPhaseDurationScale));
  return obs;
}

std::vector<V2xFeatures> build_v2x_features(const SimState& state, int intersection) {
  const auto& info = state.scenario->topo.intersections[intersection];
  const auto& params = state.scenario->config.driver;
  std::vector<V2xFeatures> out;
  out.reserve(info.num_slots());
  for (const Slot& slot : info.slots) {
    const auto approach = slot_approach(state, slot);
    const auto queue = queue_metrics(approach, params);
    V2xFeatures f;
    for (const auto& a : approach) {
      if (a.vehicle->speed < params.halting_speed) continue;
      f.dist_to_light = unit(a.distance_to_line / slot.geometry_length);
      f.dist_to_queue_back = unit((a.distance_to_line - queue.back_distance) / slot.geometry_length);
      f.leader_speed = unit(a.vehicle->speed / slot.speed_limit);
      break;
    }
    out.push_back(f);
  }
  return out;
}

ObservationVector build_v2x_obs(const SimState& state, int intersection) {
  ObservationVector obs = build_tlc_obs(state, intersection);
  obs.layout = ObsLayout::TlcV2x;
  for (const auto& f : build_v2x_features(state, intersection)) {
    obs.values.push_back(f.dist_to_light);
    obs.values.push_back(f.dist_to_queue_back);
    obs.values.push_back(f.leader_speed);
  }
  return obs;
}

ObservationVector build_vsa_obs(const SimState& state, int intersection, ObsLayout layout) {
  const auto& info = state.scenario->topo.intersections[intersection];
  ObservationVector obs = build_v2x_obs(state, intersection);
  obs.layout = layout;
  for (const Slot& slot : info.slots) {
    const auto approach = slot_approach(state, slot);
    const Vehicle* leader = lane_leader(approach, state.scenario->config.driver);
    double feature = 1.0;
    if (leader != nullptr && leader->advice) feature = unit(*leader->advice / slot.speed_limit);
    obs.values.push_back(feature);
  }
  return obs;
}

ObservationVector build_observation(const SimState& state, int intersection, ObsLayout layout) {
  switch (layout) {
    case ObsLayout::Tlc: return build_tlc_obs(state, intersection);
    case ObsLayout::TlcV2x: return build_v2x_obs(state, intersection);
    case ObsLayout::TlcV2xVsaSignal:
    case ObsLayout::VsaAdvice: return build_vsa_obs(state, intersection, layout);
  }
  return {};
}

}  // namespace greenwave
