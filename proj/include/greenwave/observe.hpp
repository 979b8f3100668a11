#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "greenwave/simcore.hpp"

namespace greenwave {

enum class Tier { Tlc, TlcV2x, TlcV2xVsa };

std::optional<Tier> parse_tier(std::string_view text);
std::string_view to_string(Tier tier);

enum class ObsLayout { Tlc, TlcV2x, TlcV2xVsaSignal, VsaAdvice };

struct ObservationVector {
  std::vector<double> values;
  ObsLayout layout = ObsLayout::Tlc;
};

// Normalization scales for unbounded features.
inline constexpr double kWaitScale = 300.0;
inline constexpr double kPhaseDurationScale = 120.0;

/// Table I dimensions: N_P + 4 N_L + 2, plus 3 N_L with V2X, plus N_L for
/// the advice feature.
std::size_t observation_dim(ObsLayout layout, std::size_t num_phases, std::size_t num_slots);
std::size_t observation_dim(ObsLayout layout, const IntersectionInfo& info);

struct FeatureRange {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Feature name -> index range table for one intersection.
std::vector<FeatureRange> observation_schema(ObsLayout layout, const IntersectionInfo& info);

/// Vehicles of a slot ordered by distance to the stop line, measured along
/// the slot's concatenated geometry.
std::vector<ApproachVehicle> slot_approach(const SimState& state, const Slot& slot);

struct V2xFeatures {
  double dist_to_light = 1.0;
  double dist_to_queue_back = 1.0;
  double leader_speed = 1.0;
};

ObservationVector build_tlc_obs(const SimState& state, int intersection);
std::vector<V2xFeatures> build_v2x_features(const SimState& state, int intersection);
ObservationVector build_v2x_obs(const SimState& state, int intersection);
/// TLC+V2X vector extended with each slot's advice / speed limit.
ObservationVector build_vsa_obs(const SimState& state, int intersection,
                                ObsLayout layout = ObsLayout::VsaAdvice);

ObservationVector build_observation(const SimState& state, int intersection, ObsLayout layout);

}  // namespace greenwave
