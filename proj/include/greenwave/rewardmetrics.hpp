#pragma once

#include <span>
#include <string>
#include <vector>

#include "greenwave/simcore.hpp"

namespace greenwave {

struct RewardSample {
  int intersection = -1;
  double t = 0.0;
  double value = 0.0;  // seconds, <= 0
};

/// Negative total time that vehicles on the intersection's slot lanes
/// (short-lane predecessors included) have spent on their current lane.
RewardSample reward(const SimState& state, int intersection);

struct TripRecord {
  std::uint64_t vehicle_id = 0;
  double trip_time = 0.0;
  double free_flow_time = 0.0;
  double delay = 0.0;
  bool censored = false;
};

/// trip_time minus the unconstrained trip time, floored at 0.
double trip_delay(double trip_time, double free_flow_time_base, double speed_factor);

struct EpisodeMetrics {
  std::size_t completed = 0;
  std::size_t censored = 0;
  double mean_delay = 0.0;                // completed and censored trips
  double mean_delay_completed = 0.0;      // completed trips only
  double mean_trip_time = 0.0;            // completed trips only
};

/// Trip records for finished vehicles plus censored records for vehicles
/// still on the network at `end_time`. A censored trip is charged against
/// the free-flow time of the distance it has covered.
std::vector<TripRecord> trip_records(const SimState& state, double end_time);
EpisodeMetrics summarize_trips(std::span<const TripRecord> trips);

struct RunSummary {
  std::vector<double> episode_mean_delay;
  double best_episode_delay = 0.0;

  static RunSummary from_series(std::vector<double> series);
};

enum class AggregationOrder {
  BestPerRunThenAcross,     // min over episodes per run, then mean/std over runs
  MeanPerEpisodeThenBest,   // mean over runs per episode index, then min
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  bool std_defined = true;  // false with fewer than two runs
};

Aggregate aggregate(std::span<const RunSummary> runs,
                    AggregationOrder order = AggregationOrder::BestPerRunThenAcross);

}  // namespace greenwave
