#include "greenwave/rewardmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace greenwave {

RewardSample reward(const SimState& state, int intersection) {
  const auto& info = state.scenario->topo.intersections[intersection];
  double total = 0.0;
  for (const Slot& slot : info.slots) {
    for (int lane : slot.lanes) {
      for (const auto& v : state.lanes[lane]) total += state.time - v.lane_entry_time;
    }
  }
  return {intersection, state.time, -total};
}

double trip_delay(double trip_time, double free_flow_time_base, double speed_factor) {
  return std::max(0.0, trip_time - free_flow_time_base / speed_factor);
}

std::vector<TripRecord> trip_records(const SimState& state, double end_time) {
  const auto& topo = state.scenario->topo;
  std::vector<TripRecord> out;
  out.reserve(state.completed_trips.size() + state.vehicles_on_network());
  for (const auto& t : state.completed_trips) {
    out.push_back({t.vehicle_id, t.trip_time, t.free_flow_time,
                   std::max(0.0, t.trip_time - t.free_flow_time), false});
  }
  for (std::size_t l = 0; l < state.lanes.size(); ++l) {
    for (const auto& v : state.lanes[l]) {
      const RouteInfo& route = topo.routes[v.route];
      double free_flow = 0.0;
      for (int j = 0; j < v.route_pos; ++j) {
        const LaneInfo& lane = topo.lanes[route.lanes[j]];
        free_flow += lane.length / lane.speed_limit;
      }
      free_flow += v.pos / topo.lanes[l].speed_limit;
      free_flow /= v.speed_factor;
      const double trip_time = end_time - v.spawn_time;
      out.push_back({v.id, trip_time, free_flow, std::max(0.0, trip_time - free_flow), true});
    }
  }
  return out;
}

EpisodeMetrics summarize_trips(std::span<const TripRecord> trips) {
  EpisodeMetrics m;
  double all = 0.0;
  double done = 0.0;
  double trip_time = 0.0;
  for (const auto& t : trips) {
    all += t.delay;
    if (t.censored) {
      ++m.censored;
    } else {
      ++m.completed;
      done += t.delay;
      trip_time += t.trip_time;
    }
  }
  if (!trips.empty()) m.mean_delay = all / static_cast<double>(trips.size());
  if (m.completed > 0) {
    m.mean_delay_completed = done / static_cast<double>(m.completed);
    m.mean_trip_time = trip_time / static_cast<double>(m.completed);
  }
  return m;
}

RunSummary RunSummary::from_series(std::vector<double> series) {
  RunSummary r;
  r.best_episode_delay =
      series.empty() ? 0.0 : *std::min_element(series.begin(), series.end());
  r.episode_mean_delay = std::move(series);
  return r;
}

namespace {

Aggregate mean_std(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) {
    a.std_defined = false;
    return a;
  }
  a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) {
    a.std_defined = false;
    return a;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - a.mean) * (x - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return a;
}

}  // namespace

Aggregate aggregate(std::span<const RunSummary> runs, AggregationOrder order) {
  if (order == AggregationOrder::BestPerRunThenAcross) {
    std::vector<double> best;
    best.reserve(runs.size());
    for (const auto& r : runs) best.push_back(r.best_episode_delay);
    // Summation order fixed by sorting: the result is permutation-invariant.
    std::sort(best.begin(), best.end());
    return mean_std(best);
  }

  std::size_t episodes = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) episodes = std::min(episodes, r.episode_mean_delay.size());
  if (runs.empty() || episodes == 0) return mean_std({});
  Aggregate best;
  best.mean = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> column;
    for (const auto& r : runs) column.push_back(r.episode_mean_delay[e]);
    std::sort(column.begin(), column.end());
    const Aggregate a = mean_std(column);
    if (a.mean < best.mean) best = a;
  }
  return best;
}

}  // namespace greenwave
