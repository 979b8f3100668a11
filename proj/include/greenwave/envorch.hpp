#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <optional>
#include <vector>

#include "greenwave/observe.hpp"
#include "greenwave/ppo.hpp"
#include "greenwave/rewardmetrics.hpp"

namespace greenwave {

/// Lowest advice as a fraction of the lane speed limit.
inline constexpr double kAdviceFloorFraction = 0.2;

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AgentAction {
  std::string agent_id;
  int phase = -1;                    // SIGNAL agents
  std::vector<double> advice_delta;  // ADVICE agents, m/s per slot
};

struct DecisionTick {
  std::size_t index = 0;
  double t = 0.0;
  std::vector<ObservationVector> observations;  // per agent, agent order
  std::vector<double> rewards;                  // per agent; zero at reset
  bool done = false;
};

using StepObserver = std::function<void(const SimState&)>;

class Environment {
 public:
  Environment(std::shared_ptr<const Scenario> scenario, Tier tier);

  DecisionTick reset(std::uint64_t seed);
  /// Applies one action per agent, advances decision_interval of simulated
  /// time and returns the next observations and per-agent rewards.
  DecisionTick step(std::span<const AgentAction> actions);

  const std::vector<AgentSpec>& agents() const { return agents_; }
  const SimState& state() const { return state_; }
  const Scenario& scenario() const { return *scenario_; }
  Tier tier() const { return tier_; }
  bool done() const { return tick_ >= ticks_per_episode_; }
  std::size_t ticks_per_episode() const { return ticks_per_episode_; }

  void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

 private:
  DecisionTick make_tick(bool with_rewards) const;
  void apply_advice(const AgentSpec& spec, std::span<const double> deltas);

  std::shared_ptr<const Scenario> scenario_;
  Tier tier_;
  std::vector<AgentSpec> agents_;
  SimState state_;
  std::size_t tick_ = 0;
  std::size_t ticks_per_episode_ = 0;
  StepObserver observer_;
};

/// New advice for a lane leader: clamp(base + delta, floor, limit); returns
/// nullopt when the result equals the limit (no advice needed).
std::optional<double> next_advice(std::optional<double> current, double delta, double speed_limit);

struct EpisodeResult {
  std::vector<double> agent_returns;
  std::vector<TripRecord> trips;
  EpisodeMetrics metrics;
  IntegrityCounters integrity;
};

enum class ActionMode { Sample, Greedy };

/// Runs one full episode with the given agents. With `trajectories` set (one
/// per agent) the rollout is recorded for training.
EpisodeResult run_episode(Environment& env, std::span<Agent> agents, std::uint64_t seed, ActionMode mode,
                          std::vector<Trajectory>* trajectories = nullptr);

/// Fixed-time control: each phase in turn for cycle / N_P seconds
/// (amber included). Advice agents, if any, act with zero deltas.
EpisodeResult run_fixed_time(Environment& env, double cycle_seconds, std::uint64_t seed);

struct TrainConfig {
  PPOConfig ppo;
  NetworkShape shape;
  int threads = 1;
};

struct EpisodeLog {
  int episode = 0;
  double mean_reward = 0.0;  // per decision tick, averaged over agents
  EpisodeMetrics metrics;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpisodeLog> log;
  RunSummary summary;
  int best_episode = -1;
  std::vector<Agent> best_agents;   // parameters that produced the best episode
  std::vector<Agent> final_agents;
};

using EpisodeCallback = std::function<void(std::uint64_t seed, const EpisodeLog&)>;

/// Trains independent PPO learners for one seed: one rollout episode, then
/// one update per agent on its own trajectory.
SeedRun train_seed(std::shared_ptr<const Scenario> scenario, Tier tier, const TrainConfig& config,
                   std::uint64_t seed, const EpisodeCallback& callback = {});

/// Runs train_seed for every seed, in parallel across `config.threads` workers.
std::vector<SeedRun> train(std::shared_ptr<const Scenario> scenario, Tier tier, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const EpisodeCallback& callback = {});

std::uint64_t episode_seed(std::uint64_t run_seed, int episode);

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  std::string agent_id;
  AgentRole role = AgentRole::Signal;
  Tier tier = Tier::Tlc;
  std::string config_hash;
  PolicyParams params;

  bool operator==(const Checkpoint&) const = default;
};

/// 64-bit FNV-1a of `text` as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

/// Hash over tier, role, observation/action dimensions and hidden sizes.
std::string config_hash(Tier tier, const AgentSpec& spec, const std::vector<std::size_t>& hidden);

Checkpoint make_checkpoint(const Agent& agent, Tier tier);
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view text);

/// Deterministic evaluation: argmax phases and mean advice deltas.
/// Throws EnvError when a checkpoint does not match the scenario and tier.
std::vector<EpisodeResult> evaluate(std::shared_ptr<const Scenario> scenario, Tier tier,
                                    std::span<const Checkpoint> checkpoints, int episodes, std::uint64_t seed,
                                    const StepObserver& observer = {});

}  // namespace greenwave
