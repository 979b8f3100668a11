#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "greenwave/mlp.hpp"
#include "greenwave/observe.hpp"

namespace greenwave {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

enum class PolicyHead { Categorical, SquashedGaussian };

/// Separate policy and value networks. A categorical policy emits one logit
/// per phase; a squashed-Gaussian policy emits per-slot means followed by
/// per-slot log standard deviations.
struct PolicyParams {
  Mlp policy;
  Mlp value;
  PolicyHead head = PolicyHead::Categorical;
  std::size_t action_dim = 0;

  static PolicyParams make(std::size_t obs_dim, const std::vector<std::size_t>& hidden, PolicyHead head,
                           std::size_t action_dim);
  /// Orthogonal init; the policy output layer is scaled down so the initial
  /// policy is near-uniform / near-zero-mean. `initial_log_std` seeds the
  /// Gaussian log-std output bias.
  void initialize(Rng& rng, double initial_log_std);

  std::size_t obs_dim() const { return policy.input_dim(); }
  std::vector<std::size_t> hidden_sizes() const;

  bool operator==(const PolicyParams&) const = default;
};

struct DistParams {
  PolicyHead head = PolicyHead::Categorical;
  std::vector<double> logits;   // categorical
  std::vector<double> mean;     // squashed Gaussian, pre-squash
  std::vector<double> log_std;  // clamped to [kLogStdMin, kLogStdMax]
};

DistParams dist_from_output(PolicyHead head, std::span<const double> output, std::size_t action_dim);

struct ForwardResult {
  DistParams dist;
  double value = 0.0;
};

ForwardResult forward(const PolicyParams& params, std::span<const double> obs);

/// Policy action as stored in a trajectory: a phase index for categorical
/// heads, pre-squash Gaussian samples for continuous heads.
struct Action {
  int phase = -1;
  std::vector<double> raw;

  bool operator==(const Action&) const = default;
};

struct Sampled {
  Action action;
  double log_prob = 0.0;
};

double log_softmax_at(std::span<const double> logits, std::size_t index);
Sampled sample_phase(const DistParams& dist, Rng& rng);
int greedy_phase(const DistParams& dist);

struct AdviceSample {
  double raw = 0.0;    // pre-squash sample
  double delta = 0.0;  // in [-dv_max, +dv_max]
  double log_prob = 0.0;
};

/// One slot of the continuous head: tanh-squashed Gaussian scaled to
/// [-dv_max, +dv_max], log-density including the change-of-variables term.
AdviceSample sample_advice_delta(const DistParams& dist, std::size_t slot, double dv_max, Rng& rng);
double squashed_log_prob(double raw, double mean, double log_std, double dv_max);
Sampled sample_advice(const DistParams& dist, std::span<const double> dv_max, Rng& rng);
std::vector<double> advice_deltas(std::span<const double> raw, std::span<const double> dv_max);
Action greedy_advice(const DistParams& dist);

/// Log-density of `action` under `dist`. `dv_max` is used by continuous heads.
double log_prob(const DistParams& dist, const Action& action, std::span<const double> dv_max);

struct PPOConfig {
  double learning_rate = 1e-5;
  int episodes = 1400;
  double clip_ratio = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 10;
  std::size_t minibatch_size = 128;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double reward_scale = 1e-3;  // applied to raw rewards before GAE
  bool normalize_returns = true;  // divide scaled rewards by a running std of discounted returns
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct Trajectory {
  std::vector<std::vector<double>> obs;
  std::vector<Action> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;  // reward observed after the step's action
  std::vector<std::uint8_t> dones;  // 1 = terminal
  double bootstrap_value = 0.0;  // V(s_T) for a time-limit cutoff

  std::size_t size() const { return rewards.size(); }
  void clear();
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t;  A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap_value,
              double gamma, double lambda, std::span<const std::uint8_t> dones = {});

struct PpoBatch {
  std::size_t obs_dim = 0;
  std::vector<double> obs;  // row-major, size() x obs_dim
  std::vector<Action> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> dv_max;

  std::size_t size() const { return actions.size(); }
};

/// GAE on scaled rewards, advantages normalized over the batch.
PpoBatch make_batch(const Trajectory& traj, const PPOConfig& config, std::span<const double> dv_max);

struct LossResult {
  double total = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Minimized objective: -clipped surrogate + value_coef * MSE - entropy_coef * entropy,
/// averaged over `indices`. Gradients are accumulated into `grad` when non-null.
LossResult ppo_loss(const PolicyParams& params, const PpoBatch& batch, std::span<const std::size_t> indices,
                    const PPOConfig& config, PolicyParams* grad);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

void adam_step(PolicyParams& params, const PolicyParams& grad, AdamState& state, const PPOConfig& config);

struct UpdateDiagnostics {
  LossResult loss;  // averaged over minibatches
  std::size_t minibatches = 0;
  bool aborted = false;
};

/// Clipped-surrogate update over `config.epochs` shuffled minibatch passes.
/// A non-finite loss restores the parameters and optimizer state and sets
/// `aborted`.
UpdateDiagnostics ppo_update(PolicyParams& params, AdamState& adam, const PpoBatch& batch,
                             const PPOConfig& config, Rng& rng);

// ---------------------------------------------------------------------------

enum class AgentRole { Signal, Advice };

std::string_view to_string(AgentRole role);

struct AgentSpec {
  std::string id;
  AgentRole role = AgentRole::Signal;
  int intersection = -1;
  ObsLayout layout = ObsLayout::Tlc;
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> dv_max;     // advice agents: 0.1 x slot speed limit
  std::vector<bool> controllable; // advice agents: false for short-lane slots
};

/// One SIGNAL agent per intersection for every tier, plus one ADVICE agent
/// per intersection for TLC+V2X+VSA.
std::vector<AgentSpec> agent_specs(const Scenario& scenario, Tier tier);

/// Running standard deviation of the discounted return, used to bring
/// rewards of very different demand levels to a common scale.
struct ReturnNormalizer {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  /// Folds in the discounted returns accumulated along one episode.
  void observe(std::span<const double> rewards, double gamma);
  double std_dev() const;

  bool operator==(const ReturnNormalizer&) const = default;
};

struct Agent {
  AgentSpec spec;
  PolicyParams params;
  AdamState adam;
  Rng rng;
  ReturnNormalizer returns;
};

struct NetworkShape {
  std::vector<std::size_t> hidden = {64, 64};
  double initial_log_std = -1.0;
};

std::vector<Agent> make_agents(const Scenario& scenario, Tier tier, const NetworkShape& shape, std::uint64_t seed);

/// Stable mixing of seeds into independent streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace greenwave
