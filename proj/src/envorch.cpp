#include "greenwave/envorch.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>

namespace greenwave {

Environment::Environment(std::shared_ptr<const Scenario> scenario, Tier tier)
    : scenario_(std::move(scenario)), tier_(tier), agents_(agent_specs(*scenario_, tier)) {
  const auto& cfg = scenario_->config;
  ticks_per_episode_ = scenario_->steps_per_episode() / scenario_->steps_per_decision();
  for (const auto& spec : agents_) {
    const auto& info = scenario_->topo.intersections[spec.intersection];
    if (spec.obs_dim != observation_dim(spec.layout, info)) {
      throw EnvError("observation dimension mismatch for agent " + spec.id);
    }
  }
  state_ = make_state(scenario_, cfg.seed);
}

DecisionTick Environment::make_tick(bool with_rewards) const {
  DecisionTick tick;
  tick.index = tick_;
  tick.t = state_.time;
  tick.done = done();
  for (const auto& spec : agents_) {
    tick.observations.push_back(build_observation(state_, spec.intersection, spec.layout));
    tick.rewards.push_back(with_rewards ? reward(state_, spec.intersection).value : 0.0);
  }
  return tick;
}

DecisionTick Environment::reset(std::uint64_t seed) {
  state_ = make_state(scenario_, seed);
  tick_ = 0;
  return make_tick(false);
}

std::optional<double> next_advice(std::optional<double> current, double delta, double speed_limit) {
  const double base = current.value_or(speed_limit);
  const double value = std::clamp(base + delta, kAdviceFloorFraction * speed_limit, speed_limit);
  if (value >= speed_limit) return std::nullopt;
  return value;
}

void Environment::apply_advice(const AgentSpec& spec, std::span<const double> deltas) {
  const auto& info = scenario_->topo.intersections[spec.intersection];
  for (std::size_t k = 0; k < info.num_slots(); ++k) {
    if (!spec.controllable[k]) continue;
    const Slot& slot = info.slots[k];
    const int lane = slot.controlled_lane;
    const Vehicle* found = lane_leader(state_, lane);
    Vehicle* leader = nullptr;
    for (auto& v : state_.lanes[lane]) {
      if (&v == found) leader = &v;
    }
    if (leader == nullptr) continue;
    leader->advice = next_advice(leader->advice, deltas[k], slot.speed_limit);
  }
}

DecisionTick Environment::step(std::span<const AgentAction> actions) {
  if (done()) throw EnvError("step called on a finished episode");
  if (actions.size() != agents_.size()) {
    throw EnvError("expected " + std::to_string(agents_.size()) + " actions, got " + std::to_string(actions.size()));
  }
  std::vector<const AgentAction*> by_agent(agents_.size(), nullptr);
  for (const auto& action : actions) {
    auto it = std::find_if(agents_.begin(), agents_.end(), [&](const AgentSpec& s) { return s.id == action.agent_id; });
    if (it == agents_.end()) throw EnvError("action for unknown agent '" + action.agent_id + "'");
    by_agent[static_cast<std::size_t>(it - agents_.begin())] = &action;
  }
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    const AgentSpec& spec = agents_[i];
    const AgentAction* action = by_agent[i];
    if (action == nullptr) throw EnvError("missing action for agent '" + spec.id + "'");
    if (spec.role == AgentRole::Signal) {
      if (action->phase < 0 || static_cast<std::size_t>(action->phase) >= spec.action_dim) {
        throw EnvError("phase index out of range for agent '" + spec.id + "'");
      }
    } else {
      if (action->advice_delta.size() != spec.action_dim) {
        throw EnvError("advice action has the wrong dimension for agent '" + spec.id + "'");
      }
      for (double d : action->advice_delta) {
        if (std::isnan(d)) throw EnvError("NaN action for agent '" + spec.id + "'");
      }
    }
  }

  for (std::size_t i = 0; i < agents_.size(); ++i) {
    const AgentSpec& spec = agents_[i];
    if (spec.role == AgentRole::Signal) {
      request_phase(state_.controllers[spec.intersection], by_agent[i]->phase);  // rejection is a no-op
    } else {
      std::vector<double> deltas(by_agent[i]->advice_delta);
      for (std::size_t k = 0; k < deltas.size(); ++k) deltas[k] = std::clamp(deltas[k], -spec.dv_max[k], spec.dv_max[k]);
      apply_advice(spec, deltas);
    }
  }

  const std::size_t substeps = scenario_->steps_per_decision();
  for (std::size_t s = 0; s < substeps; ++s) {
    greenwave::step(state_);
    if (observer_) observer_(state_);
  }
  ++tick_;
  return make_tick(true);
}

// ---------------------------------------------------------------------------

namespace {

EpisodeResult finish_episode(const Environment& env, std::vector<double> returns) {
  EpisodeResult r;
  r.agent_returns = std::move(returns);
  r.trips = trip_records(env.state(), env.state().time);
  r.metrics = summarize_trips(r.trips);
  r.integrity = env.state().integrity;
  return r;
}

}  // namespace

std::uint64_t episode_seed(std::uint64_t run_seed, int episode) {
  return mix_seed(run_seed ^ 0x5eedULL, static_cast<std::uint64_t>(episode));
}

EpisodeResult run_episode(Environment& env, std::span<Agent> agents, std::uint64_t seed, ActionMode mode,
                          std::vector<Trajectory>* trajectories) {
  const auto& specs = env.agents();
  if (agents.size() != specs.size()) throw EnvError("agent count does not match the environment");
  if (trajectories != nullptr) {
    trajectories->assign(agents.size(), {});
  }
  std::vector<double> returns(agents.size(), 0.0);
  DecisionTick tick = env.reset(seed);
  std::vector<AgentAction> actions(agents.size());

  while (!tick.done) {
    for (std::size_t i = 0; i < agents.size(); ++i) {
      Agent& agent = agents[i];
      const auto& obs = tick.observations[i].values;
      const ForwardResult fr = forward(agent.params, obs);
      Sampled s;
      if (agent.spec.role == AgentRole::Signal) {
        if (mode == ActionMode::Sample) {
          s = sample_phase(fr.dist, agent.rng);
        } else {
          s.action.phase = greedy_phase(fr.dist);
        }
        actions[i] = {agent.spec.id, s.action.phase, {}};
      } else {
        if (mode == ActionMode::Sample) {
          s = sample_advice(fr.dist, agent.spec.dv_max, agent.rng);
        } else {
          s.action = greedy_advice(fr.dist);
        }
        actions[i] = {agent.spec.id, -1, advice_deltas(s.action.raw, agent.spec.dv_max)};
      }
      if (trajectories != nullptr) {
        Trajectory& tr = (*trajectories)[i];
        tr.obs.push_back(obs);
        tr.actions.push_back(std::move(s.action));
        tr.log_probs.push_back(s.log_prob);
        tr.values.push_back(fr.value);
      }
    }
    tick = env.step(actions);
    for (std::size_t i = 0; i < agents.size(); ++i) {
      returns[i] += tick.rewards[i];
      if (trajectories != nullptr) {
        (*trajectories)[i].rewards.push_back(tick.rewards[i]);
        (*trajectories)[i].dones.push_back(0);
      }
    }
  }
  if (trajectories != nullptr) {
    for (std::size_t i = 0; i < agents.size(); ++i) {
      (*trajectories)[i].bootstrap_value = forward(agents[i].params, tick.observations[i].values).value;
    }
  }
  return finish_episode(env, std::move(returns));
}

EpisodeResult run_fixed_time(Environment& env, double cycle_seconds, std::uint64_t seed) {
  const auto& specs = env.agents();
  std::vector<double> returns(specs.size(), 0.0);
  DecisionTick tick = env.reset(seed);
  std::vector<AgentAction> actions(specs.size());
  while (!tick.done) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& spec = specs[i];
      if (spec.role == AgentRole::Signal) {
        const double per_phase = cycle_seconds / static_cast<double>(spec.action_dim);
        const auto slot = static_cast<long>(std::floor(tick.t / per_phase + 1e-9));
        actions[i] = {spec.id, static_cast<int>(slot % static_cast<long>(spec.action_dim)), {}};
      } else {
        actions[i] = {spec.id, -1, std::vector<double>(spec.action_dim, 0.0)};
      }
    }
    tick = env.step(actions);
    for (std::size_t i = 0; i < specs.size(); ++i) returns[i] += tick.rewards[i];
  }
  return finish_episode(env, std::move(returns));
}

SeedRun train_seed(std::shared_ptr<const Scenario> scenario, Tier tier, const TrainConfig& config,
                   std::uint64_t seed, const EpisodeCallback& callback) {
  config.ppo.validate();
  Environment env(scenario, tier);
  std::vector<Agent> agents = make_agents(*scenario, tier, config.shape, seed);
  SeedRun run;
  run.seed = seed;
  std::vector<double> delays;
  std::vector<Trajectory> trajectories;

  for (int ep = 0; ep < config.ppo.episodes; ++ep) {
    const std::vector<Agent> before = agents;
    const EpisodeResult result = run_episode(env, agents, episode_seed(seed, ep), ActionMode::Sample, &trajectories);

    EpisodeLog log;
    log.episode = ep;
    log.metrics = result.metrics;
    const double ticks = static_cast<double>(env.ticks_per_episode());
    for (double r : result.agent_returns) log.mean_reward += r / ticks / static_cast<double>(agents.size());

    for (std::size_t i = 0; i < agents.size(); ++i) {
      Agent& agent = agents[i];
      PPOConfig ppo = config.ppo;
      if (ppo.normalize_returns) {
        std::vector<double> scaled(trajectories[i].rewards);
        for (double& r : scaled) r *= ppo.reward_scale;
        agent.returns.observe(scaled, ppo.gamma);
        ppo.reward_scale /= std::max(agent.returns.std_dev(), 1e-8);
      }
      const PpoBatch batch = make_batch(trajectories[i], ppo, agent.spec.dv_max);
      const UpdateDiagnostics diag = ppo_update(agent.params, agent.adam, batch, ppo, agent.rng);
      if (diag.aborted) {
        throw EnvError("non-finite PPO loss (seed " + std::to_string(seed) + ", episode " + std::to_string(ep) +
                       ", agent " + agent.spec.id + ")");
      }
      const double inv = 1.0 / static_cast<double>(agents.size());
      log.clip_fraction += diag.loss.clip_fraction * inv;
      log.approx_kl += diag.loss.approx_kl * inv;
      log.policy_loss += diag.loss.policy_loss * inv;
      log.value_loss += diag.loss.value_loss * inv;
    }

    delays.push_back(result.metrics.mean_delay);
    if (run.best_episode < 0 || result.metrics.mean_delay < run.log[run.best_episode].metrics.mean_delay) {
      run.best_episode = ep;
      run.best_agents = before;
    }
    run.log.push_back(log);
    if (callback) callback(seed, log);
  }
  run.summary = RunSummary::from_series(std::move(delays));
  run.final_agents = std::move(agents);
  return run;
}

std::vector<SeedRun> train(std::shared_ptr<const Scenario> scenario, Tier tier, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const EpisodeCallback& callback) {
  if (seeds.empty()) throw EnvError("train requires at least one seed");
  std::vector<SeedRun> runs(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::mutex callback_mutex;
  EpisodeCallback guarded;
  if (callback) {
    guarded = [&](std::uint64_t s, const EpisodeLog& log) {
      std::lock_guard lock(callback_mutex);
      callback(s, log);
    };
  }
  const long n = static_cast<long>(seeds.size());
  const int threads = std::max(1, config.threads);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long i = 0; i < n; ++i) {
    try {
      runs[i] = train_seed(scenario, tier, config, seeds[i], guarded);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return runs;
}

// ---------------------------------------------------------------------------

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double parse_double(std::string_view token) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), x);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw EnvError("checkpoint: malformed number '" + std::string(token) + "'");
  }
  return x;
}

void write_mlp(std::ostringstream& out, const char* name, const Mlp& mlp) {
  out << "network " << name << ' ' << mlp.layers().size() << '\n';
  for (const auto& layer : mlp.layers()) {
    out << "layer " << layer.in << ' ' << layer.out << '\n';
    out << 'w';
    for (double w : layer.weight) out << ' ' << format_double(w);
    out << "\nb";
    for (double b : layer.bias) out << ' ' << format_double(b);
    out << '\n';
  }
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : in_(std::string(text)) {}

  std::vector<std::string> next(std::string_view expected_key) {
    std::string line;
    if (!std::getline(in_, line)) throw EnvError("checkpoint: unexpected end, wanted '" + std::string(expected_key) + "'");
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string tok; ls >> tok;) tokens.push_back(tok);
    if (tokens.empty() || tokens[0] != expected_key) {
      throw EnvError("checkpoint: expected '" + std::string(expected_key) + "', got '" + line + "'");
    }
    tokens.erase(tokens.begin());
    return tokens;
  }

 private:
  std::istringstream in_;
};

std::size_t parse_size(const std::string& token) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) throw EnvError("checkpoint: malformed size '" + token + "'");
  return v;
}

Mlp read_mlp(LineReader& reader, const char* name) {
  const auto header = reader.next("network");
  if (header.size() != 2 || header[0] != name) throw EnvError(std::string("checkpoint: expected network ") + name);
  Mlp mlp;
  const std::size_t count = parse_size(header[1]);
  for (std::size_t l = 0; l < count; ++l) {
    const auto dims = reader.next("layer");
    if (dims.size() != 2) throw EnvError("checkpoint: malformed layer header");
    DenseLayer layer;
    layer.in = parse_size(dims[0]);
    layer.out = parse_size(dims[1]);
    const auto w = reader.next("w");
    const auto b = reader.next("b");
    if (w.size() != layer.in * layer.out || b.size() != layer.out) throw EnvError("checkpoint: layer size mismatch");
    for (const auto& t : w) layer.weight.push_back(parse_double(t));
    for (const auto& t : b) layer.bias.push_back(parse_double(t));
    if (!mlp.layers().empty() && mlp.layers().back().out != layer.in) {
      throw EnvError("checkpoint: layer shapes do not chain");
    }
    mlp.layers().push_back(std::move(layer));
  }
  return mlp;
}

}  // namespace

std::string config_hash(Tier tier, const AgentSpec& spec, const std::vector<std::size_t>& hidden) {
  std::ostringstream key;
  key << "tier=" << to_string(tier) << ";role=" << to_string(spec.role) << ";obs=" << spec.obs_dim
      << ";act=" << spec.action_dim << ";hidden=";
  for (std::size_t h : hidden) key << h << ',';
  return fnv1a_hex(key.str());
}

Checkpoint make_checkpoint(const Agent& agent, Tier tier) {
  return {agent.spec.id, agent.spec.role, tier, config_hash(tier, agent.spec, agent.params.hidden_sizes()),
          agent.params};
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::ostringstream out;
  out << "greenwave-checkpoint 1\n";
  out << "agent " << c.agent_id << '\n';
  out << "role " << to_string(c.role) << '\n';
  out << "tier " << to_string(c.tier) << '\n';
  out << "config_hash " << c.config_hash << '\n';
  out << "head " << (c.params.head == PolicyHead::Categorical ? "categorical" : "squashed-gaussian") << '\n';
  out << "action_dim " << c.params.action_dim << '\n';
  write_mlp(out, "policy", c.params.policy);
  write_mlp(out, "value", c.params.value);
  out << "end\n";
  return out.str();
}

Checkpoint parse_checkpoint(std::string_view text) {
  LineReader reader(text);
  const auto version = reader.next("greenwave-checkpoint");
  if (version.size() != 1 || version[0] != "1") throw EnvError("checkpoint: unsupported version");
  Checkpoint c;
  auto single = [&](std::string_view key) {
    const auto t = reader.next(key);
    if (t.size() != 1) throw EnvError("checkpoint: malformed '" + std::string(key) + "' line");
    return t[0];
  };
  c.agent_id = single("agent");
  const std::string role = single("role");
  if (role != "signal" && role != "advice") throw EnvError("checkpoint: unknown role '" + role + "'");
  c.role = role == "signal" ? AgentRole::Signal : AgentRole::Advice;
  const std::string tier = single("tier");
  const auto parsed_tier = parse_tier(tier);
  if (!parsed_tier) throw EnvError("checkpoint: unknown tier '" + tier + "'");
  c.tier = *parsed_tier;
  c.config_hash = single("config_hash");
  const std::string head = single("head");
  if (head != "categorical" && head != "squashed-gaussian") throw EnvError("checkpoint: unknown head '" + head + "'");
  c.params.head = head == "categorical" ? PolicyHead::Categorical : PolicyHead::SquashedGaussian;
  c.params.action_dim = parse_size(single("action_dim"));
  c.params.policy = read_mlp(reader, "policy");
  c.params.value = read_mlp(reader, "value");
  reader.next("end");
  return c;
}

std::vector<EpisodeResult> evaluate(std::shared_ptr<const Scenario> scenario, Tier tier,
                                    std::span<const Checkpoint> checkpoints, int episodes, std::uint64_t seed,
                                    const StepObserver& observer) {
  Environment env(scenario, tier);
  std::vector<Agent> agents;
  for (const auto& spec : env.agents()) {
    auto it = std::find_if(checkpoints.begin(), checkpoints.end(), [&](const Checkpoint& c) { return c.agent_id == spec.id; });
    if (it == checkpoints.end()) throw EnvError("no checkpoint for agent '" + spec.id + "'");
    const std::string expected = config_hash(tier, spec, it->params.hidden_sizes());
    if (it->tier != tier || it->config_hash != expected) {
      throw EnvError("checkpoint hash mismatch for agent '" + spec.id + "'");
    }
    const std::size_t out_dim = spec.role == AgentRole::Signal ? spec.action_dim : 2 * spec.action_dim;
    if (it->params.obs_dim() != spec.obs_dim || it->params.action_dim != spec.action_dim ||
        it->params.policy.output_dim() != out_dim || it->params.value.input_dim() != spec.obs_dim) {
      throw EnvError("checkpoint shape mismatch for agent '" + spec.id + "'");
    }
    Agent a;
    a.spec = spec;
    a.params = it->params;
    agents.push_back(std::move(a));
  }
  if (observer) env.set_step_observer(observer);
  std::vector<EpisodeResult> results;
  for (int ep = 0; ep < episodes; ++ep) {
    results.push_back(run_episode(env, agents, episode_seed(seed, ep), ActionMode::Greedy));
  }
  return results;
}

}  // namespace greenwave
