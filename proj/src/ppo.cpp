#include "greenwave/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace greenwave {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh_sq(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

std::vector<double> softmax(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - hi));
  for (double& e : p) e /= z;
  return p;
}

double raw_log_std(double x) { return std::clamp(x, kLogStdMin, kLogStdMax); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PolicyParams PolicyParams::make(std::size_t obs_dim, const std::vector<std::size_t>& hidden, PolicyHead head,
                                std::size_t action_dim) {
  PolicyParams p;
  p.head = head;
  p.action_dim = action_dim;
  const std::size_t out = head == PolicyHead::Categorical ? action_dim : 2 * action_dim;
  p.policy = Mlp(obs_dim, hidden, out);
  p.value = Mlp(obs_dim, hidden, 1);
  return p;
}

void PolicyParams::initialize(Rng& rng, double initial_log_std) {
  policy.init_orthogonal(rng, std::numbers::sqrt2, 0.01);
  value.init_orthogonal(rng, std::numbers::sqrt2, 1.0);
  if (head == PolicyHead::SquashedGaussian) {
    auto& out = policy.layers().back();
    for (std::size_t k = action_dim; k < 2 * action_dim; ++k) out.bias[k] = initial_log_std;
  }
}

std::vector<std::size_t> PolicyParams::hidden_sizes() const {
  std::vector<std::size_t> h;
  const auto& layers = policy.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) h.push_back(layers[l].out);
  return h;
}

DistParams dist_from_output(PolicyHead head, std::span<const double> out, std::size_t action_dim) {
  DistParams d;
  d.head = head;
  if (head == PolicyHead::Categorical) {
    d.logits.assign(out.begin(), out.begin() + action_dim);
  } else {
    d.mean.assign(out.begin(), out.begin() + action_dim);
    for (std::size_t k = 0; k < action_dim; ++k) d.log_std.push_back(raw_log_std(out[action_dim + k]));
  }
  return d;
}

ForwardResult forward(const PolicyParams& params, std::span<const double> obs) {
  ForwardResult r;
  const auto out = params.policy.forward(obs);
  r.dist = dist_from_output(params.head, out, params.action_dim);
  r.value = params.value.forward(obs)[0];
  return r;
}

double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return logits[index] - hi - std::log(z);
}

Sampled sample_phase(const DistParams& dist, Rng& rng) {
  const auto p = softmax(dist.logits);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  std::size_t idx = p.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) {
      idx = i;
      break;
    }
  }
  Sampled s;
  s.action.phase = static_cast<int>(idx);
  s.log_prob = log_softmax_at(dist.logits, idx);
  return s;
}

int greedy_phase(const DistParams& dist) {
  return static_cast<int>(std::max_element(dist.logits.begin(), dist.logits.end()) - dist.logits.begin());
}

double squashed_log_prob(double raw, double mean, double log_std, double dv_max) {
  const double z = (raw - mean) / std::exp(log_std);
  return -0.5 * z * z - log_std - kHalfLog2Pi - log_one_minus_tanh_sq(raw) - std::log(dv_max);
}

AdviceSample sample_advice_delta(const DistParams& dist, std::size_t slot, double dv_max, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  AdviceSample s;
  s.raw = dist.mean[slot] + std::exp(dist.log_std[slot]) * normal(rng);
  s.delta = std::tanh(s.raw) * dv_max;
  s.log_prob = squashed_log_prob(s.raw, dist.mean[slot], dist.log_std[slot], dv_max);
  return s;
}

Sampled sample_advice(const DistParams& dist, std::span<const double> dv_max, Rng& rng) {
  Sampled s;
  for (std::size_t k = 0; k < dist.mean.size(); ++k) {
    const AdviceSample a = sample_advice_delta(dist, k, dv_max[k], rng);
    s.action.raw.push_back(a.raw);
    s.log_prob += a.log_prob;
  }
  return s;
}

std::vector<double> advice_deltas(std::span<const double> raw, std::span<const double> dv_max) {
  std::vector<double> out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = std::tanh(raw[k]) * dv_max[k];
  return out;
}

Action greedy_advice(const DistParams& dist) {
  Action a;
  a.raw = dist.mean;
  return a;
}

double log_prob(const DistParams& dist, const Action& action, std::span<const double> dv_max) {
  if (dist.head == PolicyHead::Categorical) return log_softmax_at(dist.logits, static_cast<std::size_t>(action.phase));
  double lp = 0.0;
  for (std::size_t k = 0; k < dist.mean.size(); ++k) {
    lp += squashed_log_prob(action.raw[k], dist.mean[k], dist.log_std[k], dv_max[k]);
  }
  return lp;
}

void PPOConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("gae_lambda must be in [0, 1]");
  if (!(clip_ratio > 0.0)) throw std::invalid_argument("clip_ratio must be > 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (epochs < 1 || minibatch_size < 1) throw std::invalid_argument("epochs and minibatch_size must be >= 1");
}

void Trajectory::clear() {
  obs.clear();
  actions.clear();
  log_probs.clear();
  values.clear();
  rewards.clear();
  dones.clear();
  bootstrap_value = 0.0;
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap_value,
              double gamma, double lambda, std::span<const std::uint8_t> dones) {
  if (values.size() != rewards.size() || (!dones.empty() && dones.size() != rewards.size())) {
    throw std::invalid_argument("gae: rewards, values and dones must be aligned");
  }
  const std::size_t n = rewards.size();
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double live = (!dones.empty() && dones[t] != 0) ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[t] = next_adv;
    r.returns[t] = next_adv + values[t];
    next_value = values[t];
  }
  return r;
}

PpoBatch make_batch(const Trajectory& traj, const PPOConfig& config, std::span<const double> dv_max) {
  const std::size_t n = traj.size();
  if (traj.obs.size() != n || traj.actions.size() != n || traj.log_probs.size() != n || traj.values.size() != n ||
      traj.dones.size() != n) {
    throw std::invalid_argument("trajectory fields are not aligned");
  }
  PpoBatch b;
  b.obs_dim = n > 0 ? traj.obs.front().size() : 0;
  for (const auto& o : traj.obs) b.obs.insert(b.obs.end(), o.begin(), o.end());
  b.actions = traj.actions;
  b.old_log_probs = traj.log_probs;
  b.dv_max.assign(dv_max.begin(), dv_max.end());

  std::vector<double> scaled(traj.rewards);
  for (double& r : scaled) r *= config.reward_scale;
  auto g = gae(scaled, traj.values, traj.bootstrap_value, config.gamma, config.gae_lambda, traj.dones);

  double mean = 0.0;
  for (double a : g.advantages) mean += a;
  mean /= std::max<std::size_t>(n, 1);
  double var = 0.0;
  for (double a : g.advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / std::max<std::size_t>(n, 1));
  for (double& a : g.advantages) a = (a - mean) / (sd + 1e-8);
  b.advantages = std::move(g.advantages);
  b.returns = std::move(g.returns);
  return b;
}

LossResult ppo_loss(const PolicyParams& params, const PpoBatch& batch, std::span<const std::size_t> indices,
                    const PPOConfig& config, PolicyParams* grad) {
  const std::size_t m = indices.size();
  const std::size_t d = batch.obs_dim;
  const std::size_t k = params.action_dim;
  const double inv_m = 1.0 / static_cast<double>(m);

  std::vector<double> x(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(batch.obs.begin() + indices[i] * d, d, x.begin() + i * d);
  }
  MlpCache pcache;
  MlpCache vcache;
  const auto pout = params.policy.forward_batch(x, m, pcache);
  const auto vout = params.value.forward_batch(x, m, vcache);
  const std::size_t pdim = params.policy.output_dim();

  std::vector<double> d_pout(m * pdim, 0.0);
  std::vector<double> d_vout(m, 0.0);
  LossResult r;

  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t s = indices[i];
    const auto out = pout.subspan(i * pdim, pdim);
    const double adv = batch.advantages[s];
    const Action& act = batch.actions[s];

    double logp = 0.0;
    double entropy = 0.0;
    std::vector<double> probs;
    if (params.head == PolicyHead::Categorical) {
      probs = softmax(out);
      logp = log_softmax_at(out, static_cast<std::size_t>(act.phase));
      for (double p : probs) {
        if (p > 0.0) entropy -= p * std::log(p);
      }
    } else {
      for (std::size_t j = 0; j < k; ++j) {
        const double ls = raw_log_std(out[k + j]);
        logp += squashed_log_prob(act.raw[j], out[j], ls, batch.dv_max[j]);
        entropy += ls + 0.5 + kHalfLog2Pi;
      }
    }

    const double log_ratio = logp - batch.old_log_probs[s];
    const double ratio = std::exp(log_ratio);
    const double clipped = std::clamp(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio);
    const double surr1 = ratio * adv;
    const double surr2 = clipped * adv;
    r.policy_loss -= std::min(surr1, surr2) * inv_m;
    r.entropy += entropy * inv_m;
    r.approx_kl -= log_ratio * inv_m;
    if (std::abs(ratio - 1.0) > config.clip_ratio) r.clip_fraction += inv_m;

    const double verr = vout[i] - batch.returns[s];
    r.value_loss += verr * verr * inv_m;

    if (grad == nullptr) continue;
    const double g_logp = surr1 <= surr2 ? -adv * ratio * inv_m : 0.0;
    const double g_ent = -config.entropy_coef * inv_m;
    double* dp = d_pout.data() + i * pdim;
    if (params.head == PolicyHead::Categorical) {
      double h = entropy;
      for (std::size_t j = 0; j < pdim; ++j) {
        const double onehot = static_cast<int>(j) == act.phase ? 1.0 : 0.0;
        const double dlogp = onehot - probs[j];
        const double dent = probs[j] > 0.0 ? -probs[j] * (std::log(probs[j]) + h) : 0.0;
        dp[j] = g_logp * dlogp + g_ent * dent;
      }
    } else {
      for (std::size_t j = 0; j < k; ++j) {
        const double raw_ls = out[k + j];
        const double sigma = std::exp(raw_log_std(raw_ls));
        const double z = (act.raw[j] - out[j]) / sigma;
        dp[j] = g_logp * z / sigma;
        const bool active = raw_ls > kLogStdMin && raw_ls < kLogStdMax;
        dp[k + j] = active ? g_logp * (z * z - 1.0) + g_ent : 0.0;
      }
    }
    d_vout[i] = 2.0 * config.value_coef * verr * inv_m;
  }

  r.total = r.policy_loss + config.value_coef * r.value_loss - config.entropy_coef * r.entropy;
  if (grad != nullptr) {
    params.policy.backward(pcache, d_pout, grad->policy);
    params.value.backward(vcache, d_vout, grad->value);
  }
  return r;
}

void adam_step(PolicyParams& params, const PolicyParams& grad, AdamState& state, const PPOConfig& config) {
  auto ps = params.policy.tensors();
  auto vs = params.value.tensors();
  ps.insert(ps.end(), vs.begin(), vs.end());
  auto gp = grad.policy.tensors();
  auto gv = grad.value.tensors();
  gp.insert(gp.end(), gv.begin(), gv.end());
  if (state.m.empty()) {
    for (const auto& t : ps) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  ++state.t;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < ps[t].size(); ++i) {
      const double g = gp[t][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      ps[t][i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
    }
  }
}

UpdateDiagnostics ppo_update(PolicyParams& params, AdamState& adam, const PpoBatch& batch, const PPOConfig& config,
                             Rng& rng) {
  config.validate();
  UpdateDiagnostics diag;
  const std::size_t n = batch.size();
  if (n == 0) return diag;

  const PolicyParams saved_params = params;
  const AdamState saved_adam = adam;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  PolicyParams grad = params;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.minibatch_size) {
      const std::size_t len = std::min(config.minibatch_size, n - start);
      grad.policy.zero();
      grad.value.zero();
      const LossResult loss =
          ppo_loss(params, batch, std::span<const std::size_t>(order.data() + start, len), config, &grad);
      if (!std::isfinite(loss.total)) {
        params = saved_params;
        adam = saved_adam;
        diag.aborted = true;
        return diag;
      }
      adam_step(params, grad, adam, config);
      ++diag.minibatches;
      diag.loss.total += loss.total;
      diag.loss.policy_loss += loss.policy_loss;
      diag.loss.value_loss += loss.value_loss;
      diag.loss.entropy += loss.entropy;
      diag.loss.clip_fraction += loss.clip_fraction;
      diag.loss.approx_kl += loss.approx_kl;
    }
  }
  const double inv = 1.0 / static_cast<double>(diag.minibatches);
  diag.loss.total *= inv;
  diag.loss.policy_loss *= inv;
  diag.loss.value_loss *= inv;
  diag.loss.entropy *= inv;
  diag.loss.clip_fraction *= inv;
  diag.loss.approx_kl *= inv;
  return diag;
}

// ---------------------------------------------------------------------------

std::string_view to_string(AgentRole role) { return role == AgentRole::Signal ? "signal" : "advice"; }

std::vector<AgentSpec> agent_specs(const Scenario& scenario, Tier tier) {
  std::vector<AgentSpec> out;
  const auto& nodes = scenario.topo.intersections;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const auto& info = nodes[n];
    AgentSpec signal;
    signal.id = "signal:" + info.id;
    signal.role = AgentRole::Signal;
    signal.intersection = static_cast<int>(n);
    signal.layout = tier == Tier::Tlc      ? ObsLayout::Tlc
                    : tier == Tier::TlcV2x ? ObsLayout::TlcV2x
                                           : ObsLayout::TlcV2xVsaSignal;
    signal.obs_dim = observation_dim(signal.layout, info);
    signal.action_dim = info.num_phases();
    out.push_back(std::move(signal));
    if (tier != Tier::TlcV2xVsa) continue;

    AgentSpec advice;
    advice.id = "advice:" + info.id;
    advice.role = AgentRole::Advice;
    advice.intersection = static_cast<int>(n);
    advice.layout = ObsLayout::VsaAdvice;
    advice.obs_dim = observation_dim(advice.layout, info);
    advice.action_dim = info.num_slots();
    for (const Slot& slot : info.slots) {
      advice.dv_max.push_back(0.1 * slot.speed_limit);
      advice.controllable.push_back(!slot.is_short);
    }
    out.push_back(std::move(advice));
  }
  return out;
}

void ReturnNormalizer::observe(std::span<const double> rewards, double gamma) {
  double running = 0.0;
  for (double r : rewards) {
    running = gamma * running + r;
    count += 1.0;
    const double d = running - mean;
    mean += d / count;
    m2 += d * (running - mean);
  }
}

double ReturnNormalizer::std_dev() const { return count > 1.0 ? std::sqrt(m2 / count) : 1.0; }

std::vector<Agent> make_agents(const Scenario& scenario, Tier tier, const NetworkShape& shape, std::uint64_t seed) {
  std::vector<Agent> agents;
  const auto specs = agent_specs(scenario, tier);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Agent a;
    a.spec = specs[i];
    const PolicyHead head = a.spec.role == AgentRole::Signal ? PolicyHead::Categorical : PolicyHead::SquashedGaussian;
    a.params = PolicyParams::make(a.spec.obs_dim, shape.hidden, head, a.spec.action_dim);
    Rng init(mix_seed(seed, 2 * i + 1));
    a.params.initialize(init, shape.initial_log_std);
    a.rng.seed(mix_seed(seed, 2 * i + 2));
    agents.push_back(std::move(a));
  }
  return agents;
}

}  // namespace greenwave
