// Acceptance suite: one PASS/FAIL line per criterion. Exit code 0 only when
// every selected criterion passes. Criteria can be selected by number:
//   acceptance 1 2 9
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "greenwave/cli.hpp"
#include "greenwave/envorch.hpp"
#include "test_support.hpp"

namespace greenwave {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pinned tolerances and protocol constants.

constexpr double kRewardTolerance = 0.0;
constexpr int kGaeInstances = 1000;
constexpr double kGaeTolerance = 1e-9;
constexpr double kGradStep = 1e-5;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradRelFloor = 1e-6;
constexpr int kInvariantEpisodes = 50;
constexpr int kNestingSeeds = 3;
constexpr double kRequiredImprovement = 0.30;  // C6: best <= (1 - 0.30) x fixed-time
constexpr int kLearningSeedsRequired = 4;
constexpr double kFixedCycle = 30.0;
constexpr int kSignWinsRequired = 3;
constexpr double kSmoothingWindow = 150.0;     // m upstream of the stop line
constexpr int kSmoothingWinsRequired = 3;
constexpr std::uint64_t kEvalSeedOffset = 1000;
constexpr int kSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

std::vector<std::uint64_t> seed_list() {
  std::vector<std::uint64_t> seeds;
  for (int s = 1; s <= kSeeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  return seeds;
}

int worker_threads() {
  return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, static_cast<unsigned>(kSeeds)));
}

TrainConfig desk_config() {
  cli::RunManifest m;
  m.profile = cli::Profile::Desk;
  TrainConfig cfg = cli::resolve_train_config(m);
  cfg.threads = worker_threads();
  return cfg;
}

std::vector<AgentAction> schedule_actions(const Environment& env, std::span<const int> phases) {
  std::vector<AgentAction> out;
  for (const auto& spec : env.agents()) {
    if (spec.role == AgentRole::Signal) {
      out.push_back({spec.id, phases[spec.intersection], {}});
    } else {
      out.push_back({spec.id, -1, std::vector<double>(spec.action_dim, 0.0)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome reward_oracle() {
  auto scenario = testing::builtin(DemandLevel::High);
  Environment env(scenario, Tier::Tlc);
  auto agents = make_agents(*scenario, Tier::Tlc, NetworkShape{}, 11);
  Rng& rng = agents[0].rng;
  DecisionTick tick = env.reset(episode_seed(11, 0));
  std::size_t ticks = 0, exact = 0;
  double worst = 0.0;
  while (!tick.done) {
    const auto fr = forward(agents[0].params, tick.observations[0].values);
    tick = env.step(std::vector<AgentAction>{{agents[0].spec.id, sample_phase(fr.dist, rng).action.phase, {}}});
    const double oracle = testing::reward_oracle(env.state(), 0);
    const double err = std::abs(tick.rewards[0] - oracle);
    worst = std::max(worst, err);
    exact += err <= kRewardTolerance;
    ++ticks;
  }
  return {exact == ticks && ticks == env.ticks_per_episode(),
          fmt("%zu/%zu decision ticks match the brute-force oracle (max |diff| %.3g, tolerance %.0f)", exact, ticks,
              worst, kRewardTolerance)};
}

Outcome gae_oracle() {
  Rng rng(2024);
  std::uniform_int_distribution<int> len(1, 50);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < kGaeInstances; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = normal(rng);
    for (auto& x : v) x = normal(rng);
    const double boot = normal(rng), gamma = unit(rng), lambda = unit(rng);
    const auto g = gae(r, v, boot, gamma, lambda);
    const auto o = testing::gae_oracle(r, v, boot, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) {
      worst = std::max({worst, std::abs(g.advantages[t] - o.advantages[t]), std::abs(g.returns[t] - o.returns[t])});
    }
  }
  return {worst < kGaeTolerance,
          fmt("%d instances, max |recursive - double sum| = %.3g (tolerance %.0e)", kGaeInstances, worst, kGaeTolerance)};
}

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t params = 0;
  for (auto head : {PolicyHead::Categorical, PolicyHead::SquashedGaussian}) {
    auto p = PolicyParams::make(6, {8, 8}, head, head == PolicyHead::Categorical ? 3 : 2);
    Rng rng(head == PolicyHead::Categorical ? 301 : 302);
    p.initialize(rng, -0.5);
    for (double& w : p.policy.layers().back().weight) w *= 50.0;
    const auto batch = testing::random_batch(p, 16, rng);
    const auto gc = testing::gradient_check(p, batch, PPOConfig{}, kGradStep, kGradRelFloor);
    worst = std::max(worst, gc.max_rel_error);
    params += gc.parameters;
  }
  return {worst < kGradTolerance,
          fmt("%zu parameters (categorical + squashed-Gaussian heads), max relative error %.3g (tolerance %.0e)",
              params, worst, kGradTolerance)};
}

Outcome simulation_invariants() {
  const DemandLevel levels[] = {DemandLevel::Low, DemandLevel::Moderate, DemandLevel::High};
  IntegrityCounters total;
  std::uint64_t vehicles = 0;
  for (int e = 0; e < kInvariantEpisodes; ++e) {
    auto scenario = testing::builtin(levels[e % 3]);
    Environment env(scenario, Tier::TlcV2xVsa);
    // Untrained sampling agents: random phase requests and random advice.
    auto agents = make_agents(*scenario, Tier::TlcV2xVsa, NetworkShape{{16}, 0.0}, 500 + e);
    const auto result = run_episode(env, agents, episode_seed(500, e), ActionMode::Sample);
    const auto& i = result.integrity;
    total.collisions += i.collisions;
    total.speed_violations += i.speed_violations;
    total.conflicting_greens += i.conflicting_greens;
    total.amber_violations += i.amber_violations;
    total.min_green_violations += i.min_green_violations;
    total.red_runs += i.red_runs;
    total.phase_commits += i.phase_commits;
    vehicles += env.state().spawned;
  }
  return {total.clean() && total.phase_commits > 0,
          fmt("%d episodes, %llu vehicles, %llu phase changes: collisions %llu, speed %llu, conflicting greens %llu, "
              "amber %llu, min-green %llu, red runs %llu",
              kInvariantEpisodes, static_cast<unsigned long long>(vehicles),
              static_cast<unsigned long long>(total.phase_commits), static_cast<unsigned long long>(total.collisions),
              static_cast<unsigned long long>(total.speed_violations),
              static_cast<unsigned long long>(total.conflicting_greens),
              static_cast<unsigned long long>(total.amber_violations),
              static_cast<unsigned long long>(total.min_green_violations),
              static_cast<unsigned long long>(total.red_runs))};
}

Outcome tier_nesting() {
  auto scenario = testing::builtin(DemandLevel::High);
  Environment v2x(scenario, Tier::TlcV2x);
  Environment vsa(scenario, Tier::TlcV2xVsa);
  int identical = 0;
  std::size_t trips = 0;
  for (int s = 1; s <= kNestingSeeds; ++s) {
    auto run = [&](Environment& env) {
      Rng rng(static_cast<std::uint64_t>(s));
      std::uniform_int_distribution<int> phase(0, 1);
      DecisionTick tick = env.reset(episode_seed(static_cast<std::uint64_t>(s), 0));
      while (!tick.done) {
        const int p = phase(rng);
        tick = env.step(schedule_actions(env, std::span<const int>(&p, 1)));
      }
      return env.state().completed_trips;
    };
    const auto a = run(v2x);
    const auto b = run(vsa);
    identical += a == b;
    trips += a.size();
  }
  return {identical == kNestingSeeds,
          fmt("%d/%d seeds bit-identical completed-trip lists (%zu trips) with advice pinned to 0", identical,
              kNestingSeeds, trips)};
}

// Fixed-time mean delay over the same episode seeds a training run sees.
std::vector<double> fixed_time_delays(const std::shared_ptr<const Scenario>& scenario, std::uint64_t seed, int episodes) {
  Environment env(scenario, Tier::Tlc);
  std::vector<double> out;
  for (int ep = 0; ep < episodes; ++ep) {
    out.push_back(run_fixed_time(env, kFixedCycle, episode_seed(seed, ep)).metrics.mean_delay);
  }
  return out;
}

double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

Outcome learning_sanity() {
  auto scenario = testing::builtin(DemandLevel::Moderate);
  const TrainConfig cfg = desk_config();
  const auto seeds = seed_list();
  const auto runs = train(scenario, Tier::Tlc, cfg, seeds);
  int passed = 0, strict = 0;
  std::ostringstream detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto fixed = fixed_time_delays(scenario, seeds[i], cfg.ppo.episodes);
    const double baseline = mean(fixed);
    const double best_fixed = *std::min_element(fixed.begin(), fixed.end());
    const double best = runs[i].summary.best_episode_delay;
    const bool ok = best <= (1.0 - kRequiredImprovement) * baseline;
    passed += ok;
    strict += best <= (1.0 - kRequiredImprovement) * best_fixed;
    detail << fmt("%sseed %llu: best %.2f s vs fixed-time %.2f s (%.0f%% lower)", i ? "; " : "",
                  static_cast<unsigned long long>(seeds[i]), best, baseline, 100.0 * (1.0 - best / baseline));
  }
  std::cout << "      info: against the best fixed-time episode instead of the mean, " << strict << "/" << kSeeds
            << " seeds reach the 30% margin\n";
  return {passed >= kLearningSeedsRequired,
          fmt("%d/%d seeds at least 30%% below fixed-time (need %d): ", passed, kSeeds, kLearningSeedsRequired) +
              detail.str()};
}

// High-demand runs shared by the joint-control and smoothing criteria.
struct HighDemandRuns {
  std::shared_ptr<const Scenario> scenario;
  std::map<Tier, std::vector<SeedRun>> runs;
};

HighDemandRuns& high_demand_runs() {
  static HighDemandRuns cache = [] {
    HighDemandRuns h;
    h.scenario = testing::builtin(DemandLevel::High);
    const TrainConfig cfg = desk_config();
    const auto seeds = seed_list();
    for (auto tier : {Tier::Tlc, Tier::TlcV2x, Tier::TlcV2xVsa}) {
      const auto t0 = std::chrono::steady_clock::now();
      h.runs[tier] = train(h.scenario, tier, cfg, seeds);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "      trained " << to_string(tier) << " (" << kSeeds << " seeds x " << cfg.ppo.episodes
                << " episodes) in " << fmt("%.0f", secs) << " s\n";
    }
    return h;
  }();
  return cache;
}

std::vector<double> best_delays(const std::vector<SeedRun>& runs) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.summary.best_episode_delay);
  return out;
}

Outcome joint_control() {
  auto& h = high_demand_runs();
  const auto tlc = best_delays(h.runs[Tier::Tlc]);
  const auto v2x = best_delays(h.runs[Tier::TlcV2x]);
  const auto vsa = best_delays(h.runs[Tier::TlcV2xVsa]);
  int wins_v2x = 0, wins_tlc = 0;
  for (int i = 0; i < kSeeds; ++i) {
    wins_v2x += vsa[i] < v2x[i];
    wins_tlc += vsa[i] < tlc[i];
  }
  const auto agg = [&](Tier tier) { return aggregate(std::vector<RunSummary>([&] {
                                      std::vector<RunSummary> s;
                                      for (const auto& r : h.runs[tier]) s.push_back(r.summary);
                                      return s;
                                    }())); };
  const Aggregate a_tlc = agg(Tier::Tlc), a_v2x = agg(Tier::TlcV2x), a_vsa = agg(Tier::TlcV2xVsa);
  const bool ok = a_vsa.mean <= a_v2x.mean && a_vsa.mean <= a_tlc.mean && wins_v2x >= kSignWinsRequired &&
                  wins_tlc >= kSignWinsRequired;
  return {ok, fmt("best-episode delay TLC %.2f +- %.2f, TLC+V2X %.2f +- %.2f, TLC+V2X+VSA %.2f +- %.2f s; "
                  "VSA wins %d/%d vs TLC+V2X, %d/%d vs TLC (need %d)",
                  a_tlc.mean, a_tlc.std, a_v2x.mean, a_v2x.std, a_vsa.mean, a_vsa.std, wins_v2x, kSeeds, wins_tlc,
                  kSeeds, kSignWinsRequired)};
}

// Mean |acceleration| over vehicle-steps within the window upstream of any
// stop line, for one greedy evaluation episode.
double approach_smoothness(const std::shared_ptr<const Scenario>& scenario, Tier tier, const std::vector<Agent>& agents,
                           std::uint64_t seed) {
  std::vector<Checkpoint> cps;
  for (const auto& a : agents) cps.push_back(make_checkpoint(a, tier));
  double sum = 0.0;
  std::size_t n = 0;
  const auto observer = [&](const SimState& s) {
    for (const auto& info : s.scenario->topo.intersections) {
      for (const auto& slot : info.slots) {
        for (const auto& a : slot_approach(s, slot)) {
          if (a.distance_to_line > kSmoothingWindow) break;
          sum += std::abs(a.vehicle->accel);
          ++n;
        }
      }
    }
  };
  evaluate(scenario, tier, cps, 1, seed, observer);
  return n ? sum / static_cast<double>(n) : 0.0;
}

Outcome smoothing() {
  auto& h = high_demand_runs();
  int wins = 0;
  std::ostringstream detail;
  for (int i = 0; i < kSeeds; ++i) {
    const std::uint64_t seed = kEvalSeedOffset + static_cast<std::uint64_t>(i + 1);
    const double v2x = approach_smoothness(h.scenario, Tier::TlcV2x, h.runs[Tier::TlcV2x][i].best_agents, seed);
    const double vsa = approach_smoothness(h.scenario, Tier::TlcV2xVsa, h.runs[Tier::TlcV2xVsa][i].best_agents, seed);
    wins += vsa < v2x;
    detail << fmt("%sseed %d: %.4f vs %.4f", i ? "; " : "", i + 1, vsa, v2x);
  }
  return {wins >= kSmoothingWinsRequired,
          fmt("mean |accel| within %.0f m of the stop line, VSA vs TLC+V2X lower in %d/%d seeds (need %d): ",
              kSmoothingWindow, wins, kSeeds, kSmoothingWinsRequired) +
              detail.str()};
}

Outcome observation_audit() {
  std::vector<std::pair<std::string, ScenarioConfig>> nets;
  nets.emplace_back("builtin", build_single_intersection(DemandLevel::High));
  for (int k = 1; k <= 3; ++k) nets.emplace_back(fmt("random-%d", k), testing::random_network(700 + k, k + 1));
  std::size_t checked = 0, mismatches = 0;
  for (const auto& [name, cfg] : nets) {
    auto scenario = std::make_shared<const Scenario>(cfg);
    for (auto tier : {Tier::Tlc, Tier::TlcV2x, Tier::TlcV2xVsa}) {
      Environment env(scenario, tier);
      DecisionTick tick = env.reset(3);
      for (int k = 0; k < 40 && !tick.done; ++k) {
        std::vector<int> phases;
        for (const auto& node : cfg.network.intersections) phases.push_back((k / 3) % static_cast<int>(node.phases.size()));
        if (k % 5 == 0) {
          for (std::size_t i = 0; i < env.agents().size(); ++i) {
            const auto& spec = env.agents()[i];
            // Formula inputs re-derived from the raw document.
            const auto& node = cfg.network.intersections[spec.intersection];
            const std::size_t np = node.phases.size();
            const std::size_t nl = node.afferent_lanes.size();
            std::size_t expected = np + 4 * nl + 2;
            if (spec.layout != ObsLayout::Tlc) expected += 3 * nl;
            if (spec.layout == ObsLayout::TlcV2xVsaSignal || spec.layout == ObsLayout::VsaAdvice) expected += nl;
            ++checked;
            if (tick.observations[i].values.size() != expected || spec.obs_dim != expected) ++mismatches;
          }
        }
        tick = env.step(schedule_actions(env, phases));
      }
    }
  }
  return {mismatches == 0 && checked > 0,
          fmt("%zu observation vectors over %zu networks and 3 tiers, %zu mismatches", checked, nets.size(),
              mismatches)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "greenwave_acceptance_determinism";
  fs::remove_all(root);
  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "greenwave");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) std::cerr << err.str();
    return code;
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  int rc = call({"train", "--tier", "tlc", "--seeds", "1", "--episodes", "5", "--out", (root / "seed_run").string()});
  const auto manifest = (root / "seed_run" / "manifest.json").string();
  rc |= call({"train", "--manifest", manifest, "--out", (root / "a").string()});
  rc |= call({"train", "--manifest", manifest, "--out", (root / "b").string()});
  const auto a = slurp(root / "a" / "seed_1" / "metrics.csv");
  const auto b = slurp(root / "b" / "seed_1" / "metrics.csv");
  const auto original = slurp(root / "seed_run" / "seed_1" / "metrics.csv");
  const std::size_t rows = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  fs::remove_all(root);
  return {rc == 0 && !a.empty() && rows == 6 && a == b && a == original,
          fmt("two manifest replays: metrics.csv %s (%zu bytes, %zu lines), %s the original run",
              a == b ? "byte-identical" : "DIFFER", a.size(), rows, a == original ? "identical to" : "differs from")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace greenwave

int main(int argc, char** argv) {
  using namespace greenwave;
  const std::vector<Criterion> criteria = {
      {1, "reward oracle", reward_oracle},
      {2, "GAE oracle", gae_oracle},
      {3, "PPO gradient check", gradient_check},
      {4, "simulation invariants", simulation_invariants},
      {5, "tier nesting", tier_nesting},
      {6, "learning sanity (moderate demand)", learning_sanity},
      {7, "joint-control benefit (high demand)", joint_control},
      {8, "smoothing property (high demand)", smoothing},
      {9, "observation-shape audit", observation_audit},
      {10, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("C%-2d %s  %s [%.1f s]: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
    ++ran;
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
