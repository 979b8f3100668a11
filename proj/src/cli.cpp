#include "greenwave/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace greenwave::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kBuiltinSingle = "single-intersection";

/// Bad argument values discovered after parsing; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int worker_threads(std::size_t jobs) {
  int cap = omp_get_max_threads();
  if (const char* env = std::getenv("GREENWAVE_THREADS")) {
    int v = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
      throw UsageError("GREENWAVE_THREADS must be a positive integer, got '" + std::string(s) + "'");
    }
    cap = v;
  }
  return std::max(1, std::min<int>(cap, static_cast<int>(jobs)));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error(std::string("malformed ") + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::optional<Profile> parse_profile(std::string_view text) {
  if (text == "desk") return Profile::Desk;
  if (text == "paper") return Profile::Paper;
  return std::nullopt;
}

std::string_view to_string(Profile profile) { return profile == Profile::Desk ? "desk" : "paper"; }

ProfileSettings profile_settings(Profile profile) {
  if (profile == Profile::Paper) return {{256, 256, 256, 256}, 1400, 1e-5};
  return {{64, 64}, 200, 1e-3};
}

ScenarioConfig resolve_scenario(const ScenarioSource& source) {
  if (!source.path.empty()) return load_scenario_file(source.path);
  if (source.builtin != kBuiltinSingle) throw UsageError("unknown builtin scenario '" + source.builtin + "'");
  const auto level = parse_demand_level(source.demand);
  if (!level) throw UsageError("unknown demand level '" + source.demand + "'");
  return build_single_intersection(*level);
}

// ---------------------------------------------------------------------------
// Manifest.

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["version"] = m.version;
  j["command"] = "train";
  json src;
  if (!m.scenario.path.empty()) {
    src["path"] = m.scenario.path;
  } else {
    src["builtin"] = m.scenario.builtin;
    src["demand"] = m.scenario.demand;
  }
  j["scenario"] = src;
  j["scenario_hash"] = m.scenario_hash;
  j["tier"] = std::string(to_string(m.tier));
  j["seeds"] = m.seeds;
  j["profile"] = std::string(to_string(m.profile));
  json overrides = json::object();
  if (m.episodes) overrides["episodes"] = *m.episodes;
  if (m.learning_rate) overrides["learning_rate"] = *m.learning_rate;
  j["overrides"] = overrides;
  j["config_hash"] = m.config_hash;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(std::string_view text) {
  RunManifest m;
  try {
    const json j = json::parse(text);
    m.version = j.at("version").get<int>();
    if (m.version != kSchemaVersion) {
      throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
    }
    const json& src = j.at("scenario");
    if (src.contains("path")) {
      m.scenario.path = src.at("path").get<std::string>();
    } else {
      m.scenario.builtin = src.at("builtin").get<std::string>();
      m.scenario.demand = src.at("demand").get<std::string>();
    }
    m.scenario_hash = j.value("scenario_hash", "");
    const auto tier = parse_tier(j.at("tier").get<std::string>());
    if (!tier) throw std::runtime_error("unknown tier in manifest");
    m.tier = *tier;
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    const auto profile = parse_profile(j.at("profile").get<std::string>());
    if (!profile) throw std::runtime_error("unknown profile in manifest");
    m.profile = *profile;
    if (j.contains("overrides")) {
      const json& o = j.at("overrides");
      if (o.contains("episodes")) m.episodes = o.at("episodes").get<int>();
      if (o.contains("learning_rate")) m.learning_rate = o.at("learning_rate").get<double>();
    }
    m.config_hash = j.value("config_hash", "");
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

TrainConfig resolve_train_config(const RunManifest& m) {
  const ProfileSettings p = profile_settings(m.profile);
  TrainConfig c;
  c.shape.hidden = p.hidden;
  c.ppo.episodes = m.episodes.value_or(p.episodes);
  c.ppo.learning_rate = m.learning_rate.value_or(p.learning_rate);
  return c;
}

namespace {

std::string training_key(const RunManifest& m) {
  const TrainConfig c = resolve_train_config(m);
  std::ostringstream k;
  k << "tier=" << to_string(m.tier) << ";seeds=";
  for (auto s : m.seeds) k << s << ',';
  k << ";hidden=";
  for (auto h : c.shape.hidden) k << h << ',';
  const PPOConfig& p = c.ppo;
  k << ";log_std=" << num(c.shape.initial_log_std) << ";lr=" << num(p.learning_rate) << ";episodes=" << p.episodes
    << ";clip=" << num(p.clip_ratio) << ";gamma=" << num(p.gamma) << ";lambda=" << num(p.gae_lambda)
    << ";epochs=" << p.epochs << ";minibatch=" << p.minibatch_size << ";vf=" << num(p.value_coef)
    << ";ent=" << num(p.entropy_coef) << ";rscale=" << num(p.reward_scale);
  return k.str();
}

}  // namespace

void seal_manifest(RunManifest& m, const ScenarioConfig& scenario) {
  m.scenario_hash = fnv1a_hex(serialize_scenario(scenario));
  m.config_hash = fnv1a_hex(training_key(m));
}

// ---------------------------------------------------------------------------
// CSV and checkpoints.

std::string metrics_csv_header() {
  return "episode,mean_reward,mean_delay,mean_delay_completed,completed,censored,clip_fraction,approx_kl,"
         "policy_loss,value_loss";
}

std::string metrics_csv_row(const EpisodeLog& l) {
  std::ostringstream s;
  s << l.episode << ',' << num(l.mean_reward) << ',' << num(l.metrics.mean_delay) << ','
    << num(l.metrics.mean_delay_completed) << ',' << l.metrics.completed << ',' << l.metrics.censored << ','
    << num(l.clip_fraction) << ',' << num(l.approx_kl) << ',' << num(l.policy_loss) << ',' << num(l.value_loss);
  return s.str();
}

std::string trace_csv_header() {
  return "time_s,vehicle_id,route_id,lane_id,pos_m,route_progress_norm,speed_mps,advice_norm,tl_phase";
}

std::string trace_csv_row(const TraceRow& r) {
  std::ostringstream s;
  s << num(r.time) << ',' << r.vehicle_id << ',' << r.route_id << ',' << r.lane_id << ',' << num(r.pos) << ','
    << num(r.route_progress) << ',' << num(r.speed) << ',' << num(r.advice_norm) << ',' << r.tl_phase;
  return s.str();
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  if (line != trace_csv_header()) throw std::runtime_error("trace has an unexpected header: '" + line + "'");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 9) throw std::runtime_error("trace row has " + std::to_string(c.size()) + " columns");
    TraceRow r;
    r.time = parse_number<double>(c[0], "time");
    r.vehicle_id = parse_number<std::uint64_t>(c[1], "vehicle id");
    r.route_id = c[2];
    r.lane_id = c[3];
    r.pos = parse_number<double>(c[4], "position");
    r.route_progress = parse_number<double>(c[5], "route progress");
    r.speed = parse_number<double>(c[6], "speed");
    r.advice_norm = parse_number<double>(c[7], "advice");
    r.tl_phase = parse_number<int>(c[8], "phase");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string checkpoint_filename(const std::string& agent_id) {
  std::string name = agent_id;
  std::replace(name.begin(), name.end(), ':', '_');
  return name + ".ckpt";
}

std::vector<Checkpoint> load_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
  }
  if (files.empty()) throw std::runtime_error("no checkpoints in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<Checkpoint> out;
  for (const auto& f : files) out.push_back(parse_checkpoint(read_file(f)));
  return out;
}

// ---------------------------------------------------------------------------
// Training.

void run_train(const RunManifest& manifest, const fs::path& out, std::ostream* progress) {
  if (manifest.seeds.empty()) throw UsageError("at least one seed is required");
  const ScenarioConfig config = resolve_scenario(manifest.scenario);
  RunManifest sealed = manifest;
  seal_manifest(sealed, config);
  if (!manifest.scenario_hash.empty() && manifest.scenario_hash != sealed.scenario_hash) {
    throw std::runtime_error("scenario differs from the one recorded in the manifest");
  }
  if (!manifest.config_hash.empty() && manifest.config_hash != sealed.config_hash) {
    throw std::runtime_error("training configuration differs from the one recorded in the manifest");
  }

  fs::create_directories(out);
  write_file(out / "manifest.json", manifest_to_json(sealed));

  auto scenario = std::make_shared<const Scenario>(config);
  TrainConfig tc = resolve_train_config(sealed);
  tc.threads = worker_threads(sealed.seeds.size());

  EpisodeCallback callback;
  if (progress != nullptr) {
    const int total = tc.ppo.episodes;
    callback = [progress, total](std::uint64_t seed, const EpisodeLog& log) {
      if ((log.episode + 1) % 10 == 0 || log.episode + 1 == total) {
        *progress << "seed " << seed << " episode " << log.episode + 1 << '/' << total << " mean_delay "
                  << log.metrics.mean_delay << '\n';
      }
    };
  }
  const auto runs = train(scenario, sealed.tier, tc, sealed.seeds, callback);

  std::vector<RunSummary> summaries;
  for (const auto& run : runs) {
    const fs::path dir = out / ("seed_" + std::to_string(run.seed));
    fs::create_directories(dir / "best");
    fs::create_directories(dir / "final");
    std::string csv = metrics_csv_header() + "\n";
    for (const auto& log : run.log) csv += metrics_csv_row(log) + "\n";
    write_file(dir / "metrics.csv", csv);
    for (const auto& a : run.best_agents) {
      write_file(dir / "best" / checkpoint_filename(a.spec.id), serialize_checkpoint(make_checkpoint(a, sealed.tier)));
    }
    for (const auto& a : run.final_agents) {
      write_file(dir / "final" / checkpoint_filename(a.spec.id), serialize_checkpoint(make_checkpoint(a, sealed.tier)));
    }
    summaries.push_back(run.summary);
  }

  const Aggregate agg = aggregate(summaries);
  std::ostringstream results;
  results << "scenario,tier,runs,mean_best_delay,std_best_delay,best_per_run\n";
  results << config.name << ',' << to_string(sealed.tier) << ',' << runs.size() << ',' << num(agg.mean) << ','
          << (agg.std_defined ? num(agg.std) : std::string()) << ',';
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0) results << ';';
    results << num(runs[i].summary.best_episode_delay);
  }
  results << '\n';
  write_file(out / "results.csv", results.str());
}

// ---------------------------------------------------------------------------
// Plot data.

std::vector<PlotPoint> plot_dataset(std::span<const TraceRow> trace, const Scenario& scenario, const std::string& lane) {
  const auto it = scenario.topo.lane_index.find(lane);
  if (it == scenario.topo.lane_index.end()) throw UsageError("unknown lane id '" + lane + "'");
  std::set<std::string> routes;
  for (const auto& r : scenario.topo.routes) {
    if (std::find(r.lanes.begin(), r.lanes.end(), it->second) != r.lanes.end()) routes.insert(r.id);
  }
  std::vector<PlotPoint> out;
  for (const auto& row : trace) {
    if (routes.count(row.route_id) != 0) out.push_back({row.vehicle_id, row.time, row.route_progress, row.advice_norm});
  }
  std::stable_sort(out.begin(), out.end(), [](const PlotPoint& a, const PlotPoint& b) {
    return a.vehicle_id != b.vehicle_id ? a.vehicle_id < b.vehicle_id : a.time < b.time;
  });
  return out;
}

double stop_line_progress(const Scenario& scenario, const std::string& lane) {
  const auto it = scenario.topo.lane_index.find(lane);
  if (it == scenario.topo.lane_index.end()) throw UsageError("unknown lane id '" + lane + "'");
  for (const auto& r : scenario.topo.routes) {
    const auto pos = std::find(r.lanes.begin(), r.lanes.end(), it->second);
    if (pos == r.lanes.end()) continue;
    for (auto k = static_cast<std::size_t>(pos - r.lanes.begin()); k < r.lanes.size(); ++k) {
      const LaneInfo& info = scenario.topo.lanes[r.lanes[k]];
      if (info.intersection >= 0) return (r.lane_offset[k] + info.length) / r.length;
    }
    return -1.0;
  }
  return -1.0;
}

namespace {

std::string advice_colour(double advice_norm) {
  if (advice_norm < 0.0) return "#4d4d4d";
  // Nine bins from strong advice (red) to advice at the limit (green).
  const double t = std::clamp((advice_norm - kAdviceFloorFraction) / (1.0 - kAdviceFloorFraction), 0.0, 1.0);
  const double bin = std::round(t * 8.0) / 8.0;
  const int r = static_cast<int>(std::lround(215 + (26 - 215) * bin));
  const int g = static_cast<int>(std::lround(48 + (152 - 48) * bin));
  const int b = static_cast<int>(std::lround(39 + (80 - 39) * bin));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string render_svg(std::span<const PlotPoint> points, double stop_line, const std::string& title) {
  constexpr double W = 800, H = 500, L = 70, R = 150, T = 40, B = 60;
  double t0 = 0.0, t1 = 1.0;
  if (!points.empty()) {
    t0 = t1 = points.front().time;
    for (const auto& p : points) {
      t0 = std::min(t0, p.time);
      t1 = std::max(t1, p.time);
    }
    if (t1 <= t0) t1 = t0 + 1.0;
  }
  auto sx = [&](double t) { return L + (t - t0) / (t1 - t0) * (W - L - R); };
  auto sy = [&](double p) { return H - B - std::clamp(p, 0.0, 1.0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  s << "<g stroke=\"black\" stroke-width=\"1\">\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\"/>\n";
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double t = t0 + (t1 - t0) * i / 5.0;
    const double p = i / 5.0;
    s << "<line x1=\"" << sx(t) << "\" y1=\"" << H - B << "\" x2=\"" << sx(t) << "\" y2=\"" << H - B + 5
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << sx(t) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << std::lround(t)
      << "</text>\n";
    s << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(p) << "\" x2=\"" << L << "\" y2=\"" << sy(p)
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << L - 8 << "\" y=\"" << sy(p) + 4 << "\" text-anchor=\"end\">" << num(p) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">time [s]</text>\n";
  s << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (T + H - B) / 2 << ")\">route progress</text>\n";
  s << "</g>\n";

  if (stop_line >= 0.0) {
    s << "<line class=\"stop-line\" x1=\"" << L << "\" y1=\"" << sy(stop_line) << "\" x2=\"" << W - R << "\" y2=\""
      << sy(stop_line) << "\" stroke=\"#b2182b\" stroke-dasharray=\"6 4\" stroke-width=\"1.5\"/>\n";
    s << "<text x=\"" << W - R + 6 << "\" y=\"" << sy(stop_line) + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#b2182b\">stop line</text>\n";
  }

  s << "<g fill=\"none\" stroke-width=\"1.2\">\n";
  std::size_t i = 0;
  while (i < points.size()) {
    std::size_t j = i + 1;
    const std::string colour = advice_colour(points[i].advice_norm);
    while (j < points.size() && points[j].vehicle_id == points[i].vehicle_id &&
           advice_colour(points[j - 1].advice_norm) == colour) {
      ++j;
    }
    // Include the next point of the same vehicle so consecutive runs join.
    const std::size_t end = (j < points.size() && points[j].vehicle_id == points[i].vehicle_id) ? j + 1 : j;
    s << "<polyline stroke=\"" << colour << "\" points=\"";
    for (std::size_t k = i; k < end; ++k) s << (k > i ? " " : "") << sx(points[k].time) << ',' << sy(points[k].progress);
    s << "\"/>\n";
    i = j;
  }
  s << "</g>\n";

  s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 10 << "\">advice / limit</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double a = kAdviceFloorFraction + (1.0 - kAdviceFloorFraction) * (4 - k) / 4.0;
    const double y = T + 25 + 18 * k;
    s << "<rect x=\"" << W - R + 10 << "\" y=\"" << y - 9 << "\" width=\"14\" height=\"10\" fill=\"" << advice_colour(a)
      << "\"/><text x=\"" << W - R + 30 << "\" y=\"" << y << "\">" << num(a) << "</text>\n";
  }
  s << "<rect x=\"" << W - R + 10 << "\" y=\"" << T + 25 + 18 * 5 - 9 << "\" width=\"14\" height=\"10\" fill=\""
    << advice_colour(-1.0) << "\"/><text x=\"" << W - R + 30 << "\" y=\"" << T + 25 + 18 * 5
    << "\">no advice</text>\n";
  s << "</g>\n</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Command line.

namespace {

struct ScenarioFlags {
  std::string path;
  std::string builtin;
  std::string demand = "high";

  void add(CLI::App& app) {
    auto* p = app.add_option("--scenario", path, "Scenario JSON file")->check(CLI::ExistingFile);
    auto* b = app.add_option("--builtin", builtin, "Built-in scenario")->check(CLI::IsMember({std::string(kBuiltinSingle)}));
    app.add_option("--demand", demand, "Demand level of the built-in scenario")
        ->check(CLI::IsMember({"low", "moderate", "high"}))
        ->capture_default_str();
    p->excludes(b);
  }

  ScenarioSource source() const {
    if (!path.empty()) return {"", "", path};
    return {builtin.empty() ? std::string(kBuiltinSingle) : builtin, demand, ""};
  }
};

int cmd_scenario(const ScenarioFlags& flags, const std::string& out_path, std::ostream& out) {
  const std::string text = serialize_scenario(resolve_scenario(flags.source()));
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
  return 0;
}

int cmd_eval(const ScenarioFlags& flags, const std::string& checkpoint_dir, const std::string& tier_name,
             int episodes, std::uint64_t seed, const std::string& out_dir, const std::string& trace_path,
             std::ostream& out) {
  const auto checkpoints = load_checkpoints(checkpoint_dir);
  Tier tier = checkpoints.front().tier;
  if (!tier_name.empty()) tier = *parse_tier(tier_name);
  auto scenario = std::make_shared<const Scenario>(resolve_scenario(flags.source()));

  std::ofstream trace;
  StepObserver observer;
  int episode_counter = 0;
  if (!trace_path.empty()) {
    trace.open(trace_path, std::ios::binary);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);
    trace << trace_csv_header() << '\n';
    observer = [&](const SimState& state) {
      if (state.step_count == 1) ++episode_counter;
      if (episode_counter != 1) return;  // first episode only
      for (const auto& row : trace_rows(state)) trace << trace_csv_row(row) << '\n';
    };
  }
  const auto results = evaluate(scenario, tier, checkpoints, episodes, seed, observer);

  std::ostringstream csv;
  csv << "episode,mean_delay,mean_delay_completed,mean_trip_time,completed,censored\n";
  double total = 0.0;
  for (std::size_t e = 0; e < results.size(); ++e) {
    const auto& m = results[e].metrics;
    csv << e << ',' << num(m.mean_delay) << ',' << num(m.mean_delay_completed) << ',' << num(m.mean_trip_time) << ','
        << m.completed << ',' << m.censored << '\n';
    total += m.mean_delay;
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "eval.csv", csv.str());
  } else {
    out << csv.str();
  }
  out << "mean delay over " << results.size() << " episode(s): " << total / static_cast<double>(results.size())
      << " s\n";
  return 0;
}

int cmd_plotdata(const ScenarioFlags& flags, const std::string& trace_path, const std::string& lane,
                 const std::string& out_prefix, std::ostream& out) {
  const Scenario scenario(resolve_scenario(flags.source()));
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + trace_path);
  const auto rows = read_trace_csv(in);
  const auto points = plot_dataset(rows, scenario, lane);
  std::ostringstream csv;
  csv << "vehicle_id,time_s,route_progress_norm,advice_norm\n";
  for (const auto& p : points) csv << p.vehicle_id << ',' << num(p.time) << ',' << num(p.progress) << ',' << num(p.advice_norm) << '\n';
  write_file(out_prefix + ".csv", csv.str());
  write_file(out_prefix + ".svg", render_svg(points, stop_line_progress(scenario, lane), "Route progress via " + lane));
  out << points.size() << " points written to " << out_prefix << ".csv and " << out_prefix << ".svg\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic signal and speed advice control with independent PPO learners"};
  app.require_subcommand(1);

  auto* scenario_cmd = app.add_subcommand("scenario", "Write a scenario document");
  ScenarioFlags scenario_flags;
  std::string scenario_out;
  scenario_flags.add(*scenario_cmd);
  scenario_cmd->add_option("--out", scenario_out, "Output file (stdout when omitted)");

  auto* train_cmd = app.add_subcommand("train", "Train agents for one or more seeds");
  ScenarioFlags train_flags;
  train_flags.add(*train_cmd);
  std::string train_tier = "tlc", profile_name = "desk", train_out, manifest_path;
  int seeds = 1;
  std::uint64_t seed_base = 1;
  std::optional<int> episodes;
  std::optional<double> learning_rate;
  auto* tier_opt = train_cmd->add_option("--tier", train_tier, "Agent tier")
                       ->check(CLI::IsMember({"tlc", "tlc-v2x", "tlc-v2x-vsa"}))
                       ->capture_default_str();
  auto* seeds_opt = train_cmd->add_option("--seeds", seeds, "Number of training seeds")
                        ->check(CLI::PositiveNumber)
                        ->capture_default_str();
  auto* base_opt = train_cmd->add_option("--seed-base", seed_base, "First seed")->capture_default_str();
  auto* profile_opt = train_cmd->add_option("--profile", profile_name, "Hyperparameter profile")
                          ->check(CLI::IsMember({"desk", "paper"}))
                          ->capture_default_str();
  auto* episodes_opt = train_cmd->add_option("--episodes", episodes, "Override the episode count")->check(CLI::PositiveNumber);
  auto* lr_opt = train_cmd->add_option("--lr", learning_rate, "Override the learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  auto* manifest_opt = train_cmd->add_option("--manifest", manifest_path, "Re-run from a manifest.json")
                           ->check(CLI::ExistingFile);
  for (auto* o : {tier_opt, seeds_opt, base_opt, profile_opt, episodes_opt, lr_opt}) manifest_opt->excludes(o);
  manifest_opt->excludes("--scenario")->excludes("--builtin")->excludes("--demand");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints with the deterministic policy");
  ScenarioFlags eval_flags;
  eval_flags.add(*eval_cmd);
  std::string checkpoint_dir, eval_tier, eval_out, trace_path;
  int eval_episodes = 1;
  std::uint64_t eval_seed = 1;
  eval_cmd->add_option("--checkpoints", checkpoint_dir, "Directory of .ckpt files")->required();
  eval_cmd->add_option("--tier", eval_tier, "Agent tier (default: from the checkpoints)")
      ->check(CLI::IsMember({"tlc", "tlc-v2x", "tlc-v2x-vsa"}));
  eval_cmd->add_option("--episodes", eval_episodes, "Evaluation episodes")->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Output directory for eval.csv (stdout when omitted)");
  eval_cmd->add_option("--trace", trace_path, "Write a per-step trace CSV of the first episode");

  auto* plot_cmd = app.add_subcommand("plotdata", "Extract a route-progress dataset and SVG from a trace");
  ScenarioFlags plot_flags;
  plot_flags.add(*plot_cmd);
  std::string plot_trace, plot_lane = "we_in_0", plot_out = "plot";
  plot_cmd->add_option("--trace", plot_trace, "Trace CSV")->required();
  plot_cmd->add_option("--lane", plot_lane, "Lane whose routes are plotted")->capture_default_str();
  plot_cmd->add_option("--out", plot_out, "Output prefix for .csv and .svg")->capture_default_str();

  auto usage_of = [&]() -> std::string {
    for (auto* sub : app.get_subcommands({})) {
      if (sub->parsed()) return sub->help();
    }
    return app.help();
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << usage_of();
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << usage_of();
    return 2;
  }

  try {
    if (scenario_cmd->parsed()) return cmd_scenario(scenario_flags, scenario_out, out);
    if (train_cmd->parsed()) {
      RunManifest m;
      if (!manifest_path.empty()) {
        m = manifest_from_json(read_file(manifest_path));
      } else {
        m.scenario = train_flags.source();
        m.tier = *parse_tier(train_tier);
        m.profile = *parse_profile(profile_name);
        for (int i = 0; i < seeds; ++i) m.seeds.push_back(seed_base + static_cast<std::uint64_t>(i));
        m.episodes = episodes;
        m.learning_rate = learning_rate;
      }
      run_train(m, train_out, &err);
      out << "wrote " << train_out << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags, checkpoint_dir, eval_tier, eval_episodes, eval_seed, eval_out, trace_path, out);
    }
    if (plot_cmd->parsed()) return cmd_plotdata(plot_flags, plot_trace, plot_lane, plot_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << usage_of();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace greenwave::cli
