#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "greenwave/envorch.hpp"

namespace greenwave::cli {

/// Bumped whenever a CSV header or the manifest layout changes.
inline constexpr int kSchemaVersion = 1;

enum class Profile { Desk, Paper };

std::optional<Profile> parse_profile(std::string_view text);
std::string_view to_string(Profile profile);

struct ProfileSettings {
  std::vector<std::size_t> hidden;
  int episodes = 0;
  double learning_rate = 0.0;
};

ProfileSettings profile_settings(Profile profile);

/// Either a built-in scenario (name + demand level) or a scenario file.
struct ScenarioSource {
  std::string builtin;
  std::string demand;
  std::string path;

  bool operator==(const ScenarioSource&) const = default;
};

ScenarioConfig resolve_scenario(const ScenarioSource& source);

struct RunManifest {
  int version = kSchemaVersion;
  ScenarioSource scenario;
  std::string scenario_hash;
  Tier tier = Tier::Tlc;
  std::vector<std::uint64_t> seeds;
  Profile profile = Profile::Desk;
  std::optional<int> episodes;
  std::optional<double> learning_rate;
  std::string config_hash;

  bool operator==(const RunManifest&) const = default;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(std::string_view text);

TrainConfig resolve_train_config(const RunManifest& manifest);
/// Fills scenario_hash and config_hash from the resolved inputs.
void seal_manifest(RunManifest& manifest, const ScenarioConfig& scenario);

/// Output layout:
///   manifest.json, results.csv,
///   seed_<s>/metrics.csv, seed_<s>/best/*.ckpt, seed_<s>/final/*.ckpt
void run_train(const RunManifest& manifest, const std::filesystem::path& out, std::ostream* progress);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpisodeLog& log);

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& row);
std::vector<TraceRow> read_trace_csv(std::istream& in);

std::string checkpoint_filename(const std::string& agent_id);
std::vector<Checkpoint> load_checkpoints(const std::filesystem::path& dir);

struct PlotPoint {
  std::uint64_t vehicle_id = 0;
  double time = 0.0;
  double progress = 0.0;
  double advice_norm = -1.0;
};

/// Rows of `trace` whose route passes through `lane`, ordered by (vehicle, time).
std::vector<PlotPoint> plot_dataset(std::span<const TraceRow> trace, const Scenario& scenario, const std::string& lane);
/// Route progress of the stop line at the end of `lane` on the first route using it.
double stop_line_progress(const Scenario& scenario, const std::string& lane);
std::string render_svg(std::span<const PlotPoint> points, double stop_line, const std::string& title);

/// Entry point; returns the process exit code (0 ok, 1 runtime failure, 2 usage error).
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace greenwave::cli
