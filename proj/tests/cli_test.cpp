#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "greenwave/cli.hpp"
#include "test_support.hpp"

namespace greenwave {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code = 0;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "greenwave");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("greenwave_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CliTest, ScenarioBuiltinHigh) {
  const auto r = invoke({"scenario", "--builtin", "single-intersection", "--demand", "high"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = load_scenario(r.out);
  double total = 0.0;
  for (const auto& [lane, vph] : cfg.demands) total += vph;
  EXPECT_DOUBLE_EQ(total, 2500.0);
}

TEST_F(CliTest, ScenarioToFile) {
  const auto path = (dir_ / "s.json").string();
  const auto r = invoke({"scenario", "--demand", "moderate", "--out", path});
  ASSERT_EQ(r.code, 0) << r.err;
  double total = 0.0;
  for (const auto& [lane, vph] : load_scenario_file(path).demands) total += vph;
  EXPECT_DOUBLE_EQ(total, 500.0);
}

TEST_F(CliTest, UsageErrors) {
  auto r = invoke({"scenario", "--demand", "extreme"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"train", "--tier", "nope", "--out", dir_.string()}).code, 2);
  EXPECT_EQ(invoke({"scenario", "--builtin", "roundabout"}).code, 2);
}

TEST_F(CliTest, MissingCheckpointsIsRuntimeFailure) {
  const auto r = invoke({"eval", "--checkpoints", (dir_ / "missing").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, ManifestRoundTrip) {
  cli::RunManifest m;
  m.scenario = {"single-intersection", "high", ""};
  m.tier = Tier::TlcV2xVsa;
  m.seeds = {3, 4, 5};
  m.profile = cli::Profile::Paper;
  m.episodes = 12;
  m.learning_rate = 3e-4;
  cli::seal_manifest(m, cli::resolve_scenario(m.scenario));
  EXPECT_EQ(m.scenario_hash.size(), 16u);
  EXPECT_EQ(m.config_hash.size(), 16u);
  const auto back = cli::manifest_from_json(cli::manifest_to_json(m));
  EXPECT_EQ(back, m);
  const auto doc = nlohmann::json::parse(cli::manifest_to_json(m));
  EXPECT_EQ(doc.at("version").get<int>(), cli::kSchemaVersion);
}

TEST_F(CliTest, ProfileSettings) {
  const auto desk = cli::profile_settings(cli::Profile::Desk);
  EXPECT_EQ(desk.hidden, (std::vector<std::size_t>{64, 64}));
  EXPECT_EQ(desk.episodes, 200);
  const auto paper = cli::profile_settings(cli::Profile::Paper);
  EXPECT_EQ(paper.episodes, 1400);
  EXPECT_DOUBLE_EQ(paper.learning_rate, 1e-5);
  EXPECT_EQ(cli::parse_profile("paper"), cli::Profile::Paper);
  EXPECT_FALSE(cli::parse_profile("laptop").has_value());
}

TEST_F(CliTest, TamperedManifestIsRejected) {
  cli::RunManifest m;
  m.scenario = {"single-intersection", "moderate", ""};
  m.seeds = {1};
  m.episodes = 1;
  cli::seal_manifest(m, cli::resolve_scenario(m.scenario));
  m.scenario_hash = "ffffffffffffffff";
  EXPECT_ANY_THROW(cli::run_train(m, dir_ / "run", nullptr));
}

TEST_F(CliTest, TrainEvalPlotPipeline) {
  const auto run_dir = dir_ / "run";
  auto r = invoke({"train", "--tier", "tlc-v2x-vsa", "--seeds", "2", "--episodes", "2", "--demand", "high", "--out",
                   run_dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(run_dir / "manifest.json"));
  const auto results = lines(slurp(run_dir / "results.csv"));
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[0], "scenario,tier,runs,mean_best_delay,std_best_delay,best_per_run");
  for (int seed : {1, 2}) {
    const auto seed_dir = run_dir / ("seed_" + std::to_string(seed));
    const auto metrics = lines(slurp(seed_dir / "metrics.csv"));
    ASSERT_EQ(metrics.size(), 3u);
    EXPECT_EQ(metrics[0], cli::metrics_csv_header());
    std::size_t ckpts = 0;
    for (const auto& e : fs::directory_iterator(seed_dir / "best")) ckpts += e.path().extension() == ".ckpt";
    EXPECT_EQ(ckpts, 2u);
  }

  const auto trace_path = dir_ / "trace.csv";
  r = invoke({"eval", "--checkpoints", (run_dir / "seed_1" / "best").string(), "--demand", "high", "--trace",
              trace_path.string(), "--out", (dir_ / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "eval" / "eval.csv"));
  std::ifstream trace_in(trace_path);
  const auto trace = cli::read_trace_csv(trace_in);
  ASSERT_FALSE(trace.empty());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i > 0) {
      const bool ordered = trace[i - 1].time < trace[i].time ||
                           (trace[i - 1].time == trace[i].time && trace[i - 1].vehicle_id < trace[i].vehicle_id);
      ASSERT_TRUE(ordered) << "row " << i;
    }
    ASSERT_GE(trace[i].route_progress, 0.0);
    ASSERT_LE(trace[i].route_progress, 1.0);
    const double a = trace[i].advice_norm;
    ASSERT_TRUE(a == -1.0 || (a >= 0.2 - 1e-12 && a <= 1.0)) << a;
  }

  r = invoke({"plotdata", "--trace", trace_path.string(), "--demand", "high", "--out", (dir_ / "fig").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto svg = slurp(dir_ / "fig.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("stop-line"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);

  r = invoke({"plotdata", "--trace", trace_path.string(), "--lane", "no_such_lane", "--out", (dir_ / "x").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, TraceCsvRoundTrip) {
  TraceRow row;
  row.time = 12.5;
  row.vehicle_id = 7;
  row.route_id = "we_0";
  row.lane_id = "we_in_0";
  row.pos = 123.456789;
  row.route_progress = 0.2057613;
  row.speed = 11.25;
  row.advice_norm = 0.85;
  row.tl_phase = 1;
  std::istringstream in(cli::trace_csv_header() + "\n" + cli::trace_csv_row(row) + "\n");
  const auto rows = cli::read_trace_csv(in);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].vehicle_id, 7u);
  EXPECT_EQ(rows[0].lane_id, "we_in_0");
  EXPECT_DOUBLE_EQ(rows[0].advice_norm, 0.85);
  EXPECT_EQ(rows[0].tl_phase, 1);
  EXPECT_EQ(cli::trace_csv_header(),
            "time_s,vehicle_id,route_id,lane_id,pos_m,route_progress_norm,speed_mps,advice_norm,tl_phase");
}

TEST_F(CliTest, PlotDatasetSortedAndFiltered) {
  Scenario scenario(build_single_intersection(DemandLevel::High));
  std::vector<TraceRow> trace;
  auto add = [&](double t, std::uint64_t id, const std::string& route, double progress) {
    TraceRow r;
    r.time = t;
    r.vehicle_id = id;
    r.route_id = route;
    r.lane_id = route.substr(0, 2) + "_in_" + route.substr(3);
    r.route_progress = progress;
    trace.push_back(r);
  };
  add(1.0, 5, "we_0", 0.1);
  add(1.0, 2, "we_0", 0.3);
  add(0.5, 5, "we_0", 0.05);
  add(1.0, 3, "ns_0", 0.2);
  add(1.0, 4, "we_1", 0.2);
  const auto points = cli::plot_dataset(trace, scenario, "we_in_0");
  ASSERT_EQ(points.size(), 3u);
  EXPECT_EQ(points[0].vehicle_id, 2u);
  EXPECT_EQ(points[1].vehicle_id, 5u);
  EXPECT_EQ(points[1].time, 0.5);
  EXPECT_EQ(points[2].time, 1.0);
  EXPECT_DOUBLE_EQ(cli::stop_line_progress(scenario, "we_in_0"), 0.5);
  EXPECT_ANY_THROW(cli::plot_dataset(trace, scenario, "bogus"));
}

TEST_F(CliTest, EmptyTraceGivesAxesOnlySvg) {
  Scenario scenario(build_single_intersection(DemandLevel::High));
  const auto points = cli::plot_dataset({}, scenario, "we_in_0");
  EXPECT_TRUE(points.empty());
  const auto svg = cli::render_svg(points, 0.5, "empty");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("stop-line"), std::string::npos);
}

TEST_F(CliTest, TlcTraceIsMonochrome) {
  std::vector<cli::PlotPoint> points;
  for (int v = 0; v < 3; ++v) {
    for (int k = 0; k < 4; ++k) points.push_back({static_cast<std::uint64_t>(v), k * 0.5, 0.1 * k + 0.05 * v, -1.0});
  }
  const auto svg = cli::render_svg(points, 0.5, "tlc");
  std::size_t polylines = 0, grey = 0;
  for (std::size_t at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) {
    ++polylines;
    grey += svg.compare(at, 31, "<polyline stroke=\"#4d4d4d\" poin") == 0;
  }
  EXPECT_GE(polylines, 3u);
  EXPECT_EQ(grey, polylines);
}

TEST_F(CliTest, ManifestReproducesMetrics) {
  cli::RunManifest m;
  m.scenario = {"single-intersection", "moderate", ""};
  m.tier = Tier::Tlc;
  m.seeds = {1};
  m.episodes = 2;
  cli::run_train(m, dir_ / "a", nullptr);
  const auto manifest_path = (dir_ / "a" / "manifest.json").string();
  const auto r = invoke({"train", "--manifest", manifest_path, "--out", (dir_ / "b").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "a" / "seed_1" / "metrics.csv"), slurp(dir_ / "b" / "seed_1" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "manifest.json"), slurp(dir_ / "b" / "manifest.json"));
}

}  // namespace
}  // namespace greenwave
