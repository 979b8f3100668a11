#include <gtest/gtest.h>

#include <json.hpp>

#include "greenwave/netmodel.hpp"
#include "test_support.hpp"

namespace greenwave {
namespace {

using nlohmann::json;

json builtin_doc() { return json::parse(serialize_scenario(build_single_intersection(DemandLevel::High))); }

std::string load_error(const json& doc) {
  try {
    load_scenario(doc.dump());
  } catch (const ScenarioError& e) {
    return e.what();
  }
  return "";
}

TEST(Netmodel, BuiltinShape) {
  const Scenario s(build_single_intersection(DemandLevel::Moderate));
  ASSERT_EQ(s.topo.intersections.size(), 1u);
  EXPECT_EQ(s.topo.intersections[0].num_phases(), 2u);
  EXPECT_EQ(s.topo.intersections[0].num_slots(), 4u);
  EXPECT_EQ(s.config.network.intersections[0].min_green, 8.0);
  EXPECT_EQ(s.config.network.intersections[0].amber_duration, 2.0);
}

TEST(Netmodel, BuiltinDemandSplit) {
  const std::pair<DemandLevel, double> cases[] = {
      {DemandLevel::Low, 70.0}, {DemandLevel::Moderate, 500.0}, {DemandLevel::High, 2500.0}};
  for (const auto& [level, total] : cases) {
    const auto cfg = build_single_intersection(level);
    double sum = 0.0;
    for (const auto& [lane, vph] : cfg.demands) {
      EXPECT_DOUBLE_EQ(vph, total / 4.0) << lane;
      sum += vph;
    }
    EXPECT_DOUBLE_EQ(sum, total);
  }
  EXPECT_DOUBLE_EQ(build_single_intersection(DemandLevel::High).demands.at("we_in_0"), 625.0);
}

TEST(Netmodel, DemandLevelParsing) {
  EXPECT_EQ(parse_demand_level("moderate"), DemandLevel::Moderate);
  EXPECT_FALSE(parse_demand_level("extreme").has_value());
  EXPECT_EQ(to_string(DemandLevel::Low), "low");
}

TEST(Netmodel, ShortLaneFlag) {
  json doc = builtin_doc();
  doc["lanes"][0]["length"] = 10.0;
  const ScenarioConfig cfg = load_scenario(doc.dump());
  EXPECT_TRUE(cfg.network.lanes[0].is_short);
  EXPECT_FALSE(cfg.network.lanes[1].is_short);
}

TEST(Netmodel, UnknownKeyIsNamed) {
  json doc = builtin_doc();
  doc["lanes"][2]["colour"] = "blue";
  const std::string msg = load_error(doc);
  EXPECT_NE(msg.find("schema violation"), std::string::npos) << msg;
  EXPECT_NE(msg.find("colour"), std::string::npos) << msg;
}

TEST(Netmodel, MissingKeyIsNamed) {
  json doc = builtin_doc();
  doc["lanes"][1].erase("speed_limit");
  const std::string msg = load_error(doc);
  EXPECT_NE(msg.find("schema violation"), std::string::npos) << msg;
  EXPECT_NE(msg.find("speed_limit"), std::string::npos) << msg;
}

TEST(Netmodel, DanglingLaneReference) {
  json doc = builtin_doc();
  doc["routes"][0]["lanes"][1] = "nowhere";
  const std::string msg = load_error(doc);
  EXPECT_NE(msg.find("dangling lane reference"), std::string::npos) << msg;
  EXPECT_NE(msg.find("nowhere"), std::string::npos) << msg;
}

TEST(Netmodel, ConflictingGreen) {
  json doc = builtin_doc();
  doc["intersections"][0]["phases"][0]["we_in_0"] = "green";
  EXPECT_NE(load_error(doc).find("conflicting-green"), std::string::npos);
}

TEST(Netmodel, DecisionIntervalMustBeMultipleOfDt) {
  json doc = builtin_doc();
  doc["simulation"]["decision_interval"] = 1.25;
  doc["simulation"]["dt"] = 0.5;
  EXPECT_FALSE(load_error(doc).empty());
}

TEST(Netmodel, RejectsBadTiming) {
  json doc = builtin_doc();
  doc["intersections"][0]["min_green"] = 1.0;
  EXPECT_FALSE(load_error(doc).empty());
  doc = builtin_doc();
  doc["intersections"][0]["phases"].erase(1);
  EXPECT_FALSE(load_error(doc).empty());
}

TEST(Netmodel, RejectsDisconnectedRoute) {
  json doc = builtin_doc();
  doc["routes"][0]["lanes"] = {"ns_in_0", "we_out_0"};
  EXPECT_FALSE(load_error(doc).empty());
}

TEST(Netmodel, RoundTrip) {
  for (auto level : {DemandLevel::Low, DemandLevel::High}) {
    const auto cfg = build_single_intersection(level);
    EXPECT_EQ(load_scenario(serialize_scenario(cfg)), cfg);
  }
  const auto hand = testing::short_lane_network();
  EXPECT_EQ(load_scenario(serialize_scenario(hand)), hand);
  const auto random = testing::random_network(7, 2);
  EXPECT_EQ(load_scenario(serialize_scenario(random)), random);
}

TEST(Netmodel, FreeFlowTimeBase) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto cfg = testing::random_network(seed, 2);
    for (const auto& route : cfg.network.routes) {
      double expected = 0.0;
      for (const auto& id : route.lanes) {
        for (const auto& lane : cfg.network.lanes) {
          if (lane.id == id) expected += lane.length / lane.speed_limit;
        }
      }
      EXPECT_NEAR(route.free_flow_time_base, expected, 1e-9 * expected);
    }
  }
}

TEST(Netmodel, EffectiveAfferentLanesWithoutShortLanes) {
  const auto cfg = build_single_intersection(DemandLevel::Low);
  const auto& node = cfg.network.intersections[0];
  const auto slots = effective_afferent_lanes(node, cfg.network);
  ASSERT_EQ(slots.size(), node.afferent_lanes.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    EXPECT_EQ(slots[i].lane, node.afferent_lanes[i]);
    EXPECT_EQ(slots[i].slot, i);
  }
}

TEST(Netmodel, EffectiveAfferentLanesShortLaneWithTwoPredecessors) {
  const auto cfg = testing::short_lane_network();
  const auto slots = effective_afferent_lanes(cfg.network.intersections[0], cfg.network);
  ASSERT_EQ(slots.size(), 4u);
  EXPECT_EQ(slots[0].lane, "a_short");
  EXPECT_EQ(slots[1].lane, "p0");
  EXPECT_EQ(slots[2].lane, "p1");
  EXPECT_EQ(slots[3].lane, "b_in");
  EXPECT_EQ(slots[0].slot, 0u);
  EXPECT_EQ(slots[1].slot, 0u);
  EXPECT_EQ(slots[2].slot, 0u);
  EXPECT_EQ(slots[3].slot, 1u);
}

TEST(Netmodel, EffectiveAfferentLanesIsStable) {
  const auto cfg = testing::random_network(11, 3);
  for (const auto& node : cfg.network.intersections) {
    const auto a = effective_afferent_lanes(node, cfg.network);
    const auto b = effective_afferent_lanes(node, cfg.network);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].lane, b[i].lane);
      EXPECT_EQ(a[i].slot, b[i].slot);
    }
  }
}

TEST(Netmodel, SlotGeometry) {
  const Scenario s(testing::short_lane_network());
  const auto& info = s.topo.intersections[0];
  ASSERT_EQ(info.num_slots(), 2u);
  const Slot& a = info.slots[0];
  EXPECT_TRUE(a.is_short);
  EXPECT_EQ(a.lanes.size(), 3u);
  // 10 m + longest predecessor (100 m); capacity sums floor(len / 7.5) per lane.
  EXPECT_DOUBLE_EQ(a.geometry_length, 110.0);
  EXPECT_EQ(a.capacity, 1 + 13 + 10);
  EXPECT_FALSE(info.slots[1].is_short);
  EXPECT_EQ(info.slots[1].capacity, 26);
}

TEST(Netmodel, TopologyLaneOrderMatchesConfig) {
  const Scenario s(testing::random_network(3, 2));
  ASSERT_EQ(s.topo.lanes.size(), s.config.network.lanes.size());
  for (std::size_t i = 0; i < s.topo.lanes.size(); ++i) EXPECT_EQ(s.topo.lanes[i].id, s.config.network.lanes[i].id);
}

}  // namespace
}  // namespace greenwave
