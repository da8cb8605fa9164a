#include <gtest/gtest.h>

#include "tdm/demand.hpp"
#include "tdm/rng.hpp"

namespace {

using namespace tdm;

// Star network: H <-> D1, D2 with per-node towers TH, T1, T2.
RoadNetwork star() {
    RoadNetwork net;
    for (const char* n : {"H", "D1", "D2"}) net.add_node(n);
    net.add_link({"LH1", "H", "D1", 1, 500, 10, -1});
    net.add_link({"L1H", "D1", "H", 1, 500, 10, -1});
    net.add_link({"LH2", "H", "D2", 1, 500, 12, -1});
    net.add_link({"L2H", "D2", "H", 1, 500, 12, -1});
    net.map_tower("TH", "H");
    net.map_tower("T1", "D1");
    net.map_tower("T2", "D2");
    return net;
}

std::int64_t at_hour(int hour, int minute) { return std::int64_t(hour) * 3600 + minute * 60; }

TEST(ExtractOd, BinsByDepartureTimestamp) {
    const RoadNetwork net = star();
    const Trajectory t{"u1", {{"TH", at_hour(8, 10)}, {"T1", at_hour(8, 40)}}, "FR"};
    const auto od = extract_od(std::vector<Trajectory>{t}, net);
    ASSERT_EQ(od.size(), 1u);
    EXPECT_EQ(od[0].time_bin, 8);
    EXPECT_EQ(od[0].entries.at({"H", "D1"}), 1.0);
}

TEST(ExtractOd, AllEventsAtOneNodeContributeNothing) {
    const RoadNetwork net = star();
    // distinct towers but same node would also be skipped; here a single tower
    const Trajectory t{"u1", {{"TH", 10}, {"TH", 400}}, "FR"};
    EXPECT_TRUE(extract_od(std::vector<Trajectory>{t}, net).empty());
}

TEST(ExtractOd, TwoTripsInDifferentHours) {
    const RoadNetwork net = star();
    const Trajectory t{
        "u1", {{"TH", at_hour(8, 0)}, {"T1", at_hour(8, 30)}, {"TH", at_hour(14, 0)}}, "FR"};
    // first pair departs at 8; second pair (T1 -> TH) departs at the T1 visit (8:30)
    const auto od = extract_od(std::vector<Trajectory>{t}, net);
    ASSERT_EQ(od.size(), 1u);
    EXPECT_EQ(od[0].entries.at({"H", "D1"}), 1.0);
    EXPECT_EQ(od[0].entries.at({"D1", "H"}), 1.0);

    const Trajectory t2{"u2", {{"TH", at_hour(9, 0)}, {"T2", at_hour(10, 30)}}, "FR"};
    const auto od2 = extract_od(std::vector<Trajectory>{t2}, net);
    ASSERT_EQ(od2.size(), 1u);
    EXPECT_EQ(od2[0].time_bin, 9);
}

TEST(ExtractOd, TripTotalEqualsDistinctNodePairs) {
    const RoadNetwork net = star();
    Rng rng(8);
    std::vector<Trajectory> trajectories;
    const char* towers[] = {"TH", "T1", "T2"};
    std::size_t expected = 0;
    for (int u = 0; u < 30; ++u) {
        Trajectory t;
        t.user_id = "u" + std::to_string(u);
        std::int64_t ts = rng.uniform_int(0, 3600);
        int prev = -1;
        const int len = int(rng.uniform_int(1, 12));
        for (int i = 0; i < len; ++i) {
            const int tower = int(rng.uniform_int(0, 2));
            t.visits.push_back({towers[tower], ts});
            ts += rng.uniform_int(60, 7200);
            if (prev >= 0 && tower != prev) ++expected;
            prev = tower;
        }
        trajectories.push_back(std::move(t));
    }
    const auto od = extract_od(trajectories, net);
    double total = 0;
    for (const auto& m : od)
        for (const auto& [k, v] : m.entries) total += v;
    EXPECT_EQ(total, double(expected));
}

TEST(ExtractOd, UnmappedTowerThrows) {
    const RoadNetwork net = star();
    const Trajectory t{"u1", {{"TX", 0}, {"TH", 10}}, "FR"};
    EXPECT_THROW(extract_od(std::vector<Trajectory>{t}, net), DomainError);
}

TEST(AssignOd, SingleOdPairHitsEveryRouteLink) {
    RoadNetwork net;
    for (const char* n : {"A", "B", "C"}) net.add_node(n);
    net.add_link({"L1", "A", "B", 1, 100, 5, -1});
    net.add_link({"L2", "B", "C", 1, 100, 5, -1});
    OdMatrix od;
    od.time_bin = 8;
    od.entries[{"A", "C"}] = 5;
    const auto result = assign_od_to_links(std::vector<OdMatrix>{od}, net);
    EXPECT_EQ(result.flows.at({"L1", 8}), 5.0);
    EXPECT_EQ(result.flows.at({"L2", 8}), 5.0);
    EXPECT_TRUE(result.exclusions.empty());
}

TEST(AssignOd, EmptyOdGivesNoFlows) {
    const RoadNetwork net = star();
    EXPECT_TRUE(assign_od_to_links({}, net).flows.empty());
}

TEST(AssignOd, SharedLinkSumsFlows) {
    RoadNetwork net;
    for (const char* n : {"A", "B", "C"}) net.add_node(n);
    net.add_link({"L1", "A", "B", 1, 100, 5, -1});
    net.add_link({"L2", "B", "C", 1, 100, 5, -1});
    OdMatrix od;
    od.time_bin = 0;
    od.entries[{"A", "B"}] = 3;
    od.entries[{"A", "C"}] = 4;
    const auto result = assign_od_to_links(std::vector<OdMatrix>{od}, net);
    EXPECT_EQ(result.flows.at({"L1", 0}), 7.0);
    EXPECT_EQ(result.flows.at({"L2", 0}), 4.0);
}

TEST(AssignOd, UnroutablePairReportedAndExcluded) {
    RoadNetwork net;
    net.add_node("A");
    net.add_node("B");
    net.add_node("Z");
    net.add_link({"L1", "A", "B", 1, 100, 5, -1});
    OdMatrix od;
    od.time_bin = 7;
    od.entries[{"A", "B"}] = 2;
    od.entries[{"A", "Z"}] = 9;
    const auto result = assign_od_to_links(std::vector<OdMatrix>{od}, net);
    EXPECT_EQ(result.flows.at({"L1", 7}), 2.0);
    ASSERT_EQ(result.exclusions.size(), 1u);
    EXPECT_EQ(result.exclusions[0].destination, "Z");
    EXPECT_EQ(result.exclusions[0].trips, 9.0);
}

TEST(AssignOd, Additivity) {
    const RoadNetwork net = star();
    Rng rng(99);
    auto random_od = [&](int bins) {
        std::vector<OdMatrix> ods;
        const char* nodes[] = {"H", "D1", "D2"};
        for (int b = 0; b < bins; ++b) {
            OdMatrix m;
            m.time_bin = b;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    if (i == j || rng.uniform() < 0.3) continue;
                    m.entries[{nodes[i], nodes[j]}] = double(rng.uniform_int(0, 20));
                }
            ods.push_back(std::move(m));
        }
        return ods;
    };
    for (int trial = 0; trial < 100; ++trial) {
        const auto od1 = random_od(3);
        const auto od2 = random_od(3);
        auto combined = od1;
        for (std::size_t b = 0; b < od2.size(); ++b)
            for (const auto& [k, v] : od2[b].entries) combined[b].entries[k] += v;
        const auto f1 = assign_od_to_links(od1, net).flows;
        const auto f2 = assign_od_to_links(od2, net).flows;
        const auto fc = assign_od_to_links(combined, net).flows;
        FlowMap sum = f1;
        for (const auto& [k, v] : f2) sum[k] += v;
        for (auto it = sum.begin(); it != sum.end();)
            it = it->second == 0 ? sum.erase(it) : std::next(it);
        EXPECT_EQ(fc, sum);
    }
}

TEST(Calibrate, DirectRatio) {
    FlowMap flows{{{"L1", 8}, 200.0}};
    const std::vector<TrafficCount> counts = {{"L1", 8, 600.0}};
    const auto factors = calibrate_scale(flows, counts);
    EXPECT_DOUBLE_EQ(factors.beta.at({"L1", 8}), 3.0);
}

TEST(Calibrate, IdentityScaling) {
    FlowMap flows{{{"L1", 8}, 100.0}};
    const std::vector<TrafficCount> counts = {{"L1", 8, 100.0}};
    const auto factors = calibrate_scale(flows, counts);
    EXPECT_DOUBLE_EQ(factors.beta.at({"L1", 8}), 1.0);
}

TEST(Calibrate, FlowWeightedFallback) {
    // counted set beta {3.0, 5.0} with flow weights {100, 100} -> fallback 4.0
    FlowMap flows{{{"L1", 8}, 100.0}, {{"L2", 8}, 100.0}, {{"L3", 8}, 50.0}};
    const std::vector<TrafficCount> counts = {{"L1", 8, 300.0}, {"L2", 8, 500.0}};
    const auto factors = calibrate_scale(flows, counts);
    EXPECT_DOUBLE_EQ(factors.factor({"L3", 8}), 4.0);
    // different bin entirely -> global fallback (same value here)
    EXPECT_DOUBLE_EQ(factors.factor({"L3", 9}), 4.0);
}

TEST(Calibrate, CountedLinkWithZeroFlowIsReported) {
    FlowMap flows{{{"L1", 8}, 100.0}};
    const std::vector<TrafficCount> counts = {{"L1", 8, 200.0}, {"L2", 8, 50.0}};
    const auto factors = calibrate_scale(flows, counts);
    ASSERT_EQ(factors.issues.size(), 1u);
    EXPECT_EQ(factors.issues[0].link_id, "L2");
    EXPECT_DOUBLE_EQ(factors.factor({"L2", 8}), 2.0);  // fallback
}

TEST(Calibrate, ScalingReproducesCountsWithin1eMinus12) {
    Rng rng(4);
    FlowMap flows;
    std::vector<TrafficCount> counts;
    for (int i = 0; i < 200; ++i) {
        const FlowKey key{"L" + std::to_string(i), int(rng.uniform_int(0, 23))};
        const double r = rng.uniform(0.5, 500);
        flows[key] = r;
        counts.push_back({key.first, key.second, rng.uniform(1, 2000)});
    }
    const auto factors = calibrate_scale(flows, counts);
    const auto scaled = apply_scale(flows, factors);
    std::map<FlowKey, double> vehicle;
    for (const auto& f : scaled) vehicle[{f.link_id, f.time_bin}] = f.vehicle_flow;
    for (const auto& tc : counts) {
        const double v = vehicle.at({tc.link_id, tc.time_bin});
        EXPECT_NEAR(v, tc.counted_vehicles, 1e-12 * std::abs(tc.counted_vehicles));
    }
}

TEST(Calibrate, NoCountsGivesUnitFallback) {
    FlowMap flows{{{"L1", 0}, 10.0}};
    const auto factors = calibrate_scale(flows, {});
    EXPECT_DOUBLE_EQ(factors.factor({"L1", 0}), 1.0);
    const auto scaled = apply_scale(flows, factors);
    ASSERT_EQ(scaled.size(), 1u);
    EXPECT_DOUBLE_EQ(scaled[0].vehicle_flow, 10.0);
}

TEST(HourBin, FloorsNegativeTimestamps) {
    EXPECT_EQ(hour_bin(0), 0);
    EXPECT_EQ(hour_bin(3600 * 25), 1);
    EXPECT_EQ(hour_bin(-1), 23);
}

}  // namespace
