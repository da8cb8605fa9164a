#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tdm/rng.hpp"
#include "tdm/road_network.hpp"

namespace {

using namespace tdm;

RoadNetwork triangle() {
    // A-B: 10, B-C: 10, A-C: 25  (all both ways)
    RoadNetwork net;
    for (const char* n : {"A", "B", "C"}) net.add_node(n);
    auto both = [&](const std::string& a, const std::string& b, double t, const std::string& id) {
        net.add_link({id + "_f", a, b, 1, 1000, t, -1});
        net.add_link({id + "_r", b, a, 1, 1000, t, -1});
    };
    both("A", "B", 10, "ab");
    both("B", "C", 10, "bc");
    both("A", "C", 25, "ac");
    return net;
}

TEST(Route, OriginEqualsDestination) {
    const RoadNetwork net = triangle();
    EXPECT_TRUE(net.route("A", "A").empty());
}

TEST(Route, TwoNodeSingleLink) {
    RoadNetwork net;
    net.add_node("X");
    net.add_node("Y");
    net.add_link({"L1", "X", "Y", 1, 500, 5, -1});
    EXPECT_EQ(net.route("X", "Y"), (std::vector<std::string>{"L1"}));
}

TEST(Route, TrianglePrefersTwoHopCheaperPath) {
    const RoadNetwork net = triangle();
    EXPECT_EQ(net.route("A", "C"), (std::vector<std::string>{"ab_f", "bc_f"}));
}

TEST(Route, UnreachableThrows) {
    RoadNetwork net;
    net.add_node("X");
    net.add_node("Y");
    net.add_node("Z");
    net.add_link({"L1", "X", "Y", 1, 500, 5, -1});
    EXPECT_THROW(net.route("X", "Z"), NoPathError);
    EXPECT_FALSE(net.try_route(net.node_index("X"), net.node_index("Z")).has_value());
}

TEST(Route, EqualCostTieBreaksLexicographically) {
    // Two parallel two-hop routes with identical cost; ids chosen so the
    // lexicographically smaller sequence is not the insertion order.
    RoadNetwork net;
    for (const char* n : {"S", "M1", "M2", "T"}) net.add_node(n);
    net.add_link({"L9", "S", "M1", 1, 100, 5, -1});
    net.add_link({"L8", "M1", "T", 1, 100, 5, -1});
    net.add_link({"L1", "S", "M2", 1, 100, 5, -1});
    net.add_link({"L2", "M2", "T", 1, 100, 5, -1});
    EXPECT_EQ(net.route("S", "T"), (std::vector<std::string>{"L1", "L2"}));
}

// Exhaustive-path oracle: depth-first enumeration of all simple paths.
void enumerate_paths(const RoadNetwork& net, int node, int dest, std::vector<char>& seen,
                     std::vector<int>& stack, std::vector<std::vector<int>>& out) {
    if (node == dest) {
        out.push_back(stack);
        return;
    }
    for (int li = 0; li < net.n_links(); ++li) {
        if (net.link_from(li) != node) continue;
        const int to = net.link_to(li);
        if (seen[std::size_t(to)]) continue;
        seen[std::size_t(to)] = 1;
        stack.push_back(li);
        enumerate_paths(net, to, dest, seen, stack, out);
        stack.pop_back();
        seen[std::size_t(to)] = 0;
    }
}

TEST(Route, MatchesExhaustiveEnumerationOnRandomGraphs) {
    Rng rng(321);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = int(rng.uniform_int(2, 8));
        RoadNetwork net;
        for (int i = 0; i < n; ++i) net.add_node("N" + std::to_string(i));
        int link_count = 0;
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (a == b || rng.uniform() < 0.55) continue;
                // integer-ish times so exact-cost ties actually occur
                const double t = double(rng.uniform_int(1, 4));
                net.add_link({"L" + std::to_string(link_count++), "N" + std::to_string(a),
                              "N" + std::to_string(b), 1, 100, t, -1});
            }
        }
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (a == b) continue;
                std::vector<std::vector<int>> all;
                std::vector<char> seen(std::size_t(n), 0);
                seen[std::size_t(a)] = 1;
                std::vector<int> stack;
                enumerate_paths(net, a, b, seen, stack, all);
                const auto got = net.try_route(a, b);
                if (all.empty()) {
                    EXPECT_FALSE(got.has_value());
                    continue;
                }
                ASSERT_TRUE(got.has_value());
                const double got_cost = net.path_free_flow_min(*got);
                double best = std::numeric_limits<double>::infinity();
                for (const auto& p : all) best = std::min(best, net.path_free_flow_min(p));
                EXPECT_EQ(got_cost, best);
                // among equal-cost paths, returned id sequence is lexicographically smallest
                auto ids = [&](const std::vector<int>& p) {
                    std::vector<std::string> v;
                    for (int li : p) v.push_back(net.link(li).link_id);
                    return v;
                };
                const auto got_ids = ids(*got);
                for (const auto& p : all) {
                    if (net.path_free_flow_min(p) == best) {
                        EXPECT_LE(got_ids, ids(p));
                    }
                }
            }
        }
    }
}

TEST(Bpr, ZeroVolumeIsFreeFlowExactly) {
    const RoadLink link{"L", "a", "b", 2, 600, 12.34567, -1};
    EXPECT_EQ(bpr_time(link, 0.0), 12.34567);
}

TEST(Bpr, HandValues) {
    // t_ff=10, V/C=1, alpha=0.15, beta=4 -> 11.5 ; V/C=2 -> 10*(1+0.15*16)=34
    EXPECT_DOUBLE_EQ(bpr_time(10.0, 600.0, 600.0, {}), 11.5);
    EXPECT_DOUBLE_EQ(bpr_time(10.0, 1200.0, 600.0, {}), 34.0);
}

TEST(Bpr, DelayHandValues) {
    EXPECT_DOUBLE_EQ(link_delay(10.0, 0.0, 600.0, {}), 0.0);
    EXPECT_DOUBLE_EQ(link_delay(10.0, 1200.0, 600.0, {}), 24.0);
}

TEST(Bpr, MonotoneInVolumeStrictWhenAlphaPositive) {
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        const double tff = rng.uniform(1, 60);
        const double cap = rng.uniform(100, 2000);
        const BprParams params{rng.uniform(0.01, 1.0), rng.uniform(1, 6)};
        const double v1 = rng.uniform(0, 3000);
        const double v2 = v1 + rng.uniform(0.001, 500);
        EXPECT_LT(bpr_time(tff, v1, cap, params), bpr_time(tff, v2, cap, params));
        EXPECT_GE(link_delay(tff, v1, cap, params), 0.0);
    }
}

TEST(Bpr, DoublingCapacityDecreasesDelay) {
    const double d1 = link_delay(10.0, 500.0, 400.0, {});
    const double d2 = link_delay(10.0, 500.0, 800.0, {});
    EXPECT_LT(d2, d1);
}

TEST(Bpr, NegativeVolumeIsDomainError) {
    EXPECT_THROW(bpr_time(10.0, -1.0, 600.0, {}), DomainError);
}

TEST(NetworkCsv, LoadsAllThreeFiles) {
    RoadNetwork net;
    std::istringstream nodes("node_id,name\nA,Alpha\nB,Beta\n");
    std::istringstream links("link_id,from_node,to_node,lanes,capacity_vph,free_flow_min,length_km\n"
                             "L1,A,B,2,600,7.5,3.2\n");
    std::istringstream towers("node_id,tower_id\nA,T1\nA,T2\nB,T3\n");
    load_nodes(nodes, net);
    load_links(links, net);
    load_node_towers(towers, net);
    EXPECT_EQ(net.n_nodes(), 2);
    EXPECT_EQ(net.n_links(), 1);
    EXPECT_EQ(net.link(0).length_km, 3.2);
    EXPECT_EQ(net.node_of_tower("T2"), net.node_index("A"));
    EXPECT_FALSE(net.node_of_tower("T9").has_value());
}

TEST(Network, InvariantValidation) {
    RoadNetwork net;
    net.add_node("A");
    net.add_node("B");
    EXPECT_THROW(net.add_link({"L", "A", "B", 1, 0, 5, -1}), DomainError);
    EXPECT_THROW(net.add_link({"L", "A", "B", 1, 100, 0, -1}), DomainError);
    EXPECT_THROW(net.add_link({"L", "A", "B", 0, 100, 5, -1}), DomainError);
    net.add_link({"L", "A", "B", 1, 100, 5, -1});
    EXPECT_THROW(net.add_link({"L", "B", "A", 1, 100, 5, -1}), DomainError);
    net.map_tower("T1", "A");
    EXPECT_THROW(net.map_tower("T1", "B"), DomainError);
}

}  // namespace
