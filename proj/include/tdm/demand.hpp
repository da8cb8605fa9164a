#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdm/cdr.hpp"
#include "tdm/errors.hpp"
#include "tdm/road_network.hpp"

// Travel demand inference: hour-binned O-D matrices from trajectories,
// route-incidence assignment of O-D trips to links, and scaling of CDR trip
// flows to vehicle flows against ground-truth traffic counts.

namespace tdm {

/// Hour-of-day bin (UTC) of an epoch timestamp.
inline int hour_bin(std::int64_t timestamp) {
    std::int64_t h = timestamp / 3600;
    if (timestamp % 3600 < 0) --h;
    return int(((h % 24) + 24) % 24);
}

struct OdMatrix {
    int time_bin = 0;  // hour of day, [0, 24)
    std::map<std::pair<std::string, std::string>, double> entries;  // (origin, destination) -> trips
};

/// (link_id, time_bin) key for flow maps.
using FlowKey = std::pair<std::string, int>;
using FlowMap = std::map<FlowKey, double>;

struct TrafficCount {
    std::string link_id;
    int time_bin = 0;
    double counted_vehicles = 0;  // vehicles/hour
};

struct LinkFlow {
    std::string link_id;
    int time_bin = 0;
    double cdr_flow = 0;      // R_it, trips/hour from CDR
    double scale_factor = 0;  // beta_it
    double vehicle_flow = 0;  // cdr_flow * scale_factor
};

// ---------------------------------------------------------------------------
// extract_od
// ---------------------------------------------------------------------------

/// Each consecutive pair of visit events at distinct nodes contributes one
/// trip, binned by the departure (origin visit) timestamp. Visits are mapped
/// to nodes via the network tower mapping; an unmapped tower violates the
/// precondition and throws DomainError.
inline std::vector<OdMatrix> extract_od(std::span<const Trajectory> trajectories,
                                        const RoadNetwork& network) {
    std::map<int, OdMatrix> bins;
    for (const Trajectory& traj : trajectories) {
        int prev_node = -1;
        std::int64_t prev_ts = 0;
        for (const Visit& v : traj.visits) {
            const auto node = network.node_of_tower(v.tower_id);
            if (!node)
                throw DomainError("tower " + v.tower_id + " is not mapped to any node");
            if (prev_node >= 0 && *node != prev_node) {
                const int bin = hour_bin(prev_ts);
                OdMatrix& m = bins[bin];
                m.time_bin = bin;
                m.entries[{network.node_id(prev_node), network.node_id(*node)}] += 1.0;
            }
            prev_node = *node;
            prev_ts = v.timestamp;
        }
    }
    std::vector<OdMatrix> out;
    out.reserve(bins.size());
    for (auto& [bin, m] : bins) out.push_back(std::move(m));
    return out;
}

// ---------------------------------------------------------------------------
// assign_od_to_links
// ---------------------------------------------------------------------------

struct OdExclusion {
    int time_bin = 0;
    std::string origin;
    std::string destination;
    double trips = 0;
    std::string reason;
};

struct AssignmentResult {
    FlowMap flows;  // R_it per (link_id, time_bin)
    std::vector<OdExclusion> exclusions;
};

/// R_it = sum over O-D pairs whose route traverses link i of the pair's trip
/// count. Each trip contributes to every link on exactly its own route.
/// Unroutable pairs are excluded and reported.
inline AssignmentResult assign_od_to_links(std::span<const OdMatrix> od,
                                           const RoadNetwork& network) {
    AssignmentResult result;
    std::map<std::pair<int, int>, std::optional<std::vector<int>>> route_cache;
    for (const OdMatrix& m : od) {
        for (const auto& [pair, trips] : m.entries) {
            if (trips < 0) throw DomainError("negative O-D trip count");
            if (trips == 0) continue;
            const auto& [origin, destination] = pair;
            const int o = network.node_index(origin);
            const int d = network.node_index(destination);
            auto it = route_cache.find({o, d});
            if (it == route_cache.end())
                it = route_cache.emplace(std::make_pair(o, d), network.try_route(o, d)).first;
            if (!it->second) {
                result.exclusions.push_back({m.time_bin, origin, destination, trips, "no path"});
                continue;
            }
            for (int li : *it->second)
                result.flows[{network.link(li).link_id, m.time_bin}] += trips;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// calibrate_scale
// ---------------------------------------------------------------------------

struct ScaleIssue {
    std::string link_id;
    int time_bin = 0;
    std::string message;
};

struct ScaleFactors {
    FlowMap beta;                        // counted (link, bin) with R > 0
    std::map<int, double> bin_fallback;  // flow-weighted mean beta per bin
    double global_fallback = 1.0;
    std::vector<ScaleIssue> issues;

    /// beta_it for any (link, bin): calibrated value on counted links, else
    /// the same-bin fallback, else the global fallback.
    double factor(const FlowKey& key) const {
        if (auto it = beta.find(key); it != beta.end()) return it->second;
        if (auto it = bin_fallback.find(key.second); it != bin_fallback.end()) return it->second;
        return global_fallback;
    }
};

/// beta_it = TC_it / R_it on counted links. Fallback for uncounted links is
/// the flow-weighted mean of beta over the counted links of the same bin
/// (equals sum TC / sum R), then the global flow-weighted mean, then 1.
inline ScaleFactors calibrate_scale(const FlowMap& cdr_flows,
                                    std::span<const TrafficCount> counts) {
    ScaleFactors out;
    std::map<int, std::pair<double, double>> bin_totals;  // bin -> (sum TC, sum R)
    double total_tc = 0, total_r = 0;
    for (const TrafficCount& tc : counts) {
        if (tc.counted_vehicles < 0)
            throw DomainError("negative traffic count on link " + tc.link_id);
        const FlowKey key{tc.link_id, tc.time_bin};
        auto it = cdr_flows.find(key);
        const double r = it == cdr_flows.end() ? 0.0 : it->second;
        if (r > 0) {
            out.beta[key] = tc.counted_vehicles / r;
            auto& [tcs, rs] = bin_totals[tc.time_bin];
            tcs += tc.counted_vehicles;
            rs += r;
            total_tc += tc.counted_vehicles;
            total_r += r;
        } else if (tc.counted_vehicles > 0) {
            out.issues.push_back({tc.link_id, tc.time_bin,
                                  "counted vehicles with zero CDR flow; fallback factor applied"});
        }
    }
    for (const auto& [bin, totals] : bin_totals)
        if (totals.second > 0) out.bin_fallback[bin] = totals.first / totals.second;
    out.global_fallback = total_r > 0 ? total_tc / total_r : 1.0;
    return out;
}

/// Applies scale factors; output sorted by (link_id, time_bin).
inline std::vector<LinkFlow> apply_scale(const FlowMap& cdr_flows, const ScaleFactors& factors) {
    std::vector<LinkFlow> out;
    out.reserve(cdr_flows.size());
    for (const auto& [key, r] : cdr_flows) {
        const double beta = factors.factor(key);
        out.push_back({key.first, key.second, r, beta, r * beta});
    }
    return out;
}

}  // namespace tdm
