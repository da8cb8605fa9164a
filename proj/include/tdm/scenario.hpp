#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tdm/demand.hpp"
#include "tdm/errors.hpp"
#include "tdm/optimizer.hpp"
#include "tdm/rng.hpp"
#include "tdm/road_network.hpp"

// Compliance simulation and sweeps. Each traveler complies with probability
// rho (per-traveler uniform draw against a fixed seed, so complier sets are
// nested across rho); compliers take the optimized bundle, non-compliers the
// preference-only one, all flows accumulate in one shot on top of background,
// and delays come from the BPR curve during the peak hour.

namespace tdm {

struct SlotSet {
    std::vector<int> hours;  // hour-of-day per slot index

    int index_of_hour(int hour) const {
        for (std::size_t i = 0; i < hours.size(); ++i)
            if (hours[i] == hour) return int(i);
        return -1;
    }
    int n_slots() const { return int(hours.size()); }
};

struct ScenarioConfig {
    double theta = 0.0;
    BprParams bpr;
    std::uint64_t seed = 0;
    double trips_per_traveler = 1.0;
    SlotSet slots{{9}};
    int peak_hour = -1;  // -1: derive from background flows
};

struct LinkSlotState {
    std::string link_id;
    int hour = 0;
    double volume = 0;
    double capacity = 0;  // nominal BPR capacity C
    double voc = 0;
    double delay_min = 0;
};

struct ScenarioResult {
    double rho = 0;
    double theta = 0;
    double avg_delay_min = 0;
    int idealized_count = 0;      // travelers at their unconstrained argmax location
    double idealized_score = 0;   // sum of satisfied preference scores
    int peak_hour = 0;
    std::vector<LinkSlotState> link_profile;  // every link x every active hour
};

/// Per-traveler compliance draw; independent of rho so complier sets are
/// nested (a traveler complying at rho1 also complies at any rho2 >= rho1).
inline double compliance_draw(std::uint64_t seed, std::size_t traveler) {
    return Rng(seed).substream("compliance").substream(std::uint64_t(traveler)).uniform();
}

namespace detail {

inline int derive_peak_hour(const ScenarioConfig& config, const FlowMap& background) {
    if (config.peak_hour >= 0) return config.peak_hour;
    std::map<int, double> totals;
    for (const auto& [key, flow] : background) totals[key.second] += flow;
    int best = -1;
    double best_total = -1;
    for (const auto& [hour, total] : totals) {
        if (total > best_total) {
            best_total = total;
            best = hour;
        }
    }
    if (best < 0) best = config.slots.hours.empty() ? 0 : config.slots.hours.front();
    return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// One compliance realization. `optimized` and `baseline` must cover the same
/// travelers as `bundles`. Background flows are keyed (link_id, hour).
inline ScenarioResult simulate(const ScenarioConfig& config, double rho,
                               const RecommendationPlan& optimized,
                               const RecommendationPlan& baseline, const BundleSet& bundles,
                               const RoadNetwork& network, const FlowMap& background) {
    if (rho < 0 || rho > 1) throw DomainError("compliance rate must be in [0, 1]");
    const std::size_t n = bundles.size();
    if (optimized.choice.size() != n || baseline.choice.size() != n)
        throw DomainError("plans do not cover the traveler set");

    ScenarioResult result;
    result.rho = rho;
    result.theta = config.theta;

    // realized flows keyed (link index, hour)
    std::map<std::pair<int, int>, double> flows;
    for (const auto& [key, flow] : background) {
        const int li = network.link_index(key.first);
        flows[{li, key.second}] += flow;
    }
    for (std::size_t u = 0; u < n; ++u) {
        if (optimized.choice[u] < 0 || baseline.choice[u] < 0)
            throw DomainError("traveler " + std::to_string(u) + " missing from a plan");
        const bool comply = compliance_draw(config.seed, u) < rho;
        const Bundle& realized = comply ? bundles[u][std::size_t(optimized.choice[u])]
                                        : bundles[u][std::size_t(baseline.choice[u])];
        const Bundle& argmax = bundles[u].front();
        if (realized.location == argmax.location) ++result.idealized_count;
        result.idealized_score += realized.score;
        if (!realized.stay()) {
            const int hour = config.slots.hours.at(std::size_t(realized.slot));
            for (int l : realized.route_links) flows[{l, hour}] += config.trips_per_traveler;
        }
    }

    result.peak_hour = detail::derive_peak_hour(config, background);

    // link profile over every network link x every active hour
    std::set<int> hours(config.slots.hours.begin(), config.slots.hours.end());
    for (const auto& [key, flow] : flows) hours.insert(key.second);
    hours.insert(result.peak_hour);
    for (int l = 0; l < network.n_links(); ++l) {
        const RoadLink& link = network.link(l);
        for (int hour : hours) {
            auto it = flows.find({l, hour});
            const double volume = it == flows.end() ? 0.0 : it->second;
            LinkSlotState state;
            state.link_id = link.link_id;
            state.hour = hour;
            state.volume = volume;
            state.capacity = link.capacity_vph;
            state.voc = volume / link.capacity_vph;
            state.delay_min = link_delay(link, volume, config.bpr);
            result.link_profile.push_back(std::move(state));
        }
    }
    std::sort(result.link_profile.begin(), result.link_profile.end(),
              [](const LinkSlotState& a, const LinkSlotState& b) {
                  if (a.link_id != b.link_id) return a.link_id < b.link_id;
                  return a.hour < b.hour;
              });

    // flow-weighted mean per-traversal delay during the peak hour, minutes
    double weighted = 0, total_flow = 0;
    for (const LinkSlotState& s : result.link_profile) {
        if (s.hour != result.peak_hour) continue;
        weighted += s.volume * s.delay_min;
        total_flow += s.volume;
    }
    result.avg_delay_min = total_flow > 0 ? weighted / total_flow : 0.0;
    return result;
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

/// One result per rho, common seed, so compliance sets are nested across the
/// grid.
inline std::vector<ScenarioResult> sweep_compliance(const ScenarioConfig& config,
                                                    std::span<const double> rho_grid,
                                                    const RecommendationPlan& optimized,
                                                    const RecommendationPlan& baseline,
                                                    const BundleSet& bundles,
                                                    const RoadNetwork& network,
                                                    const FlowMap& background) {
    if (rho_grid.empty()) throw DomainError("sweep_compliance: empty grid");
    std::vector<ScenarioResult> results;
    results.reserve(rho_grid.size());
    for (double rho : rho_grid)
        results.push_back(simulate(config, rho, optimized, baseline, bundles, network, background));
    return results;
}

struct ThetaPoint {
    double theta = 0;
    double idealized_score = 0;  // optimizer objective at full compliance
    int idealized_count = 0;
    bool feasible = true;
};

/// Re-optimizes per theta (ascending grid) at full compliance. Each point is
/// warm-started with the previous plan (feasible, since caps grow with
/// theta), so the objective is non-decreasing by construction.
inline std::vector<ThetaPoint> sweep_theta(const ScenarioConfig& config,
                                           std::span<const double> theta_grid,
                                           std::span<const Traveler> travelers,
                                           const BundleSet& bundles, const RoadNetwork& network,
                                           const FlowMap& background,
                                           const OptimizerConfig& opt_config) {
    if (theta_grid.empty()) throw DomainError("sweep_theta: empty grid");
    for (std::size_t i = 1; i < theta_grid.size(); ++i)
        if (theta_grid[i] < theta_grid[i - 1]) throw DomainError("sweep_theta: grid must ascend");

    // background mapped onto (link index, slot index); hours outside the slot
    // set do not constrain any bundle
    SlotFlowMap slot_background;
    for (const auto& [key, flow] : background) {
        const int slot = config.slots.index_of_hour(key.second);
        if (slot >= 0) slot_background[{network.link_index(key.first), slot}] += flow;
    }

    std::vector<ThetaPoint> points;
    std::vector<int> warm;
    for (double theta : theta_grid) {
        const SlotCapacity caps = SlotCapacity::uniform(network, config.slots.n_slots(), theta);
        const RecommendationPlan plan = optimize(travelers, bundles, caps, slot_background,
                                                 opt_config, warm.empty() ? nullptr : &warm);
        ThetaPoint point;
        point.theta = theta;
        point.feasible = plan.feasible;
        if (plan.feasible) {
            point.idealized_score = plan.objective;
            point.idealized_count = plan.argmax_count;
            warm = plan.choice;
        }
        points.push_back(point);
    }
    return points;
}

struct TradeoffRow {
    double rho = 0;
    double theta = 0;
    double avg_delay_min = 0;
    int idealized_count = 0;
    double idealized_score = 0;
};

/// Plot-ready projection of scenario results, sorted by rho.
inline std::vector<TradeoffRow> tradeoff_curve(std::span<const ScenarioResult> results) {
    if (results.size() < 2) throw DomainError("tradeoff_curve: need at least 2 results");
    std::vector<TradeoffRow> rows;
    rows.reserve(results.size());
    for (const ScenarioResult& r : results)
        rows.push_back({r.rho, r.theta, r.avg_delay_min, r.idealized_count, r.idealized_score});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const TradeoffRow& a, const TradeoffRow& b) { return a.rho < b.rho; });
    return rows;
}

}  // namespace tdm
