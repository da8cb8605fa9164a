#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdm/errors.hpp"
#include "tdm/preference.hpp"
#include "tdm/road_network.hpp"
#include "tdm/simplex.hpp"

// Capacity-constrained recommendation assignment: maximize total satisfied
// preference subject to per-(link, slot) throughput caps. One binary choice
// x_{u,b} per traveler/bundle, one bundle per traveler, capacity rows with
// coefficient trips_per_traveler on the links of the bundle's route
// (generalized assignment). Exact branch-and-bound on small instances,
// greedy + 2-swap local search with an LP-relaxation certificate at scale.

namespace tdm {

struct Traveler {
    std::string id;
    int home_node = 0;
    int preferred_slot = 0;  // index into the slot set
};

struct Bundle {
    int location = -1;  // model location index; -1 = the null "stay" bundle
    int slot = 0;
    double score = 0;  // clamped >= 0
    std::vector<int> route_links;

    bool stay() const { return location < 0; }
};

/// Per traveler, in canonical order (see canonical_less).
using BundleSet = std::vector<std::vector<Bundle>>;

/// Caps per (link, slot): C_link * (1 + theta). theta >= -1.
struct SlotCapacity {
    int n_links = 0;
    int n_slots = 0;
    double theta = 0;
    std::vector<double> cap;

    static SlotCapacity uniform(const RoadNetwork& network, int n_slots, double theta) {
        if (theta < -1.0) throw DomainError("theta must be >= -1");
        SlotCapacity c;
        c.n_links = network.n_links();
        c.n_slots = n_slots;
        c.theta = theta;
        c.cap.resize(std::size_t(c.n_links) * std::size_t(n_slots));
        for (int l = 0; l < c.n_links; ++l) {
            const double cap = network.link(l).capacity_vph * (1.0 + theta);
            for (int s = 0; s < n_slots; ++s) c.at(l, s) = cap;
        }
        return c;
    }

    double& at(int link, int slot) {
        return cap[std::size_t(link) * std::size_t(n_slots) + std::size_t(slot)];
    }
    double at(int link, int slot) const {
        return cap[std::size_t(link) * std::size_t(n_slots) + std::size_t(slot)];
    }
};

using SlotFlowMap = std::map<std::pair<int, int>, double>;  // (link, slot) -> flow

struct RecommendationPlan {
    std::vector<int> choice;  // per traveler: index into bundles[u]; -1 unassigned
    double objective = 0;     // sum of satisfied preference scores
    int argmax_count = 0;     // travelers assigned their unconstrained argmax location
    SlotFlowMap induced_flow;
    bool feasible = true;
    std::string note;
    double lp_bound = std::numeric_limits<double>::quiet_NaN();
    double theta = 0;
    std::string solver;
};

struct OptimizerConfig {
    double trips_per_traveler = 1.0;
    /// Assign the null "stay" bundle when a traveler has no feasible bundle
    /// (bundle sets must contain it); otherwise the plan reports infeasibility.
    bool allow_stay = true;
    /// Exact search when the product of bundle-set sizes is within this limit.
    double exact_enum_limit = 1e7;
    bool compute_lp_bound = true;
    int max_local_search_passes = 40;
};

namespace detail {

constexpr double kCapEps = 1e-9;
constexpr double kGainEps = 1e-12;

/// Canonical bundle order: non-stay before stay, score descending, the
/// traveler's preferred slot first, then location asc, slot asc. The leading
/// non-stay bundle is therefore the traveler's unconstrained argmax.
inline bool canonical_less(const Bundle& a, const Bundle& b, int preferred_slot) {
    if (a.stay() != b.stay()) return !a.stay();
    if (a.score != b.score) return a.score > b.score;
    const bool ap = a.slot == preferred_slot, bp = b.slot == preferred_slot;
    if (ap != bp) return ap;
    if (a.location != b.location) return a.location < b.location;
    return a.slot < b.slot;
}

struct CapState {
    std::vector<double> remaining;  // residual - used, flat link*slots+slot
    int n_slots = 0;

    double& at(int link, int slot) {
        return remaining[std::size_t(link) * std::size_t(n_slots) + std::size_t(slot)];
    }

    bool fits(const Bundle& b, double trips) const {
        for (int l : b.route_links) {
            const double rem =
                remaining[std::size_t(l) * std::size_t(n_slots) + std::size_t(b.slot)];
            if (trips > rem + kCapEps) return false;
        }
        return true;
    }
    void apply(const Bundle& b, double trips) {
        for (int l : b.route_links) at(l, b.slot) -= trips;
    }
    void undo(const Bundle& b, double trips) {
        for (int l : b.route_links) at(l, b.slot) += trips;
    }
};

inline int argmax_location(const std::vector<Bundle>& bundles) {
    return bundles.empty() ? -1 : bundles.front().location;
}

}  // namespace detail

/// Flows a choice vector induces, keyed (link, slot).
inline SlotFlowMap induced_flows(const BundleSet& bundles, std::span<const int> choice,
                                 double trips_per_traveler) {
    SlotFlowMap flows;
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        if (choice[u] < 0) continue;
        const Bundle& b = bundles[u].at(std::size_t(choice[u]));
        for (int l : b.route_links) flows[{l, b.slot}] += trips_per_traveler;
    }
    return flows;
}

/// Sorts each traveler's bundles into canonical order.
inline void sort_bundles(BundleSet& bundles, std::span<const Traveler> travelers) {
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        const int pref = travelers[u].preferred_slot;
        std::stable_sort(bundles[u].begin(), bundles[u].end(),
                         [pref](const Bundle& a, const Bundle& b) {
                             return detail::canonical_less(a, b, pref);
                         });
    }
}

/// Candidate (location, slot) bundles per traveler from the preference model:
/// the top_n locations by clamped score (the traveler's own home node and
/// unroutable locations are skipped) crossed with every slot. Appends the
/// null "stay" bundle when allow_stay.
///
/// location_nodes maps model location index -> network node index (-1 when a
/// location has no node and cannot be recommended).
inline BundleSet build_bundles(std::span<const Traveler> travelers, const PreferenceModel& model,
                               const RoadNetwork& network, std::span<const int> location_nodes,
                               int n_slots, int top_n, bool exclude_visited, bool allow_stay) {
    if (int(location_nodes.size()) != model.n_locations)
        throw DomainError("location_nodes size must match model locations");
    BundleSet bundles(travelers.size());
    for (std::size_t u = 0; u < travelers.size(); ++u) {
        const auto top = top_candidates(model, int(u), std::max(top_n, 1), exclude_visited);
        for (const auto& [loc, raw_score] : top) {
            const int node = location_nodes[std::size_t(loc)];
            if (node < 0 || node == travelers[u].home_node) continue;
            const auto route = network.try_route(travelers[u].home_node, node);
            if (!route) continue;
            Bundle b;
            b.location = loc;
            b.score = std::max(raw_score, 0.0);
            b.route_links = *route;
            for (int s = 0; s < n_slots; ++s) {
                b.slot = s;
                bundles[u].push_back(b);
            }
        }
        if (allow_stay) {
            Bundle stay;
            stay.location = -1;
            stay.slot = travelers[u].preferred_slot;
            stay.score = 0;
            bundles[u].push_back(stay);
        }
    }
    sort_bundles(bundles, travelers);
    return bundles;
}

// ---------------------------------------------------------------------------
// preference_only
// ---------------------------------------------------------------------------

/// User-equilibrium-style baseline: every traveler takes the unconstrained
/// argmax bundle (canonical-first); capacity is ignored, flows reported.
inline RecommendationPlan preference_only(std::span<const Traveler> travelers,
                                          const BundleSet& bundles, double trips_per_traveler) {
    (void)travelers;
    RecommendationPlan plan;
    plan.solver = "preference-only";
    plan.theta = std::numeric_limits<double>::infinity();
    plan.choice.assign(bundles.size(), -1);
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        if (bundles[u].empty()) continue;
        plan.choice[u] = 0;
        plan.objective += bundles[u][0].score;
    }
    plan.argmax_count = int(bundles.size());
    plan.induced_flow = induced_flows(bundles, plan.choice, trips_per_traveler);
    return plan;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

/// Exhaustive search over the bundle product space (capacity-infeasible
/// prefixes cannot become feasible, so they are skipped). Returns the exact
/// optimum and the lexicographically-first optimal assignment.
/// Throws SizeError when the product exceeds 1e7.
inline std::pair<double, std::vector<int>> oracle(const BundleSet& bundles,
                                                  const SlotCapacity& residual,
                                                  double trips_per_traveler) {
    double product = 1;
    for (const auto& bs : bundles) {
        product *= double(std::max<std::size_t>(bs.size(), 1));
        if (product > 1e7) throw SizeError("oracle instance too large");
    }
    const std::size_t n = bundles.size();
    detail::CapState caps{residual.cap, residual.n_slots};
    std::vector<int> current(n, -1);
    std::vector<int> best_choice;
    double best = -std::numeric_limits<double>::infinity();
    bool found = false;

    auto rec = [&](auto&& self, std::size_t u, double obj) -> void {
        if (u == n) {
            if (!found || obj > best) {
                best = obj;
                best_choice = current;
                found = true;
            }
            return;
        }
        if (bundles[u].empty()) return;  // no assignment possible for this traveler
        for (std::size_t b = 0; b < bundles[u].size(); ++b) {
            const Bundle& bundle = bundles[u][b];
            if (!caps.fits(bundle, trips_per_traveler)) continue;
            caps.apply(bundle, trips_per_traveler);
            current[u] = int(b);
            self(self, u + 1, obj + bundle.score);
            caps.undo(bundle, trips_per_traveler);
            current[u] = -1;
        }
    };
    rec(rec, 0, 0.0);
    if (!found) {
        if (n == 0) return {0.0, {}};
        throw InfeasibleError("oracle: no feasible assignment");
    }
    return {best, best_choice};
}

// ---------------------------------------------------------------------------
// lp_bound
// ---------------------------------------------------------------------------

/// Value of the linear relaxation (fractional assignment). An upper bound on
/// the integer optimum. Throws InfeasibleError when the relaxation itself is
/// infeasible.
inline double lp_bound(const BundleSet& bundles, const SlotCapacity& residual,
                       double trips_per_traveler) {
    lp::Problem prob;
    std::vector<std::vector<int>> var(bundles.size());
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        var[u].resize(bundles[u].size());
        for (std::size_t b = 0; b < bundles[u].size(); ++b) {
            var[u][b] = prob.n_vars++;
            prob.objective.push_back(bundles[u][b].score);
        }
    }
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        if (bundles[u].empty()) throw InfeasibleError("lp_bound: traveler with no bundles");
        lp::Constraint c;
        for (int v : var[u]) c.coefs.push_back({v, 1.0});
        c.rhs = 1.0;
        prob.eq.push_back(std::move(c));
    }
    // capacity rows for (link, slot) pairs actually used by some bundle
    std::map<std::pair<int, int>, std::vector<int>> users;  // (link, slot) -> vars
    for (std::size_t u = 0; u < bundles.size(); ++u)
        for (std::size_t b = 0; b < bundles[u].size(); ++b)
            for (int l : bundles[u][b].route_links)
                users[{l, bundles[u][b].slot}].push_back(var[u][b]);
    for (const auto& [key, vars] : users) {
        const double cap = residual.at(key.first, key.second);
        if (std::isinf(cap)) continue;
        lp::Constraint c;
        for (int v : vars) c.coefs.push_back({v, trips_per_traveler});
        c.rhs = cap;
        prob.ub.push_back(std::move(c));
    }
    const lp::Solution sol = lp::solve(prob);
    if (sol.status == lp::Status::kInfeasible)
        throw InfeasibleError("lp_bound: relaxation infeasible (phase-1 residual " +
                              std::to_string(sol.objective) + ")");
    if (sol.status == lp::Status::kUnbounded)
        throw Error("lp_bound: relaxation unbounded (bug)");
    return sol.objective;
}

// ---------------------------------------------------------------------------
// greedy + local search + exact search
// ---------------------------------------------------------------------------

namespace detail {

/// Greedy by score-per-capacity-use: travelers in descending best-score
/// order, each taking the feasible bundle maximizing
/// score / (1 + trips * sum_l 1/remaining_l).
inline std::vector<int> greedy_choice(const BundleSet& bundles, CapState& caps, double trips,
                                      bool allow_stay) {
    const std::size_t n = bundles.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = bundles[a].empty() ? -1 : bundles[a][0].score;
        const double sb = bundles[b].empty() ? -1 : bundles[b][0].score;
        if (sa != sb) return sa > sb;
        return a < b;
    });
    std::vector<int> choice(n, -1);
    for (std::size_t u : order) {
        int best_b = -1;
        double best_ratio = -1;
        for (std::size_t b = 0; b < bundles[u].size(); ++b) {
            const Bundle& bundle = bundles[u][b];
            if (bundle.stay() && !allow_stay) continue;
            if (!caps.fits(bundle, trips)) continue;
            double use = 0;
            for (int l : bundle.route_links)
                use += trips / std::max(caps.at(l, bundle.slot), trips);
            const double ratio = bundle.score / (1.0 + use);
            if (ratio > best_ratio + kGainEps) {
                best_ratio = ratio;
                best_b = int(b);
            }
        }
        if (best_b >= 0) {
            choice[u] = best_b;
            caps.apply(bundles[u][std::size_t(best_b)], trips);
        }
    }
    return choice;
}

inline double objective_of(const BundleSet& bundles, std::span<const int> choice) {
    double obj = 0;
    for (std::size_t u = 0; u < bundles.size(); ++u)
        if (choice[u] >= 0) obj += bundles[u][std::size_t(choice[u])].score;
    return obj;
}

/// Best-improvement single moves and pair swaps until a fixpoint.
inline void local_search(const BundleSet& bundles, std::vector<int>& choice, CapState& caps,
                         double trips, int max_passes) {
    const std::size_t n = bundles.size();
    for (int pass = 0; pass < max_passes; ++pass) {
        bool improved = false;
        // single moves
        for (std::size_t u = 0; u < n; ++u) {
            if (choice[u] < 0) continue;
            const Bundle& cur = bundles[u][std::size_t(choice[u])];
            caps.undo(cur, trips);
            int best_b = choice[u];
            double best_gain = kGainEps;
            for (std::size_t b = 0; b < bundles[u].size(); ++b) {
                if (int(b) == choice[u]) continue;
                const Bundle& cand = bundles[u][b];
                if (!caps.fits(cand, trips)) continue;
                const double gain = cand.score - cur.score;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_b = int(b);
                }
            }
            choice[u] = best_b;
            caps.apply(bundles[u][std::size_t(best_b)], trips);
            if (best_gain > kGainEps) improved = true;
        }
        // pair swaps
        for (std::size_t u = 0; u + 1 < n; ++u) {
            if (choice[u] < 0) continue;
            for (std::size_t v = u + 1; v < n; ++v) {
                if (choice[v] < 0) continue;
                const Bundle& cu = bundles[u][std::size_t(choice[u])];
                const Bundle& cv = bundles[v][std::size_t(choice[v])];
                caps.undo(cu, trips);
                caps.undo(cv, trips);
                const double cur_score = cu.score + cv.score;
                int best_bu = choice[u], best_bv = choice[v];
                double best_gain = kGainEps;
                for (std::size_t bu = 0; bu < bundles[u].size(); ++bu) {
                    const Bundle& nu = bundles[u][bu];
                    if (!caps.fits(nu, trips)) continue;
                    caps.apply(nu, trips);
                    for (std::size_t bv = 0; bv < bundles[v].size(); ++bv) {
                        const Bundle& nv = bundles[v][bv];
                        if (!caps.fits(nv, trips)) continue;
                        const double gain = nu.score + nv.score - cur_score;
                        if (gain > best_gain) {
                            best_gain = gain;
                            best_bu = int(bu);
                            best_bv = int(bv);
                        }
                    }
                    caps.undo(nu, trips);
                }
                choice[u] = best_bu;
                choice[v] = best_bv;
                caps.apply(bundles[u][std::size_t(best_bu)], trips);
                caps.apply(bundles[v][std::size_t(best_bv)], trips);
                if (best_gain > kGainEps) improved = true;
            }
        }
        if (!improved) break;
    }
}

/// Depth-first branch and bound; exact. Prunes with the capacity-unaware
/// suffix bound, seeded with the incumbent passed in.
inline void branch_and_bound(const BundleSet& bundles, CapState& caps, double trips,
                             std::vector<int>& incumbent, double& incumbent_obj) {
    const std::size_t n = bundles.size();
    std::vector<double> suffix_max(n + 1, 0.0);
    for (std::size_t u = n; u-- > 0;) {
        double mx = 0;
        for (const Bundle& b : bundles[u]) mx = std::max(mx, b.score);
        suffix_max[u] = suffix_max[u + 1] + mx;
    }
    std::vector<int> current(n, -1);
    bool have_incumbent = !incumbent.empty();
    auto rec = [&](auto&& self, std::size_t u, double obj) -> void {
        if (have_incumbent && obj + suffix_max[u] <= incumbent_obj) return;
        if (u == n) {
            incumbent = current;
            incumbent_obj = obj;
            have_incumbent = true;
            return;
        }
        if (bundles[u].empty()) return;
        for (std::size_t b = 0; b < bundles[u].size(); ++b) {
            const Bundle& bundle = bundles[u][b];
            if (!caps.fits(bundle, trips)) continue;
            caps.apply(bundle, trips);
            current[u] = int(b);
            self(self, u + 1, obj + bundle.score);
            caps.undo(bundle, trips);
            current[u] = -1;
        }
    };
    rec(rec, 0, 0.0);
}

}  // namespace detail

/// The plain greedy baseline (no local search, no exact pass). Exposed so the
/// greedy <= optimize <= lp_bound sandwich can be checked directly.
inline RecommendationPlan greedy_plan(const BundleSet& bundles, const SlotCapacity& residual,
                                      const OptimizerConfig& config = {}) {
    detail::CapState caps{residual.cap, residual.n_slots};
    RecommendationPlan plan;
    plan.solver = "greedy";
    plan.theta = residual.theta;
    plan.choice = detail::greedy_choice(bundles, caps, config.trips_per_traveler, config.allow_stay);
    plan.objective = detail::objective_of(bundles, plan.choice);
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        plan.feasible = plan.feasible && plan.choice[u] >= 0;
        if (plan.choice[u] >= 0 &&
            bundles[u][std::size_t(plan.choice[u])].location == detail::argmax_location(bundles[u]))
            ++plan.argmax_count;
    }
    plan.induced_flow = induced_flows(bundles, plan.choice, config.trips_per_traveler);
    return plan;
}

/// Capacity-constrained assignment. Residual caps are capacity minus
/// background; a background flow already above cap on a (link, slot) makes
/// the instance infeasible (reported on the plan, nothing assigned).
inline RecommendationPlan optimize(std::span<const Traveler> travelers, const BundleSet& bundles,
                                   const SlotCapacity& capacity, const SlotFlowMap& background,
                                   const OptimizerConfig& config = {},
                                   const std::vector<int>* warm_start = nullptr) {
    (void)travelers;
    RecommendationPlan plan;
    plan.theta = capacity.theta;
    plan.choice.assign(bundles.size(), -1);

    detail::CapState caps{capacity.cap, capacity.n_slots};
    for (const auto& [key, flow] : background) {
        double& rem = caps.at(key.first, key.second);
        rem -= flow;
        if (rem < -detail::kCapEps) {
            plan.feasible = false;
            plan.note = "background flow exceeds cap on link " + std::to_string(key.first) +
                        " slot " + std::to_string(key.second);
            plan.solver = "none";
            return plan;
        }
    }
    const detail::CapState residual_caps = caps;  // caps after background, before assignment

    // exact when the product of bundle-set sizes is small enough
    double product = 1;
    bool exact = true;
    for (const auto& bs : bundles) {
        product *= double(std::max<std::size_t>(bs.size(), 1));
        if (product > config.exact_enum_limit) {
            exact = false;
            break;
        }
    }

    detail::CapState greedy_caps = residual_caps;
    std::vector<int> choice =
        detail::greedy_choice(bundles, greedy_caps, config.trips_per_traveler, config.allow_stay);
    double obj = detail::objective_of(bundles, choice);

    if (warm_start && warm_start->size() == bundles.size()) {
        // adopt the warm start when it is feasible here and not worse
        detail::CapState ws_caps = residual_caps;
        bool ok = true;
        for (std::size_t u = 0; u < bundles.size() && ok; ++u) {
            const int b = (*warm_start)[u];
            if (b < 0 || std::size_t(b) >= bundles[u].size()) {
                ok = false;
                break;
            }
            if (!ws_caps.fits(bundles[u][std::size_t(b)], config.trips_per_traveler)) ok = false;
            else ws_caps.apply(bundles[u][std::size_t(b)], config.trips_per_traveler);
        }
        if (ok) {
            const double ws_obj = detail::objective_of(bundles, *warm_start);
            if (ws_obj > obj) {
                choice = *warm_start;
                obj = ws_obj;
                greedy_caps = ws_caps;
            }
        }
    }

    bool complete = true;
    for (std::size_t u = 0; u < bundles.size(); ++u)
        if (choice[u] < 0) complete = false;

    if (exact) {
        std::vector<int> incumbent = complete ? choice : std::vector<int>{};
        double incumbent_obj = complete ? obj : 0.0;
        detail::CapState bb_caps = residual_caps;
        detail::branch_and_bound(bundles, bb_caps, config.trips_per_traveler, incumbent,
                                 incumbent_obj);
        if (!incumbent.empty()) {
            choice = incumbent;
            obj = incumbent_obj;
            complete = true;
        } else {
            complete = false;
        }
        plan.solver = "exact-bnb";
    } else {
        detail::local_search(bundles, choice, greedy_caps, config.trips_per_traveler,
                             config.max_local_search_passes);
        obj = detail::objective_of(bundles, choice);
        plan.solver = "greedy-2swap";
        for (std::size_t u = 0; u < bundles.size(); ++u)
            if (choice[u] < 0) complete = false;
    }

    if (!complete) {
        plan.feasible = false;
        plan.note = "no feasible bundle for at least one traveler";
        plan.choice.assign(bundles.size(), -1);
        return plan;
    }

    plan.choice = choice;
    plan.objective = detail::objective_of(bundles, choice);
    for (std::size_t u = 0; u < bundles.size(); ++u) {
        const Bundle& b = bundles[u][std::size_t(choice[u])];
        if (b.location == detail::argmax_location(bundles[u])) ++plan.argmax_count;
    }
    plan.induced_flow = induced_flows(bundles, choice, config.trips_per_traveler);

    if (config.compute_lp_bound) {
        SlotCapacity residual;
        residual.n_links = capacity.n_links;
        residual.n_slots = capacity.n_slots;
        residual.theta = capacity.theta;
        residual.cap = residual_caps.remaining;
        plan.lp_bound = lp_bound(bundles, residual, config.trips_per_traveler);
    }
    return plan;
}

}  // namespace tdm
