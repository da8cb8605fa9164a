#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "tdm/cdr.hpp"
#include "tdm/csv.hpp"
#include "tdm/demand.hpp"
#include "tdm/errors.hpp"
#include "tdm/rng.hpp"
#include "tdm/road_network.hpp"

// Synthetic city generator. A star network around a home city: one popular
// destination behind a deliberately tight link plus slack alternatives, and
// travelers whose trip choices follow a known low-rank preference structure.
// Stands in for the proprietary CDR data in tests and demos; ground truth
// (factors and O-D totals) is emitted alongside for oracle-based checks.

namespace tdm::synth {

struct SyntheticSpec {
    int n_destinations = 5;
    int n_travelers = 1000;
    int rank = 3;
    double noise_sd = 0.05;  // multiplicative jitter on trip-choice weights
    std::uint64_t seed = 1;
    int towers_per_node = 2;
    int trips_min = 3;
    int trips_max = 8;
    double hot_factor = 4.0;  // popularity multiplier of the first destination
    double capacity_popular_vph = 300;
    double capacity_other_vph = 900;
    double free_flow_popular_min = 10;
    double free_flow_other_min = 12;
    double count_scale = 3.0;  // true vehicles per CDR trip on counted links
    int peak_hour = 9;
    std::string home_country = "AD";
    std::vector<std::string> nationalities = {"FR", "ES"};
    std::int64_t start_epoch = 1430697600;  // 2015-05-04T00:00:00Z
};

struct SyntheticData {
    std::vector<std::pair<std::string, std::string>> nodes;  // id, name
    std::vector<Tower> towers;
    std::vector<std::pair<std::string, std::string>> node_towers;  // node_id, tower_id
    std::vector<RoadLink> links;
    std::vector<CdrRecord> cdr;
    std::vector<TrafficCount> counts;
    int rank = 0;
    std::vector<std::string> traveler_ids;
    std::vector<std::string> destination_ids;
    std::vector<double> gt_user_factors;  // n_travelers x rank
    std::vector<double> gt_loc_factors;   // n_destinations x rank
    std::map<std::tuple<int, std::string, std::string>, double> gt_od;  // (bin, o, d) -> trips
};

inline void validate(const SyntheticSpec& spec) {
    std::string problems;
    auto bad = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
    if (spec.n_travelers < 1) bad("n_travelers: must be >= 1");
    if (spec.n_destinations < 1) bad("n_destinations: must be >= 1");
    if (spec.rank < 1 || spec.rank > spec.n_destinations) bad("rank: must be in [1, n_destinations]");
    if (spec.towers_per_node < 1) bad("towers_per_node: must be >= 1");
    if (spec.trips_min < 1 || spec.trips_max < spec.trips_min) bad("trips_min/trips_max: bad range");
    if (spec.capacity_popular_vph <= 0 || spec.capacity_other_vph <= 0) bad("capacities: must be > 0");
    if (spec.peak_hour < 0 || spec.peak_hour > 22) bad("peak_hour: must be in [0, 22]");
    if (spec.nationalities.empty()) bad("nationalities: must be non-empty");
    if (!problems.empty()) throw ValidationError("synthetic spec invalid: " + problems);
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    SyntheticData data;
    data.rank = spec.rank;
    Rng root(spec.seed);

    // nodes and towers; merged_group_id == node id, so the merged-cell-tower
    // resolution coincides with the node resolution on synthetic data
    auto add_node = [&](const std::string& id, double lat, double lon) {
        data.nodes.emplace_back(id, id);
        for (int t = 0; t < spec.towers_per_node; ++t) {
            Tower tower;
            tower.tower_id = id + "_t" + std::to_string(t);
            tower.latitude = lat + 0.002 * t;
            tower.longitude = lon + 0.001 * t;
            tower.city = id;
            tower.merged_group_id = id;
            data.towers.push_back(tower);
            data.node_towers.emplace_back(id, tower.tower_id);
        }
    };
    add_node("H", 42.50, 1.52);
    for (int d = 0; d < spec.n_destinations; ++d) {
        const double angle = 6.283185307179586 * d / spec.n_destinations;
        const std::string id = "D" + std::to_string(d + 1);
        data.destination_ids.push_back(id);
        add_node(id, 42.50 + 0.1 * std::cos(angle), 1.52 + 0.1 * std::sin(angle));
    }

    for (int d = 0; d < spec.n_destinations; ++d) {
        const std::string dest = data.destination_ids[std::size_t(d)];
        const bool popular = d == 0;
        RoadLink out;
        out.link_id = "LH_" + dest;
        out.from_node = "H";
        out.to_node = dest;
        out.lanes = popular ? 1 : 2;
        out.capacity_vph = popular ? spec.capacity_popular_vph : spec.capacity_other_vph;
        out.free_flow_min = popular ? spec.free_flow_popular_min
                                    : spec.free_flow_other_min + 0.5 * d;
        out.length_km = 8.0 + d;
        RoadLink ret = out;
        ret.link_id = "L" + dest + "_H";
        ret.from_node = dest;
        ret.to_node = "H";
        data.links.push_back(out);
        data.links.push_back(ret);
    }

    // ground-truth factors; the first destination's row is inflated so the
    // preference-only assignment overloads its access link
    Rng factor_rng = root.substream("gt-factors");
    data.gt_user_factors.resize(std::size_t(spec.n_travelers) * std::size_t(spec.rank));
    data.gt_loc_factors.resize(std::size_t(spec.n_destinations) * std::size_t(spec.rank));
    for (double& v : data.gt_user_factors) v = factor_rng.uniform(0.2, 1.0);
    for (double& v : data.gt_loc_factors) v = factor_rng.uniform(0.2, 1.0);
    for (int f = 0; f < spec.rank; ++f) data.gt_loc_factors[std::size_t(f)] *= spec.hot_factor;

    auto gt_score = [&](int u, int d) {
        double s = 0;
        for (int f = 0; f < spec.rank; ++f)
            s += data.gt_user_factors[std::size_t(u) * std::size_t(spec.rank) + std::size_t(f)] *
                 data.gt_loc_factors[std::size_t(d) * std::size_t(spec.rank) + std::size_t(f)];
        return s;
    };

    // trajectories: day d is one excursion H -> destination; the next day's
    // home visit doubles as the return. Two records per visit exercise the
    // duplicate-collapse rule.
    std::vector<std::pair<std::string, std::int64_t>> visits;  // (tower, ts) scratch
    for (int u = 0; u < spec.n_travelers; ++u) {
        const std::string user_id = "u" + std::to_string(u);
        data.traveler_ids.push_back(user_id);
        const std::string nationality =
            spec.nationalities[std::size_t(u) % spec.nationalities.size()];
        Rng traveler_rng = root.substream("traveler").substream(std::uint64_t(u));

        const int n_trips =
            int(traveler_rng.uniform_int(spec.trips_min, spec.trips_max));
        visits.clear();
        for (int trip = 0; trip < n_trips; ++trip) {
            // categorical destination draw weighted by jittered true scores
            double total = 0;
            std::vector<double> weights(std::size_t(spec.n_destinations));
            for (int d = 0; d < spec.n_destinations; ++d) {
                double w = gt_score(u, d);
                if (spec.noise_sd > 0) w *= std::max(0.05, 1.0 + traveler_rng.normal(0, spec.noise_sd));
                weights[std::size_t(d)] = w;
                total += w;
            }
            double pick = traveler_rng.uniform() * total;
            int dest = spec.n_destinations - 1;
            for (int d = 0; d < spec.n_destinations; ++d) {
                pick -= weights[std::size_t(d)];
                if (pick <= 0) {
                    dest = d;
                    break;
                }
            }
            const std::int64_t day = spec.start_epoch + std::int64_t(trip) * 86400;
            const std::int64_t home_ts =
                day + std::int64_t(spec.peak_hour) * 3600 + traveler_rng.uniform_int(0, 2400);
            const std::int64_t dest_ts = home_ts + traveler_rng.uniform_int(1500, 2700);
            const int home_tower = int(traveler_rng.uniform_int(0, spec.towers_per_node - 1));
            const int dest_tower = int(traveler_rng.uniform_int(0, spec.towers_per_node - 1));
            visits.emplace_back("H_t" + std::to_string(home_tower), home_ts);
            visits.emplace_back(
                data.destination_ids[std::size_t(dest)] + "_t" + std::to_string(dest_tower),
                dest_ts);
        }

        // ground-truth O-D totals follow the same rule the demand module
        // applies: consecutive distinct-node visit pairs, binned by the
        // departure (origin visit) timestamp
        for (std::size_t i = 0; i + 1 < visits.size(); ++i) {
            const std::string from = visits[i].first.substr(0, visits[i].first.find("_t"));
            const std::string to = visits[i + 1].first.substr(0, visits[i + 1].first.find("_t"));
            if (from == to) continue;
            data.gt_od[{hour_bin(visits[i].second), from, to}] += 1.0;
        }

        for (const auto& [tower, ts] : visits) {
            CdrRecord rec;
            rec.user_id = user_id;
            rec.tower_id = tower;
            rec.nationality = nationality;
            rec.start_time = ts;
            rec.end_time = ts + 60;
            data.cdr.push_back(rec);
            if (traveler_rng.uniform() < 0.5) {  // second ping at the same tower
                CdrRecord dup = rec;
                dup.start_time = ts + traveler_rng.uniform_int(120, 300);
                dup.end_time = dup.start_time + 60;
                data.cdr.push_back(dup);
            }
        }
    }

    // traffic counts on the outbound links: TC = true CDR link flow x
    // count_scale (return links are left uncounted to exercise the fallback)
    std::map<std::pair<std::string, int>, double> link_flow;
    for (const auto& [key, trips] : data.gt_od) {
        const auto& [bin, from, to] = key;
        const std::string link_id = from == "H" ? "LH_" + to : "L" + from + "_H";
        link_flow[{link_id, bin}] += trips;
    }
    for (const auto& [key, flow] : link_flow) {
        if (key.first.rfind("LH_", 0) != 0) continue;  // outbound only
        data.counts.push_back({key.first, key.second, flow * spec.count_scale});
    }
    return data;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline void write_synthetic_csv(const SyntheticData& data, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw ValidationError(std::string("cannot write ") + name);
        return out;
    };

    {
        auto out = open("cdr.csv");
        write_cdr(out, data.cdr);
    }
    {
        auto out = open("towers.csv");
        out << "tower_id,lat,lon,city,merged_group_id\n";
        for (const Tower& t : data.towers)
            out << t.tower_id << ',' << csv::format_double(t.latitude) << ','
                << csv::format_double(t.longitude) << ',' << t.city << ',' << t.merged_group_id
                << '\n';
    }
    {
        auto out = open("nodes.csv");
        out << "node_id,name\n";
        for (const auto& [id, name] : data.nodes) out << id << ',' << name << '\n';
    }
    {
        auto out = open("node_towers.csv");
        out << "node_id,tower_id\n";
        for (const auto& [node, tower] : data.node_towers) out << node << ',' << tower << '\n';
    }
    {
        auto out = open("links.csv");
        out << "link_id,from_node,to_node,lanes,capacity_vph,free_flow_min,length_km\n";
        for (const RoadLink& l : data.links)
            out << l.link_id << ',' << l.from_node << ',' << l.to_node << ',' << l.lanes << ','
                << csv::format_double(l.capacity_vph) << ',' << csv::format_double(l.free_flow_min)
                << ',' << csv::format_double(l.length_km) << '\n';
    }
    {
        auto out = open("counts.csv");
        out << "link_id,time_bin,vehicles_per_hour\n";
        for (const TrafficCount& c : data.counts)
            out << c.link_id << ',' << c.time_bin << ',' << csv::format_double(c.counted_vehicles)
                << '\n';
    }
    {
        auto out = open("gt_preferences.csv");
        out << "user_id,location,score\n";
        for (std::size_t u = 0; u < data.traveler_ids.size(); ++u) {
            for (std::size_t d = 0; d < data.destination_ids.size(); ++d) {
                double s = 0;
                for (int f = 0; f < data.rank; ++f)
                    s += data.gt_user_factors[u * std::size_t(data.rank) + std::size_t(f)] *
                         data.gt_loc_factors[d * std::size_t(data.rank) + std::size_t(f)];
                out << data.traveler_ids[u] << ',' << data.destination_ids[d] << ','
                    << csv::format_double(s) << '\n';
            }
        }
    }
    {
        auto out = open("gt_od.csv");
        out << "time_bin,origin,destination,trips\n";
        for (const auto& [key, trips] : data.gt_od) {
            const auto& [bin, from, to] = key;
            out << bin << ',' << from << ',' << to << ',' << csv::format_double(trips) << '\n';
        }
    }
}

}  // namespace tdm::synth
