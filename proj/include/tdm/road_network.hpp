#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "tdm/csv.hpp"
#include "tdm/errors.hpp"

// Road graph, O-D routing, and BPR volume-delay times. The network is
// immutable after load; all queries are read-only.

namespace tdm {

struct RoadLink {
    std::string link_id;
    std::string from_node;
    std::string to_node;
    int lanes = 1;
    double capacity_vph = 0;    // C, vehicles/hour
    double free_flow_min = 0;   // t_free-flow, minutes
    double length_km = -1;      // < 0 means not provided
};

struct BprParams {
    double alpha = 0.15;
    double beta = 4.0;
};

/// t_simulated = t_free-flow * (1 + alpha * (V/C)^beta). Monotone
/// non-decreasing in volume; returns t_free-flow exactly at volume 0.
inline double bpr_time(double free_flow_min, double volume_vph, double capacity_vph,
                       const BprParams& params = {}) {
    if (volume_vph < 0) throw DomainError("bpr_time: negative volume");
    if (capacity_vph <= 0) throw DomainError("bpr_time: capacity must be positive");
    return free_flow_min * (1.0 + params.alpha * std::pow(volume_vph / capacity_vph, params.beta));
}

inline double bpr_time(const RoadLink& link, double volume_vph, const BprParams& params = {}) {
    return bpr_time(link.free_flow_min, volume_vph, link.capacity_vph, params);
}

/// Delay caused by congestion: t_simulated - t_free-flow, minutes, >= 0.
inline double link_delay(double free_flow_min, double volume_vph, double capacity_vph,
                         const BprParams& params = {}) {
    return bpr_time(free_flow_min, volume_vph, capacity_vph, params) - free_flow_min;
}

inline double link_delay(const RoadLink& link, double volume_vph, const BprParams& params = {}) {
    return link_delay(link.free_flow_min, volume_vph, link.capacity_vph, params);
}

class RoadNetwork {
public:
    void add_node(const std::string& node_id, const std::string& name = "") {
        if (node_pos_.count(node_id)) throw DomainError("duplicate node_id: " + node_id);
        node_pos_.emplace(node_id, int(node_ids_.size()));
        node_ids_.push_back(node_id);
        node_names_.push_back(name.empty() ? node_id : name);
        out_links_.emplace_back();
    }

    /// Directed link; a two-way road is two links. Validates the link
    /// invariants and that both endpoints exist.
    void add_link(RoadLink link) {
        if (link.capacity_vph <= 0) throw DomainError("link " + link.link_id + ": capacity must be > 0");
        if (link.free_flow_min <= 0) throw DomainError("link " + link.link_id + ": free_flow_min must be > 0");
        if (link.lanes < 1) throw DomainError("link " + link.link_id + ": lanes must be >= 1");
        if (link_pos_.count(link.link_id)) throw DomainError("duplicate link_id: " + link.link_id);
        const int from = node_index(link.from_node);
        const int to = node_index(link.to_node);
        const int idx = int(links_.size());
        link_pos_.emplace(link.link_id, idx);
        links_.push_back(std::move(link));
        link_from_.push_back(from);
        link_to_.push_back(to);
        out_links_[std::size_t(from)].push_back(idx);
        ranks_dirty_ = true;
    }

    /// Every tower maps to exactly one node.
    void map_tower(const std::string& tower_id, const std::string& node_id) {
        const int node = node_index(node_id);
        auto [it, inserted] = tower_node_.emplace(tower_id, node);
        if (!inserted && it->second != node)
            throw DomainError("tower " + tower_id + " mapped to multiple nodes");
    }

    int n_nodes() const { return int(node_ids_.size()); }
    int n_links() const { return int(links_.size()); }

    int node_index(const std::string& node_id) const {
        auto it = node_pos_.find(node_id);
        if (it == node_pos_.end()) throw DomainError("unknown node_id: " + node_id);
        return it->second;
    }
    const std::string& node_id(int index) const { return node_ids_.at(std::size_t(index)); }
    const std::string& node_name(int index) const { return node_names_.at(std::size_t(index)); }

    int link_index(const std::string& link_id) const {
        auto it = link_pos_.find(link_id);
        if (it == link_pos_.end()) throw DomainError("unknown link_id: " + link_id);
        return it->second;
    }
    const RoadLink& link(int index) const { return links_.at(std::size_t(index)); }
    std::span<const RoadLink> links() const { return links_; }
    int link_from(int index) const { return link_from_.at(std::size_t(index)); }
    int link_to(int index) const { return link_to_.at(std::size_t(index)); }

    std::optional<int> node_of_tower(const std::string& tower_id) const {
        auto it = tower_node_.find(tower_id);
        if (it == tower_node_.end()) return std::nullopt;
        return it->second;
    }
    const std::map<std::string, int>& tower_nodes() const { return tower_node_; }

    /// Minimum free-flow-time path as link indices; among equal-cost paths the
    /// lexicographically smallest link_id sequence. Empty path when
    /// origin == destination; nullopt when unreachable.
    std::optional<std::vector<int>> try_route(int origin, int destination) const {
        check_node(origin);
        check_node(destination);
        if (origin == destination) return std::vector<int>{};
        refresh_ranks();

        struct Entry {
            double cost;
            std::vector<int> path;  // link indices
            int node;
        };
        // Min-order on (cost, link-id-rank sequence). Keys strictly increase
        // along edges (free_flow_min > 0), so the first settle is optimal.
        auto greater = [this](const Entry& a, const Entry& b) {
            if (a.cost != b.cost) return a.cost > b.cost;
            return rank_greater(a.path, b.path);
        };
        std::priority_queue<Entry, std::vector<Entry>, decltype(greater)> queue(greater);
        std::vector<char> settled(std::size_t(n_nodes()), 0);
        queue.push({0.0, {}, origin});
        while (!queue.empty()) {
            Entry top = queue.top();
            queue.pop();
            if (settled[std::size_t(top.node)]) continue;
            settled[std::size_t(top.node)] = 1;
            if (top.node == destination) return std::move(top.path);
            for (int li : out_links_[std::size_t(top.node)]) {
                const int to = link_to_[std::size_t(li)];
                if (settled[std::size_t(to)]) continue;
                Entry next{top.cost + links_[std::size_t(li)].free_flow_min, top.path, to};
                next.path.push_back(li);
                queue.push(std::move(next));
            }
        }
        return std::nullopt;
    }

    /// As try_route; throws NoPathError when unreachable.
    std::vector<int> route_indices(int origin, int destination) const {
        auto path = try_route(origin, destination);
        if (!path)
            throw NoPathError("no path from " + node_id(origin) + " to " + node_id(destination));
        return std::move(*path);
    }

    std::vector<std::string> route(const std::string& origin, const std::string& destination) const {
        std::vector<std::string> ids;
        for (int li : route_indices(node_index(origin), node_index(destination)))
            ids.push_back(links_[std::size_t(li)].link_id);
        return ids;
    }

    double path_free_flow_min(std::span<const int> link_indices) const {
        double total = 0;
        for (int li : link_indices) total += links_.at(std::size_t(li)).free_flow_min;
        return total;
    }

private:
    void check_node(int node) const {
        if (node < 0 || node >= n_nodes()) throw DomainError("node index out of range");
    }

    // Rank of each link when link_ids are sorted; lexicographic comparison of
    // rank sequences equals lexicographic comparison of link_id sequences.
    void refresh_ranks() const {
        if (!ranks_dirty_) return;
        std::vector<int> order(links_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
        std::sort(order.begin(), order.end(), [this](int a, int b) {
            return links_[std::size_t(a)].link_id < links_[std::size_t(b)].link_id;
        });
        link_rank_.assign(links_.size(), 0);
        for (std::size_t r = 0; r < order.size(); ++r) link_rank_[std::size_t(order[r])] = int(r);
        ranks_dirty_ = false;
    }

    bool rank_greater(const std::vector<int>& a, const std::vector<int>& b) const {
        const std::size_t n = std::min(a.size(), b.size());
        for (std::size_t i = 0; i < n; ++i) {
            const int ra = link_rank_[std::size_t(a[i])];
            const int rb = link_rank_[std::size_t(b[i])];
            if (ra != rb) return ra > rb;
        }
        return a.size() > b.size();
    }

    std::vector<std::string> node_ids_;
    std::vector<std::string> node_names_;
    std::map<std::string, int> node_pos_;
    std::vector<RoadLink> links_;
    std::vector<int> link_from_, link_to_;
    std::map<std::string, int> link_pos_;
    std::vector<std::vector<int>> out_links_;
    std::map<std::string, int> tower_node_;
    mutable std::vector<int> link_rank_;
    mutable bool ranks_dirty_ = true;
};

// ---------------------------------------------------------------------------
// CSV loaders (links.csv, nodes.csv, node_towers.csv)
// ---------------------------------------------------------------------------

inline void load_nodes(std::istream& in, RoadNetwork& net) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("nodes: empty input");
    const csv::Header header(row);
    const std::size_t c_id = header.require("node_id");
    const auto c_name = header.find("name");
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        std::string name = (c_name && *c_name < row.size()) ? row[*c_name] : "";
        net.add_node(row.at(c_id), name);
    }
}

inline void load_links(std::istream& in, RoadNetwork& net) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("links: empty input");
    const csv::Header header(row);
    const std::size_t c_id = header.require("link_id");
    const std::size_t c_from = header.require("from_node");
    const std::size_t c_to = header.require("to_node");
    const std::size_t c_lanes = header.require("lanes");
    const std::size_t c_cap = header.require("capacity_vph");
    const std::size_t c_fft = header.require("free_flow_min");
    const auto c_len = header.find("length_km");
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        RoadLink link;
        link.link_id = row.at(c_id);
        link.from_node = row.at(c_from);
        link.to_node = row.at(c_to);
        const auto lanes = csv::parse_int(row.at(c_lanes));
        const auto cap = csv::parse_double(row.at(c_cap));
        const auto fft = csv::parse_double(row.at(c_fft));
        if (!lanes || !cap || !fft)
            throw SchemaError("links line " + std::to_string(reader.line()) + ": bad numeric field");
        link.lanes = int(*lanes);
        link.capacity_vph = *cap;
        link.free_flow_min = *fft;
        if (c_len && *c_len < row.size() && !row[*c_len].empty()) {
            const auto len = csv::parse_double(row[*c_len]);
            if (!len) throw SchemaError("links line " + std::to_string(reader.line()) + ": bad length_km");
            link.length_km = *len;
        }
        net.add_link(std::move(link));
    }
}

inline void load_node_towers(std::istream& in, RoadNetwork& net) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("node_towers: empty input");
    const csv::Header header(row);
    const std::size_t c_node = header.require("node_id");
    const std::size_t c_tower = header.require("tower_id");
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        net.map_tower(row.at(c_tower), row.at(c_node));
    }
}

}  // namespace tdm
