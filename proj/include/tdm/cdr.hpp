#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tdm/csv.hpp"
#include "tdm/errors.hpp"
#include "tdm/timeparse.hpp"

// CDR ingestion: parse and validate raw records, resolve them against the
// tower registry, and reduce them to per-user trajectories and profiles.

namespace tdm {

struct CdrRecord {
    std::string user_id;
    std::int64_t start_time = 0;  // UTC epoch seconds
    std::int64_t end_time = 0;
    std::string tower_id;
    std::string nationality;   // country code
    std::string device_model;  // optional
};

struct Tower {
    std::string tower_id;
    double latitude = 0;
    double longitude = 0;
    std::string city;
    std::string merged_group_id;
};

class TowerRegistry {
public:
    /// Throws DomainError on invalid coordinates or duplicate tower_id.
    void add(Tower t) {
        if (t.latitude < -90.0 || t.latitude > 90.0)
            throw DomainError("tower " + t.tower_id + ": latitude out of range");
        if (t.longitude < -180.0 || t.longitude > 180.0)
            throw DomainError("tower " + t.tower_id + ": longitude out of range");
        if (t.merged_group_id.empty())
            throw DomainError("tower " + t.tower_id + ": empty merged_group_id");
        auto [it, inserted] = towers_.emplace(t.tower_id, std::move(t));
        if (!inserted) throw DomainError("duplicate tower_id: " + it->first);
    }

    const Tower* find(const std::string& tower_id) const {
        auto it = towers_.find(tower_id);
        return it == towers_.end() ? nullptr : &it->second;
    }

    bool contains(const std::string& tower_id) const { return towers_.count(tower_id) != 0; }

    /// Merged-cell-tower group of a tower. Throws DomainError on unknown id.
    const std::string& merged_group_of(const std::string& tower_id) const {
        auto it = towers_.find(tower_id);
        if (it == towers_.end()) throw DomainError("unknown tower_id: " + tower_id);
        return it->second.merged_group_id;
    }

    std::size_t size() const { return towers_.size(); }

    const std::map<std::string, Tower>& towers() const { return towers_; }

private:
    std::map<std::string, Tower> towers_;
};

struct Visit {
    std::string tower_id;
    std::int64_t timestamp = 0;

    bool operator==(const Visit&) const = default;
};

struct Trajectory {
    std::string user_id;
    std::vector<Visit> visits;  // time-sorted, consecutive duplicates collapsed
    std::string group_tag;      // user group g (nationality code)
};

struct UserProfile {
    std::string user_id;
    std::string group_tag;
    std::map<std::string, int> visit_counts;  // location -> visit events
    std::string nationality;
};

struct CdrParseOptions {
    /// Row errors are collected, not fatal, until their fraction of data rows
    /// exceeds this threshold.
    double max_error_fraction = 0.01;
};

struct CdrParseResult {
    std::vector<CdrRecord> records;  // in file order
    std::vector<RowError> errors;
};

// ---------------------------------------------------------------------------
// parse_cdr
// ---------------------------------------------------------------------------

/// Parses cdr.csv (user_id,start_time,end_time,tower_id,nationality,device_model).
/// Timestamps are ISO-8601 or epoch seconds, auto-detected per column from the
/// first parseable row and then required uniformly.
///
/// Throws SchemaError for a missing required column, DataError when the
/// row-error fraction exceeds options.max_error_fraction.
inline CdrParseResult parse_cdr(std::istream& in, const CdrParseOptions& options = {}) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("empty input: missing header");
    const csv::Header header(row);
    const std::size_t c_user = header.require("user_id");
    const std::size_t c_start = header.require("start_time");
    const std::size_t c_end = header.require("end_time");
    const std::size_t c_tower = header.require("tower_id");
    const std::size_t c_nat = header.require("nationality");
    const auto c_model = header.find("device_model");

    CdrParseResult result;
    std::optional<TimestampFormat> start_fmt, end_fmt;
    std::size_t data_rows = 0;

    auto fail = [&](std::size_t line, std::string msg) {
        result.errors.push_back({line, std::move(msg)});
    };

    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        ++data_rows;
        const std::size_t line = reader.line();
        const std::size_t needed = std::max({c_user, c_start, c_end, c_tower, c_nat}) + 1;
        if (row.size() < needed) {
            fail(line, "too few fields");
            continue;
        }
        if (!start_fmt) start_fmt = detect_timestamp_format(row[c_start]);
        if (!end_fmt) end_fmt = detect_timestamp_format(row[c_end]);
        const auto start = start_fmt ? parse_timestamp(row[c_start], *start_fmt) : std::nullopt;
        const auto end = end_fmt ? parse_timestamp(row[c_end], *end_fmt) : std::nullopt;
        if (!start) {
            fail(line, "unparseable start_time: " + row[c_start]);
            continue;
        }
        if (!end) {
            fail(line, "unparseable end_time: " + row[c_end]);
            continue;
        }
        if (*end < *start) {
            fail(line, "end_time before start_time");
            continue;
        }
        if (row[c_user].empty()) {
            fail(line, "empty user_id");
            continue;
        }
        if (row[c_tower].empty()) {
            fail(line, "empty tower_id");
            continue;
        }
        CdrRecord rec;
        rec.user_id = row[c_user];
        rec.start_time = *start;
        rec.end_time = *end;
        rec.tower_id = row[c_tower];
        rec.nationality = row[c_nat];
        if (c_model && *c_model < row.size()) rec.device_model = row[*c_model];
        result.records.push_back(std::move(rec));
    }

    if (!result.errors.empty() &&
        double(result.errors.size()) > options.max_error_fraction * double(data_rows)) {
        throw DataError("row-error fraction " + std::to_string(result.errors.size()) + "/" +
                        std::to_string(data_rows) + " exceeds threshold");
    }
    return result;
}

/// Canonical serialization: fixed column order, epoch-second timestamps.
inline void write_cdr(std::ostream& os, std::span<const CdrRecord> records) {
    const std::vector<std::string> header = {"user_id", "start_time", "end_time",
                                             "tower_id", "nationality", "device_model"};
    csv::write_row(os, header);
    std::vector<std::string> row(6);
    for (const CdrRecord& r : records) {
        row[0] = r.user_id;
        row[1] = std::to_string(r.start_time);
        row[2] = std::to_string(r.end_time);
        row[3] = r.tower_id;
        row[4] = r.nationality;
        row[5] = r.device_model;
        csv::write_row(os, row);
    }
}

/// Parses towers.csv (tower_id,lat,lon,city,merged_group_id).
inline TowerRegistry parse_towers(std::istream& in) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("empty input: missing header");
    const csv::Header header(row);
    const std::size_t c_id = header.require("tower_id");
    const std::size_t c_lat = header.require("lat");
    const std::size_t c_lon = header.require("lon");
    const std::size_t c_city = header.require("city");
    const std::size_t c_group = header.require("merged_group_id");

    TowerRegistry registry;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const std::size_t needed = std::max({c_id, c_lat, c_lon, c_city, c_group}) + 1;
        if (row.size() < needed)
            throw SchemaError("towers line " + std::to_string(reader.line()) + ": too few fields");
        const auto lat = csv::parse_double(row[c_lat]);
        const auto lon = csv::parse_double(row[c_lon]);
        if (!lat || !lon)
            throw SchemaError("towers line " + std::to_string(reader.line()) + ": bad coordinates");
        registry.add(Tower{row[c_id], *lat, *lon, row[c_city], row[c_group]});
    }
    return registry;
}

// ---------------------------------------------------------------------------
// build_trajectories
// ---------------------------------------------------------------------------

struct TrajectoryBuildResult {
    std::vector<Trajectory> trajectories;  // sorted by user_id
    std::vector<RowError> errors;          // line = 1-based record index
};

/// One Trajectory per user, visits sorted by start_time and consecutive
/// duplicate towers collapsed into one visit event (keeping the first
/// timestamp). Records with unknown tower_id are reported and skipped.
///
/// Tie-break for equal start_times is (end_time, tower_id) so the result is
/// independent of record input order.
inline TrajectoryBuildResult build_trajectories(std::span<const CdrRecord> records,
                                                const TowerRegistry& towers) {
    TrajectoryBuildResult result;
    std::map<std::string, std::vector<const CdrRecord*>> per_user;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const CdrRecord& r = records[i];
        if (!towers.contains(r.tower_id)) {
            result.errors.push_back({i + 1, "unknown tower_id: " + r.tower_id});
            continue;
        }
        per_user[r.user_id].push_back(&r);
    }
    for (auto& [user, recs] : per_user) {
        std::sort(recs.begin(), recs.end(), [](const CdrRecord* a, const CdrRecord* b) {
            if (a->start_time != b->start_time) return a->start_time < b->start_time;
            if (a->end_time != b->end_time) return a->end_time < b->end_time;
            return a->tower_id < b->tower_id;
        });
        Trajectory traj;
        traj.user_id = user;
        traj.group_tag = recs.front()->nationality;
        for (const CdrRecord* r : recs) {
            if (!traj.visits.empty() && traj.visits.back().tower_id == r->tower_id) continue;
            traj.visits.push_back({r->tower_id, r->start_time});
        }
        result.trajectories.push_back(std::move(traj));
    }
    return result;
}

// ---------------------------------------------------------------------------
// build_profiles
// ---------------------------------------------------------------------------

/// visit_counts[j] = number of visit events at location j (tower resolution).
inline std::vector<UserProfile> build_profiles(std::span<const Trajectory> trajectories) {
    std::vector<UserProfile> profiles;
    profiles.reserve(trajectories.size());
    for (const Trajectory& t : trajectories) {
        UserProfile p;
        p.user_id = t.user_id;
        p.group_tag = t.group_tag;
        p.nationality = t.group_tag;
        for (const Visit& v : t.visits) ++p.visit_counts[v.tower_id];
        profiles.push_back(std::move(p));
    }
    return profiles;
}

// ---------------------------------------------------------------------------
// filter_tourists
// ---------------------------------------------------------------------------

struct TouristFilterOptions {
    std::string home_country;
    /// Keep only users whose trace includes more than one distinct cell tower.
    bool require_multiple_towers = false;
};

inline std::vector<UserProfile> filter_tourists(std::span<const UserProfile> profiles,
                                                const TouristFilterOptions& options) {
    std::vector<UserProfile> out;
    for (const UserProfile& p : profiles) {
        if (p.nationality == options.home_country) continue;
        if (options.require_multiple_towers && p.visit_counts.size() <= 1) continue;
        out.push_back(p);
    }
    return out;
}

}  // namespace tdm
