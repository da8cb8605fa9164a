#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdm/cdr.hpp"
#include "tdm/csv.hpp"
#include "tdm/demand.hpp"
#include "tdm/errors.hpp"
#include "tdm/nextloc.hpp"
#include "tdm/optimizer.hpp"
#include "tdm/preference.hpp"
#include "tdm/rng.hpp"
#include "tdm/road_network.hpp"
#include "tdm/scenario.hpp"
#include "tdm/synthetic.hpp"

// Pipeline stages behind the CLI subcommands. Every stage is idempotent given
// identical inputs and seed; artifacts are flat files in the output directory,
// each with a sibling <name>.manifest.json recording the tool version, seed,
// config echo, input hashes, and the artifact's own hash (staleness and
// tamper detection).

namespace tdm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kToolName = "tdm";
constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// hashing + manifests
// ---------------------------------------------------------------------------

inline std::string file_hash_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file for hashing: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(std::string_view(buf, std::size_t(in.gcount())), h);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

inline fs::path manifest_path(const fs::path& artifact) {
    return artifact.string() + ".manifest.json";
}

inline void write_manifest(const fs::path& artifact, const std::string& subcommand,
                           std::uint64_t seed, const json& config_echo,
                           const std::vector<fs::path>& inputs) {
    json m;
    m["artifact"] = artifact.filename().string();
    m["tool"] = kToolName;
    m["version"] = kToolVersion;
    m["subcommand"] = subcommand;
    m["seed"] = seed;
    m["config"] = config_echo;
    json in = json::object();
    for (const fs::path& p : inputs) in[p.string()] = file_hash_hex(p);
    m["inputs"] = in;
    m["output_hash"] = file_hash_hex(artifact);
    std::ofstream out(manifest_path(artifact), std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest for " + artifact.string());
    out << m.dump(2) << '\n';
}

/// Missing upstream artifact -> actionable error naming the producing
/// subcommand.
inline void require_artifact(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw ValidationError("missing artifact " + path.string() + "; run `tdm " + producer +
                              "` first");
}

/// When the artifact carries a manifest, its recorded hash must match the
/// bytes on disk (stale or hand-edited artifacts are rejected).
inline void verify_manifest(const fs::path& artifact) {
    const fs::path mpath = manifest_path(artifact);
    if (!fs::exists(mpath)) return;
    std::ifstream in(mpath, std::ios::binary);
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw ValidationError("unreadable manifest " + mpath.string() + ": " + e.what());
    }
    const std::string recorded = m.value("output_hash", "");
    const std::string actual = file_hash_hex(artifact);
    if (!recorded.empty() && recorded != actual)
        throw ValidationError("artifact " + artifact.string() +
                              " does not match its manifest (stale or modified); re-run `tdm " +
                              m.value("subcommand", "<producer>") + "`");
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct NetPaths {
    fs::path nodes, links, node_towers;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    fs::path out = "out";
    // inputs
    fs::path cdr, towers, counts, background;
    NetPaths net;
    // synthetic
    synth::SyntheticSpec synthetic;
    // ingest
    std::string home_country;
    bool min_towers = false;
    double max_error_fraction = 0.01;
    // preference
    MfHyperparams mf;
    std::string resolution = "node";  // tower | merged | node
    // recommend
    double theta = 0.0;
    int top_n = 5;
    bool exclude_visited = false;
    bool allow_stay = true;
    bool compute_lp_bound = true;
    double trips_per_traveler = 1.0;
    std::vector<int> slot_hours = {9};
    // scenario
    std::vector<double> rho_grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> theta_grid;
    int peak_hour = -1;
    BprParams bpr;
    // nextloc
    std::string nextloc_resolution = "tower";  // tower | merged
    double markov_smoothing = 0.1;
    nextloc::LstmHyperparams rnn;
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const json& root) : root_(root) {}

    template <typename T>
    void get(const json& obj, const std::string& section, const std::string& key, T& out) {
        if (!obj.contains(key)) return;
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception&) {
            problems_.push_back(path(section, key) + ": wrong type");
        }
    }

    const json* section(const std::string& name) {
        if (!root_.contains(name)) return nullptr;
        if (!root_.at(name).is_object()) {
            problems_.push_back(name + ": must be an object");
            return nullptr;
        }
        return &root_.at(name);
    }

    void require(bool ok, const std::string& field, const std::string& message) {
        if (!ok) problems_.push_back(field + ": " + message);
    }

    void finish() const {
        if (problems_.empty()) return;
        std::string report = "invalid config:";
        for (const std::string& p : problems_) report += "\n  " + p;
        throw ValidationError(report);
    }

private:
    static std::string path(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }
    const json& root_;
    std::vector<std::string> problems_;
};

}  // namespace detail

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config: " + path.string());
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }

    PipelineConfig c;
    detail::ConfigReader r(root);
    std::string out_str = c.out.string();
    r.get(root, "", "seed", c.seed);
    r.get(root, "", "out", out_str);
    c.out = out_str;

    if (const json* paths = r.section("paths")) {
        auto get_path = [&](const char* key, fs::path& dst) {
            std::string s;
            r.get(*paths, "paths", key, s);
            if (!s.empty()) dst = s;
        };
        get_path("cdr", c.cdr);
        get_path("towers", c.towers);
        get_path("counts", c.counts);
        get_path("background", c.background);
        get_path("nodes", c.net.nodes);
        get_path("links", c.net.links);
        get_path("node_towers", c.net.node_towers);
    }
    if (const json* s = r.section("synthetic")) {
        r.get(*s, "synthetic", "n_destinations", c.synthetic.n_destinations);
        r.get(*s, "synthetic", "n_travelers", c.synthetic.n_travelers);
        r.get(*s, "synthetic", "rank", c.synthetic.rank);
        r.get(*s, "synthetic", "noise_sd", c.synthetic.noise_sd);
        r.get(*s, "synthetic", "towers_per_node", c.synthetic.towers_per_node);
        r.get(*s, "synthetic", "trips_min", c.synthetic.trips_min);
        r.get(*s, "synthetic", "trips_max", c.synthetic.trips_max);
        r.get(*s, "synthetic", "hot_factor", c.synthetic.hot_factor);
        r.get(*s, "synthetic", "capacity_popular_vph", c.synthetic.capacity_popular_vph);
        r.get(*s, "synthetic", "capacity_other_vph", c.synthetic.capacity_other_vph);
        r.get(*s, "synthetic", "free_flow_popular_min", c.synthetic.free_flow_popular_min);
        r.get(*s, "synthetic", "free_flow_other_min", c.synthetic.free_flow_other_min);
        r.get(*s, "synthetic", "count_scale", c.synthetic.count_scale);
        r.get(*s, "synthetic", "peak_hour", c.synthetic.peak_hour);
        r.get(*s, "synthetic", "home_country", c.synthetic.home_country);
        r.get(*s, "synthetic", "nationalities", c.synthetic.nationalities);
    }
    if (const json* s = r.section("ingest")) {
        r.get(*s, "ingest", "home_country", c.home_country);
        r.get(*s, "ingest", "min_towers", c.min_towers);
        r.get(*s, "ingest", "max_error_fraction", c.max_error_fraction);
        r.require(c.max_error_fraction >= 0 && c.max_error_fraction <= 1,
                  "ingest.max_error_fraction", "must be in [0, 1]");
    }
    if (const json* s = r.section("preference")) {
        r.get(*s, "preference", "k", c.mf.k);
        r.get(*s, "preference", "lambda", c.mf.lambda);
        r.get(*s, "preference", "epochs", c.mf.epochs);
        r.get(*s, "preference", "learning_rate", c.mf.learning_rate);
        r.get(*s, "preference", "w0", c.mf.w0);
        r.get(*s, "preference", "include_unobserved", c.mf.include_unobserved);
        r.get(*s, "preference", "resolution", c.resolution);
        r.require(c.mf.k >= 1, "preference.k", "must be >= 1");
        r.require(c.mf.lambda >= 0, "preference.lambda", "must be >= 0");
        r.require(c.mf.epochs >= 0, "preference.epochs", "must be >= 0");
        r.require(c.resolution == "tower" || c.resolution == "merged" || c.resolution == "node",
                  "preference.resolution", "must be tower | merged | node");
    }
    if (const json* s = r.section("recommend")) {
        r.get(*s, "recommend", "theta", c.theta);
        r.get(*s, "recommend", "top_n", c.top_n);
        r.get(*s, "recommend", "exclude_visited", c.exclude_visited);
        r.get(*s, "recommend", "allow_stay", c.allow_stay);
        r.get(*s, "recommend", "lp_bound", c.compute_lp_bound);
        r.get(*s, "recommend", "trips_per_traveler", c.trips_per_traveler);
        r.get(*s, "recommend", "slots", c.slot_hours);
        r.require(c.theta >= -1, "recommend.theta", "must be >= -1");
        r.require(c.top_n >= 1, "recommend.top_n", "must be >= 1");
        r.require(!c.slot_hours.empty(), "recommend.slots", "must be non-empty");
        for (int h : c.slot_hours)
            r.require(h >= 0 && h < 24, "recommend.slots", "hours must be in [0, 24)");
    }
    if (const json* s = r.section("scenario")) {
        r.get(*s, "scenario", "rho_grid", c.rho_grid);
        r.get(*s, "scenario", "theta_grid", c.theta_grid);
        r.get(*s, "scenario", "peak_hour", c.peak_hour);
        if (s->contains("bpr")) {
            const json& b = s->at("bpr");
            r.get(b, "scenario.bpr", "alpha", c.bpr.alpha);
            r.get(b, "scenario.bpr", "beta", c.bpr.beta);
        }
        for (double rho : c.rho_grid)
            r.require(rho >= 0 && rho <= 1, "scenario.rho_grid", "values must be in [0, 1]");
        r.require(c.bpr.alpha >= 0, "scenario.bpr.alpha", "must be >= 0");
        r.require(c.bpr.beta >= 1, "scenario.bpr.beta", "must be >= 1");
    }
    if (const json* s = r.section("nextloc")) {
        r.get(*s, "nextloc", "resolution", c.nextloc_resolution);
        r.get(*s, "nextloc", "markov_smoothing", c.markov_smoothing);
        if (s->contains("rnn")) {
            const json& n = s->at("rnn");
            r.get(n, "nextloc.rnn", "embed_dim", c.rnn.embed_dim);
            r.get(n, "nextloc.rnn", "hidden_dim", c.rnn.hidden_dim);
            r.get(n, "nextloc.rnn", "epochs", c.rnn.epochs);
            r.get(n, "nextloc.rnn", "learning_rate", c.rnn.learning_rate);
            r.get(n, "nextloc.rnn", "clip_norm", c.rnn.clip_norm);
            r.get(n, "nextloc.rnn", "bptt_window", c.rnn.bptt_window);
        }
        r.require(c.nextloc_resolution == "tower" || c.nextloc_resolution == "merged",
                  "nextloc.resolution", "must be tower | merged");
    }
    r.finish();
    return c;
}

// ---------------------------------------------------------------------------
// artifact readers / writers
// ---------------------------------------------------------------------------

inline std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const fs::path& path) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

inline RoadNetwork load_network(const NetPaths& paths) {
    RoadNetwork net;
    auto nodes = open_input(paths.nodes);
    load_nodes(nodes, net);
    auto links = open_input(paths.links);
    load_links(links, net);
    auto towers = open_input(paths.node_towers);
    load_node_towers(towers, net);
    return net;
}

inline void write_trajectories(const fs::path& path, std::span<const Trajectory> trajectories) {
    auto out = open_output(path);
    out << "user_id,tower_id,timestamp,group_tag\n";
    for (const Trajectory& t : trajectories)
        for (const Visit& v : t.visits)
            out << csv::escape(t.user_id) << ',' << csv::escape(v.tower_id) << ',' << v.timestamp
                << ',' << csv::escape(t.group_tag) << '\n';
}

inline std::vector<Trajectory> read_trajectories(const fs::path& path) {
    auto in = open_input(path);
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("trajectories: empty input");
    const csv::Header header(row);
    const std::size_t c_user = header.require("user_id");
    const std::size_t c_tower = header.require("tower_id");
    const std::size_t c_ts = header.require("timestamp");
    const std::size_t c_group = header.require("group_tag");
    std::vector<Trajectory> out;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const auto ts = csv::parse_int(row.at(c_ts));
        if (!ts)
            throw SchemaError("trajectories line " + std::to_string(reader.line()) +
                              ": bad timestamp");
        if (out.empty() || out.back().user_id != row[c_user]) {
            Trajectory t;
            t.user_id = row[c_user];
            t.group_tag = row[c_group];
            out.push_back(std::move(t));
        }
        out.back().visits.push_back({row[c_tower], *ts});
    }
    return out;
}

inline void write_profiles(const fs::path& path, std::span<const UserProfile> profiles) {
    auto out = open_output(path);
    out << "user_id,nationality,group_tag,location,count\n";
    for (const UserProfile& p : profiles)
        for (const auto& [loc, count] : p.visit_counts)
            out << csv::escape(p.user_id) << ',' << csv::escape(p.nationality) << ','
                << csv::escape(p.group_tag) << ',' << csv::escape(loc) << ',' << count << '\n';
}

inline std::vector<UserProfile> read_profiles(const fs::path& path) {
    auto in = open_input(path);
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("profiles: empty input");
    const csv::Header header(row);
    const std::size_t c_user = header.require("user_id");
    const std::size_t c_nat = header.require("nationality");
    const std::size_t c_group = header.require("group_tag");
    const std::size_t c_loc = header.require("location");
    const std::size_t c_count = header.require("count");
    std::vector<UserProfile> out;
    std::map<std::string, std::size_t> index;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const auto count = csv::parse_int(row.at(c_count));
        if (!count)
            throw SchemaError("profiles line " + std::to_string(reader.line()) + ": bad count");
        auto [it, inserted] = index.emplace(row[c_user], out.size());
        if (inserted) {
            UserProfile p;
            p.user_id = row[c_user];
            p.nationality = row[c_nat];
            p.group_tag = row[c_group];
            out.push_back(std::move(p));
        }
        out[it->second].visit_counts[row[c_loc]] += int(*count);
    }
    return out;
}

inline void write_od(const fs::path& path, std::span<const OdMatrix> od) {
    auto out = open_output(path);
    out << "time_bin,origin,destination,trips\n";
    for (const OdMatrix& m : od)
        for (const auto& [pair, trips] : m.entries)
            out << m.time_bin << ',' << csv::escape(pair.first) << ',' << csv::escape(pair.second)
                << ',' << csv::format_double(trips) << '\n';
}

inline std::vector<OdMatrix> read_od(const fs::path& path) {
    auto in = open_input(path);
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("od: empty input");
    const csv::Header header(row);
    const std::size_t c_bin = header.require("time_bin");
    const std::size_t c_o = header.require("origin");
    const std::size_t c_d = header.require("destination");
    const std::size_t c_t = header.require("trips");
    std::map<int, OdMatrix> bins;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const auto bin = csv::parse_int(row.at(c_bin));
        const auto trips = csv::parse_double(row.at(c_t));
        if (!bin || !trips)
            throw SchemaError("od line " + std::to_string(reader.line()) + ": bad numeric field");
        OdMatrix& m = bins[int(*bin)];
        m.time_bin = int(*bin);
        m.entries[{row[c_o], row[c_d]}] += *trips;
    }
    std::vector<OdMatrix> out;
    for (auto& [bin, m] : bins) out.push_back(std::move(m));
    return out;
}

inline std::vector<TrafficCount> read_counts(const fs::path& path) {
    auto in = open_input(path);
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("counts: empty input");
    const csv::Header header(row);
    const std::size_t c_link = header.require("link_id");
    const std::size_t c_bin = header.require("time_bin");
    const std::size_t c_v = header.require("vehicles_per_hour");
    std::vector<TrafficCount> out;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const auto bin = csv::parse_int(row.at(c_bin));
        const auto v = csv::parse_double(row.at(c_v));
        if (!bin || !v)
            throw SchemaError("counts line " + std::to_string(reader.line()) + ": bad numeric field");
        out.push_back({row[c_link], int(*bin), *v});
    }
    return out;
}

inline void write_flows(const fs::path& path, std::span<const LinkFlow> flows) {
    auto out = open_output(path);
    out << "link_id,time_bin,cdr_flow,scale_factor,vehicle_flow\n";
    for (const LinkFlow& f : flows)
        out << csv::escape(f.link_id) << ',' << f.time_bin << ',' << csv::format_double(f.cdr_flow)
            << ',' << csv::format_double(f.scale_factor) << ','
            << csv::format_double(f.vehicle_flow) << '\n';
}

/// Reads flows.csv as background vehicle flows keyed (link_id, time_bin).
inline FlowMap read_flows_as_background(const fs::path& path) {
    auto in = open_input(path);
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.read_row(row)) throw SchemaError("flows: empty input");
    const csv::Header header(row);
    const std::size_t c_link = header.require("link_id");
    const std::size_t c_bin = header.require("time_bin");
    const std::size_t c_v = header.require("vehicle_flow");
    FlowMap out;
    while (reader.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        const auto bin = csv::parse_int(row.at(c_bin));
        const auto v = csv::parse_double(row.at(c_v));
        if (!bin || !v)
            throw SchemaError("flows line " + std::to_string(reader.line()) + ": bad numeric field");
        out[{row[c_link], int(*bin)}] += *v;
    }
    return out;
}

// preference model <-> JSON
inline json model_to_json(const PreferenceModel& model, const std::string& resolution) {
    json j;
    j["format"] = "tdm-preference-model";
    j["format_version"] = 1;
    j["resolution"] = resolution;
    j["k"] = model.k;
    j["n_users"] = model.n_users;
    j["n_locations"] = model.n_locations;
    j["seed"] = model.seed;
    j["hyperparams"] = {{"lambda", model.hyper.lambda},
                        {"epochs", model.hyper.epochs},
                        {"learning_rate", model.hyper.learning_rate},
                        {"w0", model.hyper.w0},
                        {"include_unobserved", model.hyper.include_unobserved}};
    j["user_ids"] = model.user_ids;
    j["location_ids"] = model.location_ids;
    j["user_factors"] = model.user_factors;
    j["loc_factors"] = model.loc_factors;
    j["visited"] = model.visited;
    j["epoch_loss"] = model.epoch_loss;
    return j;
}

inline PreferenceModel model_from_json(const json& j, std::string* resolution = nullptr) {
    if (j.value("format", "") != "tdm-preference-model")
        throw ValidationError("model file is not a tdm preference model");
    PreferenceModel model;
    model.k = j.at("k").get<int>();
    model.n_users = j.at("n_users").get<int>();
    model.n_locations = j.at("n_locations").get<int>();
    model.seed = j.at("seed").get<std::uint64_t>();
    const json& h = j.at("hyperparams");
    model.hyper.k = model.k;
    model.hyper.lambda = h.at("lambda").get<double>();
    model.hyper.epochs = h.at("epochs").get<int>();
    model.hyper.learning_rate = h.at("learning_rate").get<double>();
    model.hyper.w0 = h.at("w0").get<double>();
    model.hyper.include_unobserved = h.at("include_unobserved").get<bool>();
    model.user_ids = j.at("user_ids").get<std::vector<std::string>>();
    model.location_ids = j.at("location_ids").get<std::vector<std::string>>();
    model.user_factors = j.at("user_factors").get<std::vector<double>>();
    model.loc_factors = j.at("loc_factors").get<std::vector<double>>();
    model.visited = j.at("visited").get<std::vector<std::vector<int>>>();
    if (j.contains("epoch_loss")) model.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    if (model.user_factors.size() != std::size_t(model.n_users) * std::size_t(model.k) ||
        model.loc_factors.size() != std::size_t(model.n_locations) * std::size_t(model.k))
        throw ValidationError("model file: factor array sizes do not match dims");
    if (resolution) *resolution = j.value("resolution", "node");
    return model;
}

// ---------------------------------------------------------------------------
// traveler derivation
// ---------------------------------------------------------------------------

/// Origin node = most frequent observed node (ties: smallest node id);
/// preferred slot = modal visit hour among the slot hours (ties: earlier
/// slot; no visit in any slot hour: slot 0).
inline std::vector<Traveler> derive_travelers(std::span<const Trajectory> trajectories,
                                              const RoadNetwork& network,
                                              std::span<const int> slot_hours) {
    std::vector<Traveler> travelers;
    travelers.reserve(trajectories.size());
    for (const Trajectory& t : trajectories) {
        std::map<int, int> node_counts;
        std::map<int, int> hour_counts;
        for (const Visit& v : t.visits) {
            const auto node = network.node_of_tower(v.tower_id);
            if (!node) throw DomainError("tower " + v.tower_id + " is not mapped to any node");
            ++node_counts[*node];
            ++hour_counts[hour_bin(v.timestamp)];
        }
        int home = -1, best = -1;
        std::string home_id;
        for (const auto& [node, count] : node_counts) {
            const std::string& id = network.node_id(node);
            if (count > best || (count == best && id < home_id)) {
                best = count;
                home = node;
                home_id = id;
            }
        }
        int preferred = 0, best_hour_count = 0;
        for (std::size_t s = 0; s < slot_hours.size(); ++s) {
            auto it = hour_counts.find(slot_hours[s]);
            const int count = it == hour_counts.end() ? 0 : it->second;
            if (count > best_hour_count) {
                best_hour_count = count;
                preferred = int(s);
            }
        }
        travelers.push_back({t.user_id, home, preferred});
    }
    return travelers;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

inline void run_gen_synthetic(const PipelineConfig& config) {
    synth::SyntheticSpec spec = config.synthetic;
    spec.seed = config.seed;
    const synth::SyntheticData data = synth::generate_synthetic(spec);
    synth::write_synthetic_csv(data, config.out);
    const json echo = {{"n_destinations", spec.n_destinations},
                       {"n_travelers", spec.n_travelers},
                       {"rank", spec.rank},
                       {"noise_sd", spec.noise_sd},
                       {"hot_factor", spec.hot_factor}};
    for (const char* name : {"cdr.csv", "towers.csv", "nodes.csv", "node_towers.csv", "links.csv",
                             "counts.csv", "gt_preferences.csv", "gt_od.csv"})
        write_manifest(config.out / name, "gen-synthetic", spec.seed, echo, {});
}

struct IngestSummary {
    std::size_t records = 0;
    std::size_t parse_errors = 0;
    std::size_t trajectory_errors = 0;
    std::size_t users = 0;
    std::size_t tourists = 0;
};

inline IngestSummary run_ingest(const PipelineConfig& config) {
    require_artifact(config.cdr, "gen-synthetic");
    require_artifact(config.towers, "gen-synthetic");
    verify_manifest(config.cdr);
    verify_manifest(config.towers);

    auto cdr_in = open_input(config.cdr);
    const CdrParseResult parsed = parse_cdr(cdr_in, {.max_error_fraction = config.max_error_fraction});
    auto towers_in = open_input(config.towers);
    const TowerRegistry registry = parse_towers(towers_in);
    const TrajectoryBuildResult built = build_trajectories(parsed.records, registry);
    std::vector<UserProfile> profiles = build_profiles(built.trajectories);

    IngestSummary summary;
    summary.records = parsed.records.size();
    summary.parse_errors = parsed.errors.size();
    summary.trajectory_errors = built.errors.size();
    summary.users = profiles.size();

    std::vector<Trajectory> kept_trajectories = built.trajectories;
    if (!config.home_country.empty()) {
        profiles = filter_tourists(
            profiles, {.home_country = config.home_country,
                       .require_multiple_towers = config.min_towers});
        std::set<std::string> kept;
        for (const UserProfile& p : profiles) kept.insert(p.user_id);
        std::vector<Trajectory> filtered;
        for (Trajectory& t : kept_trajectories)
            if (kept.count(t.user_id)) filtered.push_back(std::move(t));
        kept_trajectories = std::move(filtered);
    }
    summary.tourists = profiles.size();

    write_trajectories(config.out / "trajectories.csv", kept_trajectories);
    write_profiles(config.out / "profiles.csv", profiles);
    {
        json report;
        report["records"] = summary.records;
        report["parse_errors"] = json::array();
        for (const RowError& e : parsed.errors)
            report["parse_errors"].push_back({{"line", e.line}, {"message", e.message}});
        report["trajectory_errors"] = json::array();
        for (const RowError& e : built.errors)
            report["trajectory_errors"].push_back({{"record", e.line}, {"message", e.message}});
        report["users"] = summary.users;
        report["tourists_kept"] = summary.tourists;
        auto out = open_output(config.out / "ingest_report.json");
        out << report.dump(2) << '\n';
    }
    const json echo = {{"home_country", config.home_country},
                       {"min_towers", config.min_towers},
                       {"max_error_fraction", config.max_error_fraction}};
    const std::vector<fs::path> inputs = {config.cdr, config.towers};
    write_manifest(config.out / "trajectories.csv", "ingest", config.seed, echo, inputs);
    write_manifest(config.out / "profiles.csv", "ingest", config.seed, echo, inputs);
    return summary;
}

inline void run_od(const PipelineConfig& config) {
    const fs::path traj_path = config.out / "trajectories.csv";
    require_artifact(traj_path, "ingest");
    verify_manifest(traj_path);
    const auto trajectories = read_trajectories(traj_path);
    const RoadNetwork net = load_network(config.net);
    const auto od = extract_od(trajectories, net);
    write_od(config.out / "od.csv", od);
    write_manifest(config.out / "od.csv", "od", config.seed, json::object(),
                   {traj_path, config.net.nodes, config.net.links, config.net.node_towers});
}

inline void run_assign(const PipelineConfig& config) {
    const fs::path od_path = config.out / "od.csv";
    require_artifact(od_path, "od");
    verify_manifest(od_path);
    const auto od = read_od(od_path);
    const RoadNetwork net = load_network(config.net);
    const AssignmentResult assigned = assign_od_to_links(od, net);

    std::vector<TrafficCount> counts;
    if (!config.counts.empty()) {
        require_artifact(config.counts, "gen-synthetic");
        verify_manifest(config.counts);
        counts = read_counts(config.counts);
    }
    const ScaleFactors factors = calibrate_scale(assigned.flows, counts);
    const auto flows = apply_scale(assigned.flows, factors);
    write_flows(config.out / "flows.csv", flows);
    {
        json report;
        report["unroutable"] = json::array();
        for (const OdExclusion& e : assigned.exclusions)
            report["unroutable"].push_back({{"time_bin", e.time_bin},
                                            {"origin", e.origin},
                                            {"destination", e.destination},
                                            {"trips", e.trips},
                                            {"reason", e.reason}});
        report["calibration_issues"] = json::array();
        for (const ScaleIssue& i : factors.issues)
            report["calibration_issues"].push_back(
                {{"link_id", i.link_id}, {"time_bin", i.time_bin}, {"message", i.message}});
        report["global_fallback"] = factors.global_fallback;
        auto out = open_output(config.out / "assign_report.json");
        out << report.dump(2) << '\n';
    }
    std::vector<fs::path> inputs = {od_path, config.net.nodes, config.net.links,
                                    config.net.node_towers};
    if (!config.counts.empty()) inputs.push_back(config.counts);
    write_manifest(config.out / "flows.csv", "assign", config.seed, json::object(), inputs);
}

inline std::function<std::string(const std::string&)> resolution_mapper(
    const std::string& resolution, const TowerRegistry& registry, const RoadNetwork* net) {
    if (resolution == "tower") return {};
    if (resolution == "merged")
        return [&registry](const std::string& tower) { return registry.merged_group_of(tower); };
    if (resolution == "node") {
        if (!net) throw ValidationError("node resolution requires the road network");
        return [net](const std::string& tower) {
            const auto node = net->node_of_tower(tower);
            if (!node) throw DomainError("tower " + tower + " is not mapped to any node");
            return net->node_id(*node);
        };
    }
    throw ValidationError("unknown resolution: " + resolution);
}

inline void run_fit_pref(const PipelineConfig& config) {
    const fs::path profiles_path = config.out / "profiles.csv";
    require_artifact(profiles_path, "ingest");
    verify_manifest(profiles_path);
    const auto profiles = read_profiles(profiles_path);

    require_artifact(config.towers, "gen-synthetic");
    auto towers_in = open_input(config.towers);
    const TowerRegistry registry = parse_towers(towers_in);

    std::optional<RoadNetwork> net;
    if (config.resolution == "node") net = load_network(config.net);

    // location universe at the configured resolution, sorted
    std::set<std::string> location_set;
    const auto resolve = resolution_mapper(config.resolution, registry, net ? &*net : nullptr);
    for (const auto& [tower_id, tower] : registry.towers())
        location_set.insert(resolve ? resolve(tower_id) : tower_id);
    const std::vector<std::string> location_ids(location_set.begin(), location_set.end());
    const LocationIndex locations = LocationIndex::build(location_ids);

    const RealizedTrips matrix = build_matrix(profiles, locations, resolve);
    PreferenceModel model = fit(matrix, config.mf, config.seed);
    model.location_ids = locations.ids;

    {
        auto out = open_output(config.out / "model.json");
        out << model_to_json(model, config.resolution).dump() << '\n';
    }
    const json echo = {{"k", config.mf.k},
                       {"lambda", config.mf.lambda},
                       {"epochs", config.mf.epochs},
                       {"resolution", config.resolution}};
    std::vector<fs::path> inputs = {profiles_path, config.towers};
    write_manifest(config.out / "model.json", "fit-pref", config.seed, echo, inputs);
}

namespace detail {

struct PlanContext {
    RoadNetwork net;
    std::vector<Traveler> travelers;
    BundleSet bundles;
    PreferenceModel model;
    SlotSet slots;
};

inline PlanContext build_plan_context(const PipelineConfig& config) {
    PlanContext ctx;
    const fs::path model_path = config.out / "model.json";
    require_artifact(model_path, "fit-pref");
    verify_manifest(model_path);
    json j;
    {
        auto in = open_input(model_path);
        in >> j;
    }
    std::string resolution;
    ctx.model = model_from_json(j, &resolution);

    ctx.net = load_network(config.net);
    require_artifact(config.towers, "gen-synthetic");
    auto towers_in = open_input(config.towers);
    const TowerRegistry registry = parse_towers(towers_in);

    // model location -> network node
    std::vector<int> location_nodes(std::size_t(ctx.model.n_locations), -1);
    if (resolution == "node") {
        for (int j2 = 0; j2 < ctx.model.n_locations; ++j2)
            location_nodes[std::size_t(j2)] =
                ctx.net.node_index(ctx.model.location_ids[std::size_t(j2)]);
    } else {
        // tower or merged-group locations project onto their node
        std::map<std::string, int> by_id;
        for (const auto& [tower_id, tower] : registry.towers()) {
            const auto node = ctx.net.node_of_tower(tower_id);
            if (!node) continue;
            by_id[tower_id] = *node;
            by_id.emplace(tower.merged_group_id, *node);
        }
        for (int j2 = 0; j2 < ctx.model.n_locations; ++j2) {
            auto it = by_id.find(ctx.model.location_ids[std::size_t(j2)]);
            if (it != by_id.end()) location_nodes[std::size_t(j2)] = it->second;
        }
    }

    const fs::path traj_path = config.out / "trajectories.csv";
    require_artifact(traj_path, "ingest");
    verify_manifest(traj_path);
    auto trajectories = read_trajectories(traj_path);
    // keep travelers present in the model, in model row order
    std::map<std::string, std::size_t> traj_index;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        traj_index.emplace(trajectories[i].user_id, i);
    std::vector<Trajectory> ordered;
    for (const std::string& user : ctx.model.user_ids) {
        auto it = traj_index.find(user);
        if (it == traj_index.end())
            throw ValidationError("model user " + user + " missing from trajectories.csv");
        ordered.push_back(trajectories[it->second]);
    }

    ctx.slots = SlotSet{config.slot_hours};
    ctx.travelers = derive_travelers(ordered, ctx.net, config.slot_hours);
    ctx.bundles = build_bundles(ctx.travelers, ctx.model, ctx.net, location_nodes,
                                ctx.slots.n_slots(), config.top_n, config.exclude_visited,
                                config.allow_stay);
    return ctx;
}

inline json plan_to_json(const RecommendationPlan& plan, const PlanContext& ctx,
                         const PipelineConfig& config) {
    json j;
    j["format"] = "tdm-plan";
    j["format_version"] = 1;
    j["theta"] = plan.theta;
    j["feasible"] = plan.feasible;
    if (!plan.note.empty()) j["note"] = plan.note;
    j["objective"] = plan.objective;
    j["argmax_count"] = plan.argmax_count;
    if (std::isfinite(plan.lp_bound)) j["lp_bound"] = plan.lp_bound;
    j["solver"] = plan.solver;
    j["trips_per_traveler"] = config.trips_per_traveler;
    j["slot_hours"] = config.slot_hours;
    json assignments = json::array();
    for (std::size_t u = 0; u < ctx.travelers.size(); ++u) {
        json a;
        a["traveler"] = ctx.travelers[u].id;
        a["home_node"] = ctx.net.node_id(ctx.travelers[u].home_node);
        if (plan.choice[u] < 0) {
            a["assigned"] = false;
        } else {
            const Bundle& b = ctx.bundles[u][std::size_t(plan.choice[u])];
            a["assigned"] = true;
            a["stay"] = b.stay();
            a["location"] = b.stay() ? "" : ctx.model.location_ids[std::size_t(b.location)];
            a["slot_hour"] = config.slot_hours[std::size_t(b.slot)];
            a["score"] = b.score;
            json route = json::array();
            for (int l : b.route_links) route.push_back(ctx.net.link(l).link_id);
            a["route"] = route;
            const Bundle& argmax = ctx.bundles[u].front();
            a["argmax_location"] =
                argmax.stay() ? "" : ctx.model.location_ids[std::size_t(argmax.location)];
        }
        assignments.push_back(std::move(a));
    }
    j["assignments"] = assignments;
    json util = json::array();
    for (const auto& [key, flow] : plan.induced_flow) {
        json row;
        row["link"] = ctx.net.link(key.first).link_id;
        row["slot_hour"] = config.slot_hours[std::size_t(key.second)];
        row["flow"] = flow;
        row["cap"] = ctx.net.link(key.first).capacity_vph * (1.0 + config.theta);
        util.push_back(std::move(row));
    }
    j["link_utilization"] = util;
    return j;
}

}  // namespace detail

inline void run_recommend(const PipelineConfig& config) {
    detail::PlanContext ctx = detail::build_plan_context(config);

    FlowMap background;
    if (!config.background.empty()) {
        require_artifact(config.background, "assign");
        verify_manifest(config.background);
        background = read_flows_as_background(config.background);
    }
    SlotFlowMap slot_background;
    for (const auto& [key, flow] : background) {
        const int slot = ctx.slots.index_of_hour(key.second);
        if (slot >= 0) slot_background[{ctx.net.link_index(key.first), slot}] += flow;
    }

    OptimizerConfig opt;
    opt.trips_per_traveler = config.trips_per_traveler;
    opt.allow_stay = config.allow_stay;
    opt.compute_lp_bound = config.compute_lp_bound;
    const SlotCapacity caps = SlotCapacity::uniform(ctx.net, ctx.slots.n_slots(), config.theta);

    const RecommendationPlan baseline =
        preference_only(ctx.travelers, ctx.bundles, config.trips_per_traveler);
    const RecommendationPlan plan =
        optimize(ctx.travelers, ctx.bundles, caps, slot_background, opt);

    {
        auto out = open_output(config.out / "plan.json");
        out << detail::plan_to_json(plan, ctx, config).dump(2) << '\n';
    }
    {
        auto out = open_output(config.out / "baseline_plan.json");
        out << detail::plan_to_json(baseline, ctx, config).dump(2) << '\n';
    }
    const json echo = {{"theta", config.theta},
                       {"top_n", config.top_n},
                       {"trips_per_traveler", config.trips_per_traveler},
                       {"slots", config.slot_hours}};
    std::vector<fs::path> inputs = {config.out / "model.json", config.out / "trajectories.csv",
                                    config.net.nodes, config.net.links, config.net.node_towers};
    if (!config.background.empty()) inputs.push_back(config.background);
    write_manifest(config.out / "plan.json", "recommend", config.seed, echo, inputs);
    write_manifest(config.out / "baseline_plan.json", "recommend", config.seed, echo, inputs);
}

namespace detail {

/// Rebuilds a minimal bundle set (+ choice vectors) for simulation from the
/// two plan files: per traveler, bundle 0 is the baseline (argmax) choice and
/// bundle 1 the optimized one (deduplicated when equal).
struct SimContext {
    std::vector<Traveler> travelers;
    BundleSet bundles;
    RecommendationPlan optimized;
    RecommendationPlan baseline;
    SlotSet slots;
    double trips_per_traveler = 1.0;
    double theta = 0.0;
};

inline SimContext load_sim_context(const fs::path& plan_path, const fs::path& baseline_path,
                                   const RoadNetwork& net) {
    json plan_json, base_json;
    {
        auto in = open_input(plan_path);
        in >> plan_json;
    }
    {
        auto in = open_input(baseline_path);
        in >> base_json;
    }
    if (plan_json.value("format", "") != "tdm-plan" || base_json.value("format", "") != "tdm-plan")
        throw ValidationError("plan file is not a tdm plan");
    if (!plan_json.value("feasible", false))
        throw ValidationError("plan.json is infeasible; nothing to simulate");

    SimContext ctx;
    ctx.theta = plan_json.value("theta", 0.0);
    ctx.trips_per_traveler = plan_json.value("trips_per_traveler", 1.0);
    ctx.slots.hours = plan_json.at("slot_hours").get<std::vector<int>>();

    const json& plan_rows = plan_json.at("assignments");
    const json& base_rows = base_json.at("assignments");
    if (plan_rows.size() != base_rows.size())
        throw ValidationError("plan and baseline cover different traveler sets");

    std::map<std::string, int> location_ids;  // location id -> dense index
    auto loc_index = [&](const std::string& id) {
        if (id.empty()) return -1;
        auto [it, inserted] = location_ids.emplace(id, int(location_ids.size()));
        return it->second;
    };
    for (std::size_t u = 0; u < plan_rows.size(); ++u) {
        const json& p = plan_rows[u];
        const json& b = base_rows[u];
        if (p.at("traveler") != b.at("traveler"))
            throw ValidationError("plan and baseline traveler order differs");
        if (!p.value("assigned", false) || !b.value("assigned", false))
            throw ValidationError("traveler " + p.at("traveler").get<std::string>() +
                                  " missing from a plan");
        auto to_bundle = [&](const json& row) {
            Bundle bundle;
            bundle.location = row.value("stay", false) ? -1 : loc_index(row.at("location"));
            const int hour = row.at("slot_hour").get<int>();
            const int slot = [&] {
                for (std::size_t s = 0; s < ctx.slots.hours.size(); ++s)
                    if (ctx.slots.hours[s] == hour) return int(s);
                throw ValidationError("plan slot_hour not in slot set");
            }();
            bundle.slot = slot;
            bundle.score = row.at("score").get<double>();
            for (const auto& link : row.at("route"))
                bundle.route_links.push_back(net.link_index(link.get<std::string>()));
            return bundle;
        };
        const Bundle base_bundle = to_bundle(b);
        const Bundle plan_bundle = to_bundle(p);
        ctx.travelers.push_back({p.at("traveler").get<std::string>(),
                                 net.node_index(p.at("home_node").get<std::string>()), 0});
        const bool same = base_bundle.location == plan_bundle.location &&
                          base_bundle.slot == plan_bundle.slot;
        std::vector<Bundle> bundles = {base_bundle};
        if (!same) bundles.push_back(plan_bundle);
        ctx.bundles.push_back(std::move(bundles));
        ctx.baseline.choice.push_back(0);
        ctx.optimized.choice.push_back(same ? 0 : 1);
    }
    ctx.baseline.objective = base_json.value("objective", 0.0);
    ctx.optimized.objective = plan_json.value("objective", 0.0);
    return ctx;
}

inline void write_results_csv(const fs::path& path, std::span<const ScenarioResult> results) {
    auto out = open_output(path);
    out << "rho,theta,avg_delay_min,idealized_count,idealized_score\n";
    for (const ScenarioResult& r : results)
        out << csv::format_double(r.rho) << ',' << csv::format_double(r.theta) << ','
            << csv::format_double(r.avg_delay_min) << ',' << r.idealized_count << ','
            << csv::format_double(r.idealized_score) << '\n';
}

inline void write_links_csv(const fs::path& path, const ScenarioResult& result) {
    auto out = open_output(path);
    out << "link,slot,V,C,voc,delay\n";
    for (const LinkSlotState& s : result.link_profile)
        out << csv::escape(s.link_id) << ',' << s.hour << ',' << csv::format_double(s.volume)
            << ',' << csv::format_double(s.capacity) << ',' << csv::format_double(s.voc) << ','
            << csv::format_double(s.delay_min) << '\n';
}

}  // namespace detail

inline ScenarioConfig scenario_config_of(const PipelineConfig& config, const detail::SimContext& sim) {
    ScenarioConfig sc;
    sc.theta = sim.theta;
    sc.bpr = config.bpr;
    sc.seed = config.seed;
    sc.trips_per_traveler = sim.trips_per_traveler;
    sc.slots = sim.slots;
    sc.peak_hour = config.peak_hour;
    return sc;
}

/// The scenario emits an artifact named links.csv (link, slot, V, C, voc,
/// delay), which must not overwrite the road-network links.csv input.
inline void guard_links_collision(const PipelineConfig& config) {
    std::error_code ec;
    if (fs::exists(config.net.links) &&
        fs::equivalent(config.out / "links.csv", config.net.links, ec))
        throw ValidationError(
            "output links.csv would overwrite the network links.csv input; use a separate --out "
            "directory");
}

inline void run_simulate(const PipelineConfig& config, double rho) {
    guard_links_collision(config);
    const fs::path plan_path = config.out / "plan.json";
    const fs::path baseline_path = config.out / "baseline_plan.json";
    require_artifact(plan_path, "recommend");
    require_artifact(baseline_path, "recommend");
    verify_manifest(plan_path);
    verify_manifest(baseline_path);
    const RoadNetwork net = load_network(config.net);
    const detail::SimContext sim = detail::load_sim_context(plan_path, baseline_path, net);

    FlowMap background;
    if (!config.background.empty()) background = read_flows_as_background(config.background);

    const ScenarioConfig sc = scenario_config_of(config, sim);
    const ScenarioResult result =
        simulate(sc, rho, sim.optimized, sim.baseline, sim.bundles, net, background);
    detail::write_results_csv(config.out / "results.csv", std::vector<ScenarioResult>{result});
    detail::write_links_csv(config.out / "links.csv", result);
    const json echo = {{"rho", rho}, {"peak_hour", result.peak_hour}};
    const std::vector<fs::path> inputs = {plan_path, baseline_path};
    write_manifest(config.out / "results.csv", "simulate", config.seed, echo, inputs);
    write_manifest(config.out / "links.csv", "simulate", config.seed, echo, inputs);
}

inline void run_sweep(const PipelineConfig& config) {
    const fs::path plan_path = config.out / "plan.json";
    const fs::path baseline_path = config.out / "baseline_plan.json";
    require_artifact(plan_path, "recommend");
    require_artifact(baseline_path, "recommend");
    verify_manifest(plan_path);
    verify_manifest(baseline_path);
    const RoadNetwork net = load_network(config.net);
    const detail::SimContext sim = detail::load_sim_context(plan_path, baseline_path, net);

    FlowMap background;
    if (!config.background.empty()) background = read_flows_as_background(config.background);

    const ScenarioConfig sc = scenario_config_of(config, sim);
    const auto results = sweep_compliance(sc, config.rho_grid, sim.optimized, sim.baseline,
                                          sim.bundles, net, background);
    detail::write_results_csv(config.out / "results.csv", results);
    for (const ScenarioResult& r : results) {
        std::ostringstream name;
        name << "links_rho_" << csv::format_double(r.rho) << ".csv";
        detail::write_links_csv(config.out / name.str(), r);
    }
    detail::write_links_csv(config.out / "links.csv", results.back());
    {
        const auto rows = tradeoff_curve(results);
        auto out = open_output(config.out / "tradeoff.csv");
        out << "rho,theta,avg_delay_min,idealized_count,idealized_score\n";
        for (const TradeoffRow& row : rows)
            out << csv::format_double(row.rho) << ',' << csv::format_double(row.theta) << ','
                << csv::format_double(row.avg_delay_min) << ',' << row.idealized_count << ','
                << csv::format_double(row.idealized_score) << '\n';
    }

    if (!config.theta_grid.empty()) {
        // theta sweep re-optimizes, so it needs the full plan context
        detail::PlanContext ctx = detail::build_plan_context(config);
        OptimizerConfig opt;
        opt.trips_per_traveler = config.trips_per_traveler;
        opt.allow_stay = config.allow_stay;
        opt.compute_lp_bound = false;
        const auto points =
            sweep_theta(sc, config.theta_grid, ctx.travelers, ctx.bundles, ctx.net, background, opt);
        auto out = open_output(config.out / "theta_curve.csv");
        out << "theta,idealized_score,idealized_count,feasible\n";
        for (const ThetaPoint& p : points)
            out << csv::format_double(p.theta) << ',' << csv::format_double(p.idealized_score)
                << ',' << p.idealized_count << ',' << (p.feasible ? 1 : 0) << '\n';
        write_manifest(config.out / "theta_curve.csv", "sweep", config.seed, json::object(),
                       {plan_path, baseline_path});
    }

    const json echo = {{"rho_grid", config.rho_grid}, {"theta_grid", config.theta_grid}};
    const std::vector<fs::path> inputs = {plan_path, baseline_path};
    write_manifest(config.out / "results.csv", "sweep", config.seed, echo, inputs);
    write_manifest(config.out / "links.csv", "sweep", config.seed, echo, inputs);
    write_manifest(config.out / "tradeoff.csv", "sweep", config.seed, echo, inputs);
}

struct PredictSummary {
    std::vector<nextloc::EvalRow> rows;
    int n_test = 0;
};

inline PredictSummary run_predict(const PipelineConfig& config, const std::string& model_choice,
                                  bool evaluate_all) {
    const fs::path traj_path = config.out / "trajectories.csv";
    require_artifact(traj_path, "ingest");
    verify_manifest(traj_path);
    const auto trajectories = read_trajectories(traj_path);
    require_artifact(config.towers, "gen-synthetic");
    auto towers_in = open_input(config.towers);
    const TowerRegistry registry = parse_towers(towers_in);

    const auto resolve = resolution_mapper(config.nextloc_resolution, registry, nullptr);
    std::vector<std::vector<std::string>> token_seqs;
    std::vector<std::string> users;
    for (const Trajectory& t : trajectories) {
        std::vector<std::string> seq;
        std::string prev;
        for (const Visit& v : t.visits) {
            std::string tok = resolve ? resolve(v.tower_id) : v.tower_id;
            if (tok == prev) continue;  // merged resolution can re-collapse
            seq.push_back(tok);
            prev = std::move(tok);
        }
        token_seqs.push_back(std::move(seq));
        users.push_back(t.user_id);
    }
    const nextloc::Vocab vocab = nextloc::Vocab::build(token_seqs);
    nextloc::Corpus corpus;
    corpus.vocab_size = vocab.size();
    for (const auto& seq : token_seqs) {
        std::vector<int> ids;
        for (const auto& tok : seq) ids.push_back(vocab.id(tok));
        corpus.sequences.push_back(std::move(ids));
    }

    PredictSummary summary;
    if (evaluate_all) {
        nextloc::EvaluateOptions options;
        options.markov_smoothing = config.markov_smoothing;
        options.rnn = config.rnn;
        options.seed = config.seed;
        const auto eval = nextloc::evaluate(corpus, options);
        summary.rows = eval.rows;
        summary.n_test = eval.n_test;
        auto out = open_output(config.out / "nextloc_eval.csv");
        out << "resolution,model,accuracy,improvement,n_test\n";
        for (const auto& row : eval.rows)
            out << config.nextloc_resolution << ',' << row.model << ','
                << csv::format_double(row.accuracy) << ',' << csv::format_double(row.improvement)
                << ',' << eval.n_test << '\n';
        write_manifest(config.out / "nextloc_eval.csv", "predict", config.seed,
                       json{{"resolution", config.nextloc_resolution}}, {traj_path, config.towers});
        return summary;
    }

    // per-user prediction with the chosen model; optional send decision
    // against the recommendation plan (compared at node granularity)
    std::map<std::string, std::string> recommended;  // user -> node id
    const fs::path plan_path = config.out / "plan.json";
    const bool with_plan = fs::exists(plan_path);
    RoadNetwork net;
    if (with_plan) {
        net = load_network(config.net);
        json plan_json;
        auto in = open_input(plan_path);
        in >> plan_json;
        for (const auto& a : plan_json.at("assignments"))
            if (a.value("assigned", false) && !a.value("stay", false))
                recommended[a.at("traveler").get<std::string>()] = a.at("location");
    }
    auto token_to_node = [&](const std::string& token) -> std::string {
        // tower tokens map through the registry/network; merged tokens via any
        // member tower
        if (config.nextloc_resolution == "tower") {
            const auto node = net.node_of_tower(token);
            return node ? net.node_id(*node) : std::string();
        }
        for (const auto& [tower_id, tower] : registry.towers())
            if (tower.merged_group_id == token) {
                const auto node = net.node_of_tower(tower_id);
                return node ? net.node_id(*node) : std::string();
            }
        return {};
    };

    std::function<int(std::span<const int>)> predictor;
    nextloc::MarkovModel markov;
    nextloc::RecurrentModel rnn;
    if (model_choice == "naive") {
        predictor = [](std::span<const int> h) { return nextloc::predict_frequent(h); };
    } else if (model_choice == "markov") {
        markov = nextloc::fit_markov(corpus, config.markov_smoothing);
        predictor = [&markov](std::span<const int> h) { return markov.predict(h.back()); };
    } else if (model_choice == "rnn") {
        rnn = nextloc::fit_rnn(corpus, config.rnn, config.seed);
        predictor = [&rnn](std::span<const int> h) { return rnn.predict(h); };
    } else {
        throw ValidationError("unknown model: " + model_choice + " (naive | markov | rnn)");
    }

    auto out = open_output(config.out / "predictions.csv");
    out << "user_id,predicted" << (with_plan ? ",recommended,send" : "") << "\n";
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        if (corpus.sequences[i].empty()) continue;
        const int token = predictor(corpus.sequences[i]);
        const std::string& predicted = vocab.tokens[std::size_t(token)];
        out << csv::escape(users[i]) << ',' << csv::escape(predicted);
        if (with_plan) {
            auto it = recommended.find(users[i]);
            if (it == recommended.end()) {
                out << ",,0";
            } else {
                const std::string predicted_node = token_to_node(predicted);
                const bool send = nextloc::should_send(predicted_node, it->second);
                out << ',' << csv::escape(it->second) << ',' << (send ? 1 : 0);
            }
        }
        out << '\n';
    }
    out.close();
    write_manifest(config.out / "predictions.csv", "predict", config.seed,
                   json{{"model", model_choice}, {"resolution", config.nextloc_resolution}},
                   {traj_path, config.towers});
    return summary;
}

}  // namespace tdm::pipeline
