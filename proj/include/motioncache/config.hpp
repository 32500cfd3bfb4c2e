#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "motioncache/error.hpp"
#include "motioncache/flops.hpp"
#include "motioncache/policy.hpp"
#include "motioncache/scenario.hpp"
#include "motioncache/trace.hpp"

namespace mc {

using json = nlohmann::json;

struct ScenarioConfig {
    std::string kind = "moving-blob";  // moving-blob | random-latents
    std::int64_t frames = 4;
    std::int64_t height = 10;
    std::int64_t width = 10;
    std::int64_t channels = 8;
    std::int64_t chunks = 2;
    double center_h = 3.0;
    double center_w = 3.0;
    double vel_h = 0.45;
    double vel_w = 0.6;
    double radius = 2.0;
    double amplitude = 5.0;
    double cutoff_mult = 2.5;
    double texture_scale = 1.0;
    double random_stddev = 1.0;

    ChunkShape shape() const { return {frames, height, width, channels}; }
};

struct FieldConfig {
    std::string kind = "toy-attention";  // rectified-oracle | linear-field | toy-attention
    double linear_a = 0.0;
    double linear_b = 1.0;
    std::int64_t hidden = 16;
    double omega_max = 8.0;
    double gain = 1.0;
    double weight_scale = 1.0;
    std::uint64_t field_seed = 0x7017;
    std::string kv_staleness = "stale";  // stale | fresh
    bool anchored = true;  // anchor toy-attention to the scenario target direction
};

struct ScheduleConfig {
    std::int64_t total_steps = 32;  // T
    std::int64_t window = 1;        // l
};

struct ExperimentConfig {
    ScenarioConfig scenario;
    FieldConfig field;
    ScheduleConfig schedule;
    std::vector<PolicyConfig> policies;
    std::vector<std::uint64_t> seeds{1};
    std::string verbosity = "decisions";
    std::string out_dir = "out";
    std::int64_t model_width = 0;      // 0: use channels
    std::int64_t model_ffn_width = 0;  // 0: use 2*channels
    double quality_range = 0.0;        // 0: derive from the vanilla reference

    ModelDims dims() const {
        ModelDims d;
        d.width = model_width > 0 ? model_width : scenario.channels;
        d.ffn_width = model_ffn_width > 0 ? model_ffn_width : 2 * scenario.channels;
        return d;
    }
};

namespace cfgdetail {

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key, const T& dflt) {
    if (!j.contains(key)) return dflt;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + path + key + "': " + e.what());
    }
}

inline void reject_unknown(const json& j, const std::string& path,
                           std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool found = false;
        for (const char* k : known) {
            if (it.key() == k) {
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("config: unknown field '" + path + it.key() + "'");
    }
}

}  // namespace cfgdetail

inline PolicyConfig policy_from_json(const json& j, const std::string& path) {
    using cfgdetail::get_field;
    cfgdetail::reject_unknown(j, path,
                              {"kind", "name", "alpha", "tau", "tau_chunk", "K", "m", "eps_num"});
    PolicyConfig p;
    if (!j.contains("kind")) throw ConfigError("config field '" + path + "kind' is required");
    try {
        p.kind = policy_kind_from_name(j.at("kind").get<std::string>());
    } catch (const InvalidArgument& e) {
        throw ConfigError("config field '" + path + "kind': " + e.what());
    }
    p.name = get_field<std::string>(j, path, "name", "");
    p.alpha = get_field<double>(j, path, "alpha", p.alpha);
    p.tau = get_field<double>(j, path, "tau", p.tau);
    p.tau_chunk = get_field<double>(j, path, "tau_chunk", p.tau_chunk);
    p.phase1_full_computes = get_field<std::int64_t>(j, path, "K", p.phase1_full_computes);
    p.warmup_steps = get_field<std::int64_t>(j, path, "m", p.warmup_steps);
    p.eps_num = get_field<double>(j, path, "eps_num", p.eps_num);
    try {
        p.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("config section '" + path + "': " + e.what());
    }
    return p;
}

inline json policy_to_json(const PolicyConfig& p) {
    json j;
    j["kind"] = policy_kind_name(p.kind);
    if (!p.name.empty()) j["name"] = p.name;
    j["alpha"] = p.alpha;
    j["tau"] = p.tau;
    j["tau_chunk"] = p.chunk_threshold();
    j["K"] = p.phase1_full_computes;
    j["m"] = p.warmup_steps;
    j["eps_num"] = p.eps_num;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    using cfgdetail::get_field;
    cfgdetail::reject_unknown(j, "",
                              {"scenario", "field", "schedule", "policies", "seeds", "seed",
                               "verbosity", "out_dir", "model_width", "model_ffn_width",
                               "quality_range"});
    ExperimentConfig c;
    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        cfgdetail::reject_unknown(s, "scenario.",
                                  {"kind", "frames", "height", "width", "channels", "chunks",
                                   "center_h", "center_w", "vel_h", "vel_w", "radius",
                                   "amplitude", "cutoff_mult", "texture_scale", "random_stddev"});
        auto& sc = c.scenario;
        sc.kind = get_field<std::string>(s, "scenario.", "kind", sc.kind);
        if (sc.kind != "moving-blob" && sc.kind != "random-latents") {
            throw ConfigError("config field 'scenario.kind': unknown scenario '" + sc.kind + "'");
        }
        sc.frames = get_field<std::int64_t>(s, "scenario.", "frames", sc.frames);
        sc.height = get_field<std::int64_t>(s, "scenario.", "height", sc.height);
        sc.width = get_field<std::int64_t>(s, "scenario.", "width", sc.width);
        sc.channels = get_field<std::int64_t>(s, "scenario.", "channels", sc.channels);
        sc.chunks = get_field<std::int64_t>(s, "scenario.", "chunks", sc.chunks);
        sc.center_h = get_field<double>(s, "scenario.", "center_h", sc.center_h);
        sc.center_w = get_field<double>(s, "scenario.", "center_w", sc.center_w);
        sc.vel_h = get_field<double>(s, "scenario.", "vel_h", sc.vel_h);
        sc.vel_w = get_field<double>(s, "scenario.", "vel_w", sc.vel_w);
        sc.radius = get_field<double>(s, "scenario.", "radius", sc.radius);
        sc.amplitude = get_field<double>(s, "scenario.", "amplitude", sc.amplitude);
        sc.cutoff_mult = get_field<double>(s, "scenario.", "cutoff_mult", sc.cutoff_mult);
        sc.texture_scale = get_field<double>(s, "scenario.", "texture_scale", sc.texture_scale);
        sc.random_stddev = get_field<double>(s, "scenario.", "random_stddev", sc.random_stddev);
    }
    if (j.contains("field")) {
        const json& f = j.at("field");
        cfgdetail::reject_unknown(f, "field.",
                                  {"kind", "a", "b", "hidden", "omega_max", "gain",
                                   "weight_scale", "field_seed", "kv_staleness", "anchored"});
        auto& fc = c.field;
        fc.kind = get_field<std::string>(f, "field.", "kind", fc.kind);
        if (fc.kind != "rectified-oracle" && fc.kind != "linear-field" &&
            fc.kind != "toy-attention") {
            throw ConfigError("config field 'field.kind': unknown field '" + fc.kind + "'");
        }
        fc.linear_a = get_field<double>(f, "field.", "a", fc.linear_a);
        fc.linear_b = get_field<double>(f, "field.", "b", fc.linear_b);
        fc.hidden = get_field<std::int64_t>(f, "field.", "hidden", fc.hidden);
        fc.omega_max = get_field<double>(f, "field.", "omega_max", fc.omega_max);
        fc.gain = get_field<double>(f, "field.", "gain", fc.gain);
        fc.weight_scale = get_field<double>(f, "field.", "weight_scale", fc.weight_scale);
        fc.field_seed = get_field<std::uint64_t>(f, "field.", "field_seed", fc.field_seed);
        fc.kv_staleness = get_field<std::string>(f, "field.", "kv_staleness", fc.kv_staleness);
        if (fc.kv_staleness != "stale" && fc.kv_staleness != "fresh") {
            throw ConfigError("config field 'field.kv_staleness': must be 'stale' or 'fresh'");
        }
        fc.anchored = get_field<bool>(f, "field.", "anchored", fc.anchored);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        cfgdetail::reject_unknown(s, "schedule.", {"T", "window"});
        c.schedule.total_steps = get_field<std::int64_t>(s, "schedule.", "T",
                                                         c.schedule.total_steps);
        c.schedule.window = get_field<std::int64_t>(s, "schedule.", "window", c.schedule.window);
    }
    if (j.contains("policies")) {
        if (!j.at("policies").is_array() || j.at("policies").empty()) {
            throw ConfigError("config field 'policies': must be a non-empty array");
        }
        c.policies.clear();
        std::size_t i = 0;
        for (const auto& pj : j.at("policies")) {
            c.policies.push_back(
                policy_from_json(pj, "policies[" + std::to_string(i) + "]."));
            ++i;
        }
    } else {
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        c.policies = {vanilla};
    }
    if (j.contains("seed") && j.contains("seeds")) {
        throw ConfigError("config: give either 'seed' or 'seeds', not both");
    }
    if (j.contains("seed")) {
        c.seeds = {get_field<std::uint64_t>(j, "", "seed", 1)};
    } else if (j.contains("seeds")) {
        try {
            c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config field 'seeds': ") + e.what());
        }
        if (c.seeds.empty()) throw ConfigError("config field 'seeds': must be non-empty");
    }
    c.verbosity = get_field<std::string>(j, "", "verbosity", c.verbosity);
    verbosity_from_name(c.verbosity);  // validate early
    c.out_dir = get_field<std::string>(j, "", "out_dir", c.out_dir);
    c.model_width = get_field<std::int64_t>(j, "", "model_width", c.model_width);
    c.model_ffn_width = get_field<std::int64_t>(j, "", "model_ffn_width", c.model_ffn_width);
    c.quality_range = get_field<double>(j, "", "quality_range", c.quality_range);

    try {
        c.scenario.shape().validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config section 'scenario': ") + e.what());
    }
    if (c.scenario.chunks < 1) throw ConfigError("config field 'scenario.chunks': must be >= 1");
    if (c.schedule.total_steps < 1) throw ConfigError("config field 'schedule.T': must be >= 1");
    if (c.schedule.window < 1 || c.schedule.window > c.schedule.total_steps) {
        throw ConfigError("config field 'schedule.window': must be in [1, T]");
    }
    return c;
}

// Fully materialized form: every semantic field present, no shorthand.
// nlohmann objects iterate in sorted key order, so dump() is canonical.
inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["scenario"] = {{"kind", c.scenario.kind},
                     {"frames", c.scenario.frames},
                     {"height", c.scenario.height},
                     {"width", c.scenario.width},
                     {"channels", c.scenario.channels},
                     {"chunks", c.scenario.chunks},
                     {"center_h", c.scenario.center_h},
                     {"center_w", c.scenario.center_w},
                     {"vel_h", c.scenario.vel_h},
                     {"vel_w", c.scenario.vel_w},
                     {"radius", c.scenario.radius},
                     {"amplitude", c.scenario.amplitude},
                     {"cutoff_mult", c.scenario.cutoff_mult},
                     {"texture_scale", c.scenario.texture_scale},
                     {"random_stddev", c.scenario.random_stddev}};
    j["field"] = {{"kind", c.field.kind},
                  {"a", c.field.linear_a},
                  {"b", c.field.linear_b},
                  {"hidden", c.field.hidden},
                  {"omega_max", c.field.omega_max},
                  {"gain", c.field.gain},
                  {"weight_scale", c.field.weight_scale},
                  {"field_seed", c.field.field_seed},
                  {"kv_staleness", c.field.kv_staleness},
                  {"anchored", c.field.anchored}};
    j["schedule"] = {{"T", c.schedule.total_steps}, {"window", c.schedule.window}};
    j["policies"] = json::array();
    for (const auto& p : c.policies) j["policies"].push_back(policy_to_json(p));
    j["seeds"] = c.seeds;
    j["verbosity"] = c.verbosity;
    j["out_dir"] = c.out_dir;
    j["model_width"] = c.model_width;
    j["model_ffn_width"] = c.model_ffn_width;
    j["quality_range"] = c.quality_range;
    return j;
}

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xF];
        h >>= 4;
    }
    return out;
}

// Whitespace- and ordering-insensitive: hash of the canonical serialization.
inline std::string config_hash(const ExperimentConfig& c) {
    return fnv1a_hex(config_to_json(c).dump());
}

// Generation context shared by all policies of one (config, seed) run:
// scenario, field, schedule and the seed, but not policies or output knobs.
inline std::string scenario_hash(const ExperimentConfig& c, std::uint64_t seed) {
    json j;
    const json full = config_to_json(c);
    j["scenario"] = full.at("scenario");
    j["field"] = full.at("field");
    j["schedule"] = full.at("schedule");
    j["seed"] = seed;
    return fnv1a_hex(j.dump());
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace mc
