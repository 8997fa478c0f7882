#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsyn/training.hpp"

namespace mmsyn {

enum class Profile { Desk, Paper };

std::string profile_name(Profile p);
Profile parse_profile(const std::string& s);

struct PhantomConfig {
    int subjects = 4;
    std::int64_t hw = 64;
    std::int64_t depth = 8;
    std::uint64_t seed = 0;
};

// Everything one CLI invocation needs. Loaded from a JSON document with
// nested sections; see config_schema() for the accepted keys.
struct RunConfig {
    Profile profile = Profile::Desk;
    std::filesystem::path data_root;
    std::filesystem::path manifest;
    std::filesystem::path output_dir = "runs";
    PhantomConfig phantom;
    TrainConfig train;
};

struct SchemaField {
    std::string key;  // dotted path, e.g. "train.lr"
    std::string type;
    std::string description;
};

const std::vector<SchemaField>& config_schema();
// Human-readable schema listing with the defaults of both profiles.
std::string schema_help();

RunConfig default_run_config(Profile profile);

// Applies profile presets, then the document's values, then `overrides`
// ("section.key=value", value parsed as JSON with a bare-string fallback).
// Unknown keys, wrong types and out-of-range values throw ConfigError naming
// the field. `profile_override` beats the document's "profile".
RunConfig parse_run_config(const nlohmann::json& doc, std::optional<Profile> profile_override = std::nullopt,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          std::optional<Profile> profile_override = std::nullopt,
                          const std::vector<std::string>& overrides = {});

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace mmsyn
