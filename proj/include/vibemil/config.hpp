#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "vibemil/features.hpp"
#include "vibemil/gbt.hpp"
#include "vibemil/mil.hpp"
#include "vibemil/synth.hpp"
#include "vibemil/validation.hpp"

namespace vibemil {

struct RunConfig {
    validation::Task task = validation::Task::PVH;
    std::filesystem::path data_dir;
    std::filesystem::path artifact_dir;
    std::uint64_t seed = 42;
    int threads = 1;
    int k = 5;
    double holdout_fraction = 0.15;  // inner early-stopping split of each training fold
    features::WindowingParams windowing;
    double scaler_fraction = 0.3;
    gbt::GbtConfig gbt_level;
    gbt::GbtConfig gbt_leaf;
    mil::MilConfig mil;
    double ensemble_step = 0.05;
    std::optional<synth::SynthSpec> synth;  // only needed by the synth command

    RunConfig();
    void validate() const;
};

// Relative paths in the file resolve against the file's directory.
RunConfig parse_config_toml(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Canonical JSON of every field that shapes artifacts (task, threads and artifact_dir excluded).
std::string canonical_config_json(const RunConfig& cfg);
// 16 hex digits of FNV-1a 64 over the canonical JSON.
std::string config_hash(const RunConfig& cfg);

}  // namespace vibemil
