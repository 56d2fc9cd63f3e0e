#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "vibemil/features.hpp"
#include "vibemil/pipeline.hpp"

namespace vibemil::artifacts {

// Identity of the run that produced an artifact.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;

    bool operator==(const Provenance&) const = default;
};

// "# vibemil config_hash=<hash> seed=<seed>" plus newline; CSV readers skip '#' lines.
std::string comment_line(const Provenance& p);
Provenance parse_comment_line(std::string_view text);

// File layout under the artifact directory.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path features_dir() const { return root / "features"; }
    std::filesystem::path task_dir(validation::Task t) const { return root / std::string(validation::to_string(t)); }
    std::filesystem::path folds_csv(validation::Task t) const { return task_dir(t) / "folds.csv"; }
    std::filesystem::path model_dir(validation::Task t, pipeline::ModelKind m) const {
        return task_dir(t) / std::string(pipeline::to_string(m));
    }
    std::filesystem::path oof_csv(validation::Task t, pipeline::ModelKind m) const { return model_dir(t, m) / "oof.csv"; }
    std::filesystem::path ensemble_dir(validation::Task t) const { return task_dir(t) / "ensemble"; }
    std::filesystem::path evaluate_dir(validation::Task t) const { return task_dir(t) / "evaluate"; }
    std::filesystem::path report_md() const { return root / "report.md"; }
};

// Reads a file written by `producer`, failing with DependencyError when it is missing or
// was produced under different provenance.
std::string read_checked(const std::filesystem::path& path, const Provenance& expected, std::string_view producer);
// Same check for JSON documents carrying "config_hash" and "seed" members.
std::string read_checked_json(const std::filesystem::path& path, const Provenance& expected,
                              std::string_view producer);
// Binary MIL checkpoints carry provenance in their JSON header.
std::string read_checked_checkpoint(const std::filesystem::path& path, const Provenance& expected,
                                    std::string_view producer);

// Adds provenance members to a JSON object document.
std::string with_provenance(std::string_view json_text, const Provenance& p);
std::string provenance_json(const Provenance& p);

// features/bags.ndjson, features/days.ndjson, features/subjects.ndjson, features/warnings.txt
void write_features(const std::filesystem::path& dir, const pipeline::FeatureSet& fs, const Provenance& p);
pipeline::FeatureSet read_features(const std::filesystem::path& dir, const Provenance& expected);

std::string scaler_json(const features::ScalerParams& s, const Provenance& p);
features::ScalerParams parse_scaler_json(std::string_view text);

std::string oof_predictions_csv(std::span<const pipeline::OofPrediction> preds, const Provenance& p);
std::vector<pipeline::OofPrediction> parse_oof_predictions_csv(std::string_view text);

// Per day of each subject: attention rows of every head.
std::string attention_json(const mil::MilModel& m, const pipeline::FeatureSet& fs,
                           std::span<const std::string> subject_ids, const features::ScalerParams& scaler,
                           const Provenance& p);

}  // namespace vibemil::artifacts
