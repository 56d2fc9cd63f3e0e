#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vibemil/config.hpp"
#include "vibemil/ensemble.hpp"
#include "vibemil/features.hpp"
#include "vibemil/gbt.hpp"
#include "vibemil/ingest.hpp"
#include "vibemil/mil.hpp"
#include "vibemil/synth.hpp"
#include "vibemil/validation.hpp"

namespace vibemil::pipeline {

struct SubjectFeatures {
    std::string subject_id;
    ingest::Group group = ingest::Group::NORMAL;
    std::vector<features::WindowBag> bags;  // usable days only
    std::vector<features::DayVector> days;  // aligned with bags
    features::SubjectVector vector;
};

struct FeatureSet {
    std::vector<SubjectFeatures> subjects;  // sorted by subject_id
    std::vector<std::string> warnings;      // dropped days and subjects

    const SubjectFeatures& at(const std::string& subject_id) const;
};

using Logger = std::function<void(const std::string&)>;

// Builds one subject from its day bags; days without windows are skipped with a warning.
// Returns false when no day is usable.
bool assemble_subject(const std::string& subject_id, ingest::Group group, std::vector<features::WindowBag> bags,
                      SubjectFeatures& out, std::vector<std::string>& warnings);

// Reads the cohort one day at a time; up to `threads` days are processed concurrently
// and merged in (subject_id, day_index) order.
FeatureSet featurize_dir(const std::filesystem::path& cohort_dir, const features::WindowingParams& w, int threads = 1);

// Same result as writing the cohort to disk and featurizing it, without the files.
FeatureSet featurize_synthetic(const synth::SynthSpec& spec, const features::WindowingParams& w);

std::vector<validation::LabeledSubject> task_subjects(const FeatureSet& fs, const validation::TaskConfig& task);

// Seed streams. Every stochastic stage draws from derive_seed(run seed, stream).
namespace stream {
inline constexpr std::uint64_t kFolds = 1;
inline constexpr std::uint64_t kHoldout = 0x100;
inline constexpr std::uint64_t kGbtLevel = 0x200;
inline constexpr std::uint64_t kGbtLeaf = 0x300;
inline constexpr std::uint64_t kScaler = 0x400;
inline constexpr std::uint64_t kMil = 0x500;
}  // namespace stream

validation::FoldAssignment make_folds(std::span<const validation::LabeledSubject> subjects, int k,
                                      std::uint64_t seed);

struct OofPrediction {
    std::string subject_id;
    int fold = 0;
    int y = 0;
    double p = 0.0;
};

// Training-fold subjects split into early-stopping train/holdout parts.
validation::HoldoutSplit fold_split(std::span<const validation::LabeledSubject> subjects,
                                    const validation::FoldAssignment& folds, int fold, double holdout_fraction,
                                    std::uint64_t seed);

RowMatrix subject_matrix(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects);
RowMatrix subject_matrix(const FeatureSet& fs, std::span<const std::string> subject_ids);

enum class ModelKind { GbtLevel, GbtLeaf, Mil };
std::string_view to_string(ModelKind m) noexcept;  // "gbt-level", "gbt-leaf", "mil"
ModelKind parse_model(std::string_view text);

struct GbtCv {
    std::vector<gbt::GbtModel> models;  // one per fold
    std::vector<OofPrediction> oof;
};

GbtCv cross_validate_gbt(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects,
                         const validation::FoldAssignment& folds, const RunConfig& cfg, ModelKind kind,
                         const Logger& log = {});

struct MilFold {
    mil::MilModel model;
    features::ScalerParams scaler;
};

struct MilCv {
    std::vector<MilFold> folds;
    std::vector<OofPrediction> oof;
};

MilCv cross_validate_mil(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects,
                         const validation::FoldAssignment& folds, const RunConfig& cfg, const Logger& log = {});

// Scaled float bags for one subject, ready for the MIL network.
std::vector<mil::BagMatrix<float>> mil_inputs(const SubjectFeatures& s, const features::ScalerParams& scaler);

validation::OofTable combine_oof(std::span<const OofPrediction> cnn, std::span<const OofPrediction> gbt_level,
                                 std::span<const OofPrediction> gbt_leaf, const validation::FoldAssignment& folds,
                                 std::span<const validation::LabeledSubject> subjects);

struct SingleAucs {
    double cnn = 0.0;
    double gbt_level = 0.0;
    double gbt_leaf = 0.0;

    double best() const noexcept;
};

SingleAucs single_model_aucs(const validation::OofTable& oof);

// Grid search plus the corner guarantee: throws if the optimum scores below any single model.
ensemble::EnsembleWeights fit_ensemble(const validation::OofTable& oof, double step);

struct TaskResult {
    validation::Task task = validation::Task::PVH;
    validation::OofTable oof;
    ensemble::EnsembleWeights weights;
};

// Everything from task labels to optimized weights, in memory.
TaskResult run_task(const FeatureSet& fs, const RunConfig& cfg, const Logger& log = {});

struct Ablation {
    SingleAucs single;
    double level_leaf = 0.0;
    double level_cnn = 0.0;
    double leaf_cnn = 0.0;
    double ensemble = 0.0;
    double delta = 0.0;
};

Ablation ablation(const TaskResult& r);

// Markdown with one column per task: OOF AUCs of single models, equal-weight pairs,
// the optimized ensemble, its gain over the best single model, and the weights.
std::string ablation_report(std::span<const TaskResult> results, const std::string& config_hash,
                            std::uint64_t seed);

}  // namespace vibemil::pipeline
