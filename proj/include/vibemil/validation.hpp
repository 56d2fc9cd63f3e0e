#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibemil/ingest.hpp"

namespace vibemil::validation {

struct LabeledSubject {
    std::string subject_id;
    int y = 0;
};

struct FoldAssignment {
    int k = 5;
    std::map<std::string, int> fold_of;

    std::vector<std::string> subjects_in(int fold) const;
    std::vector<std::string> subjects_not_in(int fold) const;
};

// Shuffle with seed, stable-sort positives first, then hand each subject to the
// fold furthest below its per-class target (ties: smaller fold, lower index).
FoldAssignment stratified_group_kfold(std::span<const LabeledSubject> subjects, int k, std::uint64_t seed);

// Stratified group-aware split of one subject pool into (train, holdout).
struct HoldoutSplit {
    std::vector<LabeledSubject> train;
    std::vector<LabeledSubject> holdout;
};
HoldoutSplit group_holdout(std::span<const LabeledSubject> subjects, double fraction, std::uint64_t seed);

// Mann-Whitney statistic with average ranks for ties.
double roc_auc(std::span<const double> scores, std::span<const int> y);

struct OofRow {
    std::string subject_id;
    int fold = 0;
    int y = 0;
    double p_cnn = 0.0;
    double p_gbt_level = 0.0;
    double p_gbt_leaf = 0.0;
};

struct OofTable {
    std::vector<OofRow> rows;  // sorted by subject_id

    std::vector<int> labels() const;
    std::vector<double> column(std::string_view model) const;  // "cnn", "gbt_level", "gbt_leaf"
};

// Merges per-fold predictions; every expected subject must appear exactly once.
OofTable pool_oof(const std::vector<std::vector<OofRow>>& fold_predictions,
                  std::span<const std::string> expected_subjects);

inline int classify(double p, double threshold = 0.5) noexcept { return p >= threshold ? 1 : 0; }

enum class Task { PVH, NPVH };

std::string_view to_string(Task t) noexcept;
Task parse_task(std::string_view text);

struct TaskConfig {
    Task task = Task::PVH;
    ingest::Group positive = ingest::Group::PVH;
    std::vector<ingest::Group> controls;
    double pos_weight = 1.0;
};

// Positive class is the task's pathology; the other two groups are controls.
TaskConfig make_task(Task task);
int task_label(const TaskConfig& task, ingest::Group g) noexcept;

// n_neg / n_pos over the given labels.
double compute_pos_weight(std::span<const int> y);

std::string fold_assignment_csv(const FoldAssignment& folds);
FoldAssignment parse_fold_assignment_csv(std::string_view text, int k);
std::string oof_table_csv(const OofTable& table);
OofTable parse_oof_table_csv(std::string_view text);

}  // namespace vibemil::validation
