#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibemil/matrix.hpp"

namespace vibemil::ingest {

inline constexpr std::size_t kNumFeatures = 14;
inline constexpr double kInfReplacement = 1e5;

// Frozen canonical column order. Every day file carries it in its header.
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureOrder = {
    "cpp",  "accel_db", "h1h2", "lh_ratio", "spectral_tilt", "spl15", "ac_flow",
    "cq",   "ibif_h1h2", "hrf", "mfdr",     "naq",           "oq",    "sq",
};

struct FrameRow {
    std::array<double, kNumFeatures> values{};
    bool voiced = false;

    bool operator==(const FrameRow&) const = default;
};

// One day of 50 ms frames for one subject.
struct DayRecording {
    std::string subject_id;
    int day_index = 0;
    std::vector<FrameRow> frames;

    std::size_t total_frame_count() const noexcept { return frames.size(); }
};

enum class Group { PVH, NPVH, NORMAL };

std::string_view to_string(Group g) noexcept;
Group parse_group(std::string_view text);

struct SubjectLabel {
    std::string subject_id;
    Group group = Group::NORMAL;
};

struct Cohort {
    std::vector<DayRecording> recordings;
    std::vector<SubjectLabel> labels;
};

struct RecordingKey {
    std::string subject_id;
    int day_index = 0;
};

struct CohortSummary {
    std::size_t n_subjects = 0;
    std::size_t n_days = 0;
    std::map<Group, std::size_t> subjects_per_group;
    std::map<std::string, std::size_t> days_per_subject;
};

DayRecording parse_day_recording(std::string_view text);
std::string serialize_day_recording(const DayRecording& rec);

double clean_value(double v) noexcept;
void clean_frames(std::span<FrameRow> frames) noexcept;
std::vector<FrameRow> cleaned(std::vector<FrameRow> frames);

// Voiced rows in original order, V x 14.
RowMatrix apply_voiced_mask(const DayRecording& rec);

// Rejects duplicate (subject, day) pairs and recordings without a label. Labeled
// subjects without any recording are reported with zero days.
CohortSummary validate_cohort(std::span<const RecordingKey> recordings,
                              std::span<const SubjectLabel> labels);
CohortSummary validate_cohort(const Cohort& cohort);

std::vector<SubjectLabel> parse_labels_csv(std::string_view text);
std::string serialize_labels_csv(std::span<const SubjectLabel> labels);

// On-disk cohort: <dir>/labels.csv plus <dir>/days/*.ndjson, one file per day.
struct CohortIndex {
    struct Entry {
        RecordingKey key;
        std::filesystem::path path;
    };
    std::vector<Entry> entries;  // sorted by (subject_id, day_index)
    std::vector<SubjectLabel> labels;
};

std::string day_file_name(const std::string& subject_id, int day_index);
CohortIndex scan_cohort_dir(const std::filesystem::path& dir);
DayRecording read_day_file(const std::filesystem::path& path);
void write_day_file(const std::filesystem::path& path, const DayRecording& rec);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace vibemil::ingest
