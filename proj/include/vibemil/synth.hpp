#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vibemil/ingest.hpp"

namespace vibemil::synth {

using FeatureArray = std::array<double, ingest::kNumFeatures>;

// Per-feature baseline level and frame-noise scale (raw feature units).
const FeatureArray& baseline_mean();
const FeatureArray& baseline_sd();

// Defaults describe the "effects" cohort: a distributional shift plus temporal bursts.
//
// Frame model per feature f: x = base + subject offset + day offset + class shift + sd * z,
// z an AR(1) process with unit stationary variance. Positives draw each innovation with
// scale tail_scale with probability tail_prob. Bursts are contiguous segments of
// positive-subject days in which the burst targets share one innovation stream with
// weight burst_gain; each target's marginal law is unchanged, only their joint
// short-range dynamics differ.
struct SynthSpec {
    int n_pos = 100;
    int n_neg = 100;
    ingest::Group positive_group = ingest::Group::PVH;
    int days_min = 2;
    int days_max = 4;
    int frames_min = 12000;
    int frames_max = 24000;
    double voiced_rate = 0.4;
    double voiced_run_mean = 40.0;  // frames per voiced run
    FeatureArray ar_coeff = filled(0.95);
    FeatureArray mean_shift = default_shift();
    double tail_scale = 1.3;
    double tail_prob = 0.1;
    double burst_prob = 0.8;  // chance that a slot hosts a burst
    double burst_gain = 1.0;  // innovation sharing weight in [0, 1]
    int burst_min_frames = 6000;   // 5 min
    int burst_max_frames = 18000;  // 15 min
    int burst_slot_frames = 24000;
    std::vector<int> burst_targets = {0, 5};  // cpp, spl15
    double subject_sd = 0.5;  // in units of baseline_sd
    double day_sd = 0.2;
    double nan_rate = 1e-3;   // IBIF-derived features only
    double inf_rate = 2e-5;
    std::uint64_t seed = 42;

    void validate() const;

    static FeatureArray filled(double v) {
        FeatureArray a;
        a.fill(v);
        return a;
    }
    static FeatureArray default_shift();
};

SynthSpec null_effect_spec(SynthSpec base);
SynthSpec burst_only_spec(SynthSpec base);

struct SubjectPlan {
    std::string subject_id;
    int index = 0;
    bool positive = false;
    FeatureArray offset{};
    std::vector<std::uint64_t> day_seeds;
};

struct GeneratedDay {
    ingest::DayRecording recording;
    std::vector<std::uint8_t> burst;  // 1 where the frame lies inside a burst
};

std::string subject_id_for(int index);
SubjectPlan plan_subject(const SynthSpec& spec, int index);
GeneratedDay generate_day(const SynthSpec& spec, const SubjectPlan& plan, int day);
std::vector<ingest::SubjectLabel> cohort_labels(const SynthSpec& spec);

// Writes days/*.ndjson, labels.csv and spec.json under `dir`.
void generate_cohort(const SynthSpec& spec, const std::filesystem::path& dir);

struct ClassMoments {
    FeatureArray mean{};             // population mean over subjects
    FeatureArray within_day_var{};   // frame variance around the day level (artifacts excluded)
    FeatureArray between_var{};      // subject + day level variance
    FeatureArray lag1_autocorr{};
};

struct CohortDescription {
    ClassMoments positive;
    ClassMoments negative;
    double voiced_fraction = 0.0;
};

CohortDescription describe_cohort(const SynthSpec& spec);

std::string spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(std::string_view text);

}  // namespace vibemil::synth
