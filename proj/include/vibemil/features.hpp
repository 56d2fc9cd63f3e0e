#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vibemil/ingest.hpp"
#include "vibemil/matrix.hpp"

namespace vibemil::features {

inline constexpr std::size_t kWindowFrames = 200;  // 10 s at 50 ms
inline constexpr std::size_t kWindowHop = 100;     // 5 s overlap
inline constexpr std::size_t kWindowStats = 4;     // mean, std, p5, p95
inline constexpr std::size_t kWindowDim = ingest::kNumFeatures * kWindowStats;  // 56
inline constexpr std::size_t kDistStats = 11;
inline constexpr std::size_t kDayDim = kWindowDim * kDistStats + 2;  // 618
inline constexpr std::size_t kSubjectDim = kDayDim * 2 + 1;          // 1237

// Index into the 11-entry distribution summary.
enum DistStat : std::size_t { kMean, kStd, kMedian, kSkew, kKurt, kP5, kP25, kP75, kP95, kIqr, kMad };

struct WindowBag {
    std::string subject_id;
    int day_index = 0;
    RowMatrix rows;  // N_windows x 56
    double voiced_ratio = 0.0;

    std::size_t n_windows() const noexcept { return static_cast<std::size_t>(rows.rows()); }
};

struct DayVector {
    std::string subject_id;
    int day_index = 0;
    std::vector<double> values;  // 618
};

struct SubjectVector {
    std::string subject_id;
    std::vector<double> values;  // [day mean (618), day std (618), n_days]
};

struct ScalerParams {
    std::vector<double> median;     // 56
    std::vector<double> iqr_scale;  // 56, strictly positive
    double fit_fraction = 0.3;
    std::uint64_t seed = 0;
    std::size_t rows_used = 0;
};

struct WindowingParams {
    std::size_t window = kWindowFrames;
    std::size_t hop = kWindowHop;
};

// Linear interpolation between closest ranks, h = (n-1) p. `sorted` must be ascending.
double percentile_sorted(std::span<const double> sorted, double p);

std::size_t window_count(std::size_t n_voiced, const WindowingParams& w = {}) noexcept;
std::vector<RowMatrix> window_segment(const RowMatrix& voiced, const WindowingParams& w = {});

// Feature-major [f0: mean, std, p5, p95, f1: ...]; population std.
std::array<double, kWindowDim> window_stats(const Eigen::Ref<const RowMatrix>& window);

std::array<double, kDistStats> distribution_stats(std::span<const double> x);

// clean -> voiced mask -> windows -> per-window stats.
WindowBag make_window_bag(const ingest::DayRecording& rec, const WindowingParams& w = {});

DayVector day_distributional(const WindowBag& bag);
SubjectVector subject_aggregate(std::span<const DayVector> days);

ScalerParams fit_robust_scaler(std::span<const WindowBag* const> train_bags, double fraction, std::uint64_t seed);
ScalerParams fit_robust_scaler(std::span<const WindowBag> train_bags, double fraction, std::uint64_t seed);
WindowBag apply_scaler(const ScalerParams& p, const WindowBag& bag);

}  // namespace vibemil::features
