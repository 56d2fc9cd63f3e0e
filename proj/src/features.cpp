#include "vibemil/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vibemil/error.hpp"
#include "vibemil/random.hpp"

namespace vibemil::features {

namespace {

struct Moments {
    double mean = 0.0;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
};

// Exact for constant input: mean is the value itself and all central moments are 0.
Moments central_moments(std::span<const double> x, bool constant) {
    Moments m;
    if (constant) {
        m.mean = x.front();
        return m;
    }
    const double n = static_cast<double>(x.size());
    m.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    for (double v : x) {
        const double d = v - m.mean;
        const double d2 = d * d;
        m.m2 += d2;
        m.m3 += d2 * d;
        m.m4 += d2 * d2;
    }
    m.m2 /= n;
    m.m3 /= n;
    m.m4 /= n;
    return m;
}

}  // namespace

double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) fail(ErrorCode::EmptyInput, "percentile of empty sequence");
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0 || lo == hi) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::size_t window_count(std::size_t n_voiced, const WindowingParams& w) noexcept {
    if (n_voiced < w.window) return 0;
    return (n_voiced - w.window) / w.hop + 1;
}

std::vector<RowMatrix> window_segment(const RowMatrix& voiced, const WindowingParams& w) {
    const std::size_t n = window_count(static_cast<std::size_t>(voiced.rows()), w);
    std::vector<RowMatrix> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(voiced.middleRows(static_cast<Eigen::Index>(i * w.hop), static_cast<Eigen::Index>(w.window)));
    return out;
}

std::array<double, kWindowDim> window_stats(const Eigen::Ref<const RowMatrix>& window) {
    std::array<double, kWindowDim> out{};
    const auto n = static_cast<std::size_t>(window.rows());
    if (n == 0) fail(ErrorCode::EmptyInput, "window_stats on empty window");
    std::vector<double> col(n);
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f) {
        for (std::size_t r = 0; r < n; ++r)
            col[r] = window(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
        std::sort(col.begin(), col.end());
        const Moments m = central_moments(col, col.front() == col.back());
        out[f * kWindowStats + 0] = m.mean;
        out[f * kWindowStats + 1] = std::sqrt(m.m2);
        out[f * kWindowStats + 2] = percentile_sorted(col, 0.05);
        out[f * kWindowStats + 3] = percentile_sorted(col, 0.95);
    }
    return out;
}

std::array<double, kDistStats> distribution_stats(std::span<const double> x) {
    if (x.empty()) fail(ErrorCode::EmptyInput, "distribution_stats of empty vector");
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    const bool constant = sorted.front() == sorted.back();
    const Moments m = central_moments(sorted, constant);

    std::array<double, kDistStats> s{};
    s[kMean] = m.mean;
    s[kStd] = std::sqrt(m.m2);
    s[kMedian] = percentile_sorted(sorted, 0.5);
    s[kSkew] = m.m2 > 0.0 ? m.m3 / std::pow(m.m2, 1.5) : 0.0;
    s[kKurt] = m.m2 > 0.0 ? m.m4 / (m.m2 * m.m2) - 3.0 : 0.0;
    s[kP5] = percentile_sorted(sorted, 0.05);
    s[kP25] = percentile_sorted(sorted, 0.25);
    s[kP75] = percentile_sorted(sorted, 0.75);
    s[kP95] = percentile_sorted(sorted, 0.95);
    s[kIqr] = s[kP75] - s[kP25];

    std::vector<double> dev(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) dev[i] = std::abs(sorted[i] - s[kMedian]);
    std::sort(dev.begin(), dev.end());
    s[kMad] = percentile_sorted(dev, 0.5);
    return s;
}

WindowBag make_window_bag(const ingest::DayRecording& rec, const WindowingParams& w) {
    ingest::DayRecording clean{rec.subject_id, rec.day_index, ingest::cleaned(rec.frames)};
    const RowMatrix voiced = ingest::apply_voiced_mask(clean);

    WindowBag bag;
    bag.subject_id = rec.subject_id;
    bag.day_index = rec.day_index;
    bag.voiced_ratio = rec.frames.empty()
                           ? 0.0
                           : static_cast<double>(voiced.rows()) / static_cast<double>(rec.frames.size());
    const std::size_t n = window_count(static_cast<std::size_t>(voiced.rows()), w);
    bag.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kWindowDim));
    for (std::size_t i = 0; i < n; ++i) {
        const auto stats = window_stats(
            voiced.middleRows(static_cast<Eigen::Index>(i * w.hop), static_cast<Eigen::Index>(w.window)));
        for (std::size_t d = 0; d < kWindowDim; ++d)
            bag.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = stats[d];
    }
    return bag;
}

DayVector day_distributional(const WindowBag& bag) {
    if (bag.n_windows() == 0)
        fail(ErrorCode::EmptyBag, "day " + bag.subject_id + "/" + std::to_string(bag.day_index) + " has no windows");
    DayVector out{bag.subject_id, bag.day_index, std::vector<double>(kDayDim)};
    std::vector<double> column(bag.n_windows());
    for (std::size_t d = 0; d < kWindowDim; ++d) {
        for (std::size_t r = 0; r < bag.n_windows(); ++r)
            column[r] = bag.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d));
        const auto s = distribution_stats(column);
        std::copy(s.begin(), s.end(), out.values.begin() + static_cast<std::ptrdiff_t>(d * kDistStats));
    }
    out.values[kDayDim - 2] = bag.voiced_ratio;
    out.values[kDayDim - 1] = static_cast<double>(bag.n_windows());
    return out;
}

SubjectVector subject_aggregate(std::span<const DayVector> days) {
    if (days.empty()) fail(ErrorCode::NoDays, "subject_aggregate needs at least one day");
    SubjectVector out{days.front().subject_id, std::vector<double>(kSubjectDim, 0.0)};
    const double n = static_cast<double>(days.size());
    for (const auto& d : days) {
        if (d.values.size() != kDayDim) fail(ErrorCode::ArityMismatch, "day vector must have 618 entries");
        for (std::size_t i = 0; i < kDayDim; ++i) out.values[i] += d.values[i];
    }
    for (std::size_t i = 0; i < kDayDim; ++i) out.values[i] /= n;
    for (const auto& d : days)
        for (std::size_t i = 0; i < kDayDim; ++i) {
            const double dev = d.values[i] - out.values[i];
            out.values[kDayDim + i] += dev * dev;
        }
    for (std::size_t i = 0; i < kDayDim; ++i) out.values[kDayDim + i] = std::sqrt(out.values[kDayDim + i] / n);
    out.values[kSubjectDim - 1] = n;
    return out;
}

ScalerParams fit_robust_scaler(std::span<const WindowBag* const> train_bags, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::InvalidSpec, "scaler fraction must be in (0, 1]");
    std::vector<std::pair<std::size_t, Eigen::Index>> rows;
    for (std::size_t b = 0; b < train_bags.size(); ++b)
        for (Eigen::Index r = 0; r < train_bags[b]->rows.rows(); ++r) rows.emplace_back(b, r);
    if (rows.empty()) fail(ErrorCode::NoTrainingRows, "no window rows to fit the scaler");

    // Tolerance keeps ceil(0.3 * 10) at 3 despite 0.3 * 10 rounding above 3.
    const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(rows.size()) - 1e-9));
    const std::size_t m = std::clamp<std::size_t>(wanted, 1, rows.size());

    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(rows.size() - i));
        std::swap(rows[i], rows[j]);
    }
    rows.resize(m);
    std::sort(rows.begin(), rows.end());

    ScalerParams p;
    p.fit_fraction = fraction;
    p.seed = seed;
    p.rows_used = m;
    p.median.resize(kWindowDim);
    p.iqr_scale.resize(kWindowDim);
    std::vector<double> col(m);
    for (std::size_t d = 0; d < kWindowDim; ++d) {
        for (std::size_t i = 0; i < m; ++i)
            col[i] = train_bags[rows[i].first]->rows(rows[i].second, static_cast<Eigen::Index>(d));
        std::sort(col.begin(), col.end());
        p.median[d] = percentile_sorted(col, 0.5);
        const double iqr = percentile_sorted(col, 0.75) - percentile_sorted(col, 0.25);
        p.iqr_scale[d] = iqr > 0.0 ? iqr : 1.0;
    }
    return p;
}

ScalerParams fit_robust_scaler(std::span<const WindowBag> train_bags, double fraction, std::uint64_t seed) {
    std::vector<const WindowBag*> ptrs;
    ptrs.reserve(train_bags.size());
    for (const auto& b : train_bags) ptrs.push_back(&b);
    return fit_robust_scaler(std::span<const WindowBag* const>(ptrs), fraction, seed);
}

WindowBag apply_scaler(const ScalerParams& p, const WindowBag& bag) {
    if (p.median.size() != kWindowDim || p.iqr_scale.size() != kWindowDim)
        fail(ErrorCode::ArityMismatch, "scaler params must have 56 entries");
    WindowBag out = bag;
    for (Eigen::Index r = 0; r < out.rows.rows(); ++r)
        for (std::size_t d = 0; d < kWindowDim; ++d) {
            auto& v = out.rows(r, static_cast<Eigen::Index>(d));
            v = (v - p.median[d]) / p.iqr_scale[d];
        }
    return out;
}

}  // namespace vibemil::features
