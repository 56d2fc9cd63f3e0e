#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vibemil/error.hpp"
#include "vibemil/features.hpp"
#include "vibemil/random.hpp"

using namespace vibemil;
using namespace vibemil::features;

namespace {

// Brute-force references written without the sort-and-rank shortcuts used by the library.
double ref_mean(const std::vector<double>& x) {
    long double s = 0;
    for (double v : x) s += v;
    return static_cast<double>(s / x.size());
}

double ref_central(const std::vector<double>& x, int k) {
    const double m = ref_mean(x);
    long double s = 0;
    for (double v : x) s += std::pow(static_cast<long double>(v - m), k);
    return static_cast<double>(s / x.size());
}

// Percentile the textbook way: rank h = (n-1)p, interpolate.
double ref_percentile(std::vector<double> x, double p) {
    std::sort(x.begin(), x.end());
    const double h = (x.size() - 1) * p;
    const double lo = std::floor(h), hi = std::ceil(h);
    return x[static_cast<std::size_t>(lo)] + (h - lo) * (x[static_cast<std::size_t>(hi)] - x[static_cast<std::size_t>(lo)]);
}

bool close(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

ingest::DayRecording random_day(Rng& rng, std::size_t n_frames, double voiced_p, const std::string& id = "s", int day = 0) {
    ingest::DayRecording rec;
    rec.subject_id = id;
    rec.day_index = day;
    for (std::size_t i = 0; i < n_frames; ++i) {
        ingest::FrameRow r;
        for (auto& v : r.values) v = rng.normal() * 3.0 + 1.0;
        r.voiced = rng.bernoulli(voiced_p);
        rec.frames.push_back(r);
    }
    return rec;
}

}  // namespace

TEST_CASE("distribution stats match brute force on random vectors") {
    Rng rng(21);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.below(300);
        std::vector<double> x(n);
        for (auto& v : x) v = rng.normal() * 5.0 + (t % 3 == 0 ? std::round(rng.normal()) : 0.0);
        const auto s = distribution_stats(x);
        const double m2 = ref_central(x, 2);
        CHECK(close(s[kMean], ref_mean(x)));
        CHECK(close(s[kStd], std::sqrt(m2)));
        CHECK(close(s[kMedian], ref_percentile(x, 0.5)));
        CHECK(close(s[kSkew], ref_central(x, 3) / std::pow(m2, 1.5), 1e-8));
        CHECK(close(s[kKurt], ref_central(x, 4) / (m2 * m2) - 3.0, 1e-8));
        CHECK(close(s[kP5], ref_percentile(x, 0.05)));
        CHECK(close(s[kP25], ref_percentile(x, 0.25)));
        CHECK(close(s[kP75], ref_percentile(x, 0.75)));
        CHECK(close(s[kP95], ref_percentile(x, 0.95)));
        CHECK(close(s[kIqr], ref_percentile(x, 0.75) - ref_percentile(x, 0.25)));
        std::vector<double> dev;
        for (double v : x) dev.push_back(std::abs(v - ref_percentile(x, 0.5)));
        CHECK(close(s[kMad], ref_percentile(dev, 0.5)));
    }
}

TEST_CASE("percentile on a small known vector") {
    const std::vector<double> x = {1, 2, 3, 4};
    CHECK(percentile_sorted(x, 0.5) == doctest::Approx(2.5));
    CHECK(percentile_sorted(x, 0.25) == doctest::Approx(1.75));
    CHECK(percentile_sorted(x, 0.0) == 1);
    CHECK(percentile_sorted(x, 1.0) == 4);
}

TEST_CASE("constant input gives exact zeros for spread and shape") {
    const std::vector<double> x(17, 3.25);
    const auto s = distribution_stats(x);
    CHECK(s[kMean] == 3.25);
    CHECK(s[kStd] == 0.0);
    CHECK(s[kSkew] == 0.0);
    CHECK(s[kKurt] == 0.0);
    CHECK(s[kIqr] == 0.0);
    CHECK(s[kMad] == 0.0);
    CHECK(s[kP95] == 3.25);
    CHECK_THROWS_AS(distribution_stats(std::vector<double>{}), Error);
}

TEST_CASE("window stats are feature-major mean, std, p5, p95") {
    Rng rng(22);
    RowMatrix w(200, ingest::kNumFeatures);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal() * (j + 1);
    const auto s = window_stats(w);
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f) {
        std::vector<double> col(200);
        for (int i = 0; i < 200; ++i) col[static_cast<std::size_t>(i)] = w(i, static_cast<Eigen::Index>(f));
        CHECK(close(s[f * 4 + 0], ref_mean(col)));
        CHECK(close(s[f * 4 + 1], std::sqrt(ref_central(col, 2))));
        CHECK(close(s[f * 4 + 2], ref_percentile(col, 0.05)));
        CHECK(close(s[f * 4 + 3], ref_percentile(col, 0.95)));
    }
}

TEST_CASE("window count over a sweep of voiced lengths") {
    for (std::size_t n = 0; n <= 2000; ++n) {
        // Count windows by direct enumeration of start positions.
        std::size_t expected = 0;
        for (std::size_t start = 0; start + 200 <= n; start += 100) ++expected;
        REQUIRE(window_count(n) == expected);
    }
    CHECK(window_count(199) == 0);
    CHECK(window_count(200) == 1);
    CHECK(window_count(299) == 1);
    CHECK(window_count(300) == 2);
    CHECK(window_count(1000) == 9);
}

TEST_CASE("window segment yields overlapping slices") {
    RowMatrix v(450, ingest::kNumFeatures);
    for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i).setConstant(static_cast<double>(i));
    const auto ws = window_segment(v);
    REQUIRE(ws.size() == 3);
    CHECK(ws[1](0, 0) == 100.0);
    CHECK(ws[2](199, 3) == 399.0);
}

TEST_CASE("window bag cleans before masking and counts voiced ratio") {
    Rng rng(23);
    auto rec = random_day(rng, 1000, 0.7);
    rec.frames[3].values[7] = std::numeric_limits<double>::quiet_NaN();
    rec.frames[4].values[7] = std::numeric_limits<double>::infinity();
    const auto bag = make_window_bag(rec);
    std::size_t voiced = 0;
    for (const auto& f : rec.frames) voiced += f.voiced;
    CHECK(bag.voiced_ratio == doctest::Approx(voiced / 1000.0));
    CHECK(bag.n_windows() == window_count(voiced));
    CHECK(bag.rows.cols() == static_cast<Eigen::Index>(kWindowDim));
    CHECK(bag.rows.allFinite());
}

TEST_CASE("day and subject vectors have the documented layout") {
    Rng rng(24);
    std::vector<DayVector> days;
    for (int d = 0; d < 3; ++d) days.push_back(day_distributional(make_window_bag(random_day(rng, 900, 0.8, "s", d))));
    for (const auto& d : days) {
        CHECK(d.values.size() == kDayDim);
        CHECK(d.values[kDayDim - 1] >= 1.0);
    }
    const auto subj = subject_aggregate(days);
    REQUIRE(subj.values.size() == kSubjectDim);
    CHECK(subj.values.back() == 3.0);
    for (std::size_t i = 0; i < kDayDim; ++i) {
        const std::vector<double> col = {days[0].values[i], days[1].values[i], days[2].values[i]};
        CHECK(close(subj.values[i], ref_mean(col)));
        CHECK(close(subj.values[kDayDim + i], std::sqrt(ref_central(col, 2)), 1e-7));
    }
}

TEST_CASE("subject aggregate ignores day order") {
    Rng rng(25);
    std::vector<DayVector> days;
    for (int d = 0; d < 5; ++d) days.push_back(day_distributional(make_window_bag(random_day(rng, 700, 0.8, "s", d))));
    const auto base = subject_aggregate(days);
    for (int t = 0; t < 10; ++t) {
        rng.shuffle(days);
        const auto perm = subject_aggregate(days);
        for (std::size_t i = 0; i < kSubjectDim; ++i) CHECK(close(perm.values[i], base.values[i], 1e-12));
    }
}

TEST_CASE("empty bags and empty day lists are rejected") {
    features::WindowBag empty;
    empty.rows.resize(0, static_cast<Eigen::Index>(kWindowDim));
    CHECK_THROWS_AS(day_distributional(empty), Error);
    CHECK_THROWS_AS(subject_aggregate(std::span<const DayVector>{}), Error);
}

TEST_CASE("robust scaler uses the requested fraction and centers the fit rows") {
    Rng rng(26);
    std::vector<WindowBag> bags;
    for (int d = 0; d < 4; ++d) bags.push_back(make_window_bag(random_day(rng, 1500, 0.9, "s", d)));
    std::size_t total = 0;
    for (const auto& b : bags) total += b.n_windows();
    const auto p = fit_robust_scaler(bags, 0.3, 77);
    CHECK(p.rows_used == static_cast<std::size_t>(std::ceil(0.3 * total - 1e-9)));
    CHECK(p.median.size() == kWindowDim);
    for (double s : p.iqr_scale) CHECK(s > 0.0);

    const auto again = fit_robust_scaler(bags, 0.3, 77);
    CHECK(again.median == p.median);

    // At fraction 1 the scaled training rows have median 0.
    const auto full = fit_robust_scaler(bags, 1.0, 1);
    std::vector<std::vector<double>> cols(kWindowDim);
    for (const auto& b : bags) {
        const auto s = apply_scaler(full, b);
        for (Eigen::Index r = 0; r < s.rows.rows(); ++r)
            for (std::size_t d = 0; d < kWindowDim; ++d) cols[d].push_back(s.rows(r, static_cast<Eigen::Index>(d)));
    }
    for (const auto& c : cols) CHECK(std::abs(ref_percentile(c, 0.5)) < 1e-9);

    CHECK_THROWS_AS(fit_robust_scaler(bags, 0.0, 1), Error);
    CHECK_THROWS_AS(fit_robust_scaler(std::span<const WindowBag>{}, 0.5, 1), Error);
}

TEST_CASE("zero-IQR columns scale by one") {
    std::vector<WindowBag> bags(1);
    bags[0].rows = RowMatrix::Constant(10, static_cast<Eigen::Index>(kWindowDim), 2.0);
    const auto p = fit_robust_scaler(bags, 1.0, 3);
    for (double s : p.iqr_scale) CHECK(s == 1.0);
    const auto out = apply_scaler(p, bags[0]);
    CHECK(out.rows.cwiseAbs().maxCoeff() == 0.0);
}
