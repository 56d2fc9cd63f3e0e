#include "vibemil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/random.hpp"

namespace vibemil::synth {

using nlohmann::json;

namespace {

constexpr std::size_t kFirstIbifFeature = 6;
constexpr double kValueQuantum = 1e5;  // values are stored with 5 decimals

double quantize(double v) { return std::round(v * kValueQuantum) / kValueQuantum; }

json array_json(const FeatureArray& a) { return json(std::vector<double>(a.begin(), a.end())); }

FeatureArray array_from(const json& j) {
    FeatureArray a{};
    if (!j.is_array() || j.size() != a.size()) fail(ErrorCode::InvalidSpec, "expected a 14-entry array");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = j[i].get<double>();
    return a;
}

}  // namespace

const FeatureArray& baseline_mean() {
    // cpp, accel_db, h1h2, lh_ratio, spectral_tilt, spl15, ac_flow, cq, ibif_h1h2, hrf, mfdr, naq, oq, sq
    static const FeatureArray m = {12.0, 85.0, 5.0, 20.0, -12.0, 78.0, 0.25, 0.25, 8.0, -5.0, 300.0, 0.12, 0.6, 2.5};
    return m;
}

const FeatureArray& baseline_sd() {
    static const FeatureArray s = {2.0, 6.0, 3.0, 5.0, 3.0, 6.0, 0.08, 0.05, 3.0, 3.0, 80.0, 0.03, 0.08, 0.6};
    return s;
}

FeatureArray SynthSpec::default_shift() {
    FeatureArray s = filled(0.0);
    s[0] = -0.8;    // cpp
    s[2] = 1.2;     // h1h2
    s[5] = 2.4;     // spl15
    s[11] = -0.012; // naq
    return s;
}

void SynthSpec::validate() const {
    const auto bad = [](const std::string& what) { fail(ErrorCode::InvalidSpec, what); };
    if (n_pos < 1 || n_neg < 1) bad("n_pos and n_neg must be positive");
    if (days_min < 1 || days_max < days_min) bad("days range must satisfy 1 <= min <= max");
    if (frames_min < 1 || frames_max < frames_min) bad("frames range must satisfy 1 <= min <= max");
    if (!(voiced_rate > 0.0 && voiced_rate < 1.0)) bad("voiced_rate must be in (0, 1)");
    if (!(voiced_run_mean >= 1.0)) bad("voiced_run_mean must be at least 1 frame");
    for (double a : ar_coeff)
        if (!(a >= 0.0 && a < 1.0)) bad("ar_coeff entries must be in [0, 1)");
    for (double s : mean_shift)
        if (!std::isfinite(s)) bad("mean_shift must be finite");
    if (!(tail_scale > 0.0)) bad("tail_scale must be positive");
    for (double r : {tail_prob, burst_prob, burst_gain, nan_rate, inf_rate})
        if (!(r >= 0.0 && r <= 1.0)) bad("rates must be in [0, 1]");
    if (nan_rate + inf_rate > 1.0) bad("nan_rate + inf_rate must not exceed 1");
    if (burst_min_frames < 1 || burst_max_frames < burst_min_frames || burst_slot_frames < 1)
        bad("burst lengths must satisfy 1 <= min <= max and slot >= 1");
    for (int t : burst_targets)
        if (t < 0 || t >= static_cast<int>(ingest::kNumFeatures)) bad("burst target out of range");
    if (subject_sd < 0.0 || day_sd < 0.0) bad("subject_sd and day_sd must be non-negative");
}

SynthSpec null_effect_spec(SynthSpec base) {
    base.mean_shift = SynthSpec::filled(0.0);
    base.tail_scale = 1.0;
    base.burst_prob = 0.0;
    return base;
}

SynthSpec burst_only_spec(SynthSpec base) {
    base.mean_shift = SynthSpec::filled(0.0);
    base.tail_scale = 1.0;
    return base;
}

std::string subject_id_for(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", index);
    return buf;
}

SubjectPlan plan_subject(const SynthSpec& spec, int index) {
    SubjectPlan plan;
    plan.subject_id = subject_id_for(index);
    plan.index = index;
    plan.positive = index < spec.n_pos;
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f)
        plan.offset[f] = rng.normal() * spec.subject_sd * baseline_sd()[f];
    const auto n_days = rng.between(spec.days_min, spec.days_max);
    for (long long d = 0; d < n_days; ++d) plan.day_seeds.push_back(rng.next_u64());
    return plan;
}

GeneratedDay generate_day(const SynthSpec& spec, const SubjectPlan& plan, int day) {
    if (day < 0 || static_cast<std::size_t>(day) >= plan.day_seeds.size())
        fail(ErrorCode::InvalidSpec, "day index out of range for subject " + plan.subject_id);
    Rng rng(plan.day_seeds[static_cast<std::size_t>(day)]);
    const auto n_frames = static_cast<std::size_t>(rng.between(spec.frames_min, spec.frames_max));

    FeatureArray level{};
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f) {
        const double day_offset = rng.normal() * spec.day_sd * baseline_sd()[f];
        level[f] = baseline_mean()[f] + plan.offset[f] + day_offset + (plan.positive ? spec.mean_shift[f] : 0.0);
    }

    GeneratedDay out;
    out.burst.assign(n_frames, 0);
    if (plan.positive && spec.burst_prob > 0.0) {
        const auto slot = static_cast<std::size_t>(spec.burst_slot_frames);
        for (std::size_t start = 0; start < n_frames; start += slot) {
            if (!rng.bernoulli(spec.burst_prob)) continue;
            const auto len = std::min<std::size_t>(
                static_cast<std::size_t>(rng.between(spec.burst_min_frames, spec.burst_max_frames)), slot);
            const std::size_t begin = start + static_cast<std::size_t>(rng.below(slot - len + 1));
            for (std::size_t t = begin; t < std::min(begin + len, n_frames); ++t) out.burst[t] = 1;
        }
    }

    std::vector<bool> is_target(ingest::kNumFeatures, false);
    for (int t : spec.burst_targets) is_target[static_cast<std::size_t>(t)] = true;
    const double gain = spec.burst_gain;
    const double own = std::sqrt(std::max(0.0, 1.0 - gain * gain));

    // Two-state voicing chain with stationary voiced fraction voiced_rate.
    const double p_leave_voiced = 1.0 / spec.voiced_run_mean;
    const double unvoiced_run = spec.voiced_run_mean * (1.0 - spec.voiced_rate) / spec.voiced_rate;
    const double p_leave_unvoiced = 1.0 / std::max(1.0, unvoiced_run);
    bool voiced = rng.bernoulli(spec.voiced_rate);

    FeatureArray z{};
    for (auto& v : z) v = rng.normal();
    FeatureArray innov_scale{};
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f)
        innov_scale[f] = std::sqrt(1.0 - spec.ar_coeff[f] * spec.ar_coeff[f]);

    auto& rec = out.recording;
    rec.subject_id = plan.subject_id;
    rec.day_index = day;
    rec.frames.resize(n_frames);
    for (std::size_t t = 0; t < n_frames; ++t) {
        const bool in_burst = out.burst[t] != 0;
        const double common = in_burst ? rng.normal() : 0.0;
        const double common_tail = in_burst && plan.positive && rng.bernoulli(spec.tail_prob) ? spec.tail_scale : 1.0;
        auto& frame = rec.frames[t];
        for (std::size_t f = 0; f < ingest::kNumFeatures; ++f) {
            double e = rng.normal();
            double tail = plan.positive && rng.bernoulli(spec.tail_prob) ? spec.tail_scale : 1.0;
            if (in_burst && is_target[f]) {
                e = gain * common + own * e;
                tail = common_tail;
            }
            z[f] = spec.ar_coeff[f] * z[f] + innov_scale[f] * tail * e;
            double v = quantize(level[f] + baseline_sd()[f] * z[f]);
            if (f >= kFirstIbifFeature && (spec.nan_rate > 0.0 || spec.inf_rate > 0.0)) {
                const double u = rng.uniform();
                if (u < spec.nan_rate) v = std::numeric_limits<double>::quiet_NaN();
                else if (u < spec.nan_rate + spec.inf_rate)
                    v = rng.bernoulli(0.5) ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
            }
            frame.values[f] = v;
        }
        frame.voiced = voiced;
        voiced = voiced ? !rng.bernoulli(p_leave_voiced) : rng.bernoulli(p_leave_unvoiced);
    }
    return out;
}

std::vector<ingest::SubjectLabel> cohort_labels(const SynthSpec& spec) {
    std::vector<ingest::SubjectLabel> labels;
    for (int i = 0; i < spec.n_pos + spec.n_neg; ++i)
        labels.push_back({subject_id_for(i), i < spec.n_pos ? spec.positive_group : ingest::Group::NORMAL});
    return labels;
}

void generate_cohort(const SynthSpec& spec, const std::filesystem::path& dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(dir / "days");
    for (const auto& e : fs::directory_iterator(dir / "days"))
        if (e.path().extension() == ".ndjson") fs::remove(e.path());
    for (int i = 0; i < spec.n_pos + spec.n_neg; ++i) {
        const auto plan = plan_subject(spec, i);
        for (int d = 0; d < static_cast<int>(plan.day_seeds.size()); ++d) {
            const auto day = generate_day(spec, plan, d);
            ingest::write_day_file(dir / "days" / ingest::day_file_name(plan.subject_id, d), day.recording);
        }
    }
    const auto labels = cohort_labels(spec);
    ingest::write_text_file(dir / "labels.csv", ingest::serialize_labels_csv(labels));
    ingest::write_text_file(dir / "spec.json", spec_to_json(spec));
}

CohortDescription describe_cohort(const SynthSpec& spec) {
    CohortDescription d;
    const double tail_factor = (1.0 - spec.tail_prob) + spec.tail_prob * spec.tail_scale * spec.tail_scale;
    for (std::size_t f = 0; f < ingest::kNumFeatures; ++f) {
        const double sd = baseline_sd()[f];
        const double between = sd * sd * (spec.subject_sd * spec.subject_sd + spec.day_sd * spec.day_sd);
        d.negative.mean[f] = baseline_mean()[f];
        d.positive.mean[f] = baseline_mean()[f] + spec.mean_shift[f];
        d.negative.within_day_var[f] = sd * sd;
        d.positive.within_day_var[f] = sd * sd * tail_factor;
        d.negative.between_var[f] = d.positive.between_var[f] = between;
        d.negative.lag1_autocorr[f] = d.positive.lag1_autocorr[f] = spec.ar_coeff[f];
    }
    d.voiced_fraction = spec.voiced_rate;
    return d;
}

std::string spec_to_json(const SynthSpec& s) {
    json j{{"n_pos", s.n_pos},
           {"n_neg", s.n_neg},
           {"positive_group", std::string(ingest::to_string(s.positive_group))},
           {"days_min", s.days_min},
           {"days_max", s.days_max},
           {"frames_min", s.frames_min},
           {"frames_max", s.frames_max},
           {"voiced_rate", s.voiced_rate},
           {"voiced_run_mean", s.voiced_run_mean},
           {"ar_coeff", array_json(s.ar_coeff)},
           {"mean_shift", array_json(s.mean_shift)},
           {"tail_scale", s.tail_scale},
           {"tail_prob", s.tail_prob},
           {"burst_prob", s.burst_prob},
           {"burst_gain", s.burst_gain},
           {"burst_min_frames", s.burst_min_frames},
           {"burst_max_frames", s.burst_max_frames},
           {"burst_slot_frames", s.burst_slot_frames},
           {"burst_targets", s.burst_targets},
           {"subject_sd", s.subject_sd},
           {"day_sd", s.day_sd},
           {"nan_rate", s.nan_rate},
           {"inf_rate", s.inf_rate},
           {"seed", s.seed}};
    return j.dump(2) + "\n";
}

SynthSpec spec_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, std::string("synth spec: ") + e.what());
    }
    SynthSpec s;
    const auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("n_pos", s.n_pos);
    get("n_neg", s.n_neg);
    if (j.contains("positive_group")) s.positive_group = ingest::parse_group(j["positive_group"].get<std::string>());
    get("days_min", s.days_min);
    get("days_max", s.days_max);
    get("frames_min", s.frames_min);
    get("frames_max", s.frames_max);
    get("voiced_rate", s.voiced_rate);
    get("voiced_run_mean", s.voiced_run_mean);
    if (j.contains("ar_coeff")) s.ar_coeff = array_from(j["ar_coeff"]);
    if (j.contains("mean_shift")) s.mean_shift = array_from(j["mean_shift"]);
    get("tail_scale", s.tail_scale);
    get("tail_prob", s.tail_prob);
    get("burst_prob", s.burst_prob);
    get("burst_gain", s.burst_gain);
    get("burst_min_frames", s.burst_min_frames);
    get("burst_max_frames", s.burst_max_frames);
    get("burst_slot_frames", s.burst_slot_frames);
    get("burst_targets", s.burst_targets);
    get("subject_sd", s.subject_sd);
    get("day_sd", s.day_sd);
    get("nan_rate", s.nan_rate);
    get("inf_rate", s.inf_rate);
    get("seed", s.seed);
    s.validate();
    return s;
}

}  // namespace vibemil::synth
