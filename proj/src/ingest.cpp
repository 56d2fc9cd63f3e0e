#include "vibemil/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"

namespace vibemil::ingest {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

double decode_value(const json& v, std::size_t line) {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    fail(ErrorCode::SchemaError, at_line(line) + "frame value must be a number, null, \"inf\" or \"-inf\"");
}

void append_value(std::string& out, double v) {
    if (std::isnan(v)) {
        out += "null";
    } else if (std::isinf(v)) {
        out += v > 0 ? "\"inf\"" : "\"-inf\"";
    } else {
        append_double(out, v);
    }
}

json parse_line(std::string_view line, std::size_t line_no) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, at_line(line_no) + e.what());
    }
}

}  // namespace

std::string_view to_string(Group g) noexcept {
    switch (g) {
        case Group::PVH: return "PVH";
        case Group::NPVH: return "NPVH";
        case Group::NORMAL: return "NORMAL";
    }
    return "NORMAL";
}

Group parse_group(std::string_view text) {
    const auto t = trim(text);
    if (t == "PVH") return Group::PVH;
    if (t == "NPVH") return Group::NPVH;
    if (t == "NORMAL") return Group::NORMAL;
    fail(ErrorCode::SchemaError, "unknown group '" + std::string(t) + "'");
}

DayRecording parse_day_recording(std::string_view text) {
    DayRecording rec;
    bool have_header = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;

        const json obj = parse_line(line, line_no);
        if (!obj.is_object()) fail(ErrorCode::SchemaError, at_line(line_no) + "expected a JSON object");

        if (!have_header) {
            if (!obj.contains("subject_id") || !obj["subject_id"].is_string())
                fail(ErrorCode::SchemaError, at_line(line_no) + "header needs string subject_id");
            if (!obj.contains("day_index") || !obj["day_index"].is_number_integer() ||
                obj["day_index"].get<long long>() < 0)
                fail(ErrorCode::SchemaError, at_line(line_no) + "header needs non-negative integer day_index");
            if (!obj.contains("feature_order") || !obj["feature_order"].is_array() ||
                obj["feature_order"].size() != kNumFeatures)
                fail(ErrorCode::SchemaError, at_line(line_no) + "header needs 14-entry feature_order");
            for (std::size_t i = 0; i < kNumFeatures; ++i) {
                const auto& name = obj["feature_order"][i];
                if (!name.is_string() || name.get_ref<const std::string&>() != kFeatureOrder[i])
                    fail(ErrorCode::SchemaError,
                         at_line(line_no) + "feature_order[" + std::to_string(i) + "] must be " +
                             std::string(kFeatureOrder[i]));
            }
            rec.subject_id = obj["subject_id"].get<std::string>();
            rec.day_index = obj["day_index"].get<int>();
            have_header = true;
            continue;
        }

        const auto v = obj.find("v");
        const auto voiced = obj.find("voiced");
        if (v == obj.end() || !v->is_array())
            fail(ErrorCode::SchemaError, at_line(line_no) + "frame needs array 'v'");
        if (v->size() != kNumFeatures)
            fail(ErrorCode::SchemaError, at_line(line_no) + "frame has " + std::to_string(v->size()) +
                                             " values, expected 14");
        if (voiced == obj.end() || !voiced->is_boolean())
            fail(ErrorCode::SchemaError, at_line(line_no) + "frame needs boolean 'voiced'");
        FrameRow row;
        for (std::size_t i = 0; i < kNumFeatures; ++i) row.values[i] = decode_value((*v)[i], line_no);
        row.voiced = voiced->get<bool>();
        rec.frames.push_back(row);
    }
    if (!have_header) fail(ErrorCode::ParseError, "empty day file");
    if (rec.frames.empty()) fail(ErrorCode::SchemaError, "day file has no frames");
    return rec;
}

std::string serialize_day_recording(const DayRecording& rec) {
    json header;
    header["subject_id"] = rec.subject_id;
    header["day_index"] = rec.day_index;
    header["feature_order"] = json::array();
    for (auto name : kFeatureOrder) header["feature_order"].push_back(std::string(name));

    std::string out = header.dump();
    out += '\n';
    out.reserve(out.size() + rec.frames.size() * 128);
    for (const auto& f : rec.frames) {
        out += "{\"v\":[";
        for (std::size_t i = 0; i < kNumFeatures; ++i) {
            if (i) out += ',';
            append_value(out, f.values[i]);
        }
        out += f.voiced ? "],\"voiced\":true}\n" : "],\"voiced\":false}\n";
    }
    return out;
}

double clean_value(double v) noexcept {
    if (std::isnan(v)) return 0.0;
    if (std::isinf(v)) return v > 0 ? kInfReplacement : -kInfReplacement;
    return v;
}

void clean_frames(std::span<FrameRow> frames) noexcept {
    for (auto& f : frames)
        for (auto& v : f.values) v = clean_value(v);
}

std::vector<FrameRow> cleaned(std::vector<FrameRow> frames) {
    clean_frames(frames);
    return frames;
}

RowMatrix apply_voiced_mask(const DayRecording& rec) {
    const auto n_voiced = static_cast<Eigen::Index>(
        std::count_if(rec.frames.begin(), rec.frames.end(), [](const FrameRow& f) { return f.voiced; }));
    RowMatrix out(n_voiced, static_cast<Eigen::Index>(kNumFeatures));
    Eigen::Index r = 0;
    for (const auto& f : rec.frames) {
        if (!f.voiced) continue;
        for (std::size_t c = 0; c < kNumFeatures; ++c) out(r, static_cast<Eigen::Index>(c)) = f.values[c];
        ++r;
    }
    return out;
}

CohortSummary validate_cohort(std::span<const RecordingKey> recordings, std::span<const SubjectLabel> labels) {
    CohortSummary summary;
    std::map<std::string, Group> group_of;
    for (const auto& l : labels) {
        if (!group_of.emplace(l.subject_id, l.group).second)
            fail(ErrorCode::DuplicateSubject, "subject '" + l.subject_id + "' labeled twice");
        summary.days_per_subject[l.subject_id] = 0;
    }
    std::set<std::pair<std::string, int>> seen;
    for (const auto& r : recordings) {
        if (!group_of.contains(r.subject_id))
            fail(ErrorCode::UnknownSubject, "recording for unlabeled subject '" + r.subject_id + "'");
        if (!seen.emplace(r.subject_id, r.day_index).second)
            fail(ErrorCode::DuplicateRecording,
                 "duplicate recording (" + r.subject_id + ", day " + std::to_string(r.day_index) + ")");
        ++summary.days_per_subject[r.subject_id];
    }
    for (const auto& [id, days] : summary.days_per_subject) {
        if (days == 0) continue;
        ++summary.n_subjects;
        summary.n_days += days;
        ++summary.subjects_per_group[group_of[id]];
    }
    return summary;
}

CohortSummary validate_cohort(const Cohort& cohort) {
    std::vector<RecordingKey> keys;
    keys.reserve(cohort.recordings.size());
    for (const auto& r : cohort.recordings) keys.push_back({r.subject_id, r.day_index});
    return validate_cohort(keys, cohort.labels);
}

std::vector<SubjectLabel> parse_labels_csv(std::string_view text) {
    std::vector<SubjectLabel> labels;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string_view::npos)
            fail(ErrorCode::ParseError, "labels " + at_line(line_no) + "expected subject_id,group");
        const auto id = trim(line.substr(0, comma));
        const auto group = trim(line.substr(comma + 1));
        if (id == "subject_id" && group == "group") continue;
        if (id.empty()) fail(ErrorCode::SchemaError, "labels " + at_line(line_no) + "empty subject_id");
        labels.push_back({std::string(id), parse_group(group)});
    }
    return labels;
}

std::string serialize_labels_csv(std::span<const SubjectLabel> labels) {
    std::string out = "subject_id,group\n";
    for (const auto& l : labels) {
        out += l.subject_id;
        out += ',';
        out += to_string(l.group);
        out += '\n';
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::string day_file_name(const std::string& subject_id, int day_index) {
    return subject_id + "_d" + std::to_string(day_index) + ".ndjson";
}

DayRecording read_day_file(const std::filesystem::path& path) {
    try {
        return parse_day_recording(read_text_file(path));
    } catch (const Error& e) {
        throw Error(e.code(), path.filename().string() + ": " + e.what());
    }
}

void write_day_file(const std::filesystem::path& path, const DayRecording& rec) {
    write_text_file(path, serialize_day_recording(rec));
}

CohortIndex scan_cohort_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail(ErrorCode::IoError, "cohort directory " + dir.string() + " does not exist");
    CohortIndex index;
    index.labels = parse_labels_csv(read_text_file(dir / "labels.csv"));

    const fs::path days = fs::is_directory(dir / "days") ? dir / "days" : dir;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(days))
        if (e.is_regular_file() && e.path().extension() == ".ndjson") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::string first;
        std::getline(in, first);
        if (trim(first).empty()) fail(ErrorCode::ParseError, f.filename().string() + ": empty day file");
        const json header = parse_line(trim(first), 1);
        if (!header.is_object() || !header.contains("subject_id") || !header.contains("day_index"))
            fail(ErrorCode::SchemaError, f.filename().string() + ": missing header");
        index.entries.push_back({{header["subject_id"].get<std::string>(), header["day_index"].get<int>()}, f});
    }
    std::sort(index.entries.begin(), index.entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.key.subject_id, a.key.day_index) < std::tie(b.key.subject_id, b.key.day_index);
    });
    return index;
}

}  // namespace vibemil::ingest
