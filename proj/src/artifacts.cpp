#include "vibemil/artifacts.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"

namespace vibemil::artifacts {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void missing(const fs::path& path, std::string_view producer) {
    fail(ErrorCode::DependencyError,
         path.string() + " not found; run `vibemil " + std::string(producer) + "` first");
}

void check(const Provenance& found, const Provenance& expected, const fs::path& path, std::string_view producer) {
    if (found == expected) return;
    fail(ErrorCode::DependencyError, path.string() + " was produced with config_hash=" + found.config_hash +
                                         " seed=" + std::to_string(found.seed) + ", expected config_hash=" +
                                         expected.config_hash + " seed=" + std::to_string(expected.seed) +
                                         "; re-run `vibemil " + std::string(producer) + "`");
}

json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, what + ": " + e.what());
    }
}

Provenance provenance_of(const json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("config_hash") || !j.contains("seed"))
        fail(ErrorCode::SchemaError, what + ": missing provenance");
    return {j["config_hash"].get<std::string>(), j["seed"].get<std::uint64_t>()};
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = text.substr(0, nl);
        ++line_no;
        if (!line.empty()) f(line, line_no);
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
}

std::vector<double> doubles(const json& j, std::size_t expected, const std::string& what) {
    if (!j.is_array() || j.size() != expected)
        fail(ErrorCode::SchemaError, what + ": expected " + std::to_string(expected) + " values");
    std::vector<double> v;
    v.reserve(expected);
    for (const auto& x : j) v.push_back(x.get<double>());
    return v;
}

}  // namespace

std::string comment_line(const Provenance& p) {
    return "# vibemil config_hash=" + p.config_hash + " seed=" + std::to_string(p.seed) + "\n";
}

Provenance parse_comment_line(std::string_view text) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    constexpr std::string_view prefix = "# vibemil config_hash=";
    if (line.substr(0, prefix.size()) != prefix) fail(ErrorCode::SchemaError, "missing provenance comment line");
    const auto rest = line.substr(prefix.size());
    const auto sp = rest.find(" seed=");
    if (sp == std::string_view::npos) fail(ErrorCode::SchemaError, "provenance line lacks seed");
    Provenance p;
    p.config_hash = std::string(rest.substr(0, sp));
    const auto seed = rest.substr(sp + 6);
    const auto res = std::from_chars(seed.data(), seed.data() + seed.size(), p.seed);
    if (res.ec != std::errc{} || res.ptr != seed.data() + seed.size())
        fail(ErrorCode::SchemaError, "provenance seed is not an integer");
    return p;
}

std::string read_checked(const fs::path& path, const Provenance& expected, std::string_view producer) {
    if (!fs::is_regular_file(path)) missing(path, producer);
    auto text = ingest::read_text_file(path);
    check(parse_comment_line(text), expected, path, producer);
    return text;
}

std::string read_checked_json(const fs::path& path, const Provenance& expected, std::string_view producer) {
    if (!fs::is_regular_file(path)) missing(path, producer);
    auto text = ingest::read_text_file(path);
    check(provenance_of(parse_json(text, path.string()), path.string()), expected, path, producer);
    return text;
}

std::string read_checked_checkpoint(const fs::path& path, const Provenance& expected, std::string_view producer) {
    if (!fs::is_regular_file(path)) missing(path, producer);
    auto bytes = ingest::read_text_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "VMIL") != 0)
        fail(ErrorCode::SchemaError, path.string() + ": not a checkpoint");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 4, sizeof(len));
    if (bytes.size() < 12 + len) fail(ErrorCode::ParseError, path.string() + ": truncated header");
    const auto header = parse_json(std::string_view(bytes).substr(12, len), path.string());
    check(provenance_of(header.value("provenance", json::object()), path.string()), expected, path, producer);
    return bytes;
}

std::string provenance_json(const Provenance& p) {
    return json{{"config_hash", p.config_hash}, {"seed", p.seed}}.dump();
}

std::string with_provenance(std::string_view json_text, const Provenance& p) {
    json j = parse_json(json_text, "artifact");
    j["config_hash"] = p.config_hash;
    j["seed"] = p.seed;
    return j.dump(2) + "\n";
}

void write_features(const fs::path& dir, const pipeline::FeatureSet& set, const Provenance& p) {
    fs::create_directories(dir);
    const std::string head =
        json{{"config_hash", p.config_hash}, {"seed", p.seed}, {"n_subjects", set.subjects.size()}}.dump() + "\n";
    std::string bags = head, days = head, subjects = head;
    for (const auto& s : set.subjects) {
        for (std::size_t d = 0; d < s.bags.size(); ++d) {
            const auto& bag = s.bags[d];
            json rows = json::array();
            for (Eigen::Index r = 0; r < bag.rows.rows(); ++r) {
                json row = json::array();
                for (Eigen::Index c = 0; c < bag.rows.cols(); ++c) row.push_back(bag.rows(r, c));
                rows.push_back(std::move(row));
            }
            bags += json{{"subject_id", s.subject_id},
                         {"day_index", bag.day_index},
                         {"voiced_ratio", bag.voiced_ratio},
                         {"rows", std::move(rows)}}
                        .dump() +
                    "\n";
            days += json{{"subject_id", s.subject_id}, {"day_index", s.days[d].day_index}, {"values", s.days[d].values}}
                        .dump() +
                    "\n";
        }
        subjects += json{{"subject_id", s.subject_id},
                         {"group", std::string(ingest::to_string(s.group))},
                         {"values", s.vector.values}}
                        .dump() +
                    "\n";
    }
    ingest::write_text_file(dir / "bags.ndjson", bags);
    ingest::write_text_file(dir / "days.ndjson", days);
    ingest::write_text_file(dir / "subjects.ndjson", subjects);
    std::string warn;
    for (const auto& w : set.warnings) warn += w + "\n";
    ingest::write_text_file(dir / "warnings.txt", warn);
}

pipeline::FeatureSet read_features(const fs::path& dir, const Provenance& expected) {
    const auto load = [&](const char* name) {
        const auto path = dir / name;
        if (!fs::is_regular_file(path)) missing(path, "featurize");
        return ingest::read_text_file(path);
    };
    pipeline::FeatureSet set;
    std::map<std::string, std::size_t> index;
    const auto header = [&](std::string_view line, const char* name) {
        check(provenance_of(parse_json(line, name), name), expected, dir / name, "featurize");
    };

    const auto subjects = load("subjects.ndjson");
    for_each_line(subjects, [&](std::string_view line, std::size_t no) {
        if (no == 1) return header(line, "subjects.ndjson");
        const auto j = parse_json(line, "subjects.ndjson line " + std::to_string(no));
        pipeline::SubjectFeatures s;
        s.subject_id = j.at("subject_id").get<std::string>();
        s.group = ingest::parse_group(j.at("group").get<std::string>());
        s.vector.subject_id = s.subject_id;
        s.vector.values = doubles(j.at("values"), features::kSubjectDim, "subject " + s.subject_id);
        if (!set.subjects.empty() && set.subjects.back().subject_id >= s.subject_id)
            fail(ErrorCode::SchemaError, "subjects.ndjson is not sorted by subject_id");
        index[s.subject_id] = set.subjects.size();
        set.subjects.push_back(std::move(s));
    });

    const auto locate = [&](const json& j, const char* file) -> pipeline::SubjectFeatures& {
        const auto id = j.at("subject_id").get<std::string>();
        const auto it = index.find(id);
        if (it == index.end()) fail(ErrorCode::UnknownSubject, std::string(file) + " lists unknown subject " + id);
        return set.subjects[it->second];
    };

    const auto days = load("days.ndjson");
    for_each_line(days, [&](std::string_view line, std::size_t no) {
        if (no == 1) return header(line, "days.ndjson");
        const auto j = parse_json(line, "days.ndjson line " + std::to_string(no));
        auto& s = locate(j, "days.ndjson");
        features::DayVector d;
        d.subject_id = s.subject_id;
        d.day_index = j.at("day_index").get<int>();
        d.values = doubles(j.at("values"), features::kDayDim, "day vector of " + s.subject_id);
        s.days.push_back(std::move(d));
    });

    const auto bags = load("bags.ndjson");
    for_each_line(bags, [&](std::string_view line, std::size_t no) {
        if (no == 1) return header(line, "bags.ndjson");
        const auto j = parse_json(line, "bags.ndjson line " + std::to_string(no));
        auto& s = locate(j, "bags.ndjson");
        features::WindowBag b;
        b.subject_id = s.subject_id;
        b.day_index = j.at("day_index").get<int>();
        b.voiced_ratio = j.at("voiced_ratio").get<double>();
        const auto& rows = j.at("rows");
        b.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(features::kWindowDim));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto v = doubles(rows[r], features::kWindowDim, "bag row of " + s.subject_id);
            for (std::size_t c = 0; c < v.size(); ++c)
                b.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
        }
        s.bags.push_back(std::move(b));
    });

    for (const auto& s : set.subjects) {
        if (s.bags.empty() || s.bags.size() != s.days.size())
            fail(ErrorCode::SchemaError, "feature artifacts disagree on the days of subject " + s.subject_id);
        for (std::size_t d = 0; d < s.bags.size(); ++d)
            if (s.bags[d].day_index != s.days[d].day_index)
                fail(ErrorCode::SchemaError, "bag and day vectors of " + s.subject_id + " are misaligned");
    }
    const auto warn_path = dir / "warnings.txt";
    if (fs::is_regular_file(warn_path))
        for_each_line(ingest::read_text_file(warn_path),
                      [&](std::string_view line, std::size_t) { set.warnings.emplace_back(line); });
    return set;
}

std::string scaler_json(const features::ScalerParams& s, const Provenance& p) {
    json j{{"config_hash", p.config_hash}, {"seed", p.seed},           {"scaler_seed", s.seed},
           {"fit_fraction", s.fit_fraction}, {"rows_used", s.rows_used}, {"median", s.median},
           {"iqr_scale", s.iqr_scale}};
    return j.dump(2) + "\n";
}

features::ScalerParams parse_scaler_json(std::string_view text) {
    const auto j = parse_json(text, "scaler");
    features::ScalerParams s;
    s.seed = j.at("scaler_seed").get<std::uint64_t>();
    s.fit_fraction = j.at("fit_fraction").get<double>();
    s.rows_used = j.at("rows_used").get<std::size_t>();
    s.median = doubles(j.at("median"), features::kWindowDim, "scaler median");
    s.iqr_scale = doubles(j.at("iqr_scale"), features::kWindowDim, "scaler iqr_scale");
    for (double v : s.iqr_scale)
        if (!(v > 0.0)) fail(ErrorCode::SchemaError, "scaler iqr_scale must be positive");
    return s;
}

std::string oof_predictions_csv(std::span<const pipeline::OofPrediction> preds, const Provenance& p) {
    std::string out = comment_line(p) + "subject_id,fold,y,p\n";
    for (const auto& r : preds) {
        out += r.subject_id + ',' + std::to_string(r.fold) + ',' + std::to_string(r.y) + ',';
        append_double(out, r.p);
        out += '\n';
    }
    return out;
}

std::vector<pipeline::OofPrediction> parse_oof_predictions_csv(std::string_view text) {
    std::vector<pipeline::OofPrediction> out;
    bool header_seen = false;
    for_each_line(text, [&](std::string_view line, std::size_t no) {
        if (line.front() == '#') return;
        if (!header_seen) {
            header_seen = true;
            if (line != "subject_id,fold,y,p") fail(ErrorCode::SchemaError, "unexpected OOF header");
            return;
        }
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                cells.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (cells.size() != 4) fail(ErrorCode::ParseError, "OOF csv line " + std::to_string(no));
        pipeline::OofPrediction r;
        r.subject_id = std::string(cells[0]);
        const auto num = [&](std::string_view c, auto& v) {
            const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
            if (res.ec != std::errc{} || res.ptr != c.data() + c.size())
                fail(ErrorCode::ParseError, "OOF csv line " + std::to_string(no) + ": bad number");
        };
        num(cells[1], r.fold);
        num(cells[2], r.y);
        num(cells[3], r.p);
        out.push_back(std::move(r));
    });
    return out;
}

std::string attention_json(const mil::MilModel& m, const pipeline::FeatureSet& set,
                           std::span<const std::string> subject_ids, const features::ScalerParams& scaler,
                           const Provenance& p) {
    json subjects = json::array();
    for (const auto& id : subject_ids) {
        const auto& s = set.at(id);
        const auto inputs = pipeline::mil_inputs(s, scaler);
        json days = json::array();
        for (std::size_t d = 0; d < inputs.size(); ++d)
            days.push_back({{"day_index", s.bags[d].day_index}, {"heads", mil::attention_weights(m, inputs[d])}});
        subjects.push_back({{"subject_id", id}, {"days", std::move(days)}});
    }
    json j{{"config_hash", p.config_hash}, {"seed", p.seed}, {"subjects", std::move(subjects)}};
    return j.dump() + "\n";
}

}  // namespace vibemil::artifacts
