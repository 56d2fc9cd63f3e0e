#include "vibemil/validation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"
#include "vibemil/random.hpp"

namespace vibemil::validation {

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

template <typename Fn>
void for_each_data_line(std::string_view text, Fn&& fn) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        fn(split_csv_line(line), line_no);
    }
}

double parse_double(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
    return v;
}

int parse_int(std::string_view s, std::size_t line_no) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad integer '" + std::string(s) + "'");
    return v;
}

}  // namespace

std::vector<std::string> FoldAssignment::subjects_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldAssignment::subjects_not_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f != fold) out.push_back(id);
    return out;
}

FoldAssignment stratified_group_kfold(std::span<const LabeledSubject> subjects, int k, std::uint64_t seed) {
    if (k < 2) fail(ErrorCode::InvalidSpec, "k must be at least 2");
    std::set<std::string> ids;
    std::size_t n_pos = 0;
    for (const auto& s : subjects) {
        if (!ids.insert(s.subject_id).second)
            fail(ErrorCode::DuplicateSubject, "subject '" + s.subject_id + "' listed twice");
        n_pos += s.y == 1 ? 1 : 0;
    }
    const std::size_t n_neg = subjects.size() - n_pos;
    const auto uk = static_cast<std::size_t>(k);
    if (n_pos < uk || n_neg < uk)
        fail(ErrorCode::TooFewSubjects, "need at least k subjects per class (have " + std::to_string(n_pos) +
                                            " positive, " + std::to_string(n_neg) + " negative, k=" +
                                            std::to_string(k) + ")");

    std::vector<LabeledSubject> order(subjects.begin(), subjects.end());
    // Canonical order first so the result depends only on the subject set and the seed.
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    Rng rng(seed);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.y > b.y; });

    std::vector<std::array<std::size_t, 2>> class_count(uk, {0, 0});
    std::vector<std::size_t> total(uk, 0);
    const double target[2] = {static_cast<double>(n_neg) / k, static_cast<double>(n_pos) / k};

    FoldAssignment out;
    out.k = k;
    for (const auto& s : order) {
        const int c = s.y == 1 ? 1 : 0;
        std::size_t best = 0;
        for (std::size_t f = 1; f < uk; ++f) {
            const double deficit_f = target[c] - static_cast<double>(class_count[f][c]);
            const double deficit_b = target[c] - static_cast<double>(class_count[best][c]);
            if (deficit_f > deficit_b || (deficit_f == deficit_b && total[f] < total[best])) best = f;
        }
        ++class_count[best][c];
        ++total[best];
        out.fold_of[s.subject_id] = static_cast<int>(best);
    }
    return out;
}

HoldoutSplit group_holdout(std::span<const LabeledSubject> subjects, double fraction, std::uint64_t seed) {
    HoldoutSplit out;
    std::vector<LabeledSubject> by_class[2];
    for (const auto& s : subjects) by_class[s.y == 1 ? 1 : 0].push_back(s);
    Rng rng(seed);
    for (auto& cls : by_class) {
        std::sort(cls.begin(), cls.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
        rng.shuffle(cls);
        std::size_t n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cls.size())));
        if (cls.size() >= 2) n_hold = std::clamp<std::size_t>(n_hold, 1, cls.size() - 1);
        else n_hold = 0;
        for (std::size_t i = 0; i < cls.size(); ++i) (i < n_hold ? out.holdout : out.train).push_back(cls[i]);
    }
    const auto by_id = [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; };
    std::sort(out.train.begin(), out.train.end(), by_id);
    std::sort(out.holdout.begin(), out.holdout.end(), by_id);
    return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> y) {
    if (scores.size() != y.size()) fail(ErrorCode::ArityMismatch, "roc_auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::int64_t n_pos = 0;
    for (int v : y) n_pos += v == 1 ? 1 : 0;
    const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(ErrorCode::OneClassOnly, "roc_auc needs both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of positives, kept integral so tied ranks stay exact.
    std::int64_t rank_sum_x2 = 0;
    std::size_t a = 0;
    while (a < n) {
        std::size_t b = a + 1;
        while (b < n && scores[order[b]] == scores[order[a]]) ++b;
        const auto rank_x2 = static_cast<std::int64_t>(a + 1 + b);
        for (std::size_t i = a; i < b; ++i)
            if (y[order[i]] == 1) rank_sum_x2 += rank_x2;
        a = b;
    }
    const std::int64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
    return static_cast<double>(u_x2) / static_cast<double>(2 * n_pos * n_neg);
}

std::vector<int> OofTable::labels() const {
    std::vector<int> y;
    y.reserve(rows.size());
    for (const auto& r : rows) y.push_back(r.y);
    return y;
}

std::vector<double> OofTable::column(std::string_view model) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (model == "cnn") out.push_back(r.p_cnn);
        else if (model == "gbt_level") out.push_back(r.p_gbt_level);
        else if (model == "gbt_leaf") out.push_back(r.p_gbt_leaf);
        else fail(ErrorCode::InvalidSpec, "unknown model column '" + std::string(model) + "'");
    }
    return out;
}

OofTable pool_oof(const std::vector<std::vector<OofRow>>& fold_predictions,
                  std::span<const std::string> expected_subjects) {
    std::map<std::string, OofRow> merged;
    for (const auto& fold : fold_predictions)
        for (const auto& row : fold)
            if (!merged.emplace(row.subject_id, row).second)
                fail(ErrorCode::DuplicateSubject, "subject '" + row.subject_id + "' predicted by two folds");
    const std::set<std::string> expected(expected_subjects.begin(), expected_subjects.end());
    for (const auto& id : expected)
        if (!merged.contains(id)) fail(ErrorCode::MissingSubject, "no out-of-fold prediction for '" + id + "'");
    for (const auto& [id, row] : merged)
        if (!expected.contains(id)) fail(ErrorCode::UnknownSubject, "prediction for unexpected subject '" + id + "'");
    OofTable table;
    for (auto& [id, row] : merged) table.rows.push_back(row);
    return table;
}

std::string_view to_string(Task t) noexcept { return t == Task::PVH ? "pvh" : "npvh"; }

Task parse_task(std::string_view text) {
    if (text == "pvh" || text == "PVH") return Task::PVH;
    if (text == "npvh" || text == "NPVH") return Task::NPVH;
    fail(ErrorCode::ConfigError, "unknown task '" + std::string(text) + "' (expected pvh or npvh)");
}

TaskConfig make_task(Task task) {
    using ingest::Group;
    TaskConfig cfg;
    cfg.task = task;
    if (task == Task::PVH) {
        cfg.positive = Group::PVH;
        cfg.controls = {Group::NPVH, Group::NORMAL};
    } else {
        cfg.positive = Group::NPVH;
        cfg.controls = {Group::PVH, Group::NORMAL};
    }
    return cfg;
}

int task_label(const TaskConfig& task, ingest::Group g) noexcept { return g == task.positive ? 1 : 0; }

double compute_pos_weight(std::span<const int> y) {
    std::size_t n_pos = 0;
    for (int v : y) n_pos += v == 1 ? 1 : 0;
    const std::size_t n_neg = y.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(ErrorCode::OneClassOnly, "pos_weight needs both classes");
    return static_cast<double>(n_neg) / static_cast<double>(n_pos);
}

std::string fold_assignment_csv(const FoldAssignment& folds) {
    std::string out = "subject_id,fold\n";
    for (const auto& [id, f] : folds.fold_of) out += id + "," + std::to_string(f) + "\n";
    return out;
}

FoldAssignment parse_fold_assignment_csv(std::string_view text, int k) {
    FoldAssignment folds;
    folds.k = k;
    for_each_data_line(text, [&](const std::vector<std::string_view>& cells, std::size_t line_no) {
        if (cells.size() != 2) fail(ErrorCode::ParseError, "fold csv line " + std::to_string(line_no));
        const int f = parse_int(cells[1], line_no);
        if (f < 0 || f >= k) fail(ErrorCode::SchemaError, "fold index out of range on line " + std::to_string(line_no));
        if (!folds.fold_of.emplace(std::string(cells[0]), f).second)
            fail(ErrorCode::DuplicateSubject, "subject listed twice in fold csv");
    });
    return folds;
}

std::string oof_table_csv(const OofTable& table) {
    std::string out = "subject_id,fold,y,p_cnn,p_gbt_level,p_gbt_leaf\n";
    for (const auto& r : table.rows) {
        out += r.subject_id;
        out += ',' + std::to_string(r.fold) + ',' + std::to_string(r.y) + ',';
        append_double(out, r.p_cnn);
        out += ',';
        append_double(out, r.p_gbt_level);
        out += ',';
        append_double(out, r.p_gbt_leaf);
        out += '\n';
    }
    return out;
}

OofTable parse_oof_table_csv(std::string_view text) {
    OofTable table;
    for_each_data_line(text, [&](const std::vector<std::string_view>& cells, std::size_t line_no) {
        if (cells.size() != 6) fail(ErrorCode::ParseError, "oof csv line " + std::to_string(line_no));
        OofRow r;
        r.subject_id = std::string(cells[0]);
        r.fold = parse_int(cells[1], line_no);
        r.y = parse_int(cells[2], line_no);
        r.p_cnn = parse_double(cells[3], line_no);
        r.p_gbt_level = parse_double(cells[4], line_no);
        r.p_gbt_leaf = parse_double(cells[5], line_no);
        table.rows.push_back(std::move(r));
    });
    std::sort(table.rows.begin(), table.rows.end(),
              [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    return table;
}

}  // namespace vibemil::validation
