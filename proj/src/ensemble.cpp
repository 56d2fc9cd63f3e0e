#include "vibemil/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"

namespace vibemil::ensemble {

using nlohmann::json;

int grid_units(double step) {
    if (!(step > 0.0 && step <= 1.0)) fail(ErrorCode::ConfigError, "ensemble step must be in (0, 1]");
    const double units = 1.0 / step;
    const long long rounded = std::llround(units);
    if (std::abs(units - static_cast<double>(rounded)) > 1e-9)
        fail(ErrorCode::ConfigError, "ensemble step must divide 1 exactly");
    return static_cast<int>(rounded);
}

std::vector<std::array<int, 3>> simplex_grid(int units) {
    std::vector<std::array<int, 3>> grid;
    for (int a = 0; a <= units; ++a)
        for (int b = 0; b <= units - a; ++b) grid.push_back({a, b, units - a - b});
    return grid;
}

double blend(double p_cnn, double p_gbt_level, double p_gbt_leaf, const EnsembleWeights& w) noexcept {
    // Corners return the input untouched so a single-model weighting scores exactly like that model.
    if (w.cnn == w.denominator) return std::clamp(p_cnn, 0.0, 1.0);
    if (w.gbt_level == w.denominator) return std::clamp(p_gbt_level, 0.0, 1.0);
    if (w.gbt_leaf == w.denominator) return std::clamp(p_gbt_leaf, 0.0, 1.0);
    const double p = (w.cnn * p_cnn + w.gbt_level * p_gbt_level + w.gbt_leaf * p_gbt_leaf) / w.denominator;
    return std::clamp(p, 0.0, 1.0);
}

std::vector<double> blend(std::span<const double> p_cnn, std::span<const double> p_gbt_level,
                          std::span<const double> p_gbt_leaf, const EnsembleWeights& w) {
    if (p_cnn.size() != p_gbt_level.size() || p_cnn.size() != p_gbt_leaf.size())
        fail(ErrorCode::ArityMismatch, "blend inputs differ in length");
    std::vector<double> out(p_cnn.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = blend(p_cnn[i], p_gbt_level[i], p_gbt_leaf[i], w);
    return out;
}

EnsembleWeights grid_search_weights(const validation::OofTable& oof, double step) {
    const int units = grid_units(step);
    const auto y = oof.labels();
    const auto p_cnn = oof.column("cnn");
    const auto p_level = oof.column("gbt_level");
    const auto p_leaf = oof.column("gbt_leaf");

    EnsembleWeights best;
    best.denominator = units;
    bool have = false;
    for (const auto& t : simplex_grid(units)) {
        EnsembleWeights w{t[0], t[1], t[2], units, 0.0};
        const double auc = validation::roc_auc(blend(p_cnn, p_level, p_leaf, w), y);
        if (!have || auc > best.achieved_oof_auc) {
            best = w;
            best.achieved_oof_auc = auc;
            have = true;
        }
    }
    return best;
}

std::vector<TestPrediction> apply_test(const std::vector<FoldProbabilities>& per_fold,
                                       std::span<const std::string> test_subjects, const EnsembleWeights& w,
                                       int expected_folds) {
    if (static_cast<int>(per_fold.size()) != expected_folds)
        fail(ErrorCode::MissingFoldModel, "expected " + std::to_string(expected_folds) + " fold models, got " +
                                              std::to_string(per_fold.size()));
    const std::size_t n = test_subjects.size();
    for (std::size_t f = 0; f < per_fold.size(); ++f) {
        const auto& fp = per_fold[f];
        if (fp.p_cnn.size() != n || fp.p_gbt_level.size() != n || fp.p_gbt_leaf.size() != n)
            fail(ErrorCode::MissingFoldModel, "fold " + std::to_string(f) + " is missing predictions");
    }
    std::vector<TestPrediction> out(n);
    const double k = static_cast<double>(per_fold.size());
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = out[i];
        p.subject_id = test_subjects[i];
        for (const auto& fp : per_fold) {
            p.p_cnn += fp.p_cnn[i];
            p.p_gbt_level += fp.p_gbt_level[i];
            p.p_gbt_leaf += fp.p_gbt_leaf[i];
        }
        p.p_cnn /= k;
        p.p_gbt_level /= k;
        p.p_gbt_leaf /= k;
        p.p_final = blend(p.p_cnn, p.p_gbt_level, p.p_gbt_leaf, w);
        p.label = validation::classify(p.p_final);
    }
    return out;
}

std::string weights_json(const EnsembleWeights& w, std::string_view extra_json) {
    json j = json::parse(extra_json);
    j["units"] = {{"cnn", w.cnn}, {"gbt_level", w.gbt_level}, {"gbt_leaf", w.gbt_leaf}, {"denominator", w.denominator}};
    j["w_cnn"] = w.w_cnn();
    j["w_gbt_level"] = w.w_gbt_level();
    j["w_gbt_leaf"] = w.w_gbt_leaf();
    j["oof_auc"] = w.achieved_oof_auc;
    return j.dump(2) + "\n";
}

EnsembleWeights parse_weights_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, std::string("weights: ") + e.what());
    }
    EnsembleWeights w;
    const auto& u = j.at("units");
    w.cnn = u.at("cnn").get<int>();
    w.gbt_level = u.at("gbt_level").get<int>();
    w.gbt_leaf = u.at("gbt_leaf").get<int>();
    w.denominator = u.at("denominator").get<int>();
    w.achieved_oof_auc = j.at("oof_auc").get<double>();
    if (w.cnn < 0 || w.gbt_level < 0 || w.gbt_leaf < 0 || w.cnn + w.gbt_level + w.gbt_leaf != w.denominator)
        fail(ErrorCode::SchemaError, "weights must be non-negative units summing to the denominator");
    return w;
}

std::string predictions_csv(std::span<const TestPrediction> preds) {
    std::string out = "subject_id,p_final,label\n";
    for (const auto& p : preds) {
        out += p.subject_id + ',';
        append_double(out, p.p_final);
        out += ',' + std::to_string(p.label) + '\n';
    }
    return out;
}

}  // namespace vibemil::ensemble
