#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibemil/validation.hpp"

namespace vibemil::ensemble {

// Weights in integer grid units (twentieths at step 0.05); units sum exactly to `denominator`.
struct EnsembleWeights {
    int cnn = 0;
    int gbt_level = 0;
    int gbt_leaf = 0;
    int denominator = 20;
    double achieved_oof_auc = 0.0;

    double w_cnn() const noexcept { return static_cast<double>(cnn) / denominator; }
    double w_gbt_level() const noexcept { return static_cast<double>(gbt_level) / denominator; }
    double w_gbt_leaf() const noexcept { return static_cast<double>(gbt_leaf) / denominator; }
};

int grid_units(double step);

// All non-negative (a, b, c) with a + b + c = units, in lexicographic order.
std::vector<std::array<int, 3>> simplex_grid(int units);

double blend(double p_cnn, double p_gbt_level, double p_gbt_leaf, const EnsembleWeights& w) noexcept;
std::vector<double> blend(std::span<const double> p_cnn, std::span<const double> p_gbt_level,
                          std::span<const double> p_gbt_leaf, const EnsembleWeights& w);

// Exhaustive search for the highest pooled OOF AUC; ties keep the lexicographically smallest triplet.
EnsembleWeights grid_search_weights(const validation::OofTable& oof, double step = 0.05);

struct FoldProbabilities {
    std::vector<double> p_cnn;
    std::vector<double> p_gbt_level;
    std::vector<double> p_gbt_leaf;
};

struct TestPrediction {
    std::string subject_id;
    double p_cnn = 0.0;
    double p_gbt_level = 0.0;
    double p_gbt_leaf = 0.0;
    double p_final = 0.0;
    int label = 0;
};

// Mean over fold models per model type, then blend, then threshold at 0.5.
std::vector<TestPrediction> apply_test(const std::vector<FoldProbabilities>& per_fold,
                                       std::span<const std::string> test_subjects, const EnsembleWeights& w,
                                       int expected_folds = 5);

std::string weights_json(const EnsembleWeights& w, std::string_view extra_json = "{}");
EnsembleWeights parse_weights_json(std::string_view text);
std::string predictions_csv(std::span<const TestPrediction> preds);

}  // namespace vibemil::ensemble
