#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibemil/matrix.hpp"

namespace vibemil::gbt {

enum class Growth { LevelWise, LeafWise };

std::string_view to_string(Growth g) noexcept;
Growth parse_growth(std::string_view text);

struct GbtConfig {
    int n_estimators = 500;
    int max_depth = 5;
    double learning_rate = 0.05;
    double row_subsample = 0.8;
    double col_subsample = 0.8;
    double l1_alpha = 0.1;
    double l2_lambda = 1.0;
    int early_stop_patience = 50;
    Growth growth = Growth::LevelWise;
    int max_leaves = 31;  // LeafWise only
    int n_bins = 256;
    double min_child_weight = 1.0;
    double pos_weight = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GradHess {
    double g = 0.0;
    double h = 0.0;
};

// Weighted logistic loss derivatives w.r.t. the margin; p is clamped to [1e-12, 1 - 1e-12].
GradHess logistic_grad_hess(double p, int y, double pos_weight) noexcept;

double soft_threshold(double g, double alpha) noexcept;
double leaf_weight(double G, double H, double lambda, double alpha) noexcept;
double split_gain(double G_L, double H_L, double G_R, double H_R, double lambda, double alpha) noexcept;

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    int bin = -1;
    double threshold = 0.0;  // x <= threshold goes left
    int left = -1;
    int right = -1;
    double weight = 0.0;  // leaf value before learning-rate scaling
    int depth = 0;
    double sum_grad = 0.0;
    double sum_hess = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(std::span<const double> row) const;
    int depth() const;
    int n_leaves() const;
};

// Structural equality independent of node creation order.
bool same_structure(const Tree& a, const Tree& b, double weight_tol = 0.0);

struct TrainLogRow {
    int round = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
};

struct GbtModel {
    GbtConfig config;
    std::size_t n_features = 0;
    double base_score = 0.0;  // logit
    std::vector<Tree> trees;
    int best_iteration = 0;  // number of trees used for prediction
    std::vector<TrainLogRow> log;
};

// Histogram machinery, exposed for verification against exhaustive search.
struct FeatureBins {
    std::vector<double> cuts;  // bin b holds (cuts[b-1], cuts[b]]; n_bins = cuts.size() + 1

    int n_bins() const noexcept { return static_cast<int>(cuts.size()) + 1; }
    int bin_of(double v) const noexcept;
};

FeatureBins build_bins(std::vector<double> values, int max_bins);

struct BinnedData {
    std::vector<std::size_t> features;      // original feature index per column, ascending
    std::vector<FeatureBins> bins;          // per column
    std::vector<std::uint16_t> codes;       // column-major: codes[c * n_rows + r]
    std::size_t n_rows = 0;
};

BinnedData bin_features(const RowMatrix& X, std::span<const std::size_t> rows,
                        std::span<const std::size_t> features, int max_bins);

struct SplitCandidate {
    double gain = 0.0;
    int column = -1;
    int feature = -1;
    int bin = -1;
    double threshold = 0.0;
    double G_left = 0.0, H_left = 0.0, G_right = 0.0, H_right = 0.0;

    bool valid() const noexcept { return feature >= 0; }
};

// `node_rows` index rows of `data`; grad/hess are aligned with those rows.
// Ties go to the lowest feature index, then the lowest bin.
SplitCandidate best_split(const BinnedData& data, std::span<const std::size_t> node_rows,
                          std::span<const double> grad, std::span<const double> hess, const GbtConfig& cfg);

Tree grow_tree(const BinnedData& data, std::span<const double> grad, std::span<const double> hess,
               const GbtConfig& cfg);

double weighted_logistic_loss(std::span<const double> margin, std::span<const int> y, double pos_weight);

GbtModel train_gbt(const GbtConfig& cfg, const RowMatrix& X, std::span<const int> y, const RowMatrix& X_val,
                   std::span<const int> y_val);

std::vector<double> predict_margin(const GbtModel& m, const RowMatrix& X);
std::vector<double> predict_gbt(const GbtModel& m, const RowMatrix& X);

std::string model_to_json(const GbtModel& m);
GbtModel model_from_json(std::string_view text);
std::string training_log_csv(const GbtModel& m);

}  // namespace vibemil::gbt
