#include "vibemil/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"
#include "vibemil/random.hpp"
#include "vibemil/validation.hpp"

namespace vibemil::gbt {

using nlohmann::json;

namespace {

constexpr double kMinGain = 1e-12;

double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::span<const double> row_of(const RowMatrix& X, Eigen::Index r) {
    return {X.data() + r * X.cols(), static_cast<std::size_t>(X.cols())};
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, double fraction) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (fraction >= 1.0) return idx;
    const auto m = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct NodeWork {
    std::vector<std::size_t> rows;  // positions into BinnedData rows
    SplitCandidate split;
    double G = 0.0;
    double H = 0.0;
};

json config_to_json(const GbtConfig& c) {
    return json{{"n_estimators", c.n_estimators},
                {"max_depth", c.max_depth},
                {"learning_rate", c.learning_rate},
                {"row_subsample", c.row_subsample},
                {"col_subsample", c.col_subsample},
                {"l1_alpha", c.l1_alpha},
                {"l2_lambda", c.l2_lambda},
                {"early_stop_patience", c.early_stop_patience},
                {"growth", std::string(to_string(c.growth))},
                {"max_leaves", c.max_leaves},
                {"n_bins", c.n_bins},
                {"min_child_weight", c.min_child_weight},
                {"pos_weight", c.pos_weight},
                {"seed", c.seed}};
}

GbtConfig config_from_json(const json& j) {
    GbtConfig c;
    c.n_estimators = j.at("n_estimators").get<int>();
    c.max_depth = j.at("max_depth").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.row_subsample = j.at("row_subsample").get<double>();
    c.col_subsample = j.at("col_subsample").get<double>();
    c.l1_alpha = j.at("l1_alpha").get<double>();
    c.l2_lambda = j.at("l2_lambda").get<double>();
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
    c.growth = parse_growth(j.at("growth").get<std::string>());
    c.max_leaves = j.at("max_leaves").get<int>();
    c.n_bins = j.at("n_bins").get<int>();
    c.min_child_weight = j.at("min_child_weight").get<double>();
    c.pos_weight = j.at("pos_weight").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

std::string_view to_string(Growth g) noexcept { return g == Growth::LevelWise ? "level_wise" : "leaf_wise"; }

Growth parse_growth(std::string_view text) {
    if (text == "level_wise") return Growth::LevelWise;
    if (text == "leaf_wise") return Growth::LeafWise;
    fail(ErrorCode::ConfigError, "unknown growth '" + std::string(text) + "'");
}

void GbtConfig::validate() const {
    if (n_estimators < 0) fail(ErrorCode::ConfigError, "n_estimators must be non-negative");
    if (max_depth < 1) fail(ErrorCode::ConfigError, "max_depth must be at least 1");
    if (!(learning_rate >= 0.0)) fail(ErrorCode::ConfigError, "learning_rate must be non-negative");
    if (!(row_subsample > 0.0 && row_subsample <= 1.0) || !(col_subsample > 0.0 && col_subsample <= 1.0))
        fail(ErrorCode::ConfigError, "subsample fractions must be in (0, 1]");
    if (l1_alpha < 0.0 || l2_lambda < 0.0) fail(ErrorCode::ConfigError, "regularization must be non-negative");
    if (early_stop_patience < 1) fail(ErrorCode::ConfigError, "early_stop_patience must be at least 1");
    if (max_leaves < 2) fail(ErrorCode::ConfigError, "max_leaves must be at least 2");
    if (n_bins < 2 || n_bins > 65535) fail(ErrorCode::ConfigError, "n_bins must be in [2, 65535]");
    if (!(pos_weight > 0.0) || !std::isfinite(pos_weight)) fail(ErrorCode::ConfigError, "pos_weight must be positive");
}

GradHess logistic_grad_hess(double p, int y, double pos_weight) noexcept {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    const double w = y == 1 ? pos_weight : 1.0;
    return {w * (p - static_cast<double>(y)), w * p * (1.0 - p)};
}

double soft_threshold(double g, double alpha) noexcept {
    const double mag = std::abs(g) - alpha;
    if (mag <= 0.0) return 0.0;
    return g > 0 ? mag : -mag;
}

double leaf_weight(double G, double H, double lambda, double alpha) noexcept {
    const double denom = H + lambda;
    if (denom <= 0.0) return 0.0;
    return -soft_threshold(G, alpha) / denom;
}

double split_gain(double G_L, double H_L, double G_R, double H_R, double lambda, double alpha) noexcept {
    const auto score = [&](double G, double H) {
        const double s = soft_threshold(G, alpha);
        const double denom = H + lambda;
        return denom > 0.0 ? s * s / denom : 0.0;
    };
    return 0.5 * (score(G_L, H_L) + score(G_R, H_R) - score(G_L + G_R, H_L + H_R));
}

double Tree::predict(std::span<const double> row) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const auto& n = nodes[static_cast<std::size_t>(i)];
        i = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].weight;
}

int Tree::depth() const {
    int d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
}

int Tree::n_leaves() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

bool same_structure(const Tree& a, const Tree& b, double weight_tol) {
    std::function<bool(int, int)> eq = [&](int i, int j) {
        const auto& x = a.nodes[static_cast<std::size_t>(i)];
        const auto& y = b.nodes[static_cast<std::size_t>(j)];
        if (x.is_leaf() != y.is_leaf()) return false;
        if (x.is_leaf()) return std::abs(x.weight - y.weight) <= weight_tol;
        return x.feature == y.feature && x.threshold == y.threshold && eq(x.left, y.left) && eq(x.right, y.right);
    };
    if (a.nodes.empty() || b.nodes.empty()) return a.nodes.empty() && b.nodes.empty();
    return eq(0, 0);
}

int FeatureBins::bin_of(double v) const noexcept {
    return static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
}

FeatureBins build_bins(std::vector<double> values, int max_bins) {
    FeatureBins fb;
    std::sort(values.begin(), values.end());
    std::vector<double> distinct = values;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= 1) return fb;

    if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        fb.cuts.reserve(distinct.size() - 1);
        for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
            fb.cuts.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) * 0.5);
        return fb;
    }
    // Quantile boundaries over the sorted sample; dedupe collapses heavy ties.
    const std::size_t n = values.size();
    for (int b = 1; b < max_bins; ++b) {
        const std::size_t pos = static_cast<std::size_t>(b) * n / static_cast<std::size_t>(max_bins);
        if (pos == 0 || pos >= n) continue;
        const double lo = values[pos - 1];
        const double hi = values[pos];
        if (lo == hi) continue;
        const double cut = lo + (hi - lo) * 0.5;
        if (fb.cuts.empty() || cut > fb.cuts.back()) fb.cuts.push_back(cut);
    }
    return fb;
}

BinnedData bin_features(const RowMatrix& X, std::span<const std::size_t> rows,
                        std::span<const std::size_t> features, int max_bins) {
    BinnedData d;
    d.features.assign(features.begin(), features.end());
    d.n_rows = rows.size();
    d.bins.resize(features.size());
    d.codes.resize(features.size() * rows.size());
    std::vector<double> values(rows.size());
    for (std::size_t c = 0; c < features.size(); ++c) {
        const auto f = static_cast<Eigen::Index>(features[c]);
        for (std::size_t r = 0; r < rows.size(); ++r) values[r] = X(static_cast<Eigen::Index>(rows[r]), f);
        d.bins[c] = build_bins(values, max_bins);
        for (std::size_t r = 0; r < rows.size(); ++r)
            d.codes[c * rows.size() + r] = static_cast<std::uint16_t>(d.bins[c].bin_of(values[r]));
    }
    return d;
}

SplitCandidate best_split(const BinnedData& data, std::span<const std::size_t> node_rows,
                          std::span<const double> grad, std::span<const double> hess, const GbtConfig& cfg) {
    SplitCandidate best;
    double G = 0.0, H = 0.0;
    for (std::size_t r : node_rows) {
        G += grad[r];
        H += hess[r];
    }
    std::vector<double> hist_g, hist_h;
    for (std::size_t c = 0; c < data.features.size(); ++c) {
        const int nb = data.bins[c].n_bins();
        if (nb < 2) continue;
        hist_g.assign(static_cast<std::size_t>(nb), 0.0);
        hist_h.assign(static_cast<std::size_t>(nb), 0.0);
        const std::uint16_t* codes = data.codes.data() + c * data.n_rows;
        for (std::size_t r : node_rows) {
            hist_g[codes[r]] += grad[r];
            hist_h[codes[r]] += hess[r];
        }
        double GL = 0.0, HL = 0.0;
        for (int b = 0; b + 1 < nb; ++b) {
            GL += hist_g[static_cast<std::size_t>(b)];
            HL += hist_h[static_cast<std::size_t>(b)];
            const double GR = G - GL;
            const double HR = H - HL;
            if (HL < cfg.min_child_weight || HR < cfg.min_child_weight) continue;
            if (hist_h[static_cast<std::size_t>(b)] == 0.0 && b > 0) continue;  // empty bin: same partition as b-1
            const double gain = split_gain(GL, HL, GR, HR, cfg.l2_lambda, cfg.l1_alpha);
            if (gain > kMinGain && gain > best.gain) {
                best.gain = gain;
                best.column = static_cast<int>(c);
                best.feature = static_cast<int>(data.features[c]);
                best.bin = b;
                best.threshold = data.bins[c].cuts[static_cast<std::size_t>(b)];
                best.G_left = GL;
                best.H_left = HL;
                best.G_right = GR;
                best.H_right = HR;
            }
        }
    }
    return best;
}

Tree grow_tree(const BinnedData& data, std::span<const double> grad, std::span<const double> hess,
               const GbtConfig& cfg) {
    Tree tree;
    std::vector<NodeWork> work;

    const auto make_node = [&](std::vector<std::size_t> rows, int depth) {
        NodeWork w;
        w.rows = std::move(rows);
        for (std::size_t r : w.rows) {
            w.G += grad[r];
            w.H += hess[r];
        }
        if (depth < cfg.max_depth) w.split = best_split(data, w.rows, grad, hess, cfg);
        TreeNode n;
        n.depth = depth;
        n.sum_grad = w.G;
        n.sum_hess = w.H;
        n.weight = leaf_weight(w.G, w.H, cfg.l2_lambda, cfg.l1_alpha);
        tree.nodes.push_back(n);
        work.push_back(std::move(w));
        return static_cast<int>(tree.nodes.size()) - 1;
    };

    const auto split_node = [&](int id) {
        auto& w = work[static_cast<std::size_t>(id)];
        const auto& s = w.split;
        const std::uint16_t* codes = data.codes.data() + static_cast<std::size_t>(s.column) * data.n_rows;
        std::vector<std::size_t> left, right;
        for (std::size_t r : w.rows) (codes[r] <= s.bin ? left : right).push_back(r);
        const int depth = tree.nodes[static_cast<std::size_t>(id)].depth + 1;
        const SplitCandidate chosen = s;
        const int l = make_node(std::move(left), depth);
        const int r = make_node(std::move(right), depth);
        auto& n = tree.nodes[static_cast<std::size_t>(id)];
        n.feature = chosen.feature;
        n.bin = chosen.bin;
        n.threshold = chosen.threshold;
        n.left = l;
        n.right = r;
        n.weight = 0.0;
        work[static_cast<std::size_t>(id)].rows.clear();
        work[static_cast<std::size_t>(id)].rows.shrink_to_fit();
    };

    std::vector<std::size_t> all(data.n_rows);
    std::iota(all.begin(), all.end(), 0);
    make_node(std::move(all), 0);

    if (cfg.growth == Growth::LevelWise) {
        std::vector<int> frontier{0};
        while (!frontier.empty()) {
            std::vector<int> next;
            for (int id : frontier) {
                if (!work[static_cast<std::size_t>(id)].split.valid()) continue;
                split_node(id);
                next.push_back(tree.nodes[static_cast<std::size_t>(id)].left);
                next.push_back(tree.nodes[static_cast<std::size_t>(id)].right);
            }
            frontier = std::move(next);
        }
    } else {
        int leaves = 1;
        while (leaves < cfg.max_leaves) {
            int pick = -1;
            for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
                if (!tree.nodes[i].is_leaf() || !work[i].split.valid()) continue;
                if (pick < 0 || work[i].split.gain > work[static_cast<std::size_t>(pick)].split.gain)
                    pick = static_cast<int>(i);
            }
            if (pick < 0) break;
            split_node(pick);
            ++leaves;
        }
    }
    return tree;
}

double weighted_logistic_loss(std::span<const double> margin, std::span<const int> y, double pos_weight) {
    double total = 0.0;
    for (std::size_t i = 0; i < margin.size(); ++i) {
        const double z = margin[i];
        // softplus(-z) for positives, softplus(z) for negatives
        const double sp_neg = std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
        const double sp_pos = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
        total += y[i] == 1 ? pos_weight * sp_neg : sp_pos;
    }
    return margin.empty() ? 0.0 : total / static_cast<double>(margin.size());
}

GbtModel train_gbt(const GbtConfig& cfg, const RowMatrix& X, std::span<const int> y, const RowMatrix& X_val,
                   std::span<const int> y_val) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(X.rows());
    const auto n_val = static_cast<std::size_t>(X_val.rows());
    if (y.size() != n || y_val.size() != n_val) fail(ErrorCode::ArityMismatch, "labels and rows differ in length");
    if (X_val.cols() != X.cols()) fail(ErrorCode::ArityMismatch, "train and validation feature counts differ");
    if (n_val == 0) fail(ErrorCode::DegenerateData, "empty validation set");
    const auto n_pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (n_pos == 0 || n_pos == n) fail(ErrorCode::DegenerateData, "training labels contain a single class");

    GbtModel model;
    model.config = cfg;
    model.n_features = static_cast<std::size_t>(X.cols());
    model.base_score = 0.0;

    std::vector<double> margin(n, model.base_score), margin_val(n_val, model.base_score);
    std::vector<double> grad(n), hess(n), val_prob(n_val);
    double best_auc = -std::numeric_limits<double>::infinity();

    for (int round = 0; round < cfg.n_estimators; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto gh = logistic_grad_hess(sigmoid(margin[i]), y[i], cfg.pos_weight);
            grad[i] = gh.g;
            hess[i] = gh.h;
        }
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(round)));
        const auto rows = sample_indices(rng, n, cfg.row_subsample);
        const auto cols = sample_indices(rng, model.n_features, cfg.col_subsample);
        const BinnedData data = bin_features(X, rows, cols, cfg.n_bins);
        std::vector<double> g_sub(rows.size()), h_sub(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            g_sub[i] = grad[rows[i]];
            h_sub[i] = hess[rows[i]];
        }
        Tree tree = grow_tree(data, g_sub, h_sub, cfg);

        for (std::size_t i = 0; i < n; ++i)
            margin[i] += cfg.learning_rate * tree.predict(row_of(X, static_cast<Eigen::Index>(i)));
        for (std::size_t i = 0; i < n_val; ++i) {
            margin_val[i] += cfg.learning_rate * tree.predict(row_of(X_val, static_cast<Eigen::Index>(i)));
            val_prob[i] = sigmoid(margin_val[i]);
        }
        model.trees.push_back(std::move(tree));

        const double val_auc = validation::roc_auc(val_prob, y_val);
        model.log.push_back({round, weighted_logistic_loss(margin, y, cfg.pos_weight), val_auc});
        if (val_auc > best_auc) {
            best_auc = val_auc;
            model.best_iteration = round + 1;
        } else if (round + 1 - model.best_iteration >= cfg.early_stop_patience) {
            break;
        }
    }
    return model;
}

std::vector<double> predict_margin(const GbtModel& m, const RowMatrix& X) {
    if (static_cast<std::size_t>(X.cols()) != m.n_features)
        fail(ErrorCode::ArityMismatch, "model expects " + std::to_string(m.n_features) + " features, got " +
                                           std::to_string(X.cols()));
    const auto used = std::min<std::size_t>(static_cast<std::size_t>(m.best_iteration), m.trees.size());
    std::vector<double> out(static_cast<std::size_t>(X.rows()), m.base_score);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t t = 0; t < used; ++t) sum += m.trees[t].predict(row_of(X, i));
        out[static_cast<std::size_t>(i)] += m.config.learning_rate * sum;
    }
    return out;
}

std::vector<double> predict_gbt(const GbtModel& m, const RowMatrix& X) {
    auto out = predict_margin(m, X);
    for (auto& v : out) v = sigmoid(v);
    return out;
}

std::string model_to_json(const GbtModel& m) {
    json trees = json::array();
    for (const auto& t : m.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf())
                nodes.push_back({{"depth", n.depth}, {"leaf", n.weight}});
            else
                nodes.push_back({{"depth", n.depth},
                                 {"feature", n.feature},
                                 {"bin", n.bin},
                                 {"threshold", n.threshold},
                                 {"left", n.left},
                                 {"right", n.right}});
        }
        trees.push_back({{"nodes", std::move(nodes)}});
    }
    json j{{"format", "vibemil-gbt-v1"},
           {"config", config_to_json(m.config)},
           {"n_features", m.n_features},
           {"base_score", m.base_score},
           {"best_iteration", m.best_iteration},
           {"trees", std::move(trees)}};
    return j.dump();
}

GbtModel model_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, std::string("gbt model: ") + e.what());
    }
    if (j.value("format", "") != "vibemil-gbt-v1") fail(ErrorCode::SchemaError, "not a vibemil gbt model");
    GbtModel m;
    m.config = config_from_json(j.at("config"));
    m.n_features = j.at("n_features").get<std::size_t>();
    m.base_score = j.at("base_score").get<double>();
    m.best_iteration = j.at("best_iteration").get<int>();
    for (const auto& t : j.at("trees")) {
        Tree tree;
        for (const auto& nj : t.at("nodes")) {
            TreeNode n;
            n.depth = nj.at("depth").get<int>();
            if (nj.contains("leaf")) {
                n.weight = nj.at("leaf").get<double>();
            } else {
                n.feature = nj.at("feature").get<int>();
                n.bin = nj.at("bin").get<int>();
                n.threshold = nj.at("threshold").get<double>();
                n.left = nj.at("left").get<int>();
                n.right = nj.at("right").get<int>();
            }
            tree.nodes.push_back(n);
        }
        m.trees.push_back(std::move(tree));
    }
    return m;
}

std::string training_log_csv(const GbtModel& m) {
    std::string out = "round,train_loss,val_auc\n";
    for (const auto& r : m.log) {
        out += std::to_string(r.round) + ',';
        append_double(out, r.train_loss);
        out += ',';
        append_double(out, r.val_auc);
        out += '\n';
    }
    return out;
}

}  // namespace vibemil::gbt
