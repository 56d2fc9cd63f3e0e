#include "vibemil/mil.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"
#include "vibemil/validation.hpp"

namespace vibemil::mil {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::array<TensorInfo, kTensorCount> build_layout() {
    std::array<TensorInfo, kTensorCount> t{};
    std::size_t offset = 0;
    const auto add = [&](Tensor id, std::string_view name, int rows, int cols, int fan_in) {
        t[static_cast<std::size_t>(id)] = {name, rows, cols, offset, fan_in};
        offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    };
    const int c_in[3] = {kInputDim, kChannels, kChannels};
    const Tensor conv_w[3] = {kConv1W, kConv2W, kConv3W};
    const char* names[3][4] = {{"conv1.weight", "conv1.bias", "gn1.gamma", "gn1.beta"},
                               {"conv2.weight", "conv2.bias", "gn2.gamma", "gn2.beta"},
                               {"conv3.weight", "conv3.bias", "gn3.gamma", "gn3.beta"}};
    for (int b = 0; b < 3; ++b) {
        const auto base = static_cast<Tensor>(conv_w[b]);
        add(base, names[b][0], kChannels, kKernel * c_in[b], kKernel * c_in[b]);
        add(static_cast<Tensor>(base + 1), names[b][1], kChannels, 1, 0);
        add(static_cast<Tensor>(base + 2), names[b][2], kChannels, 1, 0);
        add(static_cast<Tensor>(base + 3), names[b][3], kChannels, 1, 0);
    }
    const char* att_names[kHeads][3] = {{"att0.weight", "att0.bias", "att0.score"},
                                        {"att1.weight", "att1.bias", "att1.score"},
                                        {"att2.weight", "att2.bias", "att2.score"},
                                        {"att3.weight", "att3.bias", "att3.score"}};
    for (int k = 0; k < kHeads; ++k) {
        const auto base = static_cast<Tensor>(kAtt0W + 3 * k);
        add(base, att_names[k][0], kAttentionDim, kChannels, kChannels);
        add(static_cast<Tensor>(base + 1), att_names[k][1], kAttentionDim, 1, 0);
        add(static_cast<Tensor>(base + 2), att_names[k][2], kAttentionDim, 1, kAttentionDim);
    }
    add(kMlp1W, "mlp1.weight", kHidden1, kBagDim, kBagDim);
    add(kMlp1B, "mlp1.bias", kHidden1, 1, 0);
    add(kMlp2W, "mlp2.weight", kHidden2, kHidden1, kHidden1);
    add(kMlp2B, "mlp2.bias", kHidden2, 1, 0);
    add(kMlp3W, "mlp3.weight", 1, kHidden2, kHidden2);
    add(kMlp3B, "mlp3.bias", 1, 1, 0);
    return t;
}

constexpr Tensor conv_weight(int b) { return static_cast<Tensor>(kConv1W + 4 * b); }
constexpr Tensor conv_bias(int b) { return static_cast<Tensor>(kConv1B + 4 * b); }
constexpr Tensor gn_gamma(int b) { return static_cast<Tensor>(kGn1Gamma + 4 * b); }
constexpr Tensor gn_beta(int b) { return static_cast<Tensor>(kGn1Beta + 4 * b); }
constexpr Tensor att_weight(int k) { return static_cast<Tensor>(kAtt0W + 3 * k); }
constexpr Tensor att_bias(int k) { return static_cast<Tensor>(kAtt0B + 3 * k); }
constexpr Tensor att_score(int k) { return static_cast<Tensor>(kAtt0V + 3 * k); }

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Zero-padded kernel-3 column buffer: rows [tap * C, (tap + 1) * C) hold x shifted by tap - 1.
template <typename S>
void im2col(const Mat<S>& x, Mat<S>& col) {
    const Eigen::Index c = x.rows();
    const Eigen::Index n = x.cols();
    col.setZero(kKernel * c, n);
    if (n > 1) {
        col.block(0, 1, c, n - 1) = x.leftCols(n - 1);
        col.block(2 * c, 0, c, n - 1) = x.rightCols(n - 1);
    }
    col.block(c, 0, c, n) = x;
}

template <typename S>
Mat<S> col2im(const Mat<S>& dcol, Eigen::Index c) {
    const Eigen::Index n = dcol.cols();
    Mat<S> dx = dcol.block(c, 0, c, n);
    if (n > 1) {
        dx.leftCols(n - 1) += dcol.block(0, 1, c, n - 1);
        dx.rightCols(n - 1) += dcol.block(2 * c, 0, c, n - 1);
    }
    return dx;
}

template <typename S>
void group_norm_forward(const Mat<S>& z, const Eigen::Map<const Mat<S>>& gamma, const Eigen::Map<const Mat<S>>& beta,
                        S eps, Mat<S>& xhat, Vec<S>& invstd, Mat<S>& y) {
    const Eigen::Index n = z.cols();
    const Eigen::Index per = kChannels / kGroups;
    xhat.resize(kChannels, n);
    invstd.resize(kGroups);
    for (Eigen::Index g = 0; g < kGroups; ++g) {
        const auto block = z.middleRows(g * per, per);
        const S mean = block.mean();
        const S var = (block.array() - mean).square().mean();
        const S inv = S(1) / std::sqrt(var + eps);
        invstd(g) = inv;
        xhat.middleRows(g * per, per) = (block.array() - mean) * inv;
    }
    y = (xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
}

template <typename S>
Mat<S> group_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& invstd,
                           const Eigen::Map<const Mat<S>>& gamma, Eigen::Map<Mat<S>> dgamma,
                           Eigen::Map<Mat<S>> dbeta) {
    const Eigen::Index per = kChannels / kGroups;
    dgamma.col(0) = (dy.array() * xhat.array()).rowwise().sum().matrix();
    dbeta.col(0) = dy.rowwise().sum();
    Mat<S> dxhat = (dy.array().colwise() * gamma.col(0).array()).matrix();
    Mat<S> dz(dy.rows(), dy.cols());
    for (Eigen::Index g = 0; g < kGroups; ++g) {
        const auto dxh = dxhat.middleRows(g * per, per).array();
        const auto xh = xhat.middleRows(g * per, per).array();
        const S mean1 = dxh.mean();
        const S mean2 = (dxh * xh).mean();
        dz.middleRows(g * per, per) = (invstd(g) * (dxh - mean1 - xh * mean2)).matrix();
    }
    return dz;
}

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat<S> m(rows, cols);
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.bernoulli(rate) ? S(0) : keep_scale;
    return m;
}

double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

const std::array<TensorInfo, kTensorCount>& layout() {
    static const auto table = build_layout();
    return table;
}

std::size_t parameter_count() {
    const auto& t = layout();
    return t.back().offset + t.back().size();
}

template <typename S>
Params<S> init_params(std::uint64_t seed) {
    Params<S> p;
    Rng rng(seed);
    for (int t = 0; t < kTensorCount; ++t) {
        const auto& info = layout()[static_cast<std::size_t>(t)];
        auto m = p.tensor(static_cast<Tensor>(t));
        const bool is_gamma = t == kGn1Gamma || t == kGn2Gamma || t == kGn3Gamma;
        if (info.fan_in > 0) {
            const double bound = std::sqrt(6.0 / info.fan_in);
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(rng.uniform(-bound, bound));
        } else {
            m.setConstant(is_gamma ? S(1) : S(0));
        }
    }
    return p;
}

void MilConfig::validate() const {
    for (double r : {dropout_block12, dropout_block3, dropout_mlp})
        if (!(r >= 0.0 && r < 1.0)) fail(ErrorCode::ConfigError, "dropout rates must be in [0, 1)");
    if (!(lr >= 0.0)) fail(ErrorCode::ConfigError, "lr must be non-negative");
    if (epochs < 1 || patience < 1) fail(ErrorCode::ConfigError, "epochs and patience must be positive");
    if (!(grad_clip_norm > 0.0)) fail(ErrorCode::ConfigError, "grad_clip_norm must be positive");
    if (!(pos_weight > 0.0) || !std::isfinite(pos_weight)) fail(ErrorCode::ConfigError, "pos_weight must be positive");
}

template <typename S>
BagOutput<S> forward(const Params<S>& p, const MilConfig& cfg, const BagMatrix<S>& bag, bool train_mode, Rng* rng,
                     ForwardCache<S>* cache) {
    const Eigen::Index n = bag.rows();
    if (n == 0) fail(ErrorCode::EmptyBag, "forward on an empty bag");
    if (bag.cols() != kInputDim) fail(ErrorCode::ArityMismatch, "bag rows must have 56 entries");
    if (train_mode && rng == nullptr) fail(ErrorCode::InvalidSpec, "train mode needs an rng for dropout");

    ForwardCache<S> local;
    ForwardCache<S>& c = cache ? *cache : local;
    c.valid = false;
    c.n = n;

    Mat<S> h = bag.transpose();
    for (int b = 0; b < 3; ++b) {
        auto& blk = c.blocks[static_cast<std::size_t>(b)];
        im2col<S>(h, blk.col);
        Mat<S> z = p.tensor(conv_weight(b)) * blk.col;
        z.colwise() += p.tensor(conv_bias(b)).col(0);
        group_norm_forward<S>(z, p.tensor(gn_gamma(b)), p.tensor(gn_beta(b)), static_cast<S>(cfg.gn_eps), blk.xhat,
                              blk.invstd, blk.y);
        Mat<S> act = blk.y.cwiseMax(S(0));
        if (b == 2) act += h;
        const double rate = b < 2 ? cfg.dropout_block12 : cfg.dropout_block3;
        if (train_mode && rate > 0.0) {
            blk.mask = dropout_mask<S>(act.rows(), act.cols(), rate, *rng);
            act = act.cwiseProduct(blk.mask);
        } else {
            blk.mask.resize(0, 0);
        }
        blk.out = act;
        h = std::move(act);
    }

    const Mat<S>& h3 = c.blocks[2].out;
    BagOutput<S> out;
    out.attention.resize(kHeads, n);
    c.bag.resize(kBagDim);
    for (int k = 0; k < kHeads; ++k) {
        Mat<S> pre = p.tensor(att_weight(k)) * h3;
        pre.colwise() += p.tensor(att_bias(k)).col(0);
        c.act[static_cast<std::size_t>(k)] = pre.array().tanh().matrix();
        Vec<S> s = c.act[static_cast<std::size_t>(k)].transpose() * p.tensor(att_score(k)).col(0);
        const S smax = s.maxCoeff();
        Vec<S> e = (s.array() - smax).exp().matrix();
        Vec<S> a = e / e.sum();
        c.bag.segment(k * kChannels, kChannels) = h3 * a;
        out.attention.row(k) = a.transpose();
        c.attn[static_cast<std::size_t>(k)] = std::move(a);
    }

    c.u1 = p.tensor(kMlp1W) * c.bag + p.tensor(kMlp1B).col(0);
    c.h1 = c.u1.cwiseMax(S(0));
    if (train_mode && cfg.dropout_mlp > 0.0) {
        c.m1 = dropout_mask<S>(kHidden1, 1, cfg.dropout_mlp, *rng).col(0);
        c.h1 = c.h1.cwiseProduct(c.m1);
    } else {
        c.m1.resize(0);
    }
    c.u2 = p.tensor(kMlp2W) * c.h1 + p.tensor(kMlp2B).col(0);
    c.h2 = c.u2.cwiseMax(S(0));
    if (train_mode && cfg.dropout_mlp > 0.0) {
        c.m2 = dropout_mask<S>(kHidden2, 1, cfg.dropout_mlp, *rng).col(0);
        c.h2 = c.h2.cwiseProduct(c.m2);
    } else {
        c.m2.resize(0);
    }
    out.logit = (p.tensor(kMlp3W) * c.h2)(0, 0) + p.tensor(kMlp3B)(0, 0);
    out.bag_repr = c.bag;

    c.params = &p;
    c.generation = p.generation();
    c.valid = true;
    return out;
}

template <typename S>
void backward(const Params<S>& p, const MilConfig& cfg, const ForwardCache<S>& c, S d_logit, Params<S>& grads,
              BagMatrix<S>* d_input) {
    (void)cfg;
    if (!c.valid || c.params != &p || c.generation != p.generation())
        fail(ErrorCode::StaleCache, "forward cache does not match the current parameters");
    const Eigen::Index n = c.n;

    grads.tensor(kMlp3W) = d_logit * c.h2.transpose();
    grads.tensor(kMlp3B)(0, 0) = d_logit;
    Vec<S> dh2 = p.tensor(kMlp3W).transpose() * d_logit;
    Vec<S> du2 = dh2;
    if (c.m2.size()) du2 = du2.cwiseProduct(c.m2);
    du2 = (c.u2.array() > S(0)).select(du2, S(0));
    grads.tensor(kMlp2W) = du2 * c.h1.transpose();
    grads.tensor(kMlp2B).col(0) = du2;
    Vec<S> dh1 = p.tensor(kMlp2W).transpose() * du2;
    Vec<S> du1 = dh1;
    if (c.m1.size()) du1 = du1.cwiseProduct(c.m1);
    du1 = (c.u1.array() > S(0)).select(du1, S(0));
    grads.tensor(kMlp1W) = du1 * c.bag.transpose();
    grads.tensor(kMlp1B).col(0) = du1;
    const Vec<S> dbag = p.tensor(kMlp1W).transpose() * du1;

    const Mat<S>& h3 = c.blocks[2].out;
    Mat<S> dh = Mat<S>::Zero(kChannels, n);
    for (int k = 0; k < kHeads; ++k) {
        const auto& a = c.attn[static_cast<std::size_t>(k)];
        const auto& act = c.act[static_cast<std::size_t>(k)];
        const Vec<S> dbk = dbag.segment(k * kChannels, kChannels);
        dh.noalias() += dbk * a.transpose();
        const Vec<S> da = h3.transpose() * dbk;
        const Vec<S> ds = (a.array() * (da.array() - a.dot(da))).matrix();
        grads.tensor(att_score(k)).col(0) = act * ds;
        const Mat<S> dpre = ((p.tensor(att_score(k)).col(0) * ds.transpose()).array() * (S(1) - act.array().square()))
                                .matrix();
        grads.tensor(att_weight(k)) = dpre * h3.transpose();
        grads.tensor(att_bias(k)).col(0) = dpre.rowwise().sum();
        dh.noalias() += p.tensor(att_weight(k)).transpose() * dpre;
    }

    for (int b = 2; b >= 0; --b) {
        const auto& blk = c.blocks[static_cast<std::size_t>(b)];
        Mat<S> dact = blk.mask.size() ? Mat<S>(dh.cwiseProduct(blk.mask)) : dh;
        Mat<S> dy = (blk.y.array() > S(0)).select(dact, S(0));
        Mat<S> dz = group_norm_backward<S>(dy, blk.xhat, blk.invstd, p.tensor(gn_gamma(b)),
                                           grads.tensor(gn_gamma(b)), grads.tensor(gn_beta(b)));
        grads.tensor(conv_weight(b)).noalias() = dz * blk.col.transpose();
        grads.tensor(conv_bias(b)).col(0) = dz.rowwise().sum();
        const Mat<S> dcol = p.tensor(conv_weight(b)).transpose() * dz;
        const Eigen::Index c_in = blk.col.rows() / kKernel;
        Mat<S> dprev = col2im<S>(dcol, c_in);
        if (b == 2) dprev += dact;  // residual path
        dh = std::move(dprev);
    }
    if (d_input) *d_input = dh.transpose();
}

double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double weighted_bce_logit(double z, int y, double pos_weight) noexcept {
    return y == 1 ? pos_weight * softplus(-z) : softplus(z);
}

double weighted_bce_grad(double z, int y, double pos_weight) noexcept {
    return y == 1 ? pos_weight * (sigmoid(z) - 1.0) : sigmoid(z);
}

GradCheckReport grad_check(const Params<double>& p, const MilConfig& cfg_in, const BagMatrix<double>& bag, int y,
                           double step, std::uint64_t sample_seed) {
    MilConfig cfg = cfg_in;
    cfg.dropout_block12 = cfg.dropout_block3 = cfg.dropout_mlp = 0.0;

    ForwardCache<double> cache;
    const auto out = forward(p, cfg, bag, false, nullptr, &cache);
    Params<double> grads;
    BagMatrix<double> d_input;
    backward(p, cfg, cache, weighted_bce_grad(out.logit, y, cfg.pos_weight), grads, &d_input);

    const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); };

    GradCheckReport report;
    Params<double> probe = p;
    Rng rng(sample_seed);
    for (int t = 0; t < kTensorCount; ++t) {
        const auto& info = layout()[static_cast<std::size_t>(t)];
        std::vector<std::size_t> idx(info.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        idx.resize(std::min<std::size_t>(idx.size(), 10));
        for (std::size_t i : idx) {
            double& v = probe.flat()[info.offset + i];
            const double orig = v;
            v = orig + step;
            const double lp = weighted_bce_logit(forward(probe, cfg, bag, false, nullptr).logit, y, cfg.pos_weight);
            v = orig - step;
            const double lm = weighted_bce_logit(forward(probe, cfg, bag, false, nullptr).logit, y, cfg.pos_weight);
            v = orig;
            const double numeric = (lp - lm) / (2.0 * step);
            const double e = rel(grads.flat()[info.offset + i], numeric);
            ++report.n_checked;
            if (e > report.max_rel_error) {
                report.max_rel_error = e;
                report.worst_tensor = std::string(info.name);
            }
        }
    }
    BagMatrix<double> x = bag;
    const auto n_inputs = static_cast<std::size_t>(x.size());
    for (int s = 0; s < 20; ++s) {
        const auto i = static_cast<Eigen::Index>(rng.below(n_inputs));
        double& v = x.data()[i];
        const double orig = v;
        v = orig + step;
        const double lp = weighted_bce_logit(forward(p, cfg, x, false, nullptr).logit, y, cfg.pos_weight);
        v = orig - step;
        const double lm = weighted_bce_logit(forward(p, cfg, x, false, nullptr).logit, y, cfg.pos_weight);
        v = orig;
        report.input_max_rel_error =
            std::max(report.input_max_rel_error, rel(d_input.data()[i], (lp - lm) / (2.0 * step)));
    }
    return report;
}

BagMatrix<float> to_float_bag(const RowMatrix& rows) { return rows.cast<float>(); }

double predict_bag(const MilModel& m, const BagMatrix<float>& bag) {
    return sigmoid(static_cast<double>(forward(m.params, m.config, bag, false, nullptr).logit));
}

double predict_subject(const MilModel& m, const std::vector<BagMatrix<float>>& day_bags) {
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& b : day_bags) {
        if (b.rows() == 0) continue;
        sum += predict_bag(m, b);
        ++used;
    }
    if (used == 0) fail(ErrorCode::NoUsableDays, "subject has no non-empty day bag");
    return sum / static_cast<double>(used);
}

std::vector<std::vector<double>> attention_weights(const MilModel& m, const BagMatrix<float>& bag) {
    const auto out = forward(m.params, m.config, bag, false, nullptr);
    std::vector<std::vector<double>> w(kHeads);
    for (int k = 0; k < kHeads; ++k)
        for (Eigen::Index i = 0; i < out.attention.cols(); ++i)
            w[static_cast<std::size_t>(k)].push_back(static_cast<double>(out.attention(k, i)));
    return w;
}

namespace {

double validation_auc(const MilModel& m, const std::vector<ValSubject>& val) {
    std::vector<double> scores;
    std::vector<int> y;
    for (const auto& s : val) {
        scores.push_back(predict_subject(m, s.days));
        y.push_back(s.y);
    }
    return validation::roc_auc(scores, y);
}

}  // namespace

MilModel train_mil(const MilConfig& cfg, const std::vector<TrainBag>& bags, const std::vector<ValSubject>& val) {
    cfg.validate();
    if (std::none_of(bags.begin(), bags.end(), [](const TrainBag& b) { return b.y == 1 && b.x.rows() > 0; }))
        fail(ErrorCode::NoPositiveBags, "training set has no positive bag");
    if (val.empty()) fail(ErrorCode::DegenerateData, "empty validation set");

    MilModel model;
    model.config = cfg;
    model.params = init_params<float>(derive_seed(cfg.seed, 1));

    const std::size_t np = parameter_count();
    std::vector<float> adam_m(np, 0.0f), adam_v(np, 0.0f);
    Params<float> grads;
    ForwardCache<float> cache;
    Params<float> best = model.params;
    double best_auc = -std::numeric_limits<double>::infinity();
    std::uint64_t step = 0;

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < bags.size(); ++i)
        if (bags[i].x.rows() > 0) order.push_back(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t idx : order) {
            const auto& bag = bags[idx];
            const auto out = forward(model.params, cfg, bag.x, true, &rng, &cache);
            const double z = static_cast<double>(out.logit);
            loss_sum += weighted_bce_logit(z, bag.y, cfg.pos_weight);
            backward(model.params, cfg, cache, static_cast<float>(weighted_bce_grad(z, bag.y, cfg.pos_weight)), grads);

            auto g = grads.flat();
            double norm2 = 0.0;
            for (float v : g) norm2 += static_cast<double>(v) * static_cast<double>(v);
            const double norm = std::sqrt(norm2);
            const float clip = norm > cfg.grad_clip_norm ? static_cast<float>(cfg.grad_clip_norm / norm) : 1.0f;

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
            const auto b1 = static_cast<float>(cfg.adam_beta1);
            const auto b2 = static_cast<float>(cfg.adam_beta2);
            const auto lr_t = static_cast<float>(cfg.lr / bc1);
            const auto inv_bc2 = static_cast<float>(1.0 / bc2);
            const auto eps = static_cast<float>(cfg.adam_eps);
            auto w = model.params.flat();
            for (std::size_t i = 0; i < np; ++i) {
                const float gi = g[i] * clip;
                adam_m[i] = b1 * adam_m[i] + (1.0f - b1) * gi;
                adam_v[i] = b2 * adam_v[i] + (1.0f - b2) * gi * gi;
                w[i] -= lr_t * adam_m[i] / (std::sqrt(adam_v[i] * inv_bc2) + eps);
            }
            model.params.touch();
        }

        const double val_auc = validation_auc(model, val);
        model.log.push_back({epoch, order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size()), val_auc});
        if (val_auc > best_auc) {
            best_auc = val_auc;
            best = model.params;
            model.best_epoch = epoch;
        } else if (epoch - model.best_epoch >= cfg.patience) {
            break;
        }
    }
    model.params = std::move(best);
    model.params.touch();
    model.best_val_auc = best_auc;
    return model;
}

namespace {

json mil_config_json(const MilConfig& c) {
    return json{{"dropout_block12", c.dropout_block12}, {"dropout_block3", c.dropout_block3},
                {"dropout_mlp", c.dropout_mlp},         {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},           {"adam_eps", c.adam_eps},
                {"lr", c.lr},                           {"epochs", c.epochs},
                {"patience", c.patience},               {"grad_clip_norm", c.grad_clip_norm},
                {"gn_eps", c.gn_eps},                   {"pos_weight", c.pos_weight},
                {"seed", c.seed}};
}

MilConfig mil_config_from_json(const json& j) {
    MilConfig c;
    c.dropout_block12 = j.at("dropout_block12").get<double>();
    c.dropout_block3 = j.at("dropout_block3").get<double>();
    c.dropout_mlp = j.at("dropout_mlp").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    c.gn_eps = j.at("gn_eps").get<double>();
    c.pos_weight = j.at("pos_weight").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

std::string checkpoint_bytes(const MilModel& m, std::string_view extra_header_json) {
    json header;
    header["format"] = "vibemil-mil-v1";
    header["dtype"] = "float32";
    header["config"] = mil_config_json(m.config);
    header["seed"] = m.config.seed;
    header["best_epoch"] = m.best_epoch;
    header["best_val_auc"] = m.best_val_auc;
    header["tensors"] = json::array();
    for (const auto& t : layout())
        header["tensors"].push_back({{"name", std::string(t.name)}, {"shape", {t.rows, t.cols}}, {"offset", t.offset}});
    const json extra = json::parse(extra_header_json);
    for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
    const std::string h = header.dump();

    std::string out = "VMIL";
    const std::uint64_t len = h.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out += h;
    const auto w = m.params.flat();
    out.append(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(float));
    return out;
}

MilModel parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 12 || bytes.substr(0, 4) != "VMIL") fail(ErrorCode::SchemaError, "not a vibemil checkpoint");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 4, sizeof(len));
    if (bytes.size() < 12 + len) fail(ErrorCode::ParseError, "truncated checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(12, len));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
    }
    const auto& tensors = header.at("tensors");
    if (tensors.size() != static_cast<std::size_t>(kTensorCount))
        fail(ErrorCode::SchemaError, "checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = layout()[i];
        if (tensors[i].at("shape")[0].get<int>() != t.rows || tensors[i].at("shape")[1].get<int>() != t.cols)
            fail(ErrorCode::SchemaError, "checkpoint shape mismatch for " + std::string(t.name));
    }
    const std::size_t payload = parameter_count() * sizeof(float);
    if (bytes.size() != 12 + len + payload) fail(ErrorCode::ParseError, "checkpoint payload size mismatch");

    MilModel m;
    m.config = mil_config_from_json(header.at("config"));
    m.best_epoch = header.at("best_epoch").get<int>();
    m.best_val_auc = header.at("best_val_auc").get<double>();
    std::memcpy(m.params.flat().data(), bytes.data() + 12 + len, payload);
    m.params.touch();
    return m;
}

std::string training_log_csv(const MilModel& m) {
    std::string out = "epoch,train_loss,val_auc\n";
    for (const auto& r : m.log) {
        out += std::to_string(r.epoch) + ',';
        append_double(out, r.train_loss);
        out += ',';
        append_double(out, r.val_auc);
        out += '\n';
    }
    return out;
}

template Params<float> init_params<float>(std::uint64_t);
template Params<double> init_params<double>(std::uint64_t);
template BagOutput<float> forward<float>(const Params<float>&, const MilConfig&, const BagMatrix<float>&, bool, Rng*,
                                         ForwardCache<float>*);
template BagOutput<double> forward<double>(const Params<double>&, const MilConfig&, const BagMatrix<double>&, bool,
                                           Rng*, ForwardCache<double>*);
template void backward<float>(const Params<float>&, const MilConfig&, const ForwardCache<float>&, float,
                              Params<float>&, BagMatrix<float>*);
template void backward<double>(const Params<double>&, const MilConfig&, const ForwardCache<double>&, double,
                               Params<double>&, BagMatrix<double>*);

}  // namespace vibemil::mil
