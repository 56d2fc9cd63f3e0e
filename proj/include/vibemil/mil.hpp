#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vibemil/matrix.hpp"
#include "vibemil/random.hpp"

namespace vibemil::mil {

inline constexpr int kInputDim = 56;
inline constexpr int kChannels = 128;
inline constexpr int kKernel = 3;
inline constexpr int kGroups = 8;
inline constexpr int kHeads = 4;
inline constexpr int kAttentionDim = 64;
inline constexpr int kBagDim = kHeads * kChannels;  // 512
inline constexpr int kHidden1 = 64;
inline constexpr int kHidden2 = 32;

// Fixed parameter layout; a flat buffer holds all tensors in this order.
enum Tensor : int {
    kConv1W, kConv1B, kGn1Gamma, kGn1Beta,
    kConv2W, kConv2B, kGn2Gamma, kGn2Beta,
    kConv3W, kConv3B, kGn3Gamma, kGn3Beta,
    kAtt0W, kAtt0B, kAtt0V,
    kAtt1W, kAtt1B, kAtt1V,
    kAtt2W, kAtt2B, kAtt2V,
    kAtt3W, kAtt3B, kAtt3V,
    kMlp1W, kMlp1B, kMlp2W, kMlp2B, kMlp3W, kMlp3B,
    kTensorCount
};

struct TensorInfo {
    std::string_view name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
    int fan_in = 0;  // 0 for biases and normalization parameters

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

const std::array<TensorInfo, kTensorCount>& layout();
std::size_t parameter_count();

// Conv weights are kChannels x (kKernel * C_in); column tap * C_in + c multiplies
// input channel c at offset tap - 1.
template <typename S>
class Params {
public:
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Map = Eigen::Map<Mat>;
    using ConstMap = Eigen::Map<const Mat>;

    Params() : data_(parameter_count(), S(0)) {}

    Map tensor(Tensor t) {
        const auto& info = layout()[static_cast<std::size_t>(t)];
        return Map(data_.data() + info.offset, info.rows, info.cols);
    }
    ConstMap tensor(Tensor t) const {
        const auto& info = layout()[static_cast<std::size_t>(t)];
        return ConstMap(data_.data() + info.offset, info.rows, info.cols);
    }

    std::span<S> flat() noexcept { return data_; }
    std::span<const S> flat() const noexcept { return data_; }

    // Bumped on every mutation that should invalidate forward caches.
    std::uint64_t generation() const noexcept { return generation_; }
    void touch() noexcept { ++generation_; }

    void set_zero() {
        std::fill(data_.begin(), data_.end(), S(0));
        touch();
    }

    template <typename T>
    Params<T> cast() const {
        Params<T> out;
        auto dst = out.flat();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<T>(data_[i]);
        return out;
    }

private:
    std::vector<S> data_;
    std::uint64_t generation_ = 0;
};

// Uniform(+-sqrt(6 / fan_in)) weights, zero biases, unit gamma, zero beta.
template <typename S>
Params<S> init_params(std::uint64_t seed);

struct MilConfig {
    double dropout_block12 = 0.4;
    double dropout_block3 = 0.2;
    double dropout_mlp = 0.2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr = 1e-3;
    int epochs = 100;
    int patience = 10;
    double grad_clip_norm = 5.0;
    double gn_eps = 1e-5;
    double pos_weight = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

template <typename S>
struct BagOutput {
    S logit = S(0);
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> attention;  // kHeads x N, rows sum to 1
    Eigen::Matrix<S, Eigen::Dynamic, 1> bag_repr;                // 512
};

template <typename S>
struct ForwardCache {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

    struct Block {
        Mat col;     // im2col of the block input, (3 C_in) x N
        Mat xhat;    // normalized pre-activation, 128 x N
        Vec invstd;  // per group
        Mat y;       // group-norm output, pre-ReLU
        Mat mask;    // dropout mask (scaled); empty in eval mode
        Mat out;
    };

    const void* params = nullptr;
    std::uint64_t generation = 0;
    bool valid = false;
    Eigen::Index n = 0;
    std::array<Block, 3> blocks;
    std::array<Mat, kHeads> act;      // tanh(W h + b), 64 x N
    std::array<Vec, kHeads> attn;     // softmax weights, N
    Vec bag;                          // 512
    Vec u1, h1, m1, u2, h2, m2;       // MLP pre-activations, activations, masks
};

template <typename S>
using BagMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;  // N x 56

// Dropout masks are drawn from `rng` only when train_mode is true.
template <typename S>
BagOutput<S> forward(const Params<S>& p, const MilConfig& cfg, const BagMatrix<S>& bag, bool train_mode, Rng* rng,
                     ForwardCache<S>* cache = nullptr);

// Overwrites `grads`; optionally returns d loss / d input (N x 56).
template <typename S>
void backward(const Params<S>& p, const MilConfig& cfg, const ForwardCache<S>& cache, S d_logit, Params<S>& grads,
              BagMatrix<S>* d_input = nullptr);

double softplus(double z) noexcept;
double weighted_bce_logit(double z, int y, double pos_weight) noexcept;
double weighted_bce_grad(double z, int y, double pos_weight) noexcept;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t n_checked = 0;
    std::string worst_tensor;
    double input_max_rel_error = 0.0;
};

// Central differences on a per-tensor random sample (<= 10 entries each) plus input entries; dropout off.
GradCheckReport grad_check(const Params<double>& p, const MilConfig& cfg, const BagMatrix<double>& bag, int y,
                           double step = 1e-5, std::uint64_t sample_seed = 7);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
};

struct MilModel {
    Params<float> params;
    MilConfig config;
    int best_epoch = -1;
    double best_val_auc = 0.0;
    std::vector<EpochLog> log;
};

struct TrainBag {
    BagMatrix<float> x;
    int y = 0;
};

struct ValSubject {
    std::vector<BagMatrix<float>> days;
    int y = 0;
};

BagMatrix<float> to_float_bag(const RowMatrix& rows);

MilModel train_mil(const MilConfig& cfg, const std::vector<TrainBag>& bags, const std::vector<ValSubject>& val);

double predict_bag(const MilModel& m, const BagMatrix<float>& bag);
// Mean of per-day probabilities in eval mode; empty bags are skipped.
double predict_subject(const MilModel& m, const std::vector<BagMatrix<float>>& day_bags);
std::vector<std::vector<double>> attention_weights(const MilModel& m, const BagMatrix<float>& bag);

// Binary checkpoint: "VMIL" magic, u64 LE header length, JSON header, float32 LE tensors.
std::string checkpoint_bytes(const MilModel& m, std::string_view extra_header_json = "{}");
MilModel parse_checkpoint(std::string_view bytes);
std::string training_log_csv(const MilModel& m);

}  // namespace vibemil::mil
