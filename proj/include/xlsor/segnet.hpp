#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xlsor/cca.hpp"
#include "xlsor/mask.hpp"
#include "xlsor/tensor.hpp"

namespace xlsor {

// Architecture knobs. The encoder stacks log2(encoder_stride) stride-2
// 3x3 conv+ReLU layers whose channel count doubles per layer starting at
// base_channels; the decoder is a 1x1 conv head, nearest upsampling back to
// input resolution and a sigmoid.
struct SegmentorConfig {
    int input_h = 64;
    int input_w = 64;
    int base_channels = 16;
    int encoder_stride = 4;
    int cca_passes = 2;
    std::uint64_t seed = 0;

    int encoder_layers() const;
    int feature_channels() const; // channels entering the attention stage
    void validate() const;        // throws ConfigError
};

// Ordered named parameter set; order is the checkpoint serialization order.
struct SegmentorParams {
    SegmentorConfig cfg;
    std::vector<std::pair<std::string, NodePtr>> named;

    bool empty() const { return named.empty(); }
    std::vector<NodePtr> nodes() const;
    const NodePtr& at(std::string_view name) const;
    CCAWeights cca_weights() const;
    SegmentorParams clone() const; // deep copy of values, fresh leaves
};

// Fan-in-scaled normal weights, zero biases, all drawn from cfg.seed.
SegmentorParams build_segmentor(const SegmentorConfig& cfg);

// Full forward pass: N x 1 x H x W image batch -> N x 1 x H x W probabilities.
NodePtr segmentor_forward(const SegmentorParams& params, const NodePtr& input);

// initial_lr * (1 - iter/max_iter)^power.
double poly_lr(double initial_lr, int iter, int max_iter, double power = 0.9);

// Momentum buffers, one per parameter, zero at construction.
struct SgdState {
    std::vector<Tensor> velocity;
    explicit SgdState(const std::vector<NodePtr>& params);
};

// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
void sgd_step(const std::vector<NodePtr>& params, SgdState& state, double lr,
              double momentum = 0.9, double weight_decay = 0.0005);

struct TrainConfig {
    double initial_lr = 0.02;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double power = 0.9;
    int batch_size = 4;
    int max_iter = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

// The unit of training/evaluation data.
struct MaskPair {
    std::string id;
    Tensor image; // 1 x H x W, values in [0, 1]
    BinaryMask mask;
};

struct TrainLogEntry {
    int iter;
    double lr;
    double loss;
};

struct TrainResult {
    SegmentorParams params; // best-validation checkpoint (final when no val set)
    std::vector<TrainLogEntry> log;
    int best_iter = -1;
    double best_val_dice = -1.0;
};

// MSE training with poly-scheduled momentum SGD over seeded shuffled
// batches; the checkpoint with the best validation DICE is returned.
TrainResult train(const std::vector<MaskPair>& train_set, const std::vector<MaskPair>& val_set,
                  const SegmentorConfig& seg_cfg, const TrainConfig& train_cfg);

// Grad-free forward returning probability values for an N x 1 x H x W batch.
Tensor predict(const SegmentorParams& params, const Tensor& images);

// Mask = 1 where p >= threshold. Threshold must lie in (0, 1).
BinaryMask binarize(const Tensor& prob, double threshold = 0.5);
std::vector<BinaryMask> binarize_batch(const Tensor& probs, double threshold = 0.5);

// Mean validation DICE at threshold 0.5, the checkpoint-selection score.
double mean_dice(const SegmentorParams& params, const std::vector<MaskPair>& pairs);

void save_segmentor(const std::filesystem::path& path, const SegmentorParams& params);
SegmentorParams load_segmentor(const std::filesystem::path& path);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

} // namespace xlsor
