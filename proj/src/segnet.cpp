#include "xlsor/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "xlsor/checkpoint.hpp"
#include "xlsor/metrics.hpp"
#include "xlsor/rng.hpp"

namespace xlsor {

namespace {

constexpr const char* kMetaEntry = "meta/config";

bool power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

NodePtr init_conv_weight(int out_c, int in_c, int k, Rng& rng) {
    Tensor t({out_c, in_c, k, k});
    const double std_dev = std::sqrt(2.0 / (in_c * k * k));
    for (double& v : t.data) v = std_dev * rng.normal();
    return make_node(std::move(t));
}

} // namespace

int SegmentorConfig::encoder_layers() const {
    int layers = 0;
    for (int s = encoder_stride; s > 1; s /= 2) ++layers;
    return layers < 2 ? 2 : layers; // trailing layers run at stride 1
}

int SegmentorConfig::feature_channels() const {
    return base_channels << (encoder_layers() - 1);
}

void SegmentorConfig::validate() const {
    if (input_h < 1 || input_w < 1) throw ConfigError("segmentor: input size must be positive");
    if (base_channels < 1) throw ConfigError("segmentor: base_channels must be >= 1");
    if (encoder_stride < 2 || !power_of_two(encoder_stride))
        throw ConfigError("segmentor: encoder_stride must be a power of two >= 2");
    if (input_h % encoder_stride != 0 || input_w % encoder_stride != 0)
        throw ConfigError("segmentor: input size must be divisible by encoder_stride");
    if (cca_passes < 1) throw ConfigError("segmentor: cca_passes must be >= 1");
}

std::vector<NodePtr> SegmentorParams::nodes() const {
    std::vector<NodePtr> out;
    out.reserve(named.size());
    for (const auto& [name, node] : named) out.push_back(node);
    return out;
}

const NodePtr& SegmentorParams::at(std::string_view name) const {
    for (const auto& [n, node] : named)
        if (n == name) return node;
    throw StateError("segmentor: no parameter named " + std::string(name));
}

CCAWeights SegmentorParams::cca_weights() const {
    CCAWeights w;
    w.query = at("cca.query");
    w.key = at("cca.key");
    w.value = at("cca.value");
    return w;
}

SegmentorParams SegmentorParams::clone() const {
    SegmentorParams copy;
    copy.cfg = cfg;
    copy.named.reserve(named.size());
    for (const auto& [name, node] : named) copy.named.emplace_back(name, make_node(node->value));
    return copy;
}

SegmentorParams build_segmentor(const SegmentorConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SegmentorParams p;
    p.cfg = cfg;

    int in_c = 1;
    for (int layer = 0; layer < cfg.encoder_layers(); ++layer) {
        const int out_c = cfg.base_channels << layer;
        const std::string prefix = "enc" + std::to_string(layer);
        p.named.emplace_back(prefix + ".weight", init_conv_weight(out_c, in_c, 3, rng));
        p.named.emplace_back(prefix + ".bias", make_node(Tensor({out_c})));
        in_c = out_c;
    }

    CCAWeights w = CCAWeights::init(in_c, rng);
    p.named.emplace_back("cca.query", w.query);
    p.named.emplace_back("cca.key", w.key);
    p.named.emplace_back("cca.value", w.value);

    // Zero head: the sigmoid must open at p = 0.5, not saturated.
    p.named.emplace_back("head.weight", make_node(Tensor({1, in_c, 1, 1})));
    p.named.emplace_back("head.bias", make_node(Tensor({1})));
    return p;
}

NodePtr segmentor_forward(const SegmentorParams& params, const NodePtr& input) {
    if (input->value.ndim() != 4 || input->value.dim(1) != 1)
        throw ShapeError("segmentor: input must be Nx1xHxW");
    const int stride = params.cfg.encoder_stride;
    if (input->value.dim(2) % stride != 0 || input->value.dim(3) % stride != 0)
        throw ShapeError("segmentor: input extent must be divisible by encoder_stride");

    NodePtr x = input;
    int remaining = stride;
    for (int layer = 0; layer < params.cfg.encoder_layers(); ++layer) {
        const std::string prefix = "enc" + std::to_string(layer);
        const int layer_stride = remaining > 1 ? 2 : 1;
        remaining /= layer_stride;
        x = relu(conv2d(x, params.at(prefix + ".weight"), params.at(prefix + ".bias"),
                        layer_stride, /*padding=*/1));
    }
    x = rcca_forward(x, params.cca_weights(), params.cfg.cca_passes);
    x = conv2d(x, params.at("head.weight"), params.at("head.bias"));
    x = upsample_nearest(x, stride);
    return sigmoid(x);
}

double poly_lr(double initial_lr, int iter, int max_iter, double power) {
    if (max_iter < 1) throw ArgumentError("poly_lr: max_iter must be >= 1");
    if (iter < 0 || iter > max_iter) throw ArgumentError("poly_lr: iter must lie in [0, max_iter]");
    return initial_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

SgdState::SgdState(const std::vector<NodePtr>& params) {
    velocity.reserve(params.size());
    for (const auto& p : params) velocity.emplace_back(p->value.shape);
}

void sgd_step(const std::vector<NodePtr>& params, SgdState& state, double lr, double momentum,
              double weight_decay) {
    if (params.size() != state.velocity.size())
        throw ShapeError("sgd_step: parameter and velocity counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& v = state.velocity[i];
        GraphNode& p = *params[i];
        if (!v.same_shape(p.value) || !p.grad.same_shape(p.value))
            throw ShapeError("sgd_step: shape mismatch");
        for (std::size_t k = 0; k < v.size(); ++k) {
            v.data[k] = momentum * v.data[k] + (p.grad.data[k] + weight_decay * p.value.data[k]);
            p.value.data[k] -= lr * v.data[k];
        }
    }
}

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("train: initial_lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_iter < 1) throw ConfigError("train: max_iter must be >= 1");
}

namespace {

void check_pair(const MaskPair& pair, const SegmentorConfig& cfg) {
    if (pair.image.ndim() != 3 || pair.image.dim(0) != 1)
        throw InputError("train: image must be 1xHxW (" + pair.id + ")");
    if (pair.image.dim(1) != cfg.input_h || pair.image.dim(2) != cfg.input_w)
        throw InputError("train: image extent does not match config (" + pair.id + ")");
    if (pair.mask.h != cfg.input_h || pair.mask.w != cfg.input_w)
        throw InputError("train: mask extent does not match image (" + pair.id + ")");
    for (auto v : pair.mask.data)
        if (v != 0 && v != 1) throw InputError("train: mask must be binary (" + pair.id + ")");
}

} // namespace

TrainResult train(const std::vector<MaskPair>& train_set, const std::vector<MaskPair>& val_set,
                  const SegmentorConfig& seg_cfg, const TrainConfig& train_cfg) {
    seg_cfg.validate();
    train_cfg.validate();
    if (train_set.empty()) throw InputError("train: empty training set");
    for (const auto& p : train_set) check_pair(p, seg_cfg);
    for (const auto& p : val_set) check_pair(p, seg_cfg);

    SegmentorParams params = build_segmentor(seg_cfg);
    std::vector<NodePtr> nodes = params.nodes();
    SgdState sgd(nodes);

    const int n = static_cast<int>(train_set.size());
    const int H = seg_cfg.input_h, W = seg_cfg.input_w;
    Rng shuffle_rng(Rng::derive(train_cfg.seed, 0x5Au));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    int pos = n; // forces a shuffle before the first batch

    // Model selection per validation DICE, probed ten times per run plus at
    // the final iteration.
    const int val_interval = std::max(1, train_cfg.max_iter / 10);

    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(train_cfg.max_iter));

    for (int iter = 0; iter < train_cfg.max_iter; ++iter) {
        const int bsz = train_cfg.batch_size;
        Tensor batch({bsz, 1, H, W});
        Tensor target({bsz, 1, H, W});
        for (int b = 0; b < bsz; ++b) {
            if (pos == n) {
                shuffle_rng.shuffle(order);
                pos = 0;
            }
            const MaskPair& pair = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])];
            std::copy(pair.image.data.begin(), pair.image.data.end(),
                      batch.data.begin() + static_cast<std::size_t>(b) * H * W);
            double* t = target.data.data() + static_cast<std::size_t>(b) * H * W;
            for (std::size_t i = 0; i < pair.mask.data.size(); ++i) t[i] = pair.mask.data[i];
        }

        const double lr = poly_lr(train_cfg.initial_lr, iter, train_cfg.max_iter, train_cfg.power);
        zero_grads(nodes);
        NodePtr prob = segmentor_forward(params, make_node(std::move(batch)));
        NodePtr loss = mse_loss(prob, target);
        backward(loss);
        sgd_step(nodes, sgd, lr, train_cfg.momentum, train_cfg.weight_decay);
        result.log.push_back({iter, lr, loss->value.data[0]});

        if (!val_set.empty() &&
            ((iter + 1) % val_interval == 0 || iter + 1 == train_cfg.max_iter)) {
            const double val_dice = mean_dice(params, val_set);
            if (val_dice > result.best_val_dice) {
                result.best_val_dice = val_dice;
                result.best_iter = iter + 1;
                result.params = params.clone();
            }
        }
    }

    if (result.params.empty()) {
        result.params = params.clone();
        result.best_iter = train_cfg.max_iter;
    }
    return result;
}

Tensor predict(const SegmentorParams& params, const Tensor& images) {
    if (params.empty()) throw StateError("predict: segmentor parameters missing");
    if (images.ndim() != 4 || images.dim(1) != 1)
        throw ShapeError("predict: input must be Nx1xHxW");
    const int N = images.dim(0), H = images.dim(2), W = images.dim(3);
    Tensor out({N, 1, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    // Chunked so prediction over large sets keeps a bounded graph alive.
    const int chunk = 8;
    for (int start = 0; start < N; start += chunk) {
        const int count = std::min(chunk, N - start);
        Tensor sub({count, 1, H, W});
        std::copy(images.data.begin() + start * plane, images.data.begin() + (start + count) * plane,
                  sub.data.begin());
        NodePtr prob = segmentor_forward(params, make_node(std::move(sub)));
        std::copy(prob->value.data.begin(), prob->value.data.end(),
                  out.data.begin() + start * plane);
    }
    return out;
}

BinaryMask binarize(const Tensor& prob, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ArgumentError("binarize: threshold must lie in (0, 1)");
    int h = 0, w = 0;
    if (prob.ndim() == 2) {
        h = prob.dim(0);
        w = prob.dim(1);
    } else if (prob.ndim() == 3 && prob.dim(0) == 1) {
        h = prob.dim(1);
        w = prob.dim(2);
    } else if (prob.ndim() == 4 && prob.dim(0) == 1 && prob.dim(1) == 1) {
        h = prob.dim(2);
        w = prob.dim(3);
    } else {
        throw ShapeError("binarize: expected a single-channel probability map");
    }
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = prob.data[i] >= threshold ? 1 : 0; // ties go to foreground
    return m;
}

std::vector<BinaryMask> binarize_batch(const Tensor& probs, double threshold) {
    if (probs.ndim() != 4 || probs.dim(1) != 1)
        throw ShapeError("binarize_batch: expected Nx1xHxW probabilities");
    const int N = probs.dim(0), H = probs.dim(2), W = probs.dim(3);
    std::vector<BinaryMask> out;
    out.reserve(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        Tensor one({1, H, W});
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        std::copy(probs.data.begin() + n * plane, probs.data.begin() + (n + 1) * plane,
                  one.data.begin());
        out.push_back(binarize(one, threshold));
    }
    return out;
}

double mean_dice(const SegmentorParams& params, const std::vector<MaskPair>& pairs) {
    if (pairs.empty()) throw InputError("mean_dice: empty set");
    const int H = pairs[0].image.dim(1), W = pairs[0].image.dim(2);
    Tensor batch({static_cast<int>(pairs.size()), 1, H, W});
    for (std::size_t i = 0; i < pairs.size(); ++i)
        std::copy(pairs[i].image.data.begin(), pairs[i].image.data.end(),
                  batch.data.begin() + i * static_cast<std::size_t>(H) * W);
    const std::vector<BinaryMask> preds = binarize_batch(predict(params, batch), 0.5);
    double acc = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) acc += dice(confusion(preds[i], pairs[i].mask));
    return acc / static_cast<double>(pairs.size());
}

void save_segmentor(const std::filesystem::path& path, const SegmentorParams& params) {
    if (params.empty()) throw StateError("save_segmentor: parameters missing");
    std::vector<CheckpointEntry> entries;
    const SegmentorConfig& c = params.cfg;
    entries.push_back({kMetaEntry,
                       {7},
                       {static_cast<double>(c.input_h), static_cast<double>(c.input_w),
                        static_cast<double>(c.base_channels), static_cast<double>(c.encoder_stride),
                        static_cast<double>(c.cca_passes),
                        static_cast<double>(c.seed & 0xFFFFFFFFull),
                        static_cast<double>(c.seed >> 32)}});
    for (const auto& [name, node] : params.named)
        entries.push_back({name, node->value.shape, node->value.data});
    save_checkpoint(path, entries);
}

SegmentorParams load_segmentor(const std::filesystem::path& path) {
    const std::vector<CheckpointEntry> entries = load_checkpoint(path);
    if (entries.empty() || entries[0].name != kMetaEntry)
        throw InputError("segmentor checkpoint: missing meta entry");
    const auto& meta = entries[0].values;
    if (meta.size() != 7) throw InputError("segmentor checkpoint: malformed meta entry");

    SegmentorConfig cfg;
    cfg.input_h = static_cast<int>(meta[0]);
    cfg.input_w = static_cast<int>(meta[1]);
    cfg.base_channels = static_cast<int>(meta[2]);
    cfg.encoder_stride = static_cast<int>(meta[3]);
    cfg.cca_passes = static_cast<int>(meta[4]);
    cfg.seed = static_cast<std::uint64_t>(meta[5]) | (static_cast<std::uint64_t>(meta[6]) << 32);

    SegmentorParams params = build_segmentor(cfg);
    if (entries.size() != params.named.size() + 1)
        throw InputError("segmentor checkpoint: unexpected entry count");
    for (std::size_t i = 0; i < params.named.size(); ++i) {
        const CheckpointEntry& e = entries[i + 1];
        auto& [name, node] = params.named[i];
        if (e.name != name) throw InputError("segmentor checkpoint: unexpected entry " + e.name);
        if (e.shape != node->value.shape)
            throw InputError("segmentor checkpoint: shape mismatch in " + e.name);
        node->value.data = e.values;
    }
    return params;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("train log: cannot open " + path.string());
    f << "iter,lr,loss\n";
    char buf[96];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.iter, e.lr, e.loss);
        f << buf;
    }
}

} // namespace xlsor
