#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xlsor/mask.hpp"
#include "xlsor/segnet.hpp"
#include "xlsor/tensor.hpp"

namespace xlsor {

// Procedurally generated "normal" image with exactly known lung geometry:
// two bright-rimmed elliptical lung fields with an interior dip, a bright
// mediastinal column between them, sinusoidal rib bands and pixel noise.
struct Phantom {
    Tensor image; // 1 x H x W in [0, 1]
    BinaryMask true_mask;
    BinaryMask left_mask;
    BinaryMask right_mask;
    std::uint64_t seed = 0;

    struct ShapeParams {
        double cx[2], cy[2], ax[2], ay[2], rot[2]; // left / right ellipse
        double rib_freq, rib_phase, noise_sigma;
    } params{};
};

Phantom generate_phantom(int H, int W, std::uint64_t seed);

enum class StyleKind { opacity_blobs, diffuse_haze, basal_gradient, border_occlusion };
constexpr int kStyleCount = 4;

const char* style_name(StyleKind kind);
StyleKind style_from_name(std::string_view name); // throws ArgumentError

// A parametric abnormality: which corruption, how strong, which draw.
struct AbnormalityStyle {
    StyleKind kind = StyleKind::opacity_blobs;
    double intensity = 0.0; // in [0, 1]; 0 reproduces the input bit-exactly
    std::uint64_t seed = 0;
};

// Image-space corruption only; the lung geometry is never moved. The mask
// steers placement (blobs land inside lungs, occlusions straddle a lung
// border).
Tensor apply_style(const Tensor& image, const BinaryMask& lungs, const AbnormalityStyle& style);

inline Tensor synthesize_abnormal(const Phantom& ph, const AbnormalityStyle& style) {
    return apply_style(ph.image, ph.true_mask, style);
}

// Segment the normal image and binarize at 0.5; the result is attached
// unchanged to every abnormal variant of that source.
BinaryMask propagate_mask(const SegmentorParams& params, const Tensor& normal_image,
                          double threshold = 0.5);

struct AugmentedPair {
    std::string id;
    Tensor image; // 1 x H x W
    BinaryMask pseudo_mask;
    std::string source_id;
    std::string style; // "normal" or a style name
    double intensity = 0.0;
    std::uint64_t seed = 0;
    int round = 1;
};

// One batch of constructed pairs: n_normal fresh phantoms, each paired with
// its propagated pseudo mask plus per_normal corrupted variants inheriting
// that mask bit-identically. Styles cycle round-robin with seeded
// intensities. Total n_normal * (1 + per_normal) pairs.
std::vector<AugmentedPair> build_augmented_set(int n_normal, int per_normal,
                                               const SegmentorParams& segmentor,
                                               std::uint64_t seed, int H, int W, int round = 1);

// Rounds 1..n concatenated; the prefix property makes every earlier series a
// multiset subset of every later one.
std::vector<AugmentedPair> build_augmented_series(int rounds, int n_normal, int per_normal,
                                                  const SegmentorParams& segmentor,
                                                  std::uint64_t seed, int H, int W);

} // namespace xlsor
