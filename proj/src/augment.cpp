#include "xlsor/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xlsor/errors.hpp"
#include "xlsor/rng.hpp"

namespace xlsor {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Ellipse {
    double cx, cy, ax, ay, rot;

    // Normalized squared radius of a point; <= 1 means inside.
    double radius2(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(rot), s = std::sin(rot);
        const double u = (dx * c + dy * s) / ax;
        const double v = (-dx * s + dy * c) / ay;
        return u * u + v * v;
    }
};

std::vector<std::pair<int, int>> mask_foreground(const BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) pts.emplace_back(y, x);
    return pts;
}

std::vector<std::pair<int, int>> mask_boundary(const BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
            if (edge || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) ||
                !m.at(y, x + 1)) {
                pts.emplace_back(y, x);
            }
        }
    return pts;
}

void add_gaussian_splat(Tensor& img, double cy, double cx, double sigma, double amp) {
    const int H = img.dim(1), W = img.dim(2);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            img.data[static_cast<std::size_t>(y) * W + x] += amp * std::exp(-(dy * dy + dx * dx) * inv);
        }
}

void clamp01(Tensor& img) {
    for (double& v : img.data) v = std::min(1.0, std::max(0.0, v));
}

} // namespace

Phantom generate_phantom(int H, int W, std::uint64_t seed) {
    if (H < 32 || W < 32) throw ArgumentError("generate_phantom: size must be at least 32x32");

    Rng rng(seed);
    Phantom ph;
    ph.seed = seed;
    ph.image = Tensor({1, H, W});
    ph.true_mask = BinaryMask(H, W);
    ph.left_mask = BinaryMask(H, W);
    ph.right_mask = BinaryMask(H, W);

    // Parameter ranges keep the two lung fields disjoint and their combined
    // area between 15% and 45% of the frame for every seed.
    Ellipse lungs[2];
    for (int i = 0; i < 2; ++i) {
        const double base_cx = i == 0 ? 0.30 : 0.70;
        lungs[i].cx = (base_cx + rng.uniform(-0.015, 0.015)) * W;
        lungs[i].cy = (0.54 + rng.uniform(-0.02, 0.02)) * H;
        lungs[i].ax = rng.uniform(0.13, 0.16) * W;
        lungs[i].ay = rng.uniform(0.24, 0.32) * H;
        lungs[i].rot = rng.uniform(-0.10, 0.10);
        ph.params.cx[i] = lungs[i].cx;
        ph.params.cy[i] = lungs[i].cy;
        ph.params.ax[i] = lungs[i].ax;
        ph.params.ay[i] = lungs[i].ay;
        ph.params.rot[i] = lungs[i].rot;
    }
    ph.params.rib_freq = rng.uniform(3.0, 5.0);
    ph.params.rib_phase = rng.uniform(0.0, kTwoPi);
    ph.params.noise_sigma = rng.uniform(0.01, 0.05);

    const double mediastinum_x = 0.5 * (lungs[0].cx + lungs[1].cx);
    const double mediastinum_sigma = 0.06 * W;

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double v = 0.35; // body tissue

            const double mx = (px - mediastinum_x) / mediastinum_sigma;
            v += 0.20 * std::exp(-mx * mx);

            for (int i = 0; i < 2; ++i) {
                const double r2 = lungs[i].radius2(px, py);
                if (r2 <= 1.0) {
                    BinaryMask& side = i == 0 ? ph.left_mask : ph.right_mask;
                    side.at(y, x) = 1;
                    ph.true_mask.at(y, x) = 1;
                    // Dark air interior, bright rim at the lung boundary.
                    v = 0.20 + 0.42 * r2 * r2 * r2;
                }
            }

            const double rib = std::sin(kTwoPi * ph.params.rib_freq * py / H + ph.params.rib_phase);
            v += 0.05 * rib * rib;

            ph.image.data[static_cast<std::size_t>(y) * W + x] = v;
        }
    }

    for (double& v : ph.image.data) v += ph.params.noise_sigma * rng.normal();
    clamp01(ph.image);
    return ph;
}

const char* style_name(StyleKind kind) {
    switch (kind) {
        case StyleKind::opacity_blobs: return "opacity_blobs";
        case StyleKind::diffuse_haze: return "diffuse_haze";
        case StyleKind::basal_gradient: return "basal_gradient";
        case StyleKind::border_occlusion: return "border_occlusion";
    }
    throw ArgumentError("style_name: unknown style");
}

StyleKind style_from_name(std::string_view name) {
    if (name == "opacity_blobs") return StyleKind::opacity_blobs;
    if (name == "diffuse_haze") return StyleKind::diffuse_haze;
    if (name == "basal_gradient") return StyleKind::basal_gradient;
    if (name == "border_occlusion") return StyleKind::border_occlusion;
    throw ArgumentError("unknown abnormality style: " + std::string(name));
}

Tensor apply_style(const Tensor& image, const BinaryMask& lungs, const AbnormalityStyle& style) {
    if (image.ndim() != 3 || image.dim(0) != 1) throw ShapeError("apply_style: image must be 1xHxW");
    const int H = image.dim(1), W = image.dim(2);
    if (lungs.h != H || lungs.w != W) throw ShapeError("apply_style: mask extent differs from image");
    if (style.intensity < 0.0 || style.intensity > 1.0)
        throw ArgumentError("apply_style: intensity must lie in [0, 1]");

    Tensor out = image;
    if (style.intensity == 0.0) return out;

    Rng rng(style.seed);
    const double scale = std::min(H, W);

    switch (style.kind) {
        case StyleKind::opacity_blobs: {
            const auto inside = mask_foreground(lungs);
            if (inside.empty()) throw InputError("opacity_blobs: lung mask is empty");
            const int blobs = 2 + rng.uniform_int(3);
            for (int b = 0; b < blobs; ++b) {
                const auto [cy, cx] = inside[static_cast<std::size_t>(rng.uniform_int(
                    static_cast<int>(inside.size())))];
                const double sigma = rng.uniform(0.05, 0.12) * scale;
                const double amp = style.intensity * rng.uniform(0.45, 0.75);
                add_gaussian_splat(out, cy + 0.5, cx + 0.5, sigma, amp);
            }
            break;
        }
        case StyleKind::diffuse_haze: {
            for (int b = 0; b < 3; ++b) {
                const double cy = rng.uniform(0.2, 0.8) * H;
                const double cx = rng.uniform(0.2, 0.8) * W;
                const double sigma = rng.uniform(0.25, 0.45) * scale;
                const double amp = style.intensity * rng.uniform(0.10, 0.18);
                add_gaussian_splat(out, cy, cx, sigma, amp);
            }
            break;
        }
        case StyleKind::basal_gradient: {
            const double y0 = rng.uniform(0.50, 0.65) * H;
            const double amp = style.intensity * rng.uniform(0.35, 0.55);
            for (int y = 0; y < H; ++y) {
                const double t = (y + 0.5 - y0) / (H - y0);
                if (t <= 0.0) continue;
                const double add = amp * t;
                for (int x = 0; x < W; ++x) out.data[static_cast<std::size_t>(y) * W + x] += add;
            }
            break;
        }
        case StyleKind::border_occlusion: {
            const auto border = mask_boundary(lungs);
            if (border.empty()) throw InputError("border_occlusion: lung mask has no boundary");
            const auto [cy, cx] = border[static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(border.size())))];
            const double sigma = rng.uniform(0.08, 0.15) * scale;
            const double amp = style.intensity * rng.uniform(0.50, 0.80);
            add_gaussian_splat(out, cy + 0.5, cx + 0.5, sigma, amp);
            break;
        }
    }

    clamp01(out);
    return out;
}

BinaryMask propagate_mask(const SegmentorParams& params, const Tensor& normal_image,
                          double threshold) {
    if (params.empty()) throw StateError("propagate_mask: no trained segmentor available");
    if (normal_image.ndim() != 3 || normal_image.dim(0) != 1)
        throw ShapeError("propagate_mask: image must be 1xHxW");
    Tensor batch({1, 1, normal_image.dim(1), normal_image.dim(2)}, normal_image.data);
    return binarize(predict(params, batch), threshold);
}

std::vector<AugmentedPair> build_augmented_set(int n_normal, int per_normal,
                                               const SegmentorParams& segmentor,
                                               std::uint64_t seed, int H, int W, int round) {
    if (n_normal < 1) throw ArgumentError("build_augmented_set: n_normal must be >= 1");
    if (per_normal < 1) throw ArgumentError("build_augmented_set: per_normal must be >= 1");
    if (round < 1) throw ArgumentError("build_augmented_set: round must be >= 1");
    if (segmentor.empty()) throw StateError("build_augmented_set: no trained segmentor available");

    const std::uint64_t round_seed = Rng::derive(seed, static_cast<std::uint64_t>(round));
    std::vector<AugmentedPair> out;
    out.reserve(static_cast<std::size_t>(n_normal) * (1 + per_normal));

    char idbuf[64];
    for (int i = 0; i < n_normal; ++i) {
        const std::uint64_t ph_seed = Rng::derive(round_seed, static_cast<std::uint64_t>(i));
        const Phantom ph = generate_phantom(H, W, ph_seed);
        const BinaryMask pseudo = propagate_mask(segmentor, ph.image);

        std::snprintf(idbuf, sizeof(idbuf), "a%d_%04d", round, i);
        const std::string source_id = idbuf;

        AugmentedPair normal;
        normal.id = source_id;
        normal.image = ph.image;
        normal.pseudo_mask = pseudo;
        normal.source_id = source_id;
        normal.style = "normal";
        normal.intensity = 0.0;
        normal.seed = ph_seed;
        normal.round = round;
        out.push_back(std::move(normal));

        for (int j = 0; j < per_normal; ++j) {
            AbnormalityStyle style;
            style.kind = static_cast<StyleKind>(j % kStyleCount);
            style.seed = Rng::derive(ph_seed, 2000 + static_cast<std::uint64_t>(j));
            Rng irng(Rng::derive(ph_seed, 1000 + static_cast<std::uint64_t>(j)));
            style.intensity = irng.uniform(0.3, 1.0);

            AugmentedPair ab;
            std::snprintf(idbuf, sizeof(idbuf), "a%d_%04d_v%d", round, i, j);
            ab.id = idbuf;
            ab.image = synthesize_abnormal(ph, style);
            ab.pseudo_mask = pseudo; // bit-identical inheritance
            ab.source_id = source_id;
            ab.style = style_name(style.kind);
            ab.intensity = style.intensity;
            ab.seed = style.seed;
            ab.round = round;
            out.push_back(std::move(ab));
        }
    }
    return out;
}

std::vector<AugmentedPair> build_augmented_series(int rounds, int n_normal, int per_normal,
                                                  const SegmentorParams& segmentor,
                                                  std::uint64_t seed, int H, int W) {
    if (rounds < 1) throw ArgumentError("build_augmented_series: rounds must be >= 1");
    std::vector<AugmentedPair> out;
    for (int r = 1; r <= rounds; ++r) {
        auto batch = build_augmented_set(n_normal, per_normal, segmentor, seed, H, W, r);
        out.insert(out.end(), std::make_move_iterator(batch.begin()),
                   std::make_move_iterator(batch.end()));
    }
    return out;
}

} // namespace xlsor
