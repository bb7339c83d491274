#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xlsor/augment.hpp"
#include "xlsor/mask.hpp"
#include "xlsor/segnet.hpp"
#include "xlsor/tensor.hpp"

namespace xlsor {

// 8-bit binary PGM (P5, maxval 255). Intensities quantize as
// round-half-up(v * 255); masks store 0 for background and 255 for
// foreground.
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path); // 1 x H x W, values /255
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

// One dataset record; images and masks live in sibling PGM files.
struct DatasetPair {
    std::string id;
    Tensor image; // 1 x H x W
    BinaryMask mask;
    std::string kind = "normal";  // "normal" | "abnormal"
    std::string style = "normal"; // "normal" or an abnormality style name
    double intensity = 0.0;
    std::uint64_t seed = 0;
    std::string split = "train"; // "train" | "val" | "test"
    int round = 0;
};

struct Dataset {
    int height = 0;
    int width = 0;
    std::uint64_t seed = 0;
    std::vector<DatasetPair> pairs;

    std::vector<MaskPair> split_pairs(const std::string& split) const;
    std::vector<MaskPair> all_pairs() const;
};

// Seeded 70/10/20 train/val/test assignment in input order.
std::vector<std::string> split_assignments(int n, std::uint64_t seed);

// Directory layout: <id>_img.pgm, <id>_mask.pgm per pair plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

Dataset dataset_from_phantoms(int n, int H, int W, std::uint64_t seed);
Dataset dataset_from_augmented(const std::vector<AugmentedPair>& pairs, int H, int W,
                               std::uint64_t seed);

} // namespace xlsor
