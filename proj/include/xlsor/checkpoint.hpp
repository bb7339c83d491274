#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace xlsor {

// One named tensor inside a checkpoint container.
struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values; // row-major
};

// Binary container: magic "XLSR\0", version byte 0x01, then a little-endian
// entry list. Per entry: u32 name length + bytes, u32 ndim + u32 dims,
// u64 value count + IEEE-754 doubles.
void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

} // namespace xlsor
