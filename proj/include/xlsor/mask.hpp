#pragma once

#include <cstdint>
#include <vector>

namespace xlsor {

// Dense binary mask over an H x W pixel grid. Values are 0 or 1.
struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int height, int width)
        : h(height), w(width), data(static_cast<std::size_t>(height) * width, 0) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }

    bool operator==(const BinaryMask& o) const { return h == o.h && w == o.w && data == o.data; }
    bool operator!=(const BinaryMask& o) const { return !(*this == o); }
};

} // namespace xlsor
