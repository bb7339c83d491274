#include "xlsor/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "xlsor/errors.hpp"

namespace xlsor {

namespace {

constexpr char kMagic[5] = {'X', 'L', 'S', 'R', '\0'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw InputError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    std::string buf;
    buf.append(kMagic, 5);
    buf.push_back(static_cast<char>(kVersion));
    put_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
        buf.append(e.name);
        put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
        std::uint64_t count = 1;
        for (int d : e.shape) {
            if (d <= 0) throw InputError("checkpoint: non-positive dimension in " + e.name);
            put_u32(buf, static_cast<std::uint32_t>(d));
            count *= static_cast<std::uint64_t>(d);
        }
        if (count != e.values.size())
            throw InputError("checkpoint: value count does not match shape in " + e.name);
        put_u64(buf, count);
        for (double v : e.values) put_f64(buf, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw InputError("checkpoint: short write to " + path.string());
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    if (r.bytes(5) != std::string(kMagic, 5)) throw InputError("checkpoint: bad magic");
    const auto version = static_cast<std::uint8_t>(r.bytes(1)[0]);
    if (version != kVersion) throw InputError("checkpoint: unsupported version");

    const std::uint32_t n_entries = r.u32();
    std::vector<CheckpointEntry> entries;
    entries.reserve(n_entries);
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u32());
        const std::uint32_t ndim = r.u32();
        std::uint64_t expect = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint32_t dim = r.u32();
            if (dim == 0) throw InputError("checkpoint: zero dimension in " + e.name);
            e.shape.push_back(static_cast<int>(dim));
            expect *= dim;
        }
        const std::uint64_t count = r.u64();
        if (count != expect) throw InputError("checkpoint: value count mismatch in " + e.name);
        e.values.reserve(count);
        for (std::uint64_t k = 0; k < count; ++k) e.values.push_back(r.f64());
        entries.push_back(std::move(e));
    }
    if (r.pos != buf.size()) throw InputError("checkpoint: trailing bytes");
    return entries;
}

} // namespace xlsor
