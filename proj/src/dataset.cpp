#include "xlsor/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "xlsor/errors.hpp"
#include "xlsor/rng.hpp"

namespace xlsor {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("short write to " + path.string());
}

// Strict P5 parse: "P5", whitespace-separated width/height/maxval 255, one
// whitespace byte, then the raster.
std::vector<std::uint8_t> parse_pgm(const std::string& bytes, int& h, int& w,
                                    const std::filesystem::path& path) {
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\t' ||
                                      bytes[pos] == '\n' || bytes[pos] == '\r'))
            ++pos;
    };
    auto read_int = [&]() -> long {
        skip_ws();
        std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') ++pos;
        if (pos == start) throw InputError("malformed PGM header in " + path.string());
        return std::stol(bytes.substr(start, pos - start));
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw InputError("not a P5 PGM file: " + path.string());
    pos = 2;
    const long width = read_int();
    const long height = read_int();
    const long maxval = read_int();
    if (width < 1 || height < 1) throw InputError("bad PGM extent in " + path.string());
    if (maxval != 255) throw InputError("PGM maxval must be 255 in " + path.string());
    if (pos >= bytes.size()) throw InputError("truncated PGM " + path.string());
    ++pos; // single whitespace after maxval
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos != count) throw InputError("PGM raster size mismatch in " + path.string());
    h = static_cast<int>(height);
    w = static_cast<int>(width);
    return std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
}

std::string pgm_header(int h, int w) {
    return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

} // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    int h = 0, w = 0;
    if (image.ndim() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else if (image.ndim() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else {
        throw ShapeError("write_pgm: expected HxW or 1xHxW image");
    }
    std::string out = pgm_header(h, w);
    out.reserve(out.size() + image.size());
    for (double v : image.data) {
        const double scaled = std::floor(v * 255.0 + 0.5); // round half up
        const double clamped = std::min(255.0, std::max(0.0, scaled));
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(clamped)));
    }
    write_file(path, out);
}

Tensor read_pgm(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto raster = parse_pgm(read_file(path), h, w, path);
    Tensor t({1, h, w});
    for (std::size_t i = 0; i < raster.size(); ++i) t.data[i] = raster[i] / 255.0;
    return t;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    std::string out = pgm_header(mask.h, mask.w);
    out.reserve(out.size() + mask.data.size());
    for (auto v : mask.data) {
        if (v != 0 && v != 1) throw InputError("write_mask_pgm: mask values must be 0 or 1");
        out.push_back(static_cast<char>(v ? 255 : 0));
    }
    write_file(path, out);
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto raster = parse_pgm(read_file(path), h, w, path);
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < raster.size(); ++i) {
        if (raster[i] == 0)
            m.data[i] = 0;
        else if (raster[i] == 255)
            m.data[i] = 1;
        else
            throw InputError("mask PGM must contain only 0 and 255: " + path.string());
    }
    return m;
}

std::vector<MaskPair> Dataset::split_pairs(const std::string& split) const {
    std::vector<MaskPair> out;
    for (const auto& p : pairs)
        if (p.split == split) out.push_back({p.id, p.image, p.mask});
    return out;
}

std::vector<MaskPair> Dataset::all_pairs() const {
    std::vector<MaskPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.id, p.image, p.mask});
    return out;
}

std::vector<std::string> split_assignments(int n, std::uint64_t seed) {
    if (n < 1) throw ArgumentError("split_assignments: n must be >= 1");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(seed, 0x51Du));
    rng.shuffle(order);
    const int n_train = (n * 7) / 10;
    const int n_val = n / 10;
    std::vector<std::string> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(idx)] =
            i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["height"] = ds.height;
    manifest["width"] = ds.width;
    manifest["seed"] = ds.seed;
    manifest["pairs"] = ordered_json::array();
    for (const auto& p : ds.pairs) {
        const std::string img_name = p.id + "_img.pgm";
        const std::string mask_name = p.id + "_mask.pgm";
        write_pgm(dir / img_name, p.image);
        write_mask_pgm(dir / mask_name, p.mask);
        ordered_json j;
        j["id"] = p.id;
        j["image"] = img_name;
        j["mask"] = mask_name;
        j["kind"] = p.kind;
        j["style"] = p.style;
        j["intensity"] = p.intensity;
        j["seed"] = p.seed;
        j["split"] = p.split;
        j["round"] = p.round;
        manifest["pairs"].push_back(std::move(j));
    }
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        ds.height = manifest.at("height").get<int>();
        ds.width = manifest.at("width").get<int>();
        ds.seed = manifest.at("seed").get<std::uint64_t>();
        for (const auto& j : manifest.at("pairs")) {
            DatasetPair p;
            p.id = j.at("id").get<std::string>();
            p.image = read_pgm(dir / j.at("image").get<std::string>());
            p.mask = read_mask_pgm(dir / j.at("mask").get<std::string>());
            p.kind = j.at("kind").get<std::string>();
            p.style = j.at("style").get<std::string>();
            p.intensity = j.at("intensity").get<double>();
            p.seed = j.at("seed").get<std::uint64_t>();
            p.split = j.at("split").get<std::string>();
            p.round = j.at("round").get<int>();
            if (p.image.dim(1) != ds.height || p.image.dim(2) != ds.width ||
                p.mask.h != ds.height || p.mask.w != ds.width)
                throw InputError("dataset pair " + p.id + " extent differs from manifest");
            ds.pairs.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    return ds;
}

Dataset dataset_from_phantoms(int n, int H, int W, std::uint64_t seed) {
    if (n < 1) throw ArgumentError("dataset_from_phantoms: n must be >= 1");
    Dataset ds;
    ds.height = H;
    ds.width = W;
    ds.seed = seed;
    const auto splits = split_assignments(n, seed);
    char idbuf[32];
    for (int i = 0; i < n; ++i) {
        const std::uint64_t ph_seed = Rng::derive(seed, static_cast<std::uint64_t>(i));
        const Phantom ph = generate_phantom(H, W, ph_seed);
        DatasetPair p;
        std::snprintf(idbuf, sizeof(idbuf), "phantom_%04d", i);
        p.id = idbuf;
        p.image = ph.image;
        p.mask = ph.true_mask;
        p.kind = "normal";
        p.style = "normal";
        p.intensity = 0.0;
        p.seed = ph_seed;
        p.split = splits[static_cast<std::size_t>(i)];
        p.round = 0;
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

Dataset dataset_from_augmented(const std::vector<AugmentedPair>& pairs, int H, int W,
                               std::uint64_t seed) {
    Dataset ds;
    ds.height = H;
    ds.width = W;
    ds.seed = seed;
    for (const auto& a : pairs) {
        DatasetPair p;
        p.id = a.id;
        p.image = a.image;
        p.mask = a.pseudo_mask;
        p.kind = a.style == "normal" ? "normal" : "abnormal";
        p.style = a.style;
        p.intensity = a.intensity;
        p.seed = a.seed;
        p.split = "train";
        p.round = a.round;
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

} // namespace xlsor
