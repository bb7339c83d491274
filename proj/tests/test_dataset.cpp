#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "xlsor/dataset.hpp"
#include "xlsor/errors.hpp"
#include "xlsor/rng.hpp"

using namespace xlsor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("pgm: quantization is round-half-up and read/write round-trips") {
    TempDir dir("xlsor_pgm_test");

    // 0.1 * 255 = 25.5 -> 26
    Tensor img({1, 2, 3}, {0.0, 0.1, 0.5, 0.999, 1.0, 26.0 / 255.0});
    write_pgm(dir.path / "a.pgm", img);
    const std::string bytes = slurp(dir.path / "a.pgm");
    CHECK(bytes.substr(0, 10) == "P5\n3 2\n255");
    const std::string raster = bytes.substr(bytes.size() - 6);
    CHECK(static_cast<unsigned char>(raster[0]) == 0);
    CHECK(static_cast<unsigned char>(raster[1]) == 26);
    CHECK(static_cast<unsigned char>(raster[2]) == 128); // 127.5 rounds up
    CHECK(static_cast<unsigned char>(raster[3]) == 255);
    CHECK(static_cast<unsigned char>(raster[4]) == 255);
    CHECK(static_cast<unsigned char>(raster[5]) == 26);

    // write(read(x)) is byte-identical
    const Tensor back = read_pgm(dir.path / "a.pgm");
    write_pgm(dir.path / "b.pgm", back);
    CHECK(slurp(dir.path / "b.pgm") == bytes);
}

TEST_CASE("mask pgm: 0/255 only") {
    TempDir dir("xlsor_maskpgm_test");
    BinaryMask m(2, 2);
    m.at(0, 1) = 1;
    write_mask_pgm(dir.path / "m.pgm", m);
    CHECK(read_mask_pgm(dir.path / "m.pgm") == m);

    std::ofstream f(dir.path / "bad.pgm", std::ios::binary);
    f << "P5\n2 1\n255\n" << static_cast<char>(255) << static_cast<char>(7);
    f.close();
    CHECK_THROWS_AS(read_mask_pgm(dir.path / "bad.pgm"), InputError);
}

TEST_CASE("pgm parser rejects malformed headers") {
    TempDir dir("xlsor_badpgm_test");
    auto write_bytes = [&](const char* name, const std::string& bytes) {
        std::ofstream f(dir.path / name, std::ios::binary);
        f << bytes;
    };
    write_bytes("p2.pgm", "P2\n2 2\n255\n....");
    CHECK_THROWS_AS(read_pgm(dir.path / "p2.pgm"), InputError);
    write_bytes("max.pgm", std::string("P5\n1 1\n65535\n") + '\0' + '\0');
    CHECK_THROWS_AS(read_pgm(dir.path / "max.pgm"), InputError);
    write_bytes("short.pgm", "P5\n4 4\n255\nab");
    CHECK_THROWS_AS(read_pgm(dir.path / "short.pgm"), InputError);
}

TEST_CASE("split_assignments: 70/10/20 sizes and determinism") {
    const auto s40 = split_assignments(40, 17);
    int tr = 0, va = 0, te = 0;
    for (const auto& s : s40) {
        if (s == "train") ++tr;
        else if (s == "val") ++va;
        else ++te;
    }
    CHECK(tr == 28);
    CHECK(va == 4);
    CHECK(te == 8);
    CHECK(split_assignments(40, 17) == s40);
    CHECK(split_assignments(40, 18) != s40);

    const auto s10 = split_assignments(10, 17);
    tr = va = te = 0;
    for (const auto& s : s10) {
        if (s == "train") ++tr;
        else if (s == "val") ++va;
        else ++te;
    }
    CHECK(tr == 7);
    CHECK(va == 1);
    CHECK(te == 2);
}

TEST_CASE("dataset save/load round trip with manifest fields") {
    TempDir dir("xlsor_ds_test");
    Dataset ds = dataset_from_phantoms(10, 32, 32, 99);
    REQUIRE(ds.pairs.size() == 10);
    save_dataset(dir.path, ds);

    const Dataset back = load_dataset(dir.path);
    CHECK(back.height == 32);
    CHECK(back.width == 32);
    CHECK(back.seed == 99);
    REQUIRE(back.pairs.size() == 10);
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        CHECK(back.pairs[i].id == ds.pairs[i].id);
        CHECK(back.pairs[i].split == ds.pairs[i].split);
        CHECK(back.pairs[i].seed == ds.pairs[i].seed);
        CHECK(back.pairs[i].mask == ds.pairs[i].mask);
        // images only round-trip through the 8-bit quantizer
        for (std::size_t k = 0; k < back.pairs[i].image.size(); ++k) {
            const double q = std::floor(ds.pairs[i].image.data[k] * 255.0 + 0.5) / 255.0;
            CHECK(back.pairs[i].image.data[k] == doctest::Approx(q).epsilon(1e-12));
        }
    }

    // byte-identical re-save
    TempDir dir2("xlsor_ds_test2");
    save_dataset(dir2.path, ds);
    CHECK(slurp(dir.path / "manifest.json") == slurp(dir2.path / "manifest.json"));
    CHECK(slurp(dir.path / "phantom_0000_img.pgm") == slurp(dir2.path / "phantom_0000_img.pgm"));

    CHECK_THROWS_AS(load_dataset(dir.path / "missing"), InputError);
}

TEST_CASE("dataset split selection") {
    Dataset ds = dataset_from_phantoms(10, 32, 32, 7);
    const auto train = ds.split_pairs("train");
    const auto val = ds.split_pairs("val");
    const auto test = ds.split_pairs("test");
    CHECK(train.size() == 7);
    CHECK(val.size() == 1);
    CHECK(test.size() == 2);
    CHECK(ds.all_pairs().size() == 10);
}
