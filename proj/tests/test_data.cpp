#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nledn/data.hpp"
#include "nledn/kernels.hpp"
#include "nledn/png_io.hpp"

namespace fs = std::filesystem;
using namespace nledn;

namespace {

fs::path temp_dir() {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "nledn_data_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({3, h, w});
    t.fill_uniform(rng, 0.0f, 1.0f);
    return t;
}

}  // namespace

TEST_CASE("png round trip preserves every byte") {
    Rng rng(17);
    RgbImage img;
    img.width = 37;
    img.height = 23;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));

    const auto path = (temp_dir() / "roundtrip.png").string();
    write_png(path, img);
    const RgbImage back = read_png(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("save(load(p)) reproduces the original pixel bytes") {
    Tensor t = random_image(20, 31, 3);
    const auto p1 = (temp_dir() / "a.png").string();
    const auto p2 = (temp_dir() / "b.png").string();
    save_image(t, p1);
    save_image(load_image(p1), p2);
    CHECK(read_png(p1).pixels == read_png(p2).pixels);
}

TEST_CASE("black maps to zero and white maps to one") {
    Tensor black({3, 4, 4}, 0.0f);
    const auto path = (temp_dir() / "black.png").string();
    save_image(black, path);
    Tensor back = load_image(path);
    for (std::int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == 0.0f);

    Tensor white({3, 4, 4}, 1.0f);
    save_image(white, path);
    back = load_image(path);
    for (std::int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == 1.0f);
}

TEST_CASE("load/save round-trip error stays within 1/510 per channel") {
    Tensor t = random_image(16, 16, 9);
    const auto path = (temp_dir() / "quant.png").string();
    save_image(t, path);
    Tensor back = load_image(path);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        CHECK(std::abs(back[i] - t[i]) <= 1.0f / 510.0f + 1e-6f);
    }
}

TEST_CASE("png reader rejects what the contract excludes") {
    const auto path = (temp_dir() / "bad.png").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "not a png at all";
    }
    CHECK_THROWS_WITH_AS(read_png(path), doctest::Contains("not a PNG"), Error);
    CHECK_THROWS_WITH_AS(read_png((temp_dir() / "missing.png").string()),
                         doctest::Contains("cannot open"), Error);

    // corrupt one IDAT byte of a valid file: the chunk CRC must catch it
    const auto good = (temp_dir() / "good.png").string();
    save_image(random_image(8, 8, 4), good);
    std::vector<char> bytes;
    {
        std::ifstream f(good, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    bytes[60] = static_cast<char>(bytes[60] ^ 0x5a);
    const auto corrupt = (temp_dir() / "corrupt.png").string();
    {
        std::ofstream f(corrupt, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(read_png(corrupt), Error);
}

TEST_CASE("synthetic rain: zero streaks or zero intensity leave the image unchanged") {
    Tensor clean = random_image(32, 32, 5);

    RainParams p;
    p.streak_count = 0;
    CHECK(synth_rain(clean, p).pair.rainy.data == clean.data);

    p = RainParams{};
    p.intensity_min = 0.0;
    p.intensity_max = 0.0;
    CHECK(synth_rain(clean, p).pair.rainy.data == clean.data);
}

TEST_CASE("synthetic rain is deterministic in the seed and nonnegative") {
    Tensor clean = random_image(48, 48, 6);
    RainParams p;
    p.streak_count = 40;
    p.seed = 123;

    const SynthResult a = synth_rain(clean, p);
    const SynthResult b = synth_rain(clean, p);
    CHECK(a.pair.rainy.data == b.pair.rainy.data);
    CHECK(a.angle_deg == b.angle_deg);

    p.seed = 124;
    const SynthResult c = synth_rain(clean, p);
    CHECK(a.pair.rainy.data != c.pair.rainy.data);

    // additive brightness model: rain never darkens
    for (std::int64_t i = 0; i < clean.numel(); ++i) {
        CHECK(a.pair.rainy[i] >= clean[i] - 1e-7f);
    }
    CHECK(a.angle_deg >= p.angle_min_deg);
    CHECK(a.angle_deg <= p.angle_max_deg);
}

TEST_CASE("rain params are validated") {
    Tensor clean = random_image(16, 16, 7);
    RainParams p;
    p.intensity_max = 0.7;
    CHECK_THROWS_AS(synth_rain(clean, p), Error);
    p = RainParams{};
    p.length_min = 30;
    p.length_max = 10;
    CHECK_THROWS_AS(synth_rain(clean, p), Error);
}

TEST_CASE("prepare pads 100x37 to 104x40 with pad (2,2,1,2)") {
    ImagePair pair;
    pair.id = "x";
    pair.rainy = random_image(100, 37, 8);
    pair.clean = random_image(100, 37, 9);
    Rng rng(1);
    const ImagePair out = prepare(pair, false, rng);
    CHECK(out.rainy.dim(1) == 104);
    CHECK(out.rainy.dim(2) == 40);
    CHECK(out.pad.top == 2);
    CHECK(out.pad.bottom == 2);
    CHECK(out.pad.left == 1);
    CHECK(out.pad.right == 2);
    CHECK(crop(out.rainy, out.pad).data == pair.rainy.data);
    CHECK(crop(out.clean, out.pad).data == pair.clean.data);
}

TEST_CASE("prepare leaves 512x512 untouched and shrinks oversized inputs") {
    ImagePair pair;
    pair.rainy = random_image(512, 512, 10);
    pair.clean = pair.rainy;
    Rng rng(1);
    ImagePair out = prepare(pair, false, rng);
    CHECK(out.rainy.data == pair.rainy.data);
    CHECK_FALSE(out.pad.any());

    pair.rainy = random_image(600, 300, 11);
    pair.clean = pair.rainy;
    out = prepare(pair, false, rng);
    CHECK(out.rainy.dim(1) == 512 + out.pad.top + out.pad.bottom);
    // 300 * 512/600 = 256
    CHECK(out.rainy.dim(2) == 256 + out.pad.left + out.pad.right);
}

TEST_CASE("horizontal flip is an involution and tracks both images") {
    Tensor img = random_image(16, 24, 12);
    CHECK(flip_horizontal(flip_horizontal(img)).data == img.data);

    // marker pixel: the flip must move rainy and clean identically
    ImagePair pair;
    pair.rainy = Tensor({3, 16, 16}, 0.25f);
    pair.clean = Tensor({3, 16, 16}, 0.75f);
    pair.rainy.at3(0, 4, 2) = 1.0f;
    pair.clean.at3(0, 4, 2) = 0.0f;

    bool saw_flip = false, saw_noflip = false;
    for (std::uint64_t seed = 0; seed < 32 && !(saw_flip && saw_noflip); ++seed) {
        Rng rng(seed);
        const ImagePair out = prepare(pair, true, rng);
        const bool flipped = out.rainy.at3(0, 4, 13) == 1.0f;
        if (flipped) {
            CHECK(out.clean.at3(0, 4, 13) == 0.0f);
            saw_flip = true;
        } else {
            CHECK(out.rainy.at3(0, 4, 2) == 1.0f);
            CHECK(out.clean.at3(0, 4, 2) == 0.0f);
            saw_noflip = true;
        }
    }
    CHECK(saw_flip);
    CHECK(saw_noflip);
}

TEST_CASE("reflect padding mirrors without zeros and crop inverts it") {
    Tensor img = random_image(5, 6, 13);
    Padding pad{2, 1, 3, 2};
    Tensor padded = reflect_pad(img, pad);
    CHECK(padded.dim(1) == 8);
    CHECK(padded.dim(2) == 11);
    // edge-inclusive mirror: padded row 1 equals source row 0
    for (int x = 0; x < 6; ++x) {
        CHECK(padded.at3(0, 1, x + 3) == img.at3(0, 0, x));
    }
    CHECK(crop(padded, pad).data == img.data);

    // tiny images fold repeatedly instead of reading out of bounds
    Tensor tiny = random_image(1, 2, 14);
    Tensor padded_tiny = reflect_pad(tiny, Padding{3, 4, 5, 5});
    CHECK(kernels::all_finite(padded_tiny));
}

TEST_CASE("dataset pairing by file name, unpaired ids reported") {
    const fs::path root = temp_dir() / "ds";
    fs::create_directories(root / "rainy");
    fs::create_directories(root / "clean");
    save_image(random_image(16, 16, 1), (root / "rainy" / "a.png").string());
    save_image(random_image(16, 16, 2), (root / "clean" / "a.png").string());
    save_image(random_image(16, 16, 3), (root / "rainy" / "b.png").string());

    CHECK_THROWS_WITH_AS(Dataset::open(root.string()), doctest::Contains("b"), Error);

    save_image(random_image(16, 16, 4), (root / "clean" / "b.png").string());
    const Dataset ds = Dataset::open(root.string());
    REQUIRE(ds.size() == 2);
    CHECK(ds.entries[0].id == "a");
    const ImagePair pair = ds.load(1);
    CHECK(pair.id == "b");
    CHECK(pair.rainy.dim(1) == 16);
}
