#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "s4mi/core/rng.hpp"
#include "s4mi/data/pipeline.hpp"
#include "s4mi/data/sample_io.hpp"
#include "s4mi/metrics/metrics.hpp"

using namespace s4mi;
using namespace s4mi::data;

namespace {

Image random_image(int h, int w, int c, uint64_t seed) {
    Rng rng(seed);
    Image img(h, w, c);
    for (double& v : img.v) v = rng.uniform();
    return img;
}

Mask random_mask(int h, int w, int classes, uint64_t seed) {
    Rng rng(seed);
    Mask m(h, w);
    for (int& v : m.v) v = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
    return m;
}

}  // namespace

TEST_CASE("tiling the 1408x1876 layout gives a 3x4 grid of 12 tiles") {
    Image img = random_image(1408, 1876, 1, 1);
    auto [grid, tiles] = tile_image(img, 480);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 4);
    CHECK(tiles.size() == 12);
    CHECK(grid.pad_bottom == 3 * 480 - 1408);
    CHECK(grid.pad_right == 4 * 480 - 1876);
    CHECK(grid.pad_bottom < 480);
    CHECK(grid.pad_right < 480);
}

TEST_CASE("exact-fit tiling is the identity with zero padding") {
    Image img = random_image(480, 480, 3, 2);
    auto [grid, tiles] = tile_image(img, 480);
    CHECK(grid.rows == 1);
    CHECK(grid.cols == 1);
    REQUIRE(tiles.size() == 1);
    CHECK(tiles[0].v == img.v);
    CHECK(grid.pad_bottom == 0);
    CHECK(grid.pad_right == 0);
}

TEST_CASE("500x500 at tile 480 gives the hand-worked 2x2 layout") {
    Image img = random_image(500, 500, 1, 3);
    auto [grid, tiles] = tile_image(img, 480);
    CHECK(grid.rows == 2);
    CHECK(grid.cols == 2);
    REQUIRE(tiles.size() == 4);
    // tile(0,0) equals input[0:480, 0:480]
    for (int y = 0; y < 480; ++y)
        for (int x = 0; x < 480; ++x) CHECK(tiles[0].at(y, x, 0) == img.at(y, x, 0));
    // tile(1,1) holds the 20x20 corner plus a 460-pixel zero band
    const Image& t11 = tiles[3];
    for (int y = 0; y < 480; ++y)
        for (int x = 0; x < 480; ++x) {
            if (y < 20 && x < 20)
                CHECK(t11.at(y, x, 0) == img.at(480 + y, 480 + x, 0));
            else
                CHECK(t11.at(y, x, 0) == 0.0);
        }
}

TEST_CASE("every in-bounds pixel lands in exactly one tile") {
    // mark each pixel with a unique value, histogram across tiles
    Image img(37, 53, 1);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(i + 1);
    auto [grid, tiles] = tile_image(img, 16);
    std::vector<int> seen(img.v.size() + 1, 0);
    for (const Image& t : tiles)
        for (double v : t.v)
            if (v > 0) ++seen[static_cast<size_t>(v)];
    for (size_t i = 1; i <= img.v.size(); ++i) CHECK(seen[i] == 1);
}

TEST_CASE("untile inverts tile_image on random sizes") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        int h = 1 + static_cast<int>(rng.below(600));
        int w = 1 + static_cast<int>(rng.below(600));
        int t = 1 + static_cast<int>(rng.below(128));
        Image img = random_image(h, w, 1, derive_seed(7, "img", static_cast<uint64_t>(trial)));
        auto [grid, tiles] = tile_image(img, t);
        Image back = untile(grid, tiles);
        REQUIRE(back.h == h);
        REQUIRE(back.w == w);
        CHECK(back.v == img.v);
    }
}

TEST_CASE("mask tiling round trip and class-0 padding") {
    Mask m = random_mask(100, 130, 3, 5);
    auto [grid, tiles] = tile_mask(m, 64);
    Mask back = untile_mask(grid, tiles);
    CHECK(back.v == m.v);
    // padding region of the last tile is class 0
    const Mask& last = tiles.back();
    CHECK(last.at(63, 63) == 0);
}

TEST_CASE("untile rejects count mismatch") {
    Image img = random_image(100, 100, 1, 6);
    auto [grid, tiles] = tile_image(img, 64);
    tiles.pop_back();
    CHECK_THROWS_AS(untile(grid, tiles), std::invalid_argument);
}

TEST_CASE("tile_image rejects empty input and bad tile size") {
    CHECK_THROWS_AS(tile_image(Image(), 480), std::invalid_argument);
    CHECK_THROWS_AS(tile_image(random_image(4, 4, 1, 1), 0), std::invalid_argument);
}

TEST_CASE("bilinear identity resize is exact") {
    Image img = random_image(480, 480, 3, 8);
    Image out = interpolate_bilinear(img, 480, 480);
    CHECK(out.v == img.v);
}

TEST_CASE("bilinear of a constant image is that constant") {
    Image img(33, 47, 1, 0.7);
    Image out = interpolate_bilinear(img, 480, 480);
    for (double v : out.v) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("bilinear 2x2 checkerboard to 4x4 matches the closed form") {
    Image img(2, 2, 1);
    img.at(0, 0, 0) = 0;
    img.at(0, 1, 0) = 1;
    img.at(1, 0, 0) = 1;
    img.at(1, 1, 0) = 0;
    Image out = interpolate_bilinear(img, 4, 4);
    // corner-aligned grid samples f(y,x) = x + y - 2xy at {0,1/3,2/3,1}
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double y = i / 3.0, x = j / 3.0;
            CHECK(out.at(i, j, 0) == doctest::Approx(x + y - 2 * x * y).epsilon(1e-12));
        }
}

TEST_CASE("bilinear output stays within input range") {
    Image img = random_image(9, 13, 1, 12);
    double lo = 1e9, hi = -1e9;
    for (double v : img.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Image out = interpolate_bilinear(img, 31, 17);
    for (double v : out.v) {
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }
}

TEST_CASE("red-channel normalization leaves green and blue untouched") {
    Image img = random_image(20, 20, 3, 20);
    Image out = normalize_red_channel(img);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            CHECK(out.at(y, x, 1) == img.at(y, x, 1));
            CHECK(out.at(y, x, 2) == img.at(y, x, 2));
            CHECK(out.at(y, x, 0) >= 0.0);
            CHECK(out.at(y, x, 0) <= 1.0);
        }
}

TEST_CASE("constant red channel maps to 0.5") {
    Image img = random_image(8, 8, 3, 21);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img.at(y, x, 0) = 0.3;
    Image out = normalize_red_channel(img);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(out.at(y, x, 0) == 0.5);
}

TEST_CASE("symmetric red values are fixed points of standardize-then-minmax") {
    Image img(1, 3, 3);
    img.at(0, 0, 0) = 0.0;
    img.at(0, 1, 0) = 0.5;
    img.at(0, 2, 0) = 1.0;
    Image out = normalize_red_channel(img);
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.at(0, 1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.at(0, 2, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("augment is deterministic in seed and pairs image with mask") {
    ProcessedSample s;
    s.id = "x";
    s.image = random_image(16, 16, 1, 30);
    s.mask = random_mask(16, 16, 2, 31);
    s.steps.push_back({{"op", "resize"}, {"h", 16}, {"w", 16}});
    ProcessedSample a = augment(s, 77);
    ProcessedSample b = augment(s, 77);
    CHECK(a.image.v == b.image.v);
    CHECK(a.mask->v == b.mask->v);

    // horizontal flip moves (r,c) -> (r, W-1-c) on image and mask alike
    DihedralTransform flip;
    flip.hflip = true;
    Image fi = apply_dihedral(flip, s.image);
    Mask fm = apply_dihedral(flip, *s.mask);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            CHECK(fi.at(r, 15 - c, 0) == s.image.at(r, c, 0));
            CHECK(fm.at(r, 15 - c) == s.mask->at(r, c));
        }
}

TEST_CASE("dihedral transforms preserve the mask class histogram") {
    Mask m = random_mask(12, 12, 3, 40);
    std::vector<int> hist(3, 0);
    for (int v : m.v) ++hist[static_cast<size_t>(v)];
    for (int q = 0; q < 4; ++q)
        for (bool f : {false, true}) {
            DihedralTransform t{q, f};
            Mask out = apply_dihedral(t, m);
            std::vector<int> h2(3, 0);
            for (int v : out.v) ++h2[static_cast<size_t>(v)];
            CHECK(h2 == hist);
        }
}

TEST_CASE("IoU is invariant under a shared dihedral transform") {
    Mask pred = random_mask(10, 10, 2, 50);
    Mask gt = random_mask(10, 10, 2, 51);
    double base = metrics::iou(pred, gt, 1);
    DihedralTransform rot{1, false};
    CHECK(metrics::iou(apply_dihedral(rot, pred), apply_dihedral(rot, gt), 1) ==
          doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("split sizes follow rounded fractions with residual to test") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("s" + std::to_string(i));
    Splits s = split_dataset(ids, SplitSpec{0.7, 0.1, 0.2, 3});
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 20);

    ids.clear();
    for (int i = 0; i < 200; ++i) ids.push_back("s" + std::to_string(i));
    Splits s2 = split_dataset(ids, SplitSpec{0.57, 0.085, 0.345, 3});
    CHECK(s2.train.size() == 114);
    CHECK(s2.val.size() == 17);
    CHECK(s2.test.size() == 69);
}

TEST_CASE("splits are disjoint, exhaustive and seed-deterministic") {
    std::vector<std::string> ids;
    for (int i = 0; i < 57; ++i) ids.push_back("s" + std::to_string(i));
    SplitSpec spec{0.7, 0.1, 0.2, 11};
    Splits a = split_dataset(ids, spec);
    Splits b = split_dataset(ids, spec);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    std::set<std::string> all;
    for (const auto& part : {a.train, a.val, a.test})
        for (const auto& id : part) CHECK(all.insert(id).second);
    CHECK(all.size() == ids.size());
}

TEST_CASE("split errors on an empty requested part") {
    std::vector<std::string> ids{"a", "b", "c"};
    CHECK_THROWS_AS(split_dataset(ids, SplitSpec{0.9, 0.05, 0.05, 0}), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset({}, SplitSpec{}), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(ids, SplitSpec{0.5, 0.2, 0.2, 0}), std::invalid_argument);
}

TEST_CASE("subsample_labels counts") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));
    LabelFractionSplit half = subsample_labels(ids, 0.5, 1);
    CHECK(half.labeled.size() == 5);
    CHECK(half.unlabeled.size() == 5);
    LabelFractionSplit full = subsample_labels(ids, 1.0, 1);
    CHECK(full.labeled.size() == 10);
    CHECK(full.unlabeled.empty());

    ids.clear();
    for (int i = 0; i < 198; ++i) ids.push_back("s" + std::to_string(i));
    LabelFractionSplit tenth = subsample_labels(ids, 0.1, 1);
    CHECK(tenth.labeled.size() == 20);  // round(0.1 * 198)
    CHECK(tenth.labeled.size() + tenth.unlabeled.size() == 198);
    std::set<std::string> lab(tenth.labeled.begin(), tenth.labeled.end());
    for (const auto& id : tenth.unlabeled) CHECK(lab.count(id) == 0);
}

TEST_CASE("preprocess pipeline to 224 via tiling, with replayable steps") {
    RawSample raw;
    raw.id = "r";
    raw.image = random_image(500, 500, 3, 60);
    raw.mask = random_mask(500, 500, 2, 61);
    PreprocessOptions opts;
    opts.mode = PreprocessMode::tile;
    opts.intermediate_size = 480;
    opts.final_size = 224;
    auto samples = preprocess_sample(raw, opts);
    REQUIRE(samples.size() == 4);
    for (const auto& s : samples) {
        CHECK(s.image.h == 224);
        CHECK(s.image.w == 224);
        CHECK(s.mask->h == 224);
        CHECK(!s.steps.empty());
        Image replayed = replay_steps(raw, s.steps);
        CHECK(replayed.v == s.image.v);
    }
}

TEST_CASE("processed sample files round-trip") {
    namespace fs = std::filesystem;
    ProcessedSample s;
    s.id = "round_trip";
    s.image = random_image(32, 32, 3, 70);
    s.mask = random_mask(32, 32, 2, 71);
    s.labels = {1, 0, 1};
    s.steps.push_back({{"op", "resize"}, {"h", 32}, {"w", 32}});
    fs::path dir = fs::temp_directory_path() / "s4mi_test_io";
    fs::create_directories(dir);
    write_sample(dir / "s.s4ms", s);
    ProcessedSample back = read_sample(dir / "s.s4ms");
    CHECK(back.id == s.id);
    CHECK(back.image.v == s.image.v);
    CHECK(back.mask->v == s.mask->v);
    CHECK(back.labels == s.labels);
    CHECK(back.steps == s.steps);
    fs::remove_all(dir);
}

TEST_CASE("ppm/pgm round trip at byte precision") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "s4mi_test_pnm";
    fs::create_directories(dir);
    Image img = random_image(21, 17, 3, 80);
    write_ppm(dir / "x.ppm", img);
    Image back = read_ppm(dir / "x.ppm");
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (size_t i = 0; i < img.v.size(); ++i)
        CHECK(back.v[i] == doctest::Approx(img.v[i]).epsilon(0.5 / 255));
    Mask m = random_mask(13, 9, 4, 81);
    write_mask_pgm(dir / "m.pgm", m);
    CHECK(read_mask_pgm(dir / "m.pgm").v == m.v);
    fs::remove_all(dir);
}
