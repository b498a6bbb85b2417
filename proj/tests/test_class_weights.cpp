#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "s4mi/weights/class_weights.hpp"

using namespace s4mi;
using namespace s4mi::weights;

TEST_CASE("pixel frequencies count exactly") {
    Mask m(2, 2, 0);
    m.at(1, 1) = 1;
    ClassFrequencies f = pixel_class_frequencies({m}, 2);
    CHECK(f.freqs[0] == doctest::Approx(0.75));
    CHECK(f.freqs[1] == doctest::Approx(0.25));

    Mask all_bg(4, 4, 0);
    ClassFrequencies f2 = pixel_class_frequencies({all_bg}, 2);
    CHECK(f2.freqs[0] == 1.0);
    CHECK(f2.freqs[1] == 0.0);

    double total = 0.0;
    for (double v : f.freqs) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pixel frequencies reject bad input") {
    CHECK_THROWS_AS(pixel_class_frequencies({}, 2), std::invalid_argument);
    Mask bad(2, 2, 5);
    CHECK_THROWS_AS(pixel_class_frequencies({bad}, 2), std::invalid_argument);
}

TEST_CASE("pixel-ratio weights: symmetric frequencies give unit weights") {
    ClassWeights w = pixel_ratio_weights({{0.5, 0.5}});
    CHECK(w.weights[0] == doctest::Approx(1.0));
    CHECK(w.weights[1] == doctest::Approx(1.0));
}

TEST_CASE("pixel-ratio weights on the stated imbalance renormalize to sum 2") {
    ClassWeights w = pixel_ratio_weights({{0.8521, 0.1479}});
    // complements (0.1479, 0.8521) scaled so the sum is the class count
    CHECK(w.weights[0] == doctest::Approx(0.2958).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(1.7042).epsilon(1e-12));
    CHECK(w.weights[0] + w.weights[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("pixel-ratio weights survive a degenerate all-one-class input") {
    ClassWeights w = pixel_ratio_weights({{1.0, 0.0}});
    for (double v : w.weights) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
    CHECK(w.weights[1] > w.weights[0]);  // absent class still out-weighted
}

TEST_CASE("pixel-ratio direct orientation reverses the assignment") {
    ClassWeights w = pixel_ratio_weights({{0.8521, 0.1479}}, PixelRatioOrientation::direct);
    CHECK(w.weights[0] > w.weights[1]);
    CHECK(w.weights[0] == doctest::Approx(2.0 * 0.8521).epsilon(1e-12));
}

TEST_CASE("median-frequency weights: uniform frequencies give all ones") {
    ClassWeights w = median_frequency_weights({{0.25, 0.25, 0.25, 0.25}});
    for (double v : w.weights) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("median-frequency weights on the paper imbalance") {
    ClassWeights w = median_frequency_weights({{0.8521, 0.1479}});
    CHECK(w.weights[0] == doctest::Approx(0.5868).epsilon(1e-4));
    CHECK(w.weights[1] == doctest::Approx(3.3807).epsilon(1e-4));
}

TEST_CASE("median-frequency with odd class count uses the middle entry") {
    ClassWeights w = median_frequency_weights({{0.5, 0.25, 0.25}});
    CHECK(w.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.weights[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("median-frequency rejects zero frequencies") {
    CHECK_THROWS_AS(median_frequency_weights({{1.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("both schemes are permutation-equivariant") {
    std::vector<double> freqs{0.6, 0.3, 0.1};
    std::vector<size_t> perm{2, 0, 1};
    std::vector<double> permuted(3);
    for (size_t i = 0; i < 3; ++i) permuted[i] = freqs[perm[i]];
    for (int scheme = 0; scheme < 2; ++scheme) {
        auto apply = [&](const std::vector<double>& f) {
            return scheme == 0 ? pixel_ratio_weights({f}) : median_frequency_weights({f});
        };
        ClassWeights base = apply(freqs);
        ClassWeights after = apply(permuted);
        for (size_t i = 0; i < 3; ++i)
            CHECK(after.weights[i] == doctest::Approx(base.weights[perm[i]]).epsilon(1e-12));
    }
}

TEST_CASE("the rarest class gets the largest weight under both schemes") {
    std::vector<double> freqs{0.7, 0.2, 0.1};
    ClassWeights pr = pixel_ratio_weights({freqs});
    ClassWeights mf = median_frequency_weights({freqs});
    CHECK(*std::max_element(pr.weights.begin(), pr.weights.end()) == pr.weights[2]);
    CHECK(*std::max_element(mf.weights.begin(), mf.weights.end()) == mf.weights[2]);
}

TEST_CASE("a class sitting at the median frequency weighs exactly 1") {
    ClassWeights w = median_frequency_weights({{0.6, 0.3, 0.1}});
    CHECK(w.weights[1] == doctest::Approx(1.0).epsilon(1e-12));  // 0.3 is the median
}
