#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s4mi/core/rng.hpp"
#include "s4mi/loss/losses.hpp"

using namespace s4mi;
using namespace s4mi::loss;

namespace {

Tensor random_logits(int b, int c, int h, int w, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t({b, c, h, w});
    for (double& v : t.v) v = scale * rng.normal();
    return t;
}

IntTensor random_target(int b, int c, int h, int w, uint64_t seed) {
    Rng rng(seed);
    IntTensor t({b, h, w});
    for (int& v : t.v) v = static_cast<int>(rng.below(static_cast<uint64_t>(c)));
    return t;
}

Tensor one_hot_probs(const IntTensor& target, int c) {
    Tensor p({target.dim(0), c, target.dim(1), target.dim(2)});
    for (int b = 0; b < target.dim(0); ++b)
        for (int y = 0; y < target.dim(1); ++y)
            for (int x = 0; x < target.dim(2); ++x) p.at(b, target.at(b, y, x), y, x) = 1.0;
    return p;
}

// independent oracle: per-class soft dice by direct pixel enumeration
double dice_oracle(const Tensor& probs, const IntTensor& target, double eps) {
    const int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    double total = 0.0;
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            double inter = 0, psum = 0, gsum = 0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double p = probs.at(bi, ci, y, x);
                    double g = target.at(bi, y, x) == ci ? 1.0 : 0.0;
                    inter += p * g;
                    psum += p;
                    gsum += g;
                }
            total += 1.0 - (2.0 * inter + eps) / (psum + gsum + eps);
        }
    return total / (b * c);
}

// independent oracle: weighted cross entropy by per-pixel summation
double wce_oracle(const Tensor& logits, const IntTensor& target,
                  const std::vector<double>& weights) {
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    double num = 0, den = 0;
    for (int bi = 0; bi < b; ++bi)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double mx = -1e300;
                for (int ci = 0; ci < c; ++ci) mx = std::max(mx, logits.at(bi, ci, y, x));
                double denom = 0;
                for (int ci = 0; ci < c; ++ci) denom += std::exp(logits.at(bi, ci, y, x) - mx);
                int t = target.at(bi, y, x);
                double logp = logits.at(bi, t, y, x) - mx - std::log(denom);
                num += weights[static_cast<size_t>(t)] * -logp;
                den += weights[static_cast<size_t>(t)];
            }
    return num / den;
}

// max relative error between an analytic gradient and central differences
template <class F>
double max_rel_fd_error(Tensor& x, const Tensor& grad, F value, double step) {
    double worst = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        double keep = x.v[i];
        x.v[i] = keep + step;
        double up = value();
        x.v[i] = keep - step;
        double down = value();
        x.v[i] = keep;
        double fd = (up - down) / (2 * step);
        double denom = std::max({std::abs(fd), std::abs(grad.v[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - grad.v[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("dice loss is zero on one-hot agreement and near one on disjoint") {
    IntTensor target = random_target(2, 2, 4, 4, 1);
    Tensor perfect = one_hot_probs(target, 2);
    CHECK(dice_loss(perfect, target).value < 1e-4);

    IntTensor flipped = target;
    for (int& v : flipped.v) v = 1 - v;
    Tensor disjoint = one_hot_probs(flipped, 2);
    CHECK(dice_loss(disjoint, target).value > 1.0 - 1e-3);
}

TEST_CASE("dice loss 1x2x1x2 worked case") {
    // probs for class1 = (1,0), target = (1,1)
    Tensor probs({1, 2, 1, 2});
    probs.at(0, 1, 0, 0) = 1.0;  // pixel 0: class1
    probs.at(0, 0, 0, 1) = 1.0;  // pixel 1: class0
    IntTensor target({1, 1, 2});
    target.v = {1, 1};
    const double eps = 1e-5;
    // class-1 term by hand: 1 - 2*1/(1+2) = 1/3
    double class1_term = 1.0 - (2.0 * 1.0 + eps) / (1.0 + 2.0 + eps);
    CHECK(class1_term == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
    // the class-0 term is ~1 (empty overlap), so the class average sits at
    // ~2/3; the oracle fixes the value
    double expected = dice_oracle(probs, target, eps);
    CHECK(dice_loss(probs, target, eps).value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx((class1_term + 1.0) / 2.0).epsilon(1e-4));
}

TEST_CASE("dice loss equals the enumeration oracle on random simplex inputs") {
    for (uint64_t s = 0; s < 5; ++s) {
        Tensor logits = random_logits(2, 3, 4, 4, 100 + s);
        IntTensor target = random_target(2, 3, 4, 4, 200 + s);
        Tensor probs = softmax_channels(logits);
        CHECK(dice_loss(probs, target).value ==
              doctest::Approx(dice_oracle(probs, target, 1e-5)).epsilon(1e-12));
    }
}

TEST_CASE("dice loss validates the simplex precondition and shapes") {
    Tensor bad({1, 2, 1, 1});
    bad.at(0, 0, 0, 0) = 0.9;
    bad.at(0, 1, 0, 0) = 0.4;
    IntTensor t({1, 1, 1});
    CHECK_THROWS_AS(dice_loss(bad, t), std::invalid_argument);
    IntTensor wrong({1, 2, 2});
    Tensor probs({1, 2, 1, 1});
    probs.at(0, 0, 0, 0) = 1.0;
    CHECK_THROWS_AS(dice_loss(probs, wrong), std::invalid_argument);
}

TEST_CASE("dice-through-softmax gradient matches central differences") {
    Tensor logits = random_logits(1, 2, 4, 4, 7);
    IntTensor target = random_target(1, 2, 4, 4, 8);
    Tensor probs = softmax_channels(logits);
    Tensor grad = softmax_channels_backward(probs, dice_loss_grad(probs, target));
    double err = max_rel_fd_error(
        logits, grad,
        [&] { return dice_loss(softmax_channels(logits), target).value; }, 1e-4);
    CHECK(err < 1e-3);
}

TEST_CASE("weighted cross entropy: uniform logits give ln 2") {
    Tensor logits({1, 2, 4, 4});  // all zeros
    IntTensor target = random_target(1, 2, 4, 4, 9);
    LossValue lv = weighted_cross_entropy(logits, target, {1.0, 1.0});
    CHECK(lv.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy: confident correct logits vanish") {
    IntTensor target = random_target(1, 2, 4, 4, 10);
    Tensor logits({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) logits.at(0, target.at(0, y, x), y, x) = 20.0;
    CHECK(weighted_cross_entropy(logits, target, {1.0, 1.0}).value < 1e-6);
}

TEST_CASE("weighted cross entropy is scale-invariant in the weights") {
    Tensor logits = random_logits(2, 3, 4, 4, 11);
    IntTensor target = random_target(2, 3, 4, 4, 12);
    std::vector<double> w{0.3, 1.0, 2.5};
    std::vector<double> w2{0.6, 2.0, 5.0};
    double a = weighted_cross_entropy(logits, target, w).value;
    double b = weighted_cross_entropy(logits, target, w2).value;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a == doctest::Approx(wce_oracle(logits, target, w)).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy rejects non-finite logits") {
    Tensor logits({1, 2, 1, 1});
    logits.v[0] = std::numeric_limits<double>::infinity();
    IntTensor target({1, 1, 1});
    CHECK_THROWS_AS(weighted_cross_entropy(logits, target, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("weighted cross entropy gradient matches central differences") {
    Tensor logits = random_logits(1, 2, 4, 4, 13);
    IntTensor target = random_target(1, 2, 4, 4, 14);
    std::vector<double> w{0.4, 1.6};
    Tensor grad = weighted_cross_entropy_grad(logits, target, w);
    double err = max_rel_fd_error(
        logits, grad, [&] { return weighted_cross_entropy(logits, target, w).value; }, 1e-4);
    CHECK(err < 1e-3);
}

TEST_CASE("supervised loss is the exact midpoint of its components") {
    for (uint64_t s = 0; s < 10; ++s) {
        Tensor logits = random_logits(1, 2, 4, 4, 300 + s);
        IntTensor target = random_target(1, 2, 4, 4, 400 + s);
        std::vector<double> w{0.8, 1.2};
        LossValue lv = supervised_loss(logits, target, w);
        double dice = dice_loss(softmax_channels(logits), target).value;
        double ce = weighted_cross_entropy(logits, target, w).value;
        CHECK(lv.value == doctest::Approx(0.5 * (dice + ce)).epsilon(1e-12));
        CHECK(lv.components.at("dice") == doctest::Approx(dice).epsilon(1e-12));
        CHECK(lv.components.at("cross_entropy") == doctest::Approx(ce).epsilon(1e-12));
        CHECK(std::abs(lv.value - 0.5 * (lv.components.at("dice") +
                                         lv.components.at("cross_entropy"))) < 1e-9);
    }
}

TEST_CASE("supervised loss vanishes on a perfect prediction") {
    IntTensor target = random_target(1, 2, 4, 4, 15);
    Tensor logits({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            logits.at(0, target.at(0, y, x), y, x) = 25.0;
            logits.at(0, 1 - target.at(0, y, x), y, x) = -25.0;
        }
    CHECK(supervised_loss(logits, target, {1.0, 1.0}).value < 1e-4);
}

TEST_CASE("pseudo labels take the argmax with ties toward the lowest class") {
    Tensor logits({1, 2, 1, 2});
    logits.at(0, 0, 0, 0) = 0.2;
    logits.at(0, 1, 0, 0) = 0.8;
    logits.at(0, 0, 0, 1) = 0.5;
    logits.at(0, 1, 0, 1) = 0.5;
    IntTensor pl = pseudo_label(logits);
    CHECK(pl.at(0, 0, 0) == 1);
    CHECK(pl.at(0, 0, 1) == 0);  // tie rule
}

TEST_CASE("pseudo labels are invariant to shifts and positive scaling") {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits = random_logits(1, 3, 4, 4, 500 + static_cast<uint64_t>(trial));
        IntTensor base = pseudo_label(logits);
        Tensor shifted = logits;
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double delta = rng.normal();
                for (int c = 0; c < 3; ++c) shifted.at(0, c, y, x) += delta;
            }
        CHECK(pseudo_label(shifted).v == base.v);
        Tensor scaled = logits;
        double s = 0.5 + rng.uniform();
        for (double& v : scaled.v) v *= s;
        CHECK(pseudo_label(scaled).v == base.v);
    }
}

TEST_CASE("cross-teaching unsupervised loss delegates to dice over softmax") {
    Tensor logits = random_logits(1, 2, 4, 4, 17);
    IntTensor pseudo = random_target(1, 2, 4, 4, 18);
    LossValue lv = cross_teach_unsup_loss(logits, pseudo);
    CHECK(lv.value ==
          doctest::Approx(dice_loss(softmax_channels(logits), pseudo).value).epsilon(1e-12));
}

TEST_CASE("cross-teaching loss endpoints") {
    IntTensor pseudo = random_target(1, 2, 4, 4, 19);
    Tensor agree({1, 2, 4, 4});
    Tensor disagree({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            int t = pseudo.at(0, y, x);
            agree.at(0, t, y, x) = 20.0;
            agree.at(0, 1 - t, y, x) = -20.0;
            disagree.at(0, 1 - t, y, x) = 20.0;
            disagree.at(0, t, y, x) = -20.0;
        }
    CHECK(cross_teach_unsup_loss(agree, pseudo).value < 0.01);
    CHECK(cross_teach_unsup_loss(disagree, pseudo).value > 0.99);
}

TEST_CASE("total semi loss sums and keeps components") {
    LossValue sup;
    sup.value = 0.5;
    sup.components["dice"] = 0.4;
    sup.components["cross_entropy"] = 0.6;
    LossValue unsup;
    unsup.value = 0.3;
    LossValue total = total_semi_loss(sup, unsup);
    CHECK(total.value == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(total.components.at("sup") == 0.5);
    CHECK(total.components.at("unsup") == 0.3);
    CHECK(total.components.at("sup.dice") == 0.4);

    LossValue zero;
    CHECK(total_semi_loss(sup, zero).value == sup.value);

    Rng rng(20);
    for (int i = 0; i < 100; ++i) {
        LossValue a, b;
        a.value = rng.uniform();
        b.value = rng.uniform();
        CHECK(total_semi_loss(a, b).value >= std::max(a.value, b.value));
    }
}

TEST_CASE("loss identity: value equals documented combination within 1e-9") {
    for (uint64_t s = 0; s < 50; ++s) {
        Tensor logits = random_logits(1, 2, 4, 4, 600 + s);
        IntTensor target = random_target(1, 2, 4, 4, 700 + s);
        LossValue sup = supervised_loss(logits, target, {1.0, 1.0});
        CHECK(std::abs(sup.value - 0.5 * (sup.components.at("dice") +
                                          sup.components.at("cross_entropy"))) <= 1e-9);
        LossValue unsup = cross_teach_unsup_loss(logits, target);
        LossValue total = total_semi_loss(sup, unsup);
        CHECK(std::abs(total.value - (sup.value + unsup.value)) <= 1e-9);
    }
}

TEST_CASE("classification losses: softmax CE and multilabel BCE gradients") {
    Rng rng(21);
    Tensor logits({4, 3});
    for (double& v : logits.v) v = rng.normal();
    std::vector<int> labels{0, 2, 1, 2};
    Tensor grad;
    softmax_ce_with_grad(logits, labels, grad);
    double err = max_rel_fd_error(
        logits, grad, [&] { return softmax_ce(logits, labels).value; }, 1e-4);
    CHECK(err < 1e-3);

    std::vector<std::vector<int>> targets{{1, 0, 1}, {0, 0, 0}, {1, 1, 1}, {0, 1, 0}};
    Tensor grad2;
    multilabel_bce_with_grad(logits, targets, grad2);
    double err2 = max_rel_fd_error(
        logits, grad2, [&] { return multilabel_bce(logits, targets).value; }, 1e-4);
    CHECK(err2 < 1e-3);
}

TEST_CASE("hard dice agrees with exhaustive 2x2 pixel enumeration") {
    // all 16 x 16 binary mask pairs as one-hot probabilities
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) {
            IntTensor pred({1, 2, 2}), gt({1, 2, 2});
            for (int i = 0; i < 4; ++i) {
                pred.v[static_cast<size_t>(i)] = (a >> i) & 1;
                gt.v[static_cast<size_t>(i)] = (b >> i) & 1;
            }
            const double eps = 1e-5;
            double value = dice_loss(one_hot_probs(pred, 2), gt, eps).value;
            double expect = 0.0;
            for (int cls = 0; cls < 2; ++cls) {
                int inter = 0, np = 0, ng = 0;
                for (int i = 0; i < 4; ++i) {
                    bool p = pred.v[static_cast<size_t>(i)] == cls;
                    bool g = gt.v[static_cast<size_t>(i)] == cls;
                    inter += p && g;
                    np += p;
                    ng += g;
                }
                expect += 1.0 - (2.0 * inter + eps) / (np + ng + eps);
            }
            expect /= 2.0;
            CHECK(value == doctest::Approx(expect).epsilon(1e-12));
        }
}
