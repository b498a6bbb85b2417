#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "s4mi/core/rng.hpp"
#include "s4mi/metrics/metrics.hpp"
#include "s4mi/models/layers.hpp"
#include "s4mi/models/zoo.hpp"

using namespace s4mi;
using namespace s4mi::metrics;

namespace {

Mask from_bits(int bits) {
    Mask m(2, 2);
    for (int i = 0; i < 4; ++i) m.v[static_cast<size_t>(i)] = (bits >> i) & 1;
    return m;
}

}  // namespace

TEST_CASE("confusion counts on the worked 2x2 case") {
    Mask pred(2, 2), gt(2, 2);
    pred.v = {1, 1, 0, 0};
    gt.v = {1, 0, 1, 0};
    ConfusionCounts c = confusion_counts(pred, gt, 1);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
    CHECK(c.total() == 4);
    CHECK(iou(pred, gt) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(f1(c) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("confusion endpoints") {
    Mask m(3, 3, 1);
    ConfusionCounts c = confusion_counts(m, m, 1);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    Mask inv(3, 3, 0);
    ConfusionCounts c2 = confusion_counts(m, inv, 1);
    CHECK(c2.tp == 0);
    CHECK(c2.tn == 0);
    Mask other(3, 2, 0);
    CHECK_THROWS_AS(confusion_counts(m, other, 1), std::invalid_argument);
}

TEST_CASE("iou endpoints and the empty-empty convention") {
    Mask a(2, 2, 1), b(2, 2, 1);
    CHECK(iou(a, b) == 1.0);
    Mask c(2, 2, 0);
    CHECK(iou(a, c) == 0.0);
    Mask e1(2, 2, 0), e2(2, 2, 0);
    CHECK(iou(e1, e2) == 1.0);
}

TEST_CASE("iou and f1 agree with brute force on all 256 2x2 pairs") {
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) {
            Mask pred = from_bits(a), gt = from_bits(b);
            int inter = 0, uni = 0, np = 0, ng = 0;
            for (int i = 0; i < 4; ++i) {
                bool p = pred.v[static_cast<size_t>(i)] == 1;
                bool g = gt.v[static_cast<size_t>(i)] == 1;
                inter += p && g;
                uni += p || g;
                np += p;
                ng += g;
            }
            double iou_expect = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
            double f1_expect = np + ng == 0 ? 0.0 : 2.0 * inter / static_cast<double>(np + ng);
            CHECK(iou(pred, gt) == iou_expect);
            CHECK(f1(confusion_counts(pred, gt, 1)) == f1_expect);
        }
}

TEST_CASE("iou is symmetric and permutation invariant") {
    Rng rng(9);
    Mask a(4, 4), b(4, 4);
    for (int& v : a.v) v = static_cast<int>(rng.below(2));
    for (int& v : b.v) v = static_cast<int>(rng.below(2));
    CHECK(iou(a, b) == iou(b, a));
    // shared pixel permutation: reverse both
    Mask ra = a, rb = b;
    std::reverse(ra.v.begin(), ra.v.end());
    std::reverse(rb.v.begin(), rb.v.end());
    CHECK(iou(ra, rb) == iou(a, b));
}

TEST_CASE("f1 equals the harmonic mean of precision and recall") {
    ConfusionCounts c{7, 3, 2, 1};
    double p = precision(c), r = recall(c);
    CHECK(f1(c) == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-12));
    ConfusionCounts worked{2, 1, 1, 0};
    CHECK(f1(worked) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("recall reads only tp and fn") {
    ConfusionCounts c{3, 0, 1, 5};
    CHECK(recall(c) == doctest::Approx(0.75).epsilon(1e-12));
    ConfusionCounts c2{3, 99, 1, 0};
    CHECK(recall(c2) == recall(c));
    ConfusionCounts zero{0, 2, 0, 2};
    CHECK(recall(zero) == 0.0);
    ConfusionCounts perfect{4, 1, 0, 0};
    CHECK(recall(perfect) == 1.0);
}

TEST_CASE("f1 is 1 exactly when fp = fn = 0 with tp > 0") {
    ConfusionCounts perfect{5, 0, 0, 3};
    CHECK(f1(perfect) == 1.0);
    ConfusionCounts fp1{5, 1, 0, 3};
    CHECK(f1(fp1) < 1.0);
    ConfusionCounts none{0, 0, 0, 8};
    CHECK(f1(none) == 0.0);
}

TEST_CASE("aggregate_seeds matches the hand computation") {
    SeedAggregate agg = aggregate_seeds({0.5, 0.7});
    CHECK(agg.mean == doctest::Approx(0.6).epsilon(1e-12));
    // s = 0.1414..., 1.96 * s / sqrt(2) = 0.196
    CHECK(agg.ci_halfwidth == doctest::Approx(0.196).epsilon(1e-10));
    CHECK(agg.confidence == 0.95);

    SeedAggregate same = aggregate_seeds({0.4, 0.4, 0.4});
    CHECK(same.ci_halfwidth == 0.0);

    SeedAggregate perm = aggregate_seeds({0.7, 0.5});
    CHECK(perm.mean == agg.mean);
    CHECK_THROWS_AS(aggregate_seeds({0.5}), std::invalid_argument);
}

TEST_CASE("aggregate halfwidth scales as one over sqrt n") {
    // duplicated identical-variance samples: s is unchanged, halfwidth
    // shrinks by sqrt(2)
    std::vector<double> base{0.2, 0.4, 0.2, 0.4};
    std::vector<double> doubled{0.2, 0.4, 0.2, 0.4, 0.2, 0.4, 0.2, 0.4};
    SeedAggregate a = aggregate_seeds(base);
    SeedAggregate b = aggregate_seeds(doubled);
    double s_a = a.ci_halfwidth * std::sqrt(4.0) / 1.96;
    double s_b = b.ci_halfwidth * std::sqrt(8.0) / 1.96;
    CHECK(s_b == doctest::Approx(s_a).epsilon(0.07));  // n-1 denominator drift only
    CHECK(b.ci_halfwidth < a.ci_halfwidth);
}

TEST_CASE("hungarian matching maximizes intersection, checked by brute force") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        int k = 2 + static_cast<int>(rng.below(3));  // 2..4
        std::vector<std::vector<int64_t>> inter(static_cast<size_t>(k),
                                                std::vector<int64_t>(static_cast<size_t>(k)));
        for (auto& row : inter)
            for (auto& v : row) v = static_cast<int64_t>(rng.below(1000));
        std::vector<int> match = hungarian_match(inter);
        int64_t got = 0;
        for (int i = 0; i < k; ++i) got += inter[static_cast<size_t>(i)]
                                                 [static_cast<size_t>(match[static_cast<size_t>(i)])];
        // brute force over all k! permutations
        std::vector<int> perm(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) perm[static_cast<size_t>(i)] = i;
        int64_t best = 0;
        do {
            int64_t s = 0;
            for (int i = 0; i < k; ++i)
                s += inter[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])];
            best = std::max(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(got == best);
    }
}

TEST_CASE("matched mean iou relabels clusters before scoring") {
    // clusters are inverted relative to classes; matching must fix that
    Mask gt(4, 4, 0);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) gt.at(y, x) = 1;
    Mask pred(4, 4, 1);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) pred.at(y, x) = 0;
    double miou = matched_mean_iou({pred}, {gt}, 2, 2);
    CHECK(miou == doctest::Approx(1.0).epsilon(1e-12));
}

namespace {

// classifier fixtures for the saliency contract
class LinearProbe : public models::Model {
public:
    explicit LinearProbe(Tensor w) : w_(std::move(w)) {}
    Tensor forward(const Tensor& x) override {
        x_shape_ = x.shape;
        Tensor out({x.dim(0), 2});
        for (int b = 0; b < x.dim(0); ++b) {
            double s = 0;
            for (size_t i = 0; i < w_.v.size(); ++i)
                s += w_.v[i] * x.v[static_cast<size_t>(b) * w_.v.size() + i];
            out.at(b, 0) = s;
            out.at(b, 1) = -s;
        }
        return out;
    }
    Tensor backward(const Tensor& dout) override {
        Tensor dx(x_shape_);
        for (int b = 0; b < dout.dim(0); ++b)
            for (size_t i = 0; i < w_.v.size(); ++i)
                dx.v[static_cast<size_t>(b) * w_.v.size() + i] =
                    w_.v[i] * (dout.at(b, 0) - dout.at(b, 1));
        return dx;
    }
    std::vector<models::Parameter*> parameters() override { return {}; }

private:
    Tensor w_;
    std::vector<int> x_shape_;
};

class ConstantProbe : public models::Model {
public:
    Tensor forward(const Tensor& x) override {
        x_shape_ = x.shape;
        return Tensor({x.dim(0), 2}, 1.0);
    }
    Tensor backward(const Tensor&) override { return Tensor(x_shape_); }
    std::vector<models::Parameter*> parameters() override { return {}; }

private:
    std::vector<int> x_shape_;
};

}  // namespace

TEST_CASE("saliency of a linear score is |w| up to normalization") {
    Rng rng(41);
    Image img(5, 5, 1);
    for (double& v : img.v) v = rng.uniform();
    Tensor w({1, 1, 5, 5});
    for (double& v : w.v) v = rng.normal();
    LinearProbe probe(w);
    SaliencyMap sal = saliency_map(probe, img, 0);
    double wmax = 0;
    for (double v : w.v) wmax = std::max(wmax, std::abs(v));
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            CHECK(sal.values.at(y, x, 0) ==
                  doctest::Approx(std::abs(w.at(0, 0, y, x)) / wmax).epsilon(1e-12));
}

TEST_CASE("saliency of a constant classifier is the zero map") {
    Image img(4, 4, 3, 0.5);
    ConstantProbe probe;
    SaliencyMap sal = saliency_map(probe, img, 1);
    for (double v : sal.values.v) CHECK(v == 0.0);
}

TEST_CASE("saliency gradient matches finite differences on a micro classifier") {
    models::ModelSpec spec;
    spec.family = models::Family::conv_classifier;
    spec.width = 4;
    spec.depth = 1;
    spec.num_classes = 2;
    spec.in_channels = 1;
    spec.input_size = 8;
    auto model = models::build_model(spec, 3);
    model->set_mode(models::Mode::eval);
    Rng rng(5);
    Image img(8, 8, 1);
    for (double& v : img.v) v = rng.uniform();

    Tensor x({1, 1, 8, 8});
    image_to_chw(img, x, 0);
    model->zero_grad();
    Tensor logits = model->forward(x);
    Tensor dlogits(logits.shape);
    dlogits.at(0, 0) = 1.0;
    Tensor dx = model->backward(dlogits);
    model->zero_grad();
    auto score = [&](const Tensor& input) {
        return model->forward(input).at(0, 0);
    };
    const double h = 1e-4;
    for (int probe = 0; probe < 16; ++probe) {
        size_t i = static_cast<size_t>(rng.below(x.v.size()));
        Tensor xp = x, xm = x;
        xp.v[i] += h;
        xm.v[i] -= h;
        double fd = (score(xp) - score(xm)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(dx.v[i]), 1e-8});
        CHECK(std::abs(fd - dx.v[i]) / denom < 1e-3);
    }
}

TEST_CASE("macro classification scores") {
    std::vector<int> gt{0, 0, 1, 1, 2, 2};
    std::vector<int> pred{0, 1, 1, 1, 2, 0};
    double f1m = macro_f1_multiclass(pred, gt, 3);
    CHECK(f1m > 0.0);
    CHECK(f1m < 1.0);
    CHECK(macro_f1_multiclass(gt, gt, 3) == 1.0);
    CHECK(macro_recall_multiclass(gt, gt, 3) == 1.0);
    std::vector<std::vector<int>> ml_gt{{1, 0}, {0, 1}, {1, 1}};
    CHECK(macro_f1_multilabel(ml_gt, ml_gt) == 1.0);
}
