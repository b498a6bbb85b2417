#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "s4mi/core/rng.hpp"
#include "s4mi/loss/losses.hpp"
#include "s4mi/models/zoo.hpp"

using namespace s4mi;
using namespace s4mi::models;

namespace {

Tensor random_batch(int b, int c, int hw, uint64_t seed) {
    Rng rng(seed);
    Tensor x({b, c, hw, hw});
    for (double& v : x.v) v = rng.uniform();
    return x;
}

ModelSpec micro_seg(Family family) {
    ModelSpec s;
    s.family = family;
    s.width = 8;
    s.depth = 2;
    s.num_classes = 2;
    s.in_channels = 3;
    s.patch = 4;
    s.window = 4;
    s.input_size = 32;
    return s;
}

}  // namespace

TEST_CASE("same spec and seed build bitwise-identical parameters") {
    for (Family f : {Family::conv_unet, Family::windowed_attention, Family::conv_classifier,
                     Family::attention_classifier}) {
        ModelSpec spec = micro_seg(f);
        auto a = build_model(spec, 42);
        auto b = build_model(spec, 42);
        auto pa = a->parameters();
        auto pb = b->parameters();
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i]->name == pb[i]->name);
            CHECK(pa[i]->value.v == pb[i]->value.v);
        }
        auto c = build_model(spec, 43);
        auto pc = c->parameters();
        bool any_diff = false;
        for (size_t i = 0; i < pa.size() && !any_diff; ++i)
            any_diff = pa[i]->value.v != pc[i]->value.v;
        CHECK(any_diff);
    }
}

TEST_CASE("segmenters produce dense logits at input resolution") {
    for (Family f : {Family::conv_unet, Family::windowed_attention}) {
        auto model = build_model(micro_seg(f), 1);
        Tensor x = random_batch(1, 3, 32, 5);
        Tensor y = model->forward(x);
        CHECK(y.shape == std::vector<int>{1, 2, 32, 32});
    }
}

TEST_CASE("classifiers map to per-image logits") {
    for (Family f : {Family::conv_classifier, Family::attention_classifier}) {
        ModelSpec spec = micro_seg(f);
        spec.num_classes = 5;
        auto model = build_model(spec, 1);
        Tensor x = random_batch(3, 3, 32, 6);
        Tensor y = model->forward(x);
        CHECK(y.shape == std::vector<int>{3, 5});
    }
}

TEST_CASE("forward is deterministic in eval mode") {
    auto model = build_model(micro_seg(Family::windowed_attention), 9);
    model->set_mode(Mode::eval);
    Tensor x = random_batch(2, 3, 32, 7);
    Tensor y1 = model->forward(x);
    Tensor y2 = model->forward(x);
    CHECK(y1.v == y2.v);
}

TEST_CASE("parameter names are unique") {
    for (Family f : {Family::conv_unet, Family::windowed_attention, Family::conv_classifier,
                     Family::attention_classifier}) {
        auto model = build_model(micro_seg(f), 2);
        std::set<std::string> names;
        for (Parameter* p : model->parameters()) CHECK(names.insert(p->name).second);
    }
}

TEST_CASE("parameter_count sums scalar parameters and ignores mode") {
    ModelSpec spec = micro_seg(Family::conv_unet);
    auto model = build_model(spec, 3);
    int64_t n = parameter_count(*model);
    CHECK(n > 0);
    model->set_mode(Mode::eval);
    CHECK(parameter_count(*model) == n);
    // a K x C 1x1 conv with bias counts K*C + K
    Rng rng(1);
    Conv2d conv("probe", 7, 3, 1, 1, 0, rng);
    std::vector<Parameter*> ps;
    conv.collect(ps);
    int64_t total = 0;
    for (Parameter* p : ps) total += p->value.numel();
    CHECK(total == 3 * 7 + 3);
}

TEST_CASE("doubling conv width roughly quadruples the parameter count") {
    ModelSpec narrow = micro_seg(Family::conv_unet);
    ModelSpec wide = narrow;
    wide.width = narrow.width * 2;
    int64_t n1 = parameter_count(*build_model(narrow, 4));
    int64_t n2 = parameter_count(*build_model(wide, 4));
    double ratio = static_cast<double>(n2) / static_cast<double>(n1);
    CHECK(ratio > 3.6);
    CHECK(ratio < 4.4);
}

TEST_CASE("comparable_pair lands both families within 20% of the budget") {
    ModelSpec base = micro_seg(Family::conv_unet);
    ModelSpec conv_spec, attn_spec;
    auto [conv_model, attn_model] = comparable_pair(50000, base, 11, &conv_spec, &attn_spec);
    int64_t nc = parameter_count(*conv_model);
    int64_t na = parameter_count(*attn_model);
    CHECK(std::abs(nc - 50000) / 50000.0 < 0.2);
    CHECK(std::abs(na - 50000) / 50000.0 < 0.2);
    CHECK(conv_spec.family == Family::conv_unet);
    CHECK(attn_spec.family == Family::windowed_attention);

    // determinism
    auto [c2, a2] = comparable_pair(50000, base, 11);
    CHECK(parameter_count(*c2) == nc);
    CHECK(parameter_count(*a2) == na);

    CHECK_THROWS_AS(comparable_pair(10, base, 1), std::invalid_argument);
}

TEST_CASE("spec validation rejects incompatible geometry") {
    ModelSpec bad = micro_seg(Family::windowed_attention);
    bad.input_size = 30;  // not divisible by patch 4
    CHECK_THROWS_AS(build_model(bad, 1), std::invalid_argument);
    ModelSpec bad2 = micro_seg(Family::windowed_attention);
    bad2.window = 3;  // 32/4 = 8 tokens, not divisible by 3
    CHECK_THROWS_AS(build_model(bad2, 1), std::invalid_argument);
    ModelSpec bad3 = micro_seg(Family::conv_unet);
    bad3.input_size = 34;  // not divisible by 2^2
    CHECK_THROWS_AS(build_model(bad3, 1), std::invalid_argument);
}

TEST_CASE("every parameter group receives gradient from the supervised loss") {
    Rng rng(12);
    for (Family f : {Family::conv_unet, Family::windowed_attention}) {
        auto model = build_model(micro_seg(f), 13);
        Tensor x = random_batch(2, 3, 32, 14);
        IntTensor target({2, 32, 32});
        for (int& v : target.v) v = static_cast<int>(rng.below(2));
        model->zero_grad();
        Tensor logits = model->forward(x);
        Tensor dlogits;
        loss::supervised_loss_with_grad(logits, target, {1.0, 1.0}, dlogits);
        model->backward(dlogits);
        for (Parameter* p : model->parameters()) {
            double norm = 0;
            for (double g : p->grad.v) norm += g * g;
            CHECK_MESSAGE(norm > 0.0, p->name);
        }
    }
}

TEST_CASE("classifier backward reaches the input (saliency path)") {
    auto model = build_model(micro_seg(Family::conv_classifier), 15);
    Tensor x = random_batch(1, 3, 32, 16);
    Tensor logits = model->forward(x);
    Tensor dlogits(logits.shape);
    dlogits.at(0, 0) = 1.0;
    Tensor dx = model->backward(dlogits);
    CHECK(dx.shape == x.shape);
    double norm = 0;
    for (double g : dx.v) norm += g * g;
    CHECK(norm > 0.0);
}

TEST_CASE("checkpoints round-trip parameters and spec") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "s4mi_test_ckpt";
    fs::create_directories(dir);
    ModelSpec spec = micro_seg(Family::conv_unet);
    auto model = build_model(spec, 21);
    save_checkpoint(dir / "m.s4mc", *model, spec);

    ModelSpec back = peek_checkpoint_spec(dir / "m.s4mc");
    CHECK(back.family == spec.family);
    CHECK(back.width == spec.width);

    auto other = build_model(spec, 77);  // different init
    load_checkpoint(dir / "m.s4mc", *other);
    auto pa = model->parameters();
    auto pb = other->parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.v == pb[i]->value.v);

    // loaded model reproduces the source model's outputs bitwise
    Tensor x = random_batch(1, 3, 32, 22);
    model->set_mode(Mode::eval);
    other->set_mode(Mode::eval);
    CHECK(model->forward(x).v == other->forward(x).v);

    ModelSpec wider = spec;
    wider.width = 16;
    auto mismatched = build_model(wider, 1);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.s4mc", *mismatched), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("backbone checkpoints feed classifiers without the head") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "s4mi_test_bb";
    fs::create_directories(dir);
    ModelSpec spec = micro_seg(Family::conv_classifier);
    auto bb = build_backbone(spec, 31);
    save_checkpoint(dir / "bb.s4mc", *bb, spec);

    Classifier clf(build_backbone(spec, 99), spec.num_classes, 3);
    load_checkpoint(dir / "bb.s4mc", clf.backbone());
    auto pa = bb->parameters();
    auto pb = clf.backbone().parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.v == pb[i]->value.v);
    fs::remove_all(dir);
}

TEST_CASE("model parameter gradients match finite differences end to end") {
    // composite check through conv, pooling, attention, norm and heads
    Rng rng(40);
    for (Family f : {Family::conv_unet, Family::windowed_attention, Family::conv_classifier,
                     Family::attention_classifier}) {
        ModelSpec spec = micro_seg(f);
        spec.width = 4;
        spec.depth = 1;
        auto model = build_model(spec, 41);
        Tensor x = random_batch(1, 3, spec.input_size, 42);
        Tensor logits = model->forward(x);
        Tensor coef(logits.shape);
        for (double& v : coef.v) v = rng.normal();
        model->zero_grad();
        model->forward(x);
        model->backward(coef);
        auto objective = [&] {
            Tensor out = model->forward(x);
            double s = 0;
            for (size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * coef.v[i];
            return s;
        };
        const double h = 1e-6;
        for (Parameter* p : model->parameters()) {
            for (int probe = 0; probe < 2; ++probe) {
                size_t i = static_cast<size_t>(rng.below(p->value.v.size()));
                double keep = p->value.v[i];
                double g = p->grad.v[i];
                p->value.v[i] = keep + h;
                double up = objective();
                p->value.v[i] = keep - h;
                double down = objective();
                p->value.v[i] = keep;
                double fd = (up - down) / (2 * h);
                // softmax shift invariance makes the key bias gradient
                // exactly zero; both sides are then FD noise
                if (std::max(std::abs(fd), std::abs(g)) < 1e-7) continue;
                double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
                CHECK_MESSAGE(std::abs(fd - g) / denom < 2e-3, p->name);
            }
        }
    }
}
