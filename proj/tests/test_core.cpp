#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/parallel.hpp"
#include "s4mi/core/rng.hpp"

using namespace s4mi;

namespace {

void fill(Tensor& t, Rng& rng) {
    for (double& v : t.v) v = rng.normal();
}

}  // namespace

TEST_CASE("rng is deterministic and in range") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) {
        double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng c(7);
    for (int i = 0; i < 1000; ++i) CHECK(c.below(13) < 13);
}

TEST_CASE("rng normal moments are sane") {
    Rng rng(99);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("derive_seed separates streams") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
    CHECK(derive_seed(1, "a", 2, 3) == derive_seed(1, "a", 2, 3));
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> v1(50), v2(50);
    for (int i = 0; i < 50; ++i) v1[static_cast<size_t>(i)] = v2[static_cast<size_t>(i)] = i;
    Rng a(5), b(5);
    a.shuffle(v1);
    b.shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("block_sum matches serial accumulation") {
    Rng rng(11);
    std::vector<double> xs(20000);
    for (double& x : xs) x = rng.normal();
    double serial = 0.0;
    for (double x : xs) serial += x;
    double parallel = block_sum(static_cast<int64_t>(xs.size()),
                                [&](int64_t i) { return xs[static_cast<size_t>(i)]; });
    CHECK(parallel == doctest::Approx(serial).epsilon(1e-12));
    double again = block_sum(static_cast<int64_t>(xs.size()),
                             [&](int64_t i) { return xs[static_cast<size_t>(i)]; });
    CHECK(parallel == again);  // bit-identical on re-evaluation
}

TEST_CASE("conv2d omp kernel equals serial reference") {
    Rng rng(3);
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 1}}) {
        Tensor x({2, 3, 12, 10}), w({5, 3, 3, 3}), b({5});
        fill(x, rng);
        fill(w, rng);
        fill(b, rng);
        Tensor ys, yp;
        ref::conv2d_forward(x, w, b, ys, stride, pad);
        kernels::conv2d_forward(x, w, b, yp, stride, pad);
        REQUIRE(ys.shape == yp.shape);
        for (size_t i = 0; i < ys.v.size(); ++i) CHECK(ys.v[i] == yp.v[i]);
    }
}

TEST_CASE("conv2d backward matches central finite differences") {
    Rng rng(17);
    Tensor x({1, 2, 5, 5}), w({3, 2, 3, 3}), b({3});
    fill(x, rng);
    fill(w, rng);
    fill(b, rng);
    Tensor coef;
    kernels::conv2d_forward(x, w, b, coef, 1, 1);
    fill(coef, rng);  // fixed random cotangent
    auto objective = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
        Tensor out;
        kernels::conv2d_forward(xx, ww, bb, out, 1, 1);
        double s = 0.0;
        for (size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * coef.v[i];
        return s;
    };
    Tensor dx(x.shape), dw(w.shape), db(b.shape);
    kernels::conv2d_backward_input(coef, w, dx, 1, 1);
    kernels::conv2d_backward_params(x, coef, dw, db, 1, 1);
    const double h = 1e-6;
    Rng pick(23);
    for (int probe = 0; probe < 12; ++probe) {
        size_t i = static_cast<size_t>(pick.below(x.v.size()));
        Tensor xp = x, xm = x;
        xp.v[i] += h;
        xm.v[i] -= h;
        double fd = (objective(xp, w, b) - objective(xm, w, b)) / (2 * h);
        CHECK(dx.v[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (int probe = 0; probe < 12; ++probe) {
        size_t i = static_cast<size_t>(pick.below(w.v.size()));
        Tensor wp = w, wm = w;
        wp.v[i] += h;
        wm.v[i] -= h;
        double fd = (objective(x, wp, b) - objective(x, wm, b)) / (2 * h);
        CHECK(dw.v[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("matmul variants agree with naive loops") {
    Rng rng(31);
    Tensor a({7, 5}), b({5, 9});
    fill(a, rng);
    fill(b, rng);
    Tensor c;
    kernels::matmul(a, b, c);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 9; ++j) {
            double s = 0;
            for (int k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
            CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    Tensor at({5, 7});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 7; ++j) at.at(i, j) = a.at(j, i);
    Tensor c2;
    kernels::matmul_tn(at, b, c2);
    for (size_t i = 0; i < c.v.size(); ++i)
        CHECK(c2.v[i] == doctest::Approx(c.v[i]).epsilon(1e-12));
    Tensor bt({9, 5});
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 5; ++j) bt.at(i, j) = b.at(j, i);
    Tensor c3;
    kernels::matmul_nt(a, bt, c3);
    for (size_t i = 0; i < c.v.size(); ++i)
        CHECK(c3.v[i] == doctest::Approx(c.v[i]).epsilon(1e-12));
}

TEST_CASE("bilinear omp kernel equals serial reference") {
    Rng rng(41);
    Image img(37, 23, 3);
    for (double& v : img.v) v = rng.uniform();
    Image a = ref::bilinear_resize(img, 50, 61);
    Image b = kernels::bilinear_resize(img, 50, 61);
    REQUIRE(a.v.size() == b.v.size());
    for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
}

TEST_CASE("kmeans_assign omp kernel equals serial reference") {
    Rng rng(55);
    Tensor pts({500, 8}), cent({4, 8});
    fill(pts, rng);
    fill(cent, rng);
    std::vector<int> as, ap;
    ref::kmeans_assign(pts, cent, as);
    kernels::kmeans_assign(pts, cent, ap);
    CHECK(as == ap);
}
