// Times the OpenMP kernels against their serial reference implementations
// and reports speedup plus the largest output difference.

#include <chrono>
#include <cstdio>
#include <functional>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/parallel.hpp"
#include "s4mi/core/rng.hpp"

using namespace s4mi;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double mx = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

void fill(Tensor& t, Rng& rng) {
    for (double& v : t.v) v = rng.normal();
}

void row(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-28s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   max|diff| %.3g\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", num_threads());
    Rng rng(42);
    const int reps = 5;

    {
        Tensor x({8, 16, 64, 64}), w({32, 16, 3, 3}), b({32});
        fill(x, rng);
        fill(w, rng);
        fill(b, rng);
        Tensor ys, yp;
        double ts = time_ms([&] { ref::conv2d_forward(x, w, b, ys, 1, 1); }, reps);
        double tp = time_ms([&] { kernels::conv2d_forward(x, w, b, yp, 1, 1); }, reps);
        row("conv2d_forward 8x16x64x64", ts, tp, max_abs_diff(ys.v, yp.v));
    }
    {
        Tensor a({512, 256}), b({256, 512});
        fill(a, rng);
        fill(b, rng);
        Tensor cs, cp;
        double ts = time_ms([&] { ref::matmul(a, b, cs); }, reps);
        double tp = time_ms([&] { kernels::matmul(a, b, cp); }, reps);
        row("matmul 512x256x512", ts, tp, max_abs_diff(cs.v, cp.v));
    }
    {
        Image img(512, 512, 3);
        Rng prng(7);
        for (double& v : img.v) v = prng.uniform();
        Image rs, rp;
        double ts = time_ms([&] { rs = ref::bilinear_resize(img, 224, 224); }, reps);
        double tp = time_ms([&] { rp = kernels::bilinear_resize(img, 224, 224); }, reps);
        row("bilinear 512->224", ts, tp, max_abs_diff(rs.v, rp.v));
    }
    {
        Tensor pts({200000, 32}), cent({8, 32});
        fill(pts, rng);
        fill(cent, rng);
        std::vector<int> as, ap;
        double sse_s = 0, sse_p = 0;
        double ts = time_ms([&] { ref::kmeans_assign(pts, cent, as, &sse_s); }, reps);
        double tp = time_ms([&] { kernels::kmeans_assign(pts, cent, ap, &sse_p); }, reps);
        int mismatches = 0;
        for (size_t i = 0; i < as.size(); ++i)
            if (as[i] != ap[i]) ++mismatches;
        row("kmeans_assign 200k x 32 k=8", ts, tp,
            mismatches > 0 ? 1.0 : std::abs(sse_s - sse_p));
    }
    return 0;
}
