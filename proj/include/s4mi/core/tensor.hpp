#ifndef S4MI_CORE_TENSOR_HPP
#define S4MI_CORE_TENSOR_HPP

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace s4mi {

// Dense row-major tensor of doubles. Shapes follow the B,C,H,W convention
// in model code; lower-rank uses are plain (rows, cols) or flat.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), v(count(shape), fill) {}

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 4-D accessor (B,C,H,W)
    double& at(int b, int c, int h, int w) {
        return v[((static_cast<int64_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at(int b, int c, int h, int w) const {
        return v[((static_cast<int64_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    // 2-D accessor (rows, cols)
    double& at(int r, int c) { return v[static_cast<int64_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return v[static_cast<int64_t>(r) * shape[1] + c]; }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Integer-valued map, used for class-id targets (B,H,W) or masks (H,W).
struct IntTensor {
    std::vector<int> shape;
    std::vector<int> v;

    IntTensor() = default;
    explicit IntTensor(std::vector<int> s) : shape(std::move(s)), v(Tensor::count(shape), 0) {}

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    int& at(int b, int h, int w) {
        return v[(static_cast<int64_t>(b) * shape[1] + h) * shape[2] + w];
    }
    int at(int b, int h, int w) const {
        return v[(static_cast<int64_t>(b) * shape[1] + h) * shape[2] + w];
    }
    int& at(int r, int c) { return v[static_cast<int64_t>(r) * shape[1] + c]; }
    int at(int r, int c) const { return v[static_cast<int64_t>(r) * shape[1] + c]; }
};

}  // namespace s4mi

#endif
