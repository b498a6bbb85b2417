#ifndef S4MI_CORE_IMAGE_HPP
#define S4MI_CORE_IMAGE_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "s4mi/core/tensor.hpp"

namespace s4mi {

// Pipeline-side image: H x W x C, intensities in [0,1], row-major HWC.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {
        if (h_ < 0 || w_ < 0 || c_ < 0) throw std::invalid_argument("image: negative dims");
    }

    bool empty() const { return h == 0 || w == 0 || c == 0; }
    int64_t pixels() const { return static_cast<int64_t>(h) * w; }

    double& at(int y, int x, int ch) { return v[(static_cast<int64_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return v[(static_cast<int64_t>(y) * w + x) * c + ch]; }
};

// Class-id mask aligned with an Image.
struct Mask {
    int h = 0, w = 0;
    std::vector<int> v;

    Mask() = default;
    Mask(int h_, int w_, int fill = 0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ < 0 || w_ < 0) throw std::invalid_argument("mask: negative dims");
    }

    bool empty() const { return h == 0 || w == 0; }
    int64_t pixels() const { return static_cast<int64_t>(h) * w; }

    int& at(int y, int x) { return v[static_cast<int64_t>(y) * w + x]; }
    int at(int y, int x) const { return v[static_cast<int64_t>(y) * w + x]; }
};

// HWC image -> CHW tensor slice writer (batch assembly lives in trainers).
inline void image_to_chw(const Image& img, Tensor& out, int batch_index) {
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) out.at(batch_index, ch, y, x) = img.at(y, x, ch);
}

}  // namespace s4mi

#endif
