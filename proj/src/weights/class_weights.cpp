#include "s4mi/weights/class_weights.hpp"

#include <algorithm>
#include <stdexcept>

namespace s4mi::weights {

ClassFrequencies pixel_class_frequencies(const std::vector<Mask>& masks, int num_classes) {
    if (masks.empty()) throw std::invalid_argument("pixel_class_frequencies: no masks");
    if (num_classes < 2) throw std::invalid_argument("pixel_class_frequencies: need >= 2 classes");
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    int64_t total = 0;
    for (const Mask& m : masks) {
        if (m.empty()) throw std::invalid_argument("pixel_class_frequencies: empty mask");
        for (int v : m.v) {
            if (v < 0 || v >= num_classes)
                throw std::invalid_argument("pixel_class_frequencies: class id out of range");
            ++counts[static_cast<size_t>(v)];
        }
        total += m.pixels();
    }
    ClassFrequencies out;
    out.freqs.resize(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
        out.freqs[static_cast<size_t>(c)] =
            static_cast<double>(counts[static_cast<size_t>(c)]) / static_cast<double>(total);
    return out;
}

ClassWeights pixel_ratio_weights(const ClassFrequencies& freqs,
                                 PixelRatioOrientation orientation) {
    const auto n = freqs.freqs.size();
    if (n < 2) throw std::invalid_argument("pixel_ratio_weights: need >= 2 classes");
    ClassWeights out;
    out.scheme = WeightScheme::pixel_ratio;
    out.weights.resize(n);
    double sum = 0.0;
    for (size_t c = 0; c < n; ++c) {
        double w = orientation == PixelRatioOrientation::complement ? 1.0 - freqs.freqs[c]
                                                                    : freqs.freqs[c];
        w = std::max(w, 1e-6);  // a class owning all pixels would zero out otherwise
        out.weights[c] = w;
        sum += w;
    }
    // renormalize so the weights sum to num_classes (unit mean)
    double scale = static_cast<double>(n) / sum;
    for (double& w : out.weights) w *= scale;
    return out;
}

ClassWeights median_frequency_weights(const ClassFrequencies& freqs) {
    const auto n = freqs.freqs.size();
    if (n < 2) throw std::invalid_argument("median_frequency_weights: need >= 2 classes");
    for (double f : freqs.freqs)
        if (f <= 0.0)
            throw std::invalid_argument("median_frequency_weights: zero-frequency class");
    std::vector<double> sorted = freqs.freqs;
    std::sort(sorted.begin(), sorted.end());
    double median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    ClassWeights out;
    out.scheme = WeightScheme::median_frequency;
    out.weights.resize(n);
    for (size_t c = 0; c < n; ++c) out.weights[c] = median / freqs.freqs[c];
    return out;
}

}  // namespace s4mi::weights
