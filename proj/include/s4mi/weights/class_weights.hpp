#ifndef S4MI_WEIGHTS_CLASS_WEIGHTS_HPP
#define S4MI_WEIGHTS_CLASS_WEIGHTS_HPP

#include <string>
#include <vector>

#include "s4mi/core/image.hpp"

namespace s4mi::weights {

struct ClassFrequencies {
    std::vector<double> freqs;  // per-class pixel proportions, sum to 1
};

enum class WeightScheme { pixel_ratio, median_frequency };

// Direction of the pixel-ratio assignment. `complement` (default) gives
// each class the other classes' mass, so the dominant background class is
// down-weighted; `direct` reproduces the opposite reading.
enum class PixelRatioOrientation { complement, direct };

struct ClassWeights {
    std::vector<double> weights;  // all > 0, length = num_classes
    WeightScheme scheme = WeightScheme::pixel_ratio;
};

ClassFrequencies pixel_class_frequencies(const std::vector<Mask>& masks, int num_classes);

ClassWeights pixel_ratio_weights(const ClassFrequencies& freqs,
                                 PixelRatioOrientation orientation =
                                     PixelRatioOrientation::complement);

// weight_c = median(freqs) / freq_c; requires every freq > 0
ClassWeights median_frequency_weights(const ClassFrequencies& freqs);

}  // namespace s4mi::weights

#endif
