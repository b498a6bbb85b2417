#ifndef S4MI_HARNESS_SYNTHETIC_HPP
#define S4MI_HARNESS_SYNTHETIC_HPP

#include <filesystem>

#include "s4mi/data/pipeline.hpp"
#include "s4mi/harness/config.hpp"

namespace s4mi::harness {

// Elliptical "lesions" on a textured background with exact masks.
// labels.csv columns per sample: single-class label (1 = two lesions),
// then three multilabel bits (two lesions / bright / large area).
data::RawSample synth_sample(const SyntheticSpec& spec, int index);

// writes PPM images, sibling *_mask.pgm files and labels.csv
void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace s4mi::harness

#endif
