#ifndef S4MI_DATA_PIPELINE_HPP
#define S4MI_DATA_PIPELINE_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "s4mi/core/image.hpp"

namespace s4mi::data {

struct RawSample {
    std::string id;
    Image image;                 // H x W x C, C in {1,3}, values in [0,1]
    std::optional<Mask> mask;    // same H x W when present
    std::vector<int> labels;     // per-image class labels (classification); may be empty
    std::string dataset_tag;
};

struct TileGrid {
    int rows = 0, cols = 0;
    int tile_size = 0;
    int orig_h = 0, orig_w = 0;
    int pad_bottom = 0, pad_right = 0;
};

// One model-ready sample plus the ordered, replayable list of the
// preprocessing steps that produced it.
struct ProcessedSample {
    std::string id;
    Image image;
    std::optional<Mask> mask;
    std::vector<int> labels;
    std::vector<nlohmann::json> steps;
};

struct SplitSpec {
    double train_frac = 0.7, val_frac = 0.1, test_frac = 0.2;
    uint64_t seed = 0;
};

struct Splits {
    std::vector<std::string> train, val, test;
};

struct LabelFractionSplit {
    std::vector<std::string> labeled, unlabeled;
    double fraction = 1.0;
    uint64_t seed = 0;
};

// Dihedral-group transform: rotation by quarter turns, then optional
// horizontal flip. Exact pixel permutation, so masks need no resampling.
struct DihedralTransform {
    int quarter_turns = 0;  // 0..3, counter-clockwise
    bool hflip = false;
};

// --- tiling ---------------------------------------------------------------

std::pair<TileGrid, std::vector<Image>> tile_image(const Image& image, int tile_size);
std::pair<TileGrid, std::vector<Mask>> tile_mask(const Mask& mask, int tile_size);
Image untile(const TileGrid& grid, const std::vector<Image>& tiles);
Mask untile_mask(const TileGrid& grid, const std::vector<Mask>& tiles);

// --- resizing / normalization ----------------------------------------------

Image interpolate_bilinear(const Image& image, int out_h, int out_w);
Mask resize_nearest_mask(const Mask& mask, int out_h, int out_w);
// standardize the red channel to zero mean / unit variance, then min-max
// rescale to [0,1]; a constant red channel maps to all 0.5
Image normalize_red_channel(const Image& image);

// --- augmentation -----------------------------------------------------------

DihedralTransform draw_dihedral(uint64_t seed);
Image apply_dihedral(const DihedralTransform& t, const Image& image);
Mask apply_dihedral(const DihedralTransform& t, const Mask& mask);
ProcessedSample augment(const ProcessedSample& sample, uint64_t seed);

// --- splits -----------------------------------------------------------------

Splits split_dataset(const std::vector<std::string>& ids, const SplitSpec& spec);
LabelFractionSplit subsample_labels(const std::vector<std::string>& train_ids,
                                    double fraction, uint64_t seed);

// --- whole-pipeline preprocessing -------------------------------------------

enum class PreprocessMode { tile, interpolate };

struct PreprocessOptions {
    PreprocessMode mode = PreprocessMode::interpolate;
    int intermediate_size = 480;  // tile size / interpolation target
    int final_size = 224;
    bool red_norm = true;         // applied to 3-channel inputs only
};

// expands a raw sample into one processed sample per tile (tile mode) or a
// single processed sample (interpolate mode)
std::vector<ProcessedSample> preprocess_sample(const RawSample& raw,
                                               const PreprocessOptions& opts);

// re-run a recorded step list against the raw input; used to check that the
// stored descriptors fully determine the output
Image replay_steps(const RawSample& raw, const std::vector<nlohmann::json>& steps);

}  // namespace s4mi::data

#endif
