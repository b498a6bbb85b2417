#include "s4mi/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/rng.hpp"

namespace s4mi::data {

namespace {

TileGrid make_grid(int h, int w, int tile_size) {
    if (h < 1 || w < 1) throw std::invalid_argument("tile: empty input");
    if (tile_size < 1) throw std::invalid_argument("tile: tile_size must be >= 1");
    TileGrid g;
    g.tile_size = tile_size;
    g.orig_h = h;
    g.orig_w = w;
    g.rows = (h + tile_size - 1) / tile_size;
    g.cols = (w + tile_size - 1) / tile_size;
    g.pad_bottom = g.rows * tile_size - h;
    g.pad_right = g.cols * tile_size - w;
    return g;
}

void copy_px(const Image& src, int sy, int sx, Image& dst, int dy, int dx) {
    for (int ch = 0; ch < src.c; ++ch) dst.at(dy, dx, ch) = src.at(sy, sx, ch);
}
void copy_px(const Mask& src, int sy, int sx, Mask& dst, int dy, int dx) {
    dst.at(dy, dx) = src.at(sy, sx);
}

// generic over Image (zero fill) and Mask (class-0 fill)
template <class Img>
std::vector<Img> cut_tiles(const Img& src, const TileGrid& g, Img blank_tile) {
    std::vector<Img> tiles;
    tiles.reserve(static_cast<size_t>(g.rows) * g.cols);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            Img tile = blank_tile;
            int y0 = r * g.tile_size, x0 = c * g.tile_size;
            int ylim = std::min(g.tile_size, src.h - y0);
            int xlim = std::min(g.tile_size, src.w - x0);
            for (int y = 0; y < ylim; ++y)
                for (int x = 0; x < xlim; ++x) copy_px(src, y0 + y, x0 + x, tile, y, x);
            tiles.push_back(std::move(tile));
        }
    return tiles;
}

template <class Img>
Img paste_tiles(const TileGrid& g, const std::vector<Img>& tiles, Img out) {
    if (static_cast<int>(tiles.size()) != g.rows * g.cols)
        throw std::invalid_argument("untile: tile count does not match grid");
    for (const Img& t : tiles)
        if (t.h != g.tile_size || t.w != g.tile_size)
            throw std::invalid_argument("untile: tile shape does not match grid");
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const Img& tile = tiles[static_cast<size_t>(r) * g.cols + c];
            int y0 = r * g.tile_size, x0 = c * g.tile_size;
            int ylim = std::min(g.tile_size, g.orig_h - y0);
            int xlim = std::min(g.tile_size, g.orig_w - x0);
            for (int y = 0; y < ylim; ++y)
                for (int x = 0; x < xlim; ++x) copy_px(tile, y, x, out, y0 + y, x0 + x);
        }
    return out;
}

}  // namespace

std::pair<TileGrid, std::vector<Image>> tile_image(const Image& image, int tile_size) {
    if (image.empty()) throw std::invalid_argument("tile_image: empty image");
    TileGrid g = make_grid(image.h, image.w, tile_size);
    return {g, cut_tiles(image, g, Image(tile_size, tile_size, image.c, 0.0))};
}

std::pair<TileGrid, std::vector<Mask>> tile_mask(const Mask& mask, int tile_size) {
    if (mask.empty()) throw std::invalid_argument("tile_mask: empty mask");
    TileGrid g = make_grid(mask.h, mask.w, tile_size);
    return {g, cut_tiles(mask, g, Mask(tile_size, tile_size, 0))};
}

Image untile(const TileGrid& grid, const std::vector<Image>& tiles) {
    if (tiles.empty()) throw std::invalid_argument("untile: no tiles");
    return paste_tiles(grid, tiles, Image(grid.orig_h, grid.orig_w, tiles[0].c));
}

Mask untile_mask(const TileGrid& grid, const std::vector<Mask>& tiles) {
    if (tiles.empty()) throw std::invalid_argument("untile_mask: no tiles");
    return paste_tiles(grid, tiles, Mask(grid.orig_h, grid.orig_w));
}

Image interpolate_bilinear(const Image& image, int out_h, int out_w) {
    return kernels::bilinear_resize(image, out_h, out_w);
}

Mask resize_nearest_mask(const Mask& mask, int out_h, int out_w) {
    if (mask.empty()) throw std::invalid_argument("resize_nearest_mask: empty mask");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_nearest_mask: bad dims");
    Mask out(out_h, out_w);
    double sy_scale = out_h > 1 ? static_cast<double>(mask.h - 1) / (out_h - 1) : 0.0;
    double sx_scale = out_w > 1 ? static_cast<double>(mask.w - 1) / (out_w - 1) : 0.0;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            int sy = std::clamp(static_cast<int>(std::lround(y * sy_scale)), 0, mask.h - 1);
            int sx = std::clamp(static_cast<int>(std::lround(x * sx_scale)), 0, mask.w - 1);
            out.at(y, x) = mask.at(sy, sx);
        }
    return out;
}

Image normalize_red_channel(const Image& image) {
    if (image.c != 3) throw std::invalid_argument("normalize_red_channel: needs 3 channels");
    Image out = image;
    const int64_t n = image.pixels();
    double mean = 0.0;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) mean += image.at(y, x, 0);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            double d = image.at(y, x, 0) - mean;
            var += d * d;
        }
    var /= static_cast<double>(n);
    double sd = std::sqrt(var);
    if (sd <= 1e-12) {
        // degenerate constant channel (tolerance absorbs accumulation noise)
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x) out.at(y, x, 0) = 0.5;
        return out;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            double z = (image.at(y, x, 0) - mean) / sd;
            out.at(y, x, 0) = z;
            lo = std::min(lo, z);
            hi = std::max(hi, z);
        }
    double span = hi - lo;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) out.at(y, x, 0) = (out.at(y, x, 0) - lo) / span;
    return out;
}

DihedralTransform draw_dihedral(uint64_t seed) {
    Rng rng(derive_seed(seed, "dihedral"));
    DihedralTransform t;
    t.quarter_turns = static_cast<int>(rng.below(4));
    t.hflip = rng.below(2) == 1;
    return t;
}

namespace {

// (y,x) of the source pixel that lands at (oy,ox); sizes after rotation
template <class Img, class Copy>
Img permute_pixels(const DihedralTransform& t, const Img& src, Img out, Copy copy) {
    for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
            int x = t.hflip ? out.w - 1 - ox : ox;
            int y = oy;
            int sy = y, sx = x;
            switch (t.quarter_turns & 3) {
                case 0: break;
                case 1: sy = x; sx = src.w - 1 - y; break;               // 90 ccw
                case 2: sy = src.h - 1 - y; sx = src.w - 1 - x; break;   // 180
                case 3: sy = src.h - 1 - x; sx = y; break;               // 270 ccw
            }
            copy(src, sy, sx, out, oy, ox);
        }
    return out;
}

}  // namespace

Image apply_dihedral(const DihedralTransform& t, const Image& image) {
    bool swap = (t.quarter_turns & 1) != 0;
    Image out(swap ? image.w : image.h, swap ? image.h : image.w, image.c);
    return permute_pixels(t, image, std::move(out),
                          [](const Image& s, int sy, int sx, Image& d, int dy, int dx) {
                              copy_px(s, sy, sx, d, dy, dx);
                          });
}

Mask apply_dihedral(const DihedralTransform& t, const Mask& mask) {
    bool swap = (t.quarter_turns & 1) != 0;
    Mask out(swap ? mask.w : mask.h, swap ? mask.h : mask.w);
    return permute_pixels(t, mask, std::move(out),
                          [](const Mask& s, int sy, int sx, Mask& d, int dy, int dx) {
                              copy_px(s, sy, sx, d, dy, dx);
                          });
}

ProcessedSample augment(const ProcessedSample& sample, uint64_t seed) {
    if (sample.image.empty()) throw std::invalid_argument("augment: sample has no image");
    DihedralTransform t = draw_dihedral(seed);
    ProcessedSample out = sample;
    out.image = apply_dihedral(t, sample.image);
    if (sample.mask) out.mask = apply_dihedral(t, *sample.mask);
    out.steps.push_back({{"op", "dihedral"},
                         {"quarter_turns", t.quarter_turns},
                         {"hflip", t.hflip},
                         {"seed", seed}});
    return out;
}

Splits split_dataset(const std::vector<std::string>& ids, const SplitSpec& spec) {
    if (ids.empty()) throw std::invalid_argument("split_dataset: no ids");
    double total = spec.train_frac + spec.val_frac + spec.test_frac;
    if (std::abs(total - 1.0) > 1e-9 || spec.train_frac < 0 || spec.val_frac < 0 ||
        spec.test_frac < 0)
        throw std::invalid_argument("split_dataset: fractions must be >= 0 and sum to 1");
    std::vector<std::string> shuffled = ids;
    Rng rng(derive_seed(spec.seed, "split"));
    rng.shuffle(shuffled);
    const auto n = static_cast<int64_t>(shuffled.size());
    // round train and val counts, give the residual to the last-listed split
    int64_t n_train = std::llround(spec.train_frac * static_cast<double>(n));
    int64_t n_val = std::llround(spec.val_frac * static_cast<double>(n));
    n_train = std::clamp<int64_t>(n_train, 0, n);
    n_val = std::clamp<int64_t>(n_val, 0, n - n_train);
    int64_t n_test = n - n_train - n_val;
    if ((spec.train_frac > 0 && n_train == 0) || (spec.val_frac > 0 && n_val == 0) ||
        (spec.test_frac > 0 && n_test == 0))
        throw std::invalid_argument("split_dataset: rounding left a requested split empty");
    Splits out;
    out.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    out.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
    out.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
    return out;
}

LabelFractionSplit subsample_labels(const std::vector<std::string>& train_ids,
                                    double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("subsample_labels: fraction must be in [0,1]");
    std::vector<std::string> shuffled = train_ids;
    Rng rng(derive_seed(seed, "label-fraction"));
    rng.shuffle(shuffled);
    auto n = static_cast<int64_t>(shuffled.size());
    int64_t n_labeled = std::llround(fraction * static_cast<double>(n));
    n_labeled = std::clamp<int64_t>(n_labeled, 0, n);
    LabelFractionSplit out;
    out.fraction = fraction;
    out.seed = seed;
    out.labeled.assign(shuffled.begin(), shuffled.begin() + n_labeled);
    out.unlabeled.assign(shuffled.begin() + n_labeled, shuffled.end());
    return out;
}

std::vector<ProcessedSample> preprocess_sample(const RawSample& raw,
                                               const PreprocessOptions& opts) {
    if (raw.image.empty()) throw std::invalid_argument("preprocess: empty image");
    if (raw.image.c != 1 && raw.image.c != 3)
        throw std::invalid_argument("preprocess: channel count must be 1 or 3");
    if (raw.mask && (raw.mask->h != raw.image.h || raw.mask->w != raw.image.w))
        throw std::invalid_argument("preprocess: mask shape mismatch");

    Image base = raw.image;
    std::vector<nlohmann::json> steps;
    if (opts.red_norm && base.c == 3) {
        base = normalize_red_channel(base);
        steps.push_back({{"op", "red_norm"}});
    }

    std::vector<ProcessedSample> out;
    auto finish = [&](Image img, std::optional<Mask> mask, const std::string& id,
                      std::vector<nlohmann::json> local_steps) {
        if (img.h != opts.final_size || img.w != opts.final_size) {
            img = interpolate_bilinear(img, opts.final_size, opts.final_size);
            if (mask) mask = resize_nearest_mask(*mask, opts.final_size, opts.final_size);
            local_steps.push_back(
                {{"op", "resize"}, {"h", opts.final_size}, {"w", opts.final_size}});
        }
        ProcessedSample ps;
        ps.id = id;
        ps.image = std::move(img);
        ps.mask = std::move(mask);
        ps.labels = raw.labels;
        ps.steps = std::move(local_steps);
        out.push_back(std::move(ps));
    };

    if (opts.mode == PreprocessMode::tile) {
        auto [grid, tiles] = tile_image(base, opts.intermediate_size);
        std::vector<Mask> mask_tiles;
        if (raw.mask) mask_tiles = tile_mask(*raw.mask, opts.intermediate_size).second;
        for (int r = 0; r < grid.rows; ++r)
            for (int c = 0; c < grid.cols; ++c) {
                size_t i = static_cast<size_t>(r) * grid.cols + c;
                std::vector<nlohmann::json> s = steps;
                s.push_back({{"op", "tile"},
                             {"row", r},
                             {"col", c},
                             {"rows", grid.rows},
                             {"cols", grid.cols},
                             {"tile_size", grid.tile_size},
                             {"orig_h", grid.orig_h},
                             {"orig_w", grid.orig_w}});
                std::optional<Mask> m;
                if (raw.mask) m = mask_tiles[i];
                finish(tiles[i], std::move(m),
                       raw.id + "_t" + std::to_string(r) + "x" + std::to_string(c),
                       std::move(s));
            }
    } else {
        std::vector<nlohmann::json> s = steps;
        Image img = base;
        std::optional<Mask> m = raw.mask;
        if (img.h != opts.intermediate_size || img.w != opts.intermediate_size) {
            img = interpolate_bilinear(img, opts.intermediate_size, opts.intermediate_size);
            if (m) m = resize_nearest_mask(*m, opts.intermediate_size, opts.intermediate_size);
            s.push_back({{"op", "bilinear"},
                         {"h", opts.intermediate_size},
                         {"w", opts.intermediate_size}});
        }
        finish(std::move(img), std::move(m), raw.id, std::move(s));
    }
    return out;
}

Image replay_steps(const RawSample& raw, const std::vector<nlohmann::json>& steps) {
    Image img = raw.image;
    for (const auto& step : steps) {
        const std::string op = step.at("op").get<std::string>();
        if (op == "red_norm") {
            img = normalize_red_channel(img);
        } else if (op == "tile") {
            auto [grid, tiles] = tile_image(img, step.at("tile_size").get<int>());
            size_t i = static_cast<size_t>(step.at("row").get<int>()) * grid.cols +
                       step.at("col").get<int>();
            img = tiles.at(i);
        } else if (op == "bilinear" || op == "resize") {
            img = interpolate_bilinear(img, step.at("h").get<int>(), step.at("w").get<int>());
        } else if (op == "dihedral") {
            DihedralTransform t;
            t.quarter_turns = step.at("quarter_turns").get<int>();
            t.hflip = step.at("hflip").get<bool>();
            img = apply_dihedral(t, img);
        } else {
            throw std::invalid_argument("replay_steps: unknown op " + op);
        }
    }
    return img;
}

}  // namespace s4mi::data
