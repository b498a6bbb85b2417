#include "s4mi/harness/synthetic.hpp"

#include <cmath>
#include <fstream>

#include "s4mi/core/rng.hpp"
#include "s4mi/data/sample_io.hpp"

namespace s4mi::harness {

namespace {

struct Ellipse {
    double cx, cy, a, b, angle;
    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double u = dx * std::cos(angle) + dy * std::sin(angle);
        double v = -dx * std::sin(angle) + dy * std::cos(angle);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

}  // namespace

data::RawSample synth_sample(const SyntheticSpec& spec, int index) {
    Rng rng(derive_seed(spec.seed, "synth", static_cast<uint64_t>(index)));
    const int size = spec.image_size;
    const int n_lesions = rng.below(2) == 0 ? 1 : 2;
    const double area_total = spec.fg_fraction * rng.uniform(0.85, 1.15);
    const double brightness = rng.uniform(0.6, 0.8);

    std::vector<Ellipse> lesions;
    for (int li = 0; li < n_lesions; ++li) {
        double frac = area_total / n_lesions;
        double r = size * std::sqrt(frac / M_PI);
        double aspect = rng.uniform(0.75, 1.35);
        Ellipse e;
        e.a = std::min(r * std::sqrt(aspect), 0.30 * size);
        e.b = std::min(r / std::sqrt(aspect), 0.30 * size);
        e.angle = rng.uniform(0.0, M_PI);
        double margin = std::max(e.a, e.b) / size + 0.02;
        margin = std::min(margin, 0.49);
        e.cx = size * rng.uniform(margin, 1.0 - margin);
        e.cy = size * rng.uniform(margin, 1.0 - margin);
        lesions.push_back(e);
    }

    double bg_r = spec.two_color ? 0.55 : 0.35;
    double bg_g = spec.two_color ? 0.32 : 0.35;
    double bg_b = spec.two_color ? 0.30 : 0.35;
    double fg_r = spec.two_color ? 0.30 : brightness;
    double fg_g = spec.two_color ? 0.62 : brightness;
    double fg_b = spec.two_color ? 0.32 : brightness;

    data::RawSample s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth_%04d", index);
    s.id = idbuf;
    s.dataset_tag = "synthetic";
    s.image = Image(size, size, 3);
    s.mask = Mask(size, size, 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            bool fg = false;
            for (const Ellipse& e : lesions)
                if (e.contains(x + 0.5, y + 0.5)) {
                    fg = true;
                    break;
                }
            double gradient = 0.06 * (x + y) / (2.0 * size);
            double n = rng.uniform(-spec.noise, spec.noise);
            double r = (fg ? fg_r : bg_r) + gradient + n;
            double g = (fg ? fg_g : bg_g) + gradient + n;
            double b = (fg ? fg_b : bg_b) + gradient + n;
            s.image.at(y, x, 0) = std::clamp(r, 0.0, 1.0);
            s.image.at(y, x, 1) = std::clamp(g, 0.0, 1.0);
            s.image.at(y, x, 2) = std::clamp(b, 0.0, 1.0);
            if (fg) s.mask->at(y, x) = 1;
        }

    int cls = n_lesions == 2 ? 1 : 0;
    int bright = brightness > 0.7 ? 1 : 0;
    int large = area_total > spec.fg_fraction ? 1 : 0;
    s.labels = {cls, cls, bright, large};
    return s;
}

void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
    if (spec.n_images < 1 || spec.image_size < 8)
        throw std::invalid_argument("generate_synthetic: degenerate spec");
    std::filesystem::create_directories(dir);
    std::ofstream labels(dir / "labels.csv");
    for (int i = 0; i < spec.n_images; ++i) {
        data::RawSample s = synth_sample(spec, i);
        data::write_ppm(dir / (s.id + ".ppm"), s.image);
        data::write_mask_pgm(dir / (s.id + "_mask.pgm"), *s.mask);
        labels << s.id;
        for (int v : s.labels) labels << "," << v;
        labels << "\n";
    }
}

}  // namespace s4mi::harness
