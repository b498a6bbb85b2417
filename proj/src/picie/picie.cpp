#include "s4mi/picie/picie.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/parallel.hpp"
#include "s4mi/core/rng.hpp"
#include "s4mi/models/layers.hpp"

namespace s4mi::picie {

Image photometric_transform(const Image& image, uint64_t seed, const PhotometricParams& params) {
    if (image.empty()) throw std::invalid_argument("photometric_transform: empty image");
    Rng rng(derive_seed(seed, "photometric"));
    double brightness = rng.uniform(-params.brightness, params.brightness);
    double contrast = rng.uniform(1.0 - params.contrast, 1.0 + params.contrast);
    double saturation =
        image.c == 3 ? rng.uniform(1.0 - params.saturation, 1.0 + params.saturation) : 1.0;
    double mean = 0.0;
    for (double v : image.v) mean += v;
    mean /= static_cast<double>(image.v.size());
    Image out = image;
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double gray = 0.0;
            if (image.c == 3)
                for (int ch = 0; ch < 3; ++ch) gray += out.at(y, x, ch) / 3.0;
            for (int ch = 0; ch < out.c; ++ch) {
                double v = out.at(y, x, ch);
                if (image.c == 3) v = gray + saturation * (v - gray);
                v = mean + contrast * (v - mean) + brightness;
                out.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
            }
        }
    return out;
}

GeometricTransform draw_geometric(uint64_t seed) {
    Rng rng(derive_seed(seed, "geometric"));
    GeometricTransform t;
    t.kind = static_cast<GeoKind>(rng.below(6));
    return t;
}

GeometricTransform inverse(const GeometricTransform& t) {
    GeometricTransform inv = t;
    if (t.kind == GeoKind::rot90)
        inv.kind = GeoKind::rot270;
    else if (t.kind == GeoKind::rot270)
        inv.kind = GeoKind::rot90;
    return inv;  // identity, flips and rot180 are involutions
}

namespace {

// destination (y,x) receives source pixel (sy,sx)
inline void geo_source(GeoKind kind, int h, int w, int y, int x, int& sy, int& sx) {
    switch (kind) {
        case GeoKind::identity: sy = y; sx = x; break;
        case GeoKind::hflip: sy = y; sx = w - 1 - x; break;
        case GeoKind::vflip: sy = h - 1 - y; sx = x; break;
        case GeoKind::rot90: sy = x; sx = w - 1 - y; break;    // 90 ccw, square only
        case GeoKind::rot180: sy = h - 1 - y; sx = w - 1 - x; break;
        case GeoKind::rot270: sy = h - 1 - x; sx = y; break;   // 270 ccw, square only
        default: sy = y; sx = x; break;
    }
}

void require_square_for_rot(GeoKind kind, int h, int w, const char* who) {
    if ((kind == GeoKind::rot90 || kind == GeoKind::rot270) && h != w)
        throw std::invalid_argument(std::string(who) + ": quarter rotation needs square dims");
}

}  // namespace

Image apply_geometric(const GeometricTransform& t, const Image& image) {
    require_square_for_rot(t.kind, image.h, image.w, "apply_geometric");
    Image out(image.h, image.w, image.c);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            int sy, sx;
            geo_source(t.kind, image.h, image.w, y, x, sy, sx);
            for (int ch = 0; ch < image.c; ++ch) out.at(y, x, ch) = image.at(sy, sx, ch);
        }
    return out;
}

Tensor apply_geometric(const GeometricTransform& t, const Tensor& features) {
    if (features.shape.size() != 4)
        throw std::invalid_argument("apply_geometric: expected [B,D,h,w] features");
    const int b = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
    require_square_for_rot(t.kind, h, w, "apply_geometric");
    Tensor out(features.shape);
    parallel_for(static_cast<int64_t>(b) * d, [&](int64_t idx) {
        int bi = static_cast<int>(idx / d), di = static_cast<int>(idx % d);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy, sx;
                geo_source(t.kind, h, w, y, x, sy, sx);
                out.at(bi, di, y, x) = features.at(bi, di, sy, sx);
            }
    });
    return out;
}

// --- clustering ------------------------------------------------------------------

ClusterModel minibatch_kmeans(const Tensor& points, int k, int iters, uint64_t seed,
                              int minibatch) {
    if (points.shape.size() != 2) throw std::invalid_argument("minibatch_kmeans: expected [N,D]");
    const int n = points.dim(0), d = points.dim(1);
    if (k < 1 || iters < 0) throw std::invalid_argument("minibatch_kmeans: bad k or iters");
    if (n < k) throw std::invalid_argument("minibatch_kmeans: fewer points than clusters");
    Rng rng(derive_seed(seed, "kmeans"));

    // k-means++ seeding
    ClusterModel model;
    model.k = k;
    model.centroids = Tensor({k, d});
    std::vector<double> min_dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    for (int j = 0; j < d; ++j) model.centroids.at(0, j) = points.at(first, j);
    for (int c = 1; c < k; ++c) {
        parallel_for(n, [&](int64_t i) {
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                double diff = points.at(static_cast<int>(i), j) - model.centroids.at(c - 1, j);
                dist += diff * diff;
            }
            min_dist[static_cast<size_t>(i)] = std::min(min_dist[static_cast<size_t>(i)], dist);
        });
        double total = 0.0;
        for (double v : min_dist) total += v;
        if (total <= 0.0)
            throw std::invalid_argument("minibatch_kmeans: fewer than k distinct points");
        double target = rng.uniform() * total;
        int pick = n - 1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += min_dist[static_cast<size_t>(i)];
            if (acc >= target) {
                pick = i;
                break;
            }
        }
        for (int j = 0; j < d; ++j) model.centroids.at(c, j) = points.at(pick, j);
    }

    // streaming passes: assign a fixed-size batch, fold it into running means
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    std::vector<int> assign;
    for (int it = 0; it < iters; ++it) {
        std::fill(counts.begin(), counts.end(), 0);
        Tensor sums({k, d});
        for (int start = 0; start < n; start += minibatch) {
            int stop = std::min(n, start + minibatch);
            Tensor batch({stop - start, d});
            for (int i = start; i < stop; ++i)
                for (int j = 0; j < d; ++j) batch.at(i - start, j) = points.at(i, j);
            kernels::kmeans_assign(batch, model.centroids, assign, nullptr);
            for (int i = 0; i < stop - start; ++i) {
                int c = assign[static_cast<size_t>(i)];
                ++counts[static_cast<size_t>(c)];
                for (int j = 0; j < d; ++j) sums.at(c, j) += batch.at(i, j);
            }
            // running update after each minibatch
            for (int c = 0; c < k; ++c) {
                if (counts[static_cast<size_t>(c)] == 0) continue;
                for (int j = 0; j < d; ++j)
                    model.centroids.at(c, j) =
                        sums.at(c, j) / static_cast<double>(counts[static_cast<size_t>(c)]);
            }
        }
    }
    return model;
}

std::vector<int> assign_clusters(const Tensor& points, const ClusterModel& clusters) {
    std::vector<int> assign;
    kernels::kmeans_assign(points, clusters.centroids, assign, nullptr);
    return assign;
}

// --- clustering loss --------------------------------------------------------------

namespace {

// flatten [B,D,h,w] into row-per-pixel [B*h*w, D]
Tensor pixels_of(const Tensor& f) {
    const int b = f.dim(0), d = f.dim(1), h = f.dim(2), w = f.dim(3);
    Tensor out({b * h * w, d});
    parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t r) {
        int bi = static_cast<int>(r / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(r % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = f.at(bi, j, y, x);
    });
    return out;
}

Tensor rows_to_map(const Tensor& rows, const std::vector<int>& shape) {
    const int b = shape[0], d = shape[1], h = shape[2], w = shape[3];
    Tensor out(shape);
    parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t r) {
        int bi = static_cast<int>(r / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(r % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        for (int j = 0; j < d; ++j) out.at(bi, j, y, x) = rows.at(static_cast<int>(r), j);
    });
    return out;
}

// mean cross-entropy of pixel rows against fixed assignments, with optional
// gradient accumulation (dL/drow scaled by `weight`)
double cluster_ce(const Tensor& rows, const std::vector<int>& labels, const Tensor& centroids,
                  Tensor* grad_rows, double weight) {
    const int n = rows.dim(0), d = rows.dim(1), k = centroids.dim(0);
    std::vector<double> losses(static_cast<size_t>(n), 0.0);
    parallel_for(n, [&](int64_t i64) {
        int i = static_cast<int>(i64);
        std::vector<double> logits(static_cast<size_t>(k));
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                double diff = rows.at(i, j) - centroids.at(c, j);
                dist += diff * diff;
            }
            logits[static_cast<size_t>(c)] = -dist;
            mx = std::max(mx, -dist);
        }
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(logits[static_cast<size_t>(c)] - mx);
        int lab = labels[static_cast<size_t>(i)];
        losses[static_cast<size_t>(i)] =
            -(logits[static_cast<size_t>(lab)] - mx - std::log(denom));
        if (grad_rows) {
            for (int c = 0; c < k; ++c) {
                double p = std::exp(logits[static_cast<size_t>(c)] - mx) / denom;
                double coef = (p - (c == lab ? 1.0 : 0.0)) * weight / n;
                // dlogit_c/drow = -2 (row - centroid_c)
                for (int j = 0; j < d; ++j)
                    grad_rows->at(i, j) += coef * -2.0 * (rows.at(i, j) - centroids.at(c, j));
            }
        }
    });
    double total = 0.0;
    for (double v : losses) total += v;
    return total / n;
}

loss::LossValue picie_loss_impl(const Tensor& f1_raw, const Tensor& f2,
                                const ClusterModel& clusters, const GeometricTransform& t,
                                Tensor* d_f1_raw, Tensor* d_f2) {
    if (f1_raw.shape.size() != 4 || f2.shape.size() != 4)
        throw std::invalid_argument("picie_step_loss: expected [B,D,h,w] maps");
    Tensor f1 = apply_geometric(t, f1_raw);
    if (f1.shape != f2.shape)
        throw std::invalid_argument("picie_step_loss: views misaligned after transform");
    Tensor r1 = pixels_of(f1), r2 = pixels_of(f2);
    std::vector<int> a1 = assign_clusters(r1, clusters);
    std::vector<int> a2 = assign_clusters(r2, clusters);

    Tensor g1, g2;
    Tensor* g1p = nullptr;
    Tensor* g2p = nullptr;
    if (d_f1_raw) {
        g1 = Tensor(r1.shape);
        g2 = Tensor(r2.shape);
        g1p = &g1;
        g2p = &g2;
    }
    loss::LossValue out;
    double within1 = cluster_ce(r1, a1, clusters.centroids, g1p, 1.0);
    double within2 = cluster_ce(r2, a2, clusters.centroids, g2p, 1.0);
    double cross12 = cluster_ce(r1, a2, clusters.centroids, g1p, 1.0);
    double cross21 = cluster_ce(r2, a1, clusters.centroids, g2p, 1.0);
    out.components["within_1"] = within1;
    out.components["within_2"] = within2;
    out.components["cross_12"] = cross12;
    out.components["cross_21"] = cross21;
    out.value = within1 + within2 + cross12 + cross21;
    if (d_f1_raw) {
        // grads live in the transformed frame; bring view 1's back
        *d_f1_raw = apply_geometric(inverse(t), rows_to_map(g1, f1.shape));
        *d_f2 = rows_to_map(g2, f2.shape);
    }
    return out;
}

}  // namespace

loss::LossValue picie_step_loss(const Tensor& f1_raw, const Tensor& f2,
                                const ClusterModel& clusters, const GeometricTransform& t) {
    return picie_loss_impl(f1_raw, f2, clusters, t, nullptr, nullptr);
}

loss::LossValue picie_step_loss_with_grad(const Tensor& f1_raw, const Tensor& f2,
                                          const ClusterModel& clusters,
                                          const GeometricTransform& t, Tensor& d_f1_raw,
                                          Tensor& d_f2) {
    return picie_loss_impl(f1_raw, f2, clusters, t, &d_f1_raw, &d_f2);
}

// --- feature extractor ---------------------------------------------------------------

namespace {

class PixelFeatureExtractor : public models::Model {
public:
    PixelFeatureExtractor(int in_channels, int feature_dim, int width, uint64_t seed,
                          bool pointwise) {
        Rng rng(derive_seed(seed, "pixel_features"));
        int k = pointwise ? 1 : 3;
        int pad = pointwise ? 0 : 1;
        c1_ = std::make_unique<models::Conv2d>("feat1", in_channels, width, k, 1, pad, rng);
        c2_ = std::make_unique<models::Conv2d>("feat2", width, width, k, 1, pad, rng);
        c3_ = std::make_unique<models::Conv2d>("feat3", width, feature_dim, 1, 1, 0, rng);
    }

    Tensor forward(const Tensor& x) override {
        return c3_->forward(a2_.forward(c2_->forward(a1_.forward(c1_->forward(x)))));
    }

    Tensor backward(const Tensor& dout) override {
        return c1_->backward(a1_.backward(c2_->backward(a2_.backward(c3_->backward(dout)))));
    }

    std::vector<models::Parameter*> parameters() override {
        std::vector<models::Parameter*> ps;
        c1_->collect(ps);
        c2_->collect(ps);
        c3_->collect(ps);
        return ps;
    }

private:
    std::unique_ptr<models::Conv2d> c1_, c2_, c3_;
    models::LeakyReLU a1_, a2_;
};

}  // namespace

std::unique_ptr<models::Model> build_feature_extractor(int in_channels, int feature_dim,
                                                       int width, uint64_t seed, bool pointwise) {
    return std::make_unique<PixelFeatureExtractor>(in_channels, feature_dim, width, seed,
                                                   pointwise);
}

// --- training ---------------------------------------------------------------------------

namespace {

Tensor images_to_tensor(const std::vector<Image>& imgs) {
    const Image& first = imgs.front();
    Tensor x({static_cast<int>(imgs.size()), first.c, first.h, first.w});
    for (size_t i = 0; i < imgs.size(); ++i) image_to_chw(imgs[i], x, static_cast<int>(i));
    return x;
}

}  // namespace

PicieResult train_picie(models::Model& extractor, const data::SampleSet& images, int epochs,
                        const PicieConfig& cfg, uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("train_picie: empty image set");
    if (cfg.k < 2) throw std::invalid_argument("train_picie: k must be >= 2");
    PicieResult out;
    auto opt = train::make_optimizer(cfg.opt);
    auto params = extractor.parameters();
    const size_t n = images.size();

    auto make_views = [&](size_t i, int epoch, Image& v1, Image& v2, GeometricTransform& t) {
        const Image& img = images.image(i);
        uint64_t s = derive_seed(seed, "picie-views", static_cast<uint64_t>(epoch), i);
        v1 = photometric_transform(img, derive_seed(s, "p1"), cfg.photometric);
        Image v2_pre = photometric_transform(img, derive_seed(s, "p2"), cfg.photometric);
        t = draw_geometric(derive_seed(s, "geo"));
        v2 = apply_geometric(t, v2_pre);
    };

    // epoch -1 = initial clustering only (what a 0-epoch run returns)
    auto cluster_epoch = [&](int epoch) {
        // pool aligned pixels of both views over the whole set
        std::vector<Tensor> maps;
        int64_t total_rows = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            std::vector<Image> v1s, v2s;
            std::vector<GeometricTransform> ts;
            for (size_t i = start; i < stop; ++i) {
                Image v1, v2;
                GeometricTransform t;
                make_views(i, epoch, v1, v2, t);
                v1s.push_back(std::move(v1));
                v2s.push_back(std::move(v2));
                ts.push_back(t);
            }
            Tensor f1 = extractor.forward(images_to_tensor(v1s));
            // per-image transforms: apply to single-image slices
            for (size_t i = 0; i < ts.size(); ++i) {
                Tensor slice({1, f1.dim(1), f1.dim(2), f1.dim(3)});
                for (int j = 0; j < f1.dim(1); ++j)
                    for (int y = 0; y < f1.dim(2); ++y)
                        for (int x = 0; x < f1.dim(3); ++x)
                            slice.at(0, j, y, x) = f1.at(static_cast<int>(i), j, y, x);
                maps.push_back(pixels_of(apply_geometric(ts[i], slice)));
                total_rows += maps.back().dim(0);
            }
            Tensor f2 = extractor.forward(images_to_tensor(v2s));
            maps.push_back(pixels_of(f2));
            total_rows += maps.back().dim(0);
        }
        Tensor all({static_cast<int>(total_rows), maps.front().dim(1)});
        int64_t row = 0;
        for (const Tensor& m : maps) {
            std::copy(m.v.begin(), m.v.end(),
                      all.v.begin() + row * all.dim(1));
            row += m.dim(0);
        }
        ClusterModel clusters = minibatch_kmeans(all, cfg.k, cfg.kmeans_iters,
                                                 derive_seed(seed, "kmeans", static_cast<uint64_t>(epoch)));
        std::vector<int> assign = assign_clusters(all, clusters);
        int first_cluster = assign.empty() ? 0 : assign[0];
        bool all_same = true;
        for (int a : assign)
            if (a != first_cluster) {
                all_same = false;
                break;
            }
        if (all_same)
            throw train::TrainAbort(
                "picie cluster collapse: every pixel assigned to cluster " +
                std::to_string(first_cluster));
        return clusters;
    };

    extractor.set_mode(models::Mode::eval);
    out.clusters = cluster_epoch(-1);
    extractor.set_mode(models::Mode::train);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = train::schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        double loss_sum = 0.0;
        int steps = 0;
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(seed, "picie-epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            // one shared transform per step keeps the batch path exact
            std::vector<Image> v1s, v2s;
            GeometricTransform t = draw_geometric(
                derive_seed(seed, "picie-step-geo", static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(steps)));
            for (size_t i = start; i < stop; ++i) {
                const Image& img = images.image(order[i]);
                uint64_t s = derive_seed(seed, "picie-step", static_cast<uint64_t>(epoch),
                                         order[i]);
                v1s.push_back(photometric_transform(img, derive_seed(s, "p1"), cfg.photometric));
                v2s.push_back(
                    apply_geometric(t, photometric_transform(img, derive_seed(s, "p2"),
                                                             cfg.photometric)));
            }
            extractor.zero_grad();
            Tensor f2 = extractor.forward(images_to_tensor(v2s));
            Tensor d_f1_raw, d_f2;
            // caches hold view 2: compute view-1 features next, then loss
            Tensor f1_raw = extractor.forward(images_to_tensor(v1s));
            loss::LossValue lv =
                picie_step_loss_with_grad(f1_raw, f2, out.clusters, t, d_f1_raw, d_f2);
            if (!std::isfinite(lv.value))
                throw train::TrainAbort("non-finite picie loss at epoch " + std::to_string(epoch));
            extractor.backward(d_f1_raw);  // caches hold view 1
            extractor.forward(images_to_tensor(v2s));
            extractor.backward(d_f2);
            opt->step(params, lr);
            loss_sum += lv.value;
            ++steps;
        }
        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss["picie"] = loss_sum / std::max(1, steps);
        out.history.epochs.push_back(std::move(rec));

        extractor.set_mode(models::Mode::eval);
        out.clusters = cluster_epoch(epoch);
        extractor.set_mode(models::Mode::train);
    }
    out.history.final_metrics["label_reads"] = static_cast<double>(images.audit().label_reads);
    return out;
}

Mask segment_unsupervised(models::Model& extractor, const ClusterModel& clusters,
                          const Image& image) {
    models::Mode prior = extractor.mode();
    extractor.set_mode(models::Mode::eval);
    Tensor x({1, image.c, image.h, image.w});
    image_to_chw(image, x, 0);
    Tensor f = extractor.forward(x);
    extractor.set_mode(prior);
    Tensor rows = pixels_of(f);
    std::vector<int> assign = assign_clusters(rows, clusters);
    const int fh = f.dim(2), fw = f.dim(3);
    Mask low(fh, fw);
    for (int y = 0; y < fh; ++y)
        for (int x2 = 0; x2 < fw; ++x2)
            low.at(y, x2) = assign[static_cast<size_t>(y) * fw + x2];
    if (fh == image.h && fw == image.w) return low;
    // nearest upsample for extractors that reduce resolution
    Mask out(image.h, image.w);
    for (int y = 0; y < image.h; ++y)
        for (int x2 = 0; x2 < image.w; ++x2)
            out.at(y, x2) = low.at(y * fh / image.h, x2 * fw / image.w);
    return out;
}

}  // namespace s4mi::picie
