#ifndef S4MI_PICIE_PICIE_HPP
#define S4MI_PICIE_PICIE_HPP

#include <memory>
#include <vector>

#include "s4mi/data/sample_io.hpp"
#include "s4mi/loss/losses.hpp"
#include "s4mi/models/model.hpp"
#include "s4mi/train/seg_trainers.hpp"

namespace s4mi::picie {

struct PhotometricParams {
    double brightness = 0.2;  // additive shift range [-b, b]
    double contrast = 0.2;    // scale range [1-c, 1+c] around the image mean
    double saturation = 0.2;  // 3-channel only
};

// brightness/contrast/saturation jitter, clamped to [0,1]; pixel positions
// never move
Image photometric_transform(const Image& image, uint64_t seed,
                            const PhotometricParams& params = {});

// Exact pixel permutations so equivariance is testable without
// interpolation error. rot90/rot270 require square spatial dims.
enum class GeoKind { identity, hflip, vflip, rot90, rot180, rot270 };

struct GeometricTransform {
    GeoKind kind = GeoKind::identity;
};

GeometricTransform draw_geometric(uint64_t seed);
GeometricTransform inverse(const GeometricTransform& t);
Image apply_geometric(const GeometricTransform& t, const Image& image);
// applies the same spatial permutation to every channel of [B,D,h,w]
Tensor apply_geometric(const GeometricTransform& t, const Tensor& features);

struct ClusterModel {
    Tensor centroids;  // [k, D]
    int k = 0;
};

// k-means++ seeding followed by streaming assignment + running centroid
// updates over fixed-size minibatches
ClusterModel minibatch_kmeans(const Tensor& points, int k, int iters, uint64_t seed,
                              int minibatch = 4096);

std::vector<int> assign_clusters(const Tensor& points, const ClusterModel& clusters);

// Four-term clustering loss. f1_raw is the plain view's feature map; the
// geometric transform is applied to it here (post-hoc) before scoring, so
// both maps live in the transformed frame. f2 is the transformed view's
// feature map. Per-pixel logits are negative squared distances to the
// centroids; each term is a mean cross-entropy against one view's
// assignments.
loss::LossValue picie_step_loss(const Tensor& f1_raw, const Tensor& f2,
                                const ClusterModel& clusters, const GeometricTransform& t);
loss::LossValue picie_step_loss_with_grad(const Tensor& f1_raw, const Tensor& f2,
                                          const ClusterModel& clusters,
                                          const GeometricTransform& t, Tensor& d_f1_raw,
                                          Tensor& d_f2);

// full-resolution convolutional pixel-feature extractor ([B,C,H,W] ->
// [B,D,H,W]); the pointwise variant (1x1 kernels only) commutes exactly
// with geometric transforms and is the equivariance oracle in tests
std::unique_ptr<models::Model> build_feature_extractor(int in_channels, int feature_dim,
                                                       int width, uint64_t seed,
                                                       bool pointwise = false);

struct PicieConfig {
    train::OptimizerConfig opt{train::OptimizerConfig::Kind::sgd, 1e-4, 0.0};
    train::ScheduleConfig sched{train::ScheduleConfig::Kind::step, 50, 0.0, 20, 0.5};
    int k = 2;
    int batch_size = 8;
    int kmeans_iters = 10;
    PhotometricParams photometric;
};

struct PicieResult {
    ClusterModel clusters;
    train::TrainHistory history;
};

// alternates epoch-level clustering of the current features with gradient
// steps on picie_step_loss; reads images only (never masks); aborts with a
// diagnostic if every pixel lands in one cluster
PicieResult train_picie(models::Model& extractor, const data::SampleSet& images, int epochs,
                        const PicieConfig& cfg, uint64_t seed);

// nearest-centroid mask at input resolution
Mask segment_unsupervised(models::Model& extractor, const ClusterModel& clusters,
                          const Image& image);

}  // namespace s4mi::picie

#endif
