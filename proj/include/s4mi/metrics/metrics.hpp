#ifndef S4MI_METRICS_METRICS_HPP
#define S4MI_METRICS_METRICS_HPP

#include <cstdint>
#include <vector>

#include "s4mi/core/image.hpp"
#include "s4mi/core/tensor.hpp"

namespace s4mi::models {
class Model;
}

namespace s4mi::metrics {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt, int positive_class);

// Jaccard index of the positive regions; both-empty is defined as 1.0
double iou(const Mask& pred, const Mask& gt, int positive_class = 1);

// Dice coefficient 2|A∩B| / (|A|+|B|); both-empty is 1.0
double dice_coefficient(const Mask& pred, const Mask& gt, int positive_class = 1);

double precision(const ConfusionCounts& c);  // tp+fp == 0 -> 0
double recall(const ConfusionCounts& c);     // tp+fn == 0 -> 0
double f1(const ConfusionCounts& c);         // 2tp+fp+fn == 0 -> 0

// mean of per-class IoU for class ids [0, num_classes)
double mean_iou(const Mask& pred, const Mask& gt, int num_classes);

// macro-averaged classification scores (per-class one-vs-rest counts)
double macro_f1_multiclass(const std::vector<int>& pred, const std::vector<int>& gt,
                           int num_classes);
double macro_recall_multiclass(const std::vector<int>& pred, const std::vector<int>& gt,
                               int num_classes);
double macro_f1_multilabel(const std::vector<std::vector<int>>& pred,
                           const std::vector<std::vector<int>>& gt);

struct SeedAggregate {
    std::vector<double> values;
    double mean = 0.0;
    double ci_halfwidth = 0.0;  // 1.96 * s / sqrt(n), sample std (n-1)
    double confidence = 0.95;
};

SeedAggregate aggregate_seeds(const std::vector<double>& values);

// Optimal one-to-one assignment of predicted cluster ids to ground-truth
// class ids that maximizes total intersection. Returns mapping[cluster] =
// class. Rectangular inputs are padded internally.
std::vector<int> hungarian_match(const std::vector<std::vector<int64_t>>& intersection);

// mean IoU after Hungarian matching of cluster ids to classes
double matched_mean_iou(const std::vector<Mask>& pred_clusters,
                        const std::vector<Mask>& gts, int k, int num_classes);

struct SaliencyMap {
    Image values;  // H x W x 1, non-negative, max-normalized to [0,1]
    int class_index = 0;
};

// |d score_class / d pixel|, max over channels, normalized by the map max
// (an all-zero map stays zero)
SaliencyMap saliency_map(models::Model& classifier, const Image& image, int class_index);

}  // namespace s4mi::metrics

#endif
