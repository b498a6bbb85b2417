#ifndef S4MI_SELFSUP_SELFSUP_HPP
#define S4MI_SELFSUP_SELFSUP_HPP

#include <memory>

#include "s4mi/data/sample_io.hpp"
#include "s4mi/models/zoo.hpp"
#include "s4mi/train/seg_trainers.hpp"

namespace s4mi::selfsup {

enum class Regime { augmentation_asymmetric, architecture_asymmetric };

struct ViewPair {
    Image view_a, view_b;
    Regime provenance = Regime::augmentation_asymmetric;
};

// augmentation regime: two independent crop+flip+jitter draws of one image;
// architecture regime: the unmodified image twice
ViewPair make_view_pair(const Image& image, Regime regime, uint64_t seed);

// Symmetrized stop-gradient cosine objective:
//   0.5*[(1 - cos(e1, sg(e2))) + (1 - cos(e2, sg(e1)))]
// Each returned gradient differentiates only the term where its argument
// is live; the peer embedding is a constant there.
double similarity_loss(const std::vector<double>& e1, const std::vector<double>& e2);
double similarity_loss_with_grad(const std::vector<double>& e1, const std::vector<double>& e2,
                                 std::vector<double>& g1, std::vector<double>& g2);

struct PretrainConfig {
    train::OptimizerConfig opt;               // paper constants reused
    train::ScheduleConfig sched;
    int batch_size = 16;
    int embed_dim = 64;
    int proj_hidden = 64;
    double collapse_threshold = 1e-6;         // min mean per-dim batch variance
};

// label-free joint-embedding pretraining; reads images only (the sample
// set's label-access counter stays at zero)
train::TrainHistory pretrain_augmentation(models::Backbone& backbone,
                                          const data::SampleSet& images, int epochs,
                                          const PretrainConfig& cfg, uint64_t seed);

train::TrainHistory pretrain_architecture(models::Backbone& conv_backbone,
                                          models::Backbone& attn_backbone,
                                          const data::SampleSet& images, int epochs,
                                          const PretrainConfig& cfg, uint64_t seed);

enum class ClsMetric { f1, recall };

struct FinetuneConfig {
    train::OptimizerConfig opt;
    train::ScheduleConfig sched;
    int batch_size = 16;
    bool multilabel = false;  // per-class sigmoid outputs instead of softmax
    ClsMetric metric = ClsMetric::f1;
};

struct FinetuneResult {
    std::unique_ptr<models::Classifier> classifier;
    train::TrainHistory history;
};

// attaches a fresh linear head and trains on round(fraction * N) labeled
// images selected via the label-fraction split
FinetuneResult finetune(std::unique_ptr<models::Backbone> backbone,
                        const data::SampleSet& labeled, const data::SampleSet& val,
                        int epochs, double fraction, const FinetuneConfig& cfg, uint64_t seed);

double evaluate_classifier(models::Classifier& clf, const data::SampleSet& ds,
                           const FinetuneConfig& cfg, int eval_batch = 16);

}  // namespace s4mi::selfsup

#endif
