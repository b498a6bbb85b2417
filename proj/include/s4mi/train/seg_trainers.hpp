#ifndef S4MI_TRAIN_SEG_TRAINERS_HPP
#define S4MI_TRAIN_SEG_TRAINERS_HPP

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "s4mi/data/sample_io.hpp"
#include "s4mi/models/model.hpp"
#include "s4mi/train/optim.hpp"

namespace s4mi::train {

// thrown when a run must stop (non-finite loss, embedding collapse, ...);
// the harness records the diagnostic instead of a result
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& what) : std::runtime_error(what) {}
};

struct TrainerConfig {
    OptimizerConfig opt;
    ScheduleConfig sched;
    int batch_size = 16;
    double dice_eps = 1e-5;
    double unsup_weight = 1.0;     // weight on the cross-teaching term (paper sums with 1)
    bool fifteen_one = true;       // 15+1 batch rule at fraction 1.0
    bool augment = true;           // random rotation / flip on training batches
    std::vector<double> class_weights;  // empty = unit weights
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    std::map<std::string, double> train_loss;   // per-component epoch averages
    std::map<std::string, double> val_metrics;  // "val_iou" (+ "_attn" for the pair)
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::map<std::string, double> final_metrics;
    int best_epoch = -1;
};

// deterministic draw of one semi-supervised batch: below fraction 1.0 the
// batch is half labeled / half unlabeled; at fraction 1.0 it is
// (batch_size-1) labeled plus one image drawn from the labeled pool with
// its mask withheld
struct SemiBatch {
    std::vector<size_t> labeled;    // indices into the labeled pool
    std::vector<size_t> unlabeled;  // indices into the unlabeled pool (see flag)
    bool unlabeled_from_labeled = false;
};

SemiBatch compose_semi_batch(size_t labeled_pool, size_t unlabeled_pool, double fraction,
                             int batch_size, uint64_t seed);

// mean foreground IoU of argmax predictions over a sample set
double evaluate_seg_iou(models::Model& model, const data::SampleSet& ds, int eval_batch = 8);

TrainHistory train_supervised(models::Model& model, const data::SampleSet& train,
                              const data::SampleSet& val, const TrainerConfig& cfg, int epochs,
                              uint64_t seed);

TrainHistory train_cross_teaching(models::Model& conv_model, models::Model& attn_model,
                                  const data::SampleSet& labeled, const data::SampleSet& unlabeled,
                                  const data::SampleSet& val, double fraction,
                                  const TrainerConfig& cfg, int epochs, uint64_t seed);

}  // namespace s4mi::train

#endif
