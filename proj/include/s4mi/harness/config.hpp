#ifndef S4MI_HARNESS_CONFIG_HPP
#define S4MI_HARNESS_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s4mi/data/pipeline.hpp"
#include "s4mi/models/zoo.hpp"
#include "s4mi/train/optim.hpp"

namespace s4mi::harness {

enum class Method { supervised, semi_cross_teach, selfsup_aug, selfsup_arch, picie };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct SyntheticSpec {
    int n_images = 200;
    int image_size = 64;
    uint64_t seed = 7;
    double fg_fraction = 0.2;   // target foreground pixel share
    double noise = 0.04;
    bool two_color = false;     // color-separable foreground (PiCIE corpus)
};

struct TrainConfig {
    Method method = Method::supervised;
    std::string dataset = "synthetic";  // "synthetic" or a raw-directory path
    SyntheticSpec synthetic;
    double label_fraction = 1.0;
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    int epochs = 50;
    int pretrain_epochs = 100;
    int batch_size = 16;
    train::OptimizerConfig optimizer;
    train::ScheduleConfig schedule;
    models::ModelSpec model;
    int64_t pair_budget = 0;  // 0: budget taken from the conv model's count
    data::PreprocessOptions preprocess;
    data::SplitSpec split;
    double unsup_weight = 1.0;
    bool augment = true;
    bool fifteen_one = true;
    bool multilabel = false;
    std::string metric = "iou";  // iou | f1 | recall
    int picie_k = 2;
    bool allow_any_fraction = false;
    std::filesystem::path output_dir;
};

TrainConfig parse_config(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const TrainConfig& cfg);

// validates the label-fraction protocol (picie => 0, selfsup => {0.1, 1.0},
// supervised/semi => > 0, grid {0,.1,.5,.7,1} unless allow_any_fraction)
void validate_config(const TrainConfig& cfg);

// canonical FNV-1a hash over the config (seeds and output_dir excluded:
// records are keyed per seed and the hash names the experiment)
std::string config_hash(const TrainConfig& cfg);

std::filesystem::path output_root(const TrainConfig& cfg);  // honors S4MI_OUT

}  // namespace s4mi::harness

#endif
