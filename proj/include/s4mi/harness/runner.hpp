#ifndef S4MI_HARNESS_RUNNER_HPP
#define S4MI_HARNESS_RUNNER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s4mi/harness/config.hpp"
#include "s4mi/metrics/metrics.hpp"
#include "s4mi/train/seg_trainers.hpp"

namespace s4mi::harness {

struct RunRecord {
    std::string config_hash;
    uint64_t seed = 0;
    std::string method;
    std::string status = "ok";  // "ok" | "aborted"
    std::string diagnostic;
    train::TrainHistory history;
    std::map<std::string, double> final;  // includes "primary"
    double wall_clock_s = 0.0;
    std::map<std::string, std::string> artifacts;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);

struct ExperimentResult {
    std::vector<RunRecord> records;
    std::optional<metrics::SeedAggregate> aggregate;  // over "primary" of ok runs
    std::string primary_metric;
    bool all_ok = true;
};

// Prepares (or reuses) the dataset and processed-sample cache, executes one
// run per seed (skipping seeds whose record already exists), persists
// records atomically, and writes the seed aggregate. jobs > 1 forks one
// worker process per pending seed.
ExperimentResult run_experiment(const TrainConfig& cfg, int jobs = 1);

// single seeded run, no cache interaction (run_experiment calls this)
RunRecord run_single_seed(const TrainConfig& cfg, uint64_t seed);

std::filesystem::path run_dir(const TrainConfig& cfg, uint64_t seed);
std::filesystem::path aggregate_path(const TrainConfig& cfg);

// raw-dataset + processed-sample preparation, shared with the CLI
std::filesystem::path ensure_dataset(const TrainConfig& cfg);
std::filesystem::path ensure_processed(const TrainConfig& cfg);

}  // namespace s4mi::harness

#endif
