#ifndef S4MI_DATA_SAMPLE_IO_HPP
#define S4MI_DATA_SAMPLE_IO_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "s4mi/data/pipeline.hpp"

namespace s4mi::data {

// Raw datasets are directories of PPM/PGM images with sibling mask files
// matched by stem ("<stem>.ppm" + "<stem>_mask.pgm") and an optional
// labels.csv (id,label[,label...]) for classification targets.

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_pgm(const std::filesystem::path& path);

std::vector<RawSample> load_raw_dir(const std::filesystem::path& dir);

// Processed samples are stored one file per sample (CBOR-encoded record
// with the image array, optional mask, labels and the replayable steps).
void write_sample(const std::filesystem::path& path, const ProcessedSample& sample);
ProcessedSample read_sample(const std::filesystem::path& path);

struct Manifest {
    std::vector<std::string> train, val, test;
    std::map<std::string, LabelFractionSplit> label_fractions;  // key: "0.10" etc.
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// Audited access to a set of processed samples. Trainers must fetch
// images and labels through this interface; the label counter is how the
// no-label contract of the unsupervised paths is enforced and tested.
struct AccessAudit {
    int64_t image_reads = 0;
    int64_t label_reads = 0;
};

class SampleSet {
public:
    SampleSet() = default;
    explicit SampleSet(std::vector<ProcessedSample> items) : items_(std::move(items)) {}

    static SampleSet load(const std::filesystem::path& dir,
                          const std::vector<std::string>& ids);

    void add(ProcessedSample s) { items_.push_back(std::move(s)); }
    size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const std::string& id(size_t i) const { return items_.at(i).id; }
    const Image& image(size_t i) const {
        ++audit_.image_reads;
        return items_.at(i).image;
    }
    bool has_mask(size_t i) const { return items_.at(i).mask.has_value(); }
    const Mask& mask(size_t i) const {
        ++audit_.label_reads;
        return items_.at(i).mask.value();
    }
    bool has_labels(size_t i) const { return !items_.at(i).labels.empty(); }
    const std::vector<int>& labels(size_t i) const {
        ++audit_.label_reads;
        return items_.at(i).labels;
    }

    const AccessAudit& audit() const { return audit_; }
    void reset_audit() { audit_ = AccessAudit{}; }

private:
    std::vector<ProcessedSample> items_;
    mutable AccessAudit audit_;
};

}  // namespace s4mi::data

#endif
