#ifndef S4MI_MODELS_ZOO_HPP
#define S4MI_MODELS_ZOO_HPP

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "s4mi/models/layers.hpp"
#include "s4mi/models/model.hpp"

namespace s4mi::models {

enum class Family { conv_unet, windowed_attention, conv_classifier, attention_classifier };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Micro-scale stand-ins for the full-size backbones: a convolutional
// encoder-decoder, a windowed-attention segmenter, and the two matching
// classification backbones.
struct ModelSpec {
    Family family = Family::conv_unet;
    int width = 16;       // conv channels / attention embedding dim
    int depth = 2;        // encoder stages / attention blocks
    int num_classes = 2;
    int in_channels = 3;
    int patch = 4;        // attention models: patch embedding stride
    int window = 4;       // attention models: attention window (in tokens)
    int input_size = 224; // expected square input side

    bool is_segmenter() const {
        return family == Family::conv_unet || family == Family::windowed_attention;
    }
};

void validate_spec(const ModelSpec& spec);

// Classifier split into a feature backbone and a linear head so the
// self-supervised stage can train the backbone alone.
class Backbone : public Model {
public:
    virtual int feature_dim() const = 0;
};

class Classifier : public Model {
public:
    Classifier(std::unique_ptr<Backbone> backbone, int num_classes, uint64_t seed);

    Tensor forward(const Tensor& x) override;   // [B,C,H,W] -> [B,K]
    Tensor backward(const Tensor& dlogits) override;
    std::vector<Parameter*> parameters() override;

    Backbone& backbone() { return *backbone_; }
    Linear& head() { return head_; }

private:
    std::unique_ptr<Backbone> backbone_;
    Linear head_;
};

std::unique_ptr<Model> build_model(const ModelSpec& spec, uint64_t seed);
std::unique_ptr<Backbone> build_backbone(const ModelSpec& spec, uint64_t seed);

// one conv and one windowed-attention segmenter, each within 20% of the
// parameter budget, produced by a deterministic width search
std::pair<std::unique_ptr<Model>, std::unique_ptr<Model>> comparable_pair(
    int64_t budget, const ModelSpec& base, uint64_t seed,
    ModelSpec* conv_spec_out = nullptr, ModelSpec* attn_spec_out = nullptr);

// Checkpoints: versioned named-parameter arrays plus the spec; loading
// matches arrays to parameters by name. Externally produced weights with
// matching names are accepted the same way.
void save_checkpoint(const std::filesystem::path& path, Model& model, const ModelSpec& spec);
ModelSpec peek_checkpoint_spec(const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace s4mi::models

#endif
