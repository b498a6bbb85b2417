#include "s4mi/models/zoo.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "s4mi/core/parallel.hpp"

namespace s4mi::models {

using nlohmann::json;

std::string family_name(Family f) {
    switch (f) {
        case Family::conv_unet: return "conv_unet";
        case Family::windowed_attention: return "windowed_attention";
        case Family::conv_classifier: return "conv_classifier";
        case Family::attention_classifier: return "attention_classifier";
    }
    throw std::logic_error("family_name: bad enum");
}

Family family_from_name(const std::string& name) {
    if (name == "conv_unet") return Family::conv_unet;
    if (name == "windowed_attention") return Family::windowed_attention;
    if (name == "conv_classifier") return Family::conv_classifier;
    if (name == "attention_classifier") return Family::attention_classifier;
    throw std::invalid_argument("unknown model family: " + name);
}

void validate_spec(const ModelSpec& spec) {
    if (spec.width < 2 || spec.depth < 1 || spec.num_classes < 1 || spec.in_channels < 1)
        throw std::invalid_argument("model spec: degenerate width/depth/classes/channels");
    if (spec.family == Family::conv_unet || spec.family == Family::conv_classifier) {
        if (spec.input_size % (1 << spec.depth) != 0)
            throw std::invalid_argument("model spec: input size not divisible by downsampling");
    } else {
        if (spec.width % 2 != 0)
            throw std::invalid_argument("model spec: attention width must be even");
        if (spec.input_size % spec.patch != 0)
            throw std::invalid_argument("model spec: input size not divisible by patch");
        if ((spec.input_size / spec.patch) % spec.window != 0)
            throw std::invalid_argument("model spec: token grid not divisible by window");
    }
}

namespace {

constexpr int kAttentionHeads = 2;

int level_width(int base, int level) { return base << level; }

// --- conv encoder-decoder segmenter ----------------------------------------

class ConvUNetSeg : public Model {
public:
    ConvUNetSeg(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(derive_seed(seed, "conv_unet"));
        stem_ = std::make_unique<Conv2d>("stem", spec.in_channels, spec.width, 3, 1, 1, rng);
        for (int i = 1; i <= spec.depth; ++i) {
            enc_.push_back(std::make_unique<Conv2d>("enc" + std::to_string(i),
                                                    level_width(spec.width, i - 1),
                                                    level_width(spec.width, i), 3, 1, 1, rng));
        }
        int deepest = level_width(spec.width, spec.depth);
        mid_ = std::make_unique<Conv2d>("mid", deepest, deepest, 3, 1, 1, rng);
        for (int i = spec.depth - 1; i >= 0; --i) {
            int in_ch = level_width(spec.width, i + 1) + level_width(spec.width, i);
            dec_.push_back(std::make_unique<Conv2d>("dec" + std::to_string(i), in_ch,
                                                    level_width(spec.width, i), 3, 1, 1, rng));
        }
        head_ = std::make_unique<Conv2d>("head", spec.width, spec.num_classes, 1, 1, 0, rng);
        pool_.resize(static_cast<size_t>(spec.depth));
        up_.resize(static_cast<size_t>(spec.depth));
        act_enc_.resize(static_cast<size_t>(spec.depth));
        act_dec_.resize(static_cast<size_t>(spec.depth));
    }

    Tensor forward(const Tensor& x) override {
        const int d = spec_.depth;
        if (x.dim(2) % (1 << d) != 0 || x.dim(3) % (1 << d) != 0)
            throw std::invalid_argument("conv_unet: input not divisible by downsampling");
        std::vector<Tensor> a(static_cast<size_t>(d) + 1);
        a[0] = act_stem_.forward(stem_->forward(x));
        for (int i = 1; i <= d; ++i)
            a[static_cast<size_t>(i)] = act_enc_[static_cast<size_t>(i - 1)].forward(
                enc_[static_cast<size_t>(i - 1)]->forward(
                    pool_[static_cast<size_t>(i - 1)].forward(a[static_cast<size_t>(i - 1)])));
        Tensor h = act_mid_.forward(mid_->forward(a[static_cast<size_t>(d)]));
        for (int i = d - 1; i >= 0; --i) {
            size_t di = static_cast<size_t>(d - 1 - i);  // dec_ is stored deepest-first
            Tensor u = up_[static_cast<size_t>(i)].forward(h);
            h = act_dec_[di].forward(dec_[di]->forward(cat_channels(u, a[static_cast<size_t>(i)])));
        }
        return head_->forward(h);
    }

    Tensor backward(const Tensor& dlogits) override {
        const int d = spec_.depth;
        Tensor dh = head_->backward(dlogits);
        std::vector<Tensor> dskip(static_cast<size_t>(d));
        for (int i = 0; i <= d - 1; ++i) {
            size_t di = static_cast<size_t>(d - 1 - i);
            Tensor dcat = dec_[di]->backward(act_dec_[di].backward(dh));
            Tensor du;
            split_channels(dcat, level_width(spec_.width, i + 1), du, dskip[static_cast<size_t>(i)]);
            dh = up_[static_cast<size_t>(i)].backward(du);
        }
        Tensor da = mid_->backward(act_mid_.backward(dh));
        for (int i = d; i >= 1; --i) {
            if (i < d)
                for (size_t j = 0; j < da.v.size(); ++j)
                    da.v[j] += dskip[static_cast<size_t>(i)].v[j];
            da = pool_[static_cast<size_t>(i - 1)].backward(enc_[static_cast<size_t>(i - 1)]->backward(
                act_enc_[static_cast<size_t>(i - 1)].backward(da)));
        }
        for (size_t j = 0; j < da.v.size(); ++j) da.v[j] += dskip[0].v[j];
        return stem_->backward(act_stem_.backward(da));
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> ps;
        stem_->collect(ps);
        for (auto& c : enc_) c->collect(ps);
        mid_->collect(ps);
        for (auto& c : dec_) c->collect(ps);
        head_->collect(ps);
        return ps;
    }

private:
    ModelSpec spec_;
    std::unique_ptr<Conv2d> stem_, mid_, head_;
    std::vector<std::unique_ptr<Conv2d>> enc_, dec_;
    LeakyReLU act_stem_, act_mid_;
    std::vector<LeakyReLU> act_enc_, act_dec_;
    std::vector<AvgPool2> pool_;
    std::vector<NearestUp2> up_;
};

// --- shared attention trunk ---------------------------------------------------

// patch embedding + `depth` pre-norm attention/MLP blocks over tokens
class AttentionTrunk {
public:
    AttentionTrunk(const ModelSpec& spec, Rng& rng) : spec_(spec) {
        embed_ = std::make_unique<Conv2d>("embed", spec.in_channels, spec.width, spec.patch,
                                          spec.patch, 0, rng);
        for (int i = 0; i < spec.depth; ++i) {
            std::string p = "blk" + std::to_string(i);
            norm1_.push_back(std::make_unique<LayerNorm>(p + ".ln1", spec.width));
            attn_.push_back(std::make_unique<WindowAttention>(p + ".attn", spec.width,
                                                              kAttentionHeads, spec.window, rng));
            norm2_.push_back(std::make_unique<LayerNorm>(p + ".ln2", spec.width));
            fc1_.push_back(std::make_unique<Linear>(p + ".fc1", spec.width, 2 * spec.width, rng));
            fc2_.push_back(std::make_unique<Linear>(p + ".fc2", 2 * spec.width, spec.width, rng));
        }
        act_.resize(static_cast<size_t>(spec.depth));
        norm_out_ = std::make_unique<LayerNorm>("ln_out", spec.width);
    }

    // returns tokens [B*Th*Tw, width]
    Tensor forward(const Tensor& x) {
        if (x.dim(2) % spec_.patch != 0 || x.dim(3) % spec_.patch != 0)
            throw std::invalid_argument("attention trunk: input not divisible by patch");
        batch_ = x.dim(0);
        Tensor grid = embed_->forward(x);
        th_ = grid.dim(2);
        tw_ = grid.dim(3);
        if (th_ % spec_.window != 0 || tw_ % spec_.window != 0)
            throw std::invalid_argument("attention trunk: token grid not divisible by window");
        Tensor tokens = grid_to_tokens(grid);
        for (int i = 0; i < spec_.depth; ++i) {
            size_t si = static_cast<size_t>(i);
            Tensor t1 = attn_[si]->forward(norm1_[si]->forward(tokens), batch_, th_, tw_);
            for (size_t j = 0; j < tokens.v.size(); ++j) tokens.v[j] += t1.v[j];
            Tensor t2 = fc2_[si]->forward(act_[si].forward(fc1_[si]->forward(norm2_[si]->forward(tokens))));
            for (size_t j = 0; j < tokens.v.size(); ++j) tokens.v[j] += t2.v[j];
        }
        return norm_out_->forward(tokens);
    }

    Tensor backward(const Tensor& dtokens_out) {
        Tensor dt = norm_out_->backward(dtokens_out);
        for (int i = spec_.depth - 1; i >= 0; --i) {
            size_t si = static_cast<size_t>(i);
            Tensor dres = norm2_[si]->backward(fc1_[si]->backward(
                act_[si].backward(fc2_[si]->backward(dt))));
            for (size_t j = 0; j < dt.v.size(); ++j) dt.v[j] += dres.v[j];
            dres = norm1_[si]->backward(attn_[si]->backward(dt));
            for (size_t j = 0; j < dt.v.size(); ++j) dt.v[j] += dres.v[j];
        }
        return embed_->backward(tokens_to_grid(dt));
    }

    void collect(std::vector<Parameter*>& ps) {
        embed_->collect(ps);
        for (int i = 0; i < spec_.depth; ++i) {
            size_t si = static_cast<size_t>(i);
            norm1_[si]->collect(ps);
            attn_[si]->collect(ps);
            norm2_[si]->collect(ps);
            fc1_[si]->collect(ps);
            fc2_[si]->collect(ps);
        }
        norm_out_->collect(ps);
    }

    int batch() const { return batch_; }
    int th() const { return th_; }
    int tw() const { return tw_; }

private:
    Tensor grid_to_tokens(const Tensor& g) const {
        const int b = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
        Tensor t({b * h * w, c});
        parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t r) {
            int bi = static_cast<int>(r / (h * w));
            int rem = static_cast<int>(r % (h * w));
            int y = rem / w, x = rem % w;
            for (int ci = 0; ci < c; ++ci) t.at(static_cast<int>(r), ci) = g.at(bi, ci, y, x);
        });
        return t;
    }
    Tensor tokens_to_grid(const Tensor& t) const {
        Tensor g({batch_, spec_.width, th_, tw_});
        const int h = th_, w = tw_, c = spec_.width;
        parallel_for(static_cast<int64_t>(batch_) * h * w, [&](int64_t r) {
            int bi = static_cast<int>(r / (h * w));
            int rem = static_cast<int>(r % (h * w));
            int y = rem / w, x = rem % w;
            for (int ci = 0; ci < c; ++ci) g.at(bi, ci, y, x) = t.at(static_cast<int>(r), ci);
        });
        return g;
    }

    ModelSpec spec_;
    int batch_ = 0, th_ = 0, tw_ = 0;
    std::unique_ptr<Conv2d> embed_;
    std::vector<std::unique_ptr<LayerNorm>> norm1_, norm2_;
    std::vector<std::unique_ptr<WindowAttention>> attn_;
    std::vector<std::unique_ptr<Linear>> fc1_, fc2_;
    std::vector<LeakyReLU> act_;
    std::unique_ptr<LayerNorm> norm_out_;
};

// --- windowed-attention segmenter ----------------------------------------------

class WindowAttentionSeg : public Model {
public:
    WindowAttentionSeg(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(derive_seed(seed, "windowed_attention"));
        trunk_ = std::make_unique<AttentionTrunk>(spec, rng);
        decode_ = std::make_unique<Linear>("decode", spec.width,
                                           spec.num_classes * spec.patch * spec.patch, rng);
    }

    Tensor forward(const Tensor& x) override {
        Tensor dec = decode_->forward(trunk_->forward(x));
        // learned sub-pixel decode: each token emits its patch of logits
        const int b = trunk_->batch(), th = trunk_->th(), tw = trunk_->tw();
        const int p = spec_.patch, k = spec_.num_classes;
        Tensor logits({b, k, th * p, tw * p});
        parallel_for(static_cast<int64_t>(b) * th * tw, [&](int64_t r) {
            int bi = static_cast<int>(r / (th * tw));
            int rem = static_cast<int>(r % (th * tw));
            int y = rem / tw, x2 = rem % tw;
            for (int ki = 0; ki < k; ++ki)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        logits.at(bi, ki, y * p + py, x2 * p + px) =
                            dec.at(static_cast<int>(r), (ki * p + py) * p + px);
        });
        return logits;
    }

    Tensor backward(const Tensor& dlogits) override {
        const int b = trunk_->batch(), th = trunk_->th(), tw = trunk_->tw();
        const int p = spec_.patch, k = spec_.num_classes;
        Tensor ddec({b * th * tw, k * p * p});
        parallel_for(static_cast<int64_t>(b) * th * tw, [&](int64_t r) {
            int bi = static_cast<int>(r / (th * tw));
            int rem = static_cast<int>(r % (th * tw));
            int y = rem / tw, x2 = rem % tw;
            for (int ki = 0; ki < k; ++ki)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        ddec.at(static_cast<int>(r), (ki * p + py) * p + px) =
                            dlogits.at(bi, ki, y * p + py, x2 * p + px);
        });
        return trunk_->backward(decode_->backward(ddec));
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> ps;
        trunk_->collect(ps);
        decode_->collect(ps);
        return ps;
    }

private:
    ModelSpec spec_;
    std::unique_ptr<AttentionTrunk> trunk_;
    std::unique_ptr<Linear> decode_;
};

// --- classification backbones ----------------------------------------------------

class ConvBackbone : public Backbone {
public:
    ConvBackbone(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(derive_seed(seed, "conv_classifier"));
        stem_ = std::make_unique<Conv2d>("stem", spec.in_channels, spec.width, 3, 1, 1, rng);
        for (int i = 1; i <= spec.depth; ++i)
            stage_.push_back(std::make_unique<Conv2d>("stage" + std::to_string(i),
                                                      level_width(spec.width, i - 1),
                                                      level_width(spec.width, i), 3, 1, 1, rng));
        pool_.resize(static_cast<size_t>(spec.depth));
        act_.resize(static_cast<size_t>(spec.depth) + 1);
    }

    int feature_dim() const override { return level_width(spec_.width, spec_.depth); }

    Tensor forward(const Tensor& x) override {
        Tensor h = act_[0].forward(stem_->forward(x));
        for (int i = 0; i < spec_.depth; ++i)
            h = act_[static_cast<size_t>(i) + 1].forward(
                stage_[static_cast<size_t>(i)]->forward(pool_[static_cast<size_t>(i)].forward(h)));
        gap_shape_ = h.shape;
        return global_avg_pool(h);
    }

    Tensor backward(const Tensor& dfeat) override {
        Tensor dh = global_avg_pool_backward(dfeat, gap_shape_);
        for (int i = spec_.depth - 1; i >= 0; --i)
            dh = pool_[static_cast<size_t>(i)].backward(stage_[static_cast<size_t>(i)]->backward(
                act_[static_cast<size_t>(i) + 1].backward(dh)));
        return stem_->backward(act_[0].backward(dh));
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> ps;
        stem_->collect(ps);
        for (auto& s : stage_) s->collect(ps);
        return ps;
    }

private:
    ModelSpec spec_;
    std::unique_ptr<Conv2d> stem_;
    std::vector<std::unique_ptr<Conv2d>> stage_;
    std::vector<AvgPool2> pool_;
    std::vector<LeakyReLU> act_;
    std::vector<int> gap_shape_;
};

class AttentionBackbone : public Backbone {
public:
    AttentionBackbone(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(derive_seed(seed, "attention_classifier"));
        trunk_ = std::make_unique<AttentionTrunk>(spec, rng);
    }

    int feature_dim() const override { return spec_.width; }

    Tensor forward(const Tensor& x) override {
        Tensor tokens = trunk_->forward(x);
        tokens_per_batch_ = trunk_->th() * trunk_->tw();
        return mean_pool_tokens(tokens, trunk_->batch());
    }

    Tensor backward(const Tensor& dfeat) override {
        return trunk_->backward(
            mean_pool_tokens_backward(dfeat, trunk_->batch(), tokens_per_batch_));
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> ps;
        trunk_->collect(ps);
        return ps;
    }

private:
    ModelSpec spec_;
    std::unique_ptr<AttentionTrunk> trunk_;
    int tokens_per_batch_ = 0;
};

}  // namespace

// --- classifier wrapper --------------------------------------------------------

Classifier::Classifier(std::unique_ptr<Backbone> backbone, int num_classes, uint64_t seed)
    : backbone_(std::move(backbone)),
      head_([&] {
          Rng rng(derive_seed(seed, "cls_head"));
          return Linear("cls_head", backbone_->feature_dim(), num_classes, rng);
      }()) {}

Tensor Classifier::forward(const Tensor& x) { return head_.forward(backbone_->forward(x)); }

Tensor Classifier::backward(const Tensor& dlogits) {
    return backbone_->backward(head_.backward(dlogits));
}

std::vector<Parameter*> Classifier::parameters() {
    std::vector<Parameter*> ps = backbone_->parameters();
    head_.collect(ps);
    return ps;
}

// --- factories -------------------------------------------------------------------

std::unique_ptr<Backbone> build_backbone(const ModelSpec& spec, uint64_t seed) {
    validate_spec(spec);
    switch (spec.family) {
        case Family::conv_classifier: return std::make_unique<ConvBackbone>(spec, seed);
        case Family::attention_classifier: return std::make_unique<AttentionBackbone>(spec, seed);
        default: throw std::invalid_argument("build_backbone: not a classifier family");
    }
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, uint64_t seed) {
    validate_spec(spec);
    switch (spec.family) {
        case Family::conv_unet: return std::make_unique<ConvUNetSeg>(spec, seed);
        case Family::windowed_attention: return std::make_unique<WindowAttentionSeg>(spec, seed);
        case Family::conv_classifier:
        case Family::attention_classifier:
            return std::make_unique<Classifier>(build_backbone(spec, seed), spec.num_classes,
                                                seed);
    }
    throw std::logic_error("build_model: bad enum");
}

std::pair<std::unique_ptr<Model>, std::unique_ptr<Model>> comparable_pair(
    int64_t budget, const ModelSpec& base, uint64_t seed, ModelSpec* conv_spec_out,
    ModelSpec* attn_spec_out) {
    if (budget < 1000) throw std::invalid_argument("comparable_pair: budget too small");
    auto search = [&](Family family) {
        ModelSpec best;
        double best_err = 1e300;
        for (int width = 4; width <= 512; width += 2) {
            ModelSpec s = base;
            s.family = family;
            s.width = width;
            try {
                validate_spec(s);
            } catch (const std::invalid_argument&) {
                continue;
            }
            auto m = build_model(s, seed);
            int64_t n = parameter_count(*m);
            double err = std::abs(static_cast<double>(n - budget)) / static_cast<double>(budget);
            if (err < best_err) {
                best_err = err;
                best = s;
            }
            if (n > budget * 2) break;
        }
        if (best_err > 0.2)
            throw std::invalid_argument("comparable_pair: no width lands within 20% of budget for " +
                                        family_name(family));
        return best;
    };
    ModelSpec conv_spec = search(Family::conv_unet);
    ModelSpec attn_spec = search(Family::windowed_attention);
    if (conv_spec_out) *conv_spec_out = conv_spec;
    if (attn_spec_out) *attn_spec_out = attn_spec;
    return {build_model(conv_spec, seed), build_model(attn_spec, derive_seed(seed, "pair_attn"))};
}

// --- checkpoints --------------------------------------------------------------------

namespace {

json spec_to_json(const ModelSpec& s) {
    return {{"family", family_name(s.family)}, {"width", s.width},       {"depth", s.depth},
            {"num_classes", s.num_classes},    {"in_channels", s.in_channels},
            {"patch", s.patch},                {"window", s.window},     {"input_size", s.input_size}};
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.width = j.at("width").get<int>();
    s.depth = j.at("depth").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.in_channels = j.at("in_channels").get<int>();
    s.patch = j.at("patch").get<int>();
    s.window = j.at("window").get<int>();
    s.input_size = j.at("input_size").get<int>();
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const ModelSpec& spec) {
    json j;
    j["version"] = 1;
    j["spec"] = spec_to_json(spec);
    json params = json::array();
    for (Parameter* p : model.parameters())
        params.push_back({{"name", p->name}, {"shape", p->value.shape}, {"data", p->value.v}});
    j["params"] = params;
    std::vector<uint8_t> bytes = json::to_cbor(j);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

namespace {

json read_checkpoint_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    json j = json::from_cbor(bytes);
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported version");
    return j;
}

}  // namespace

ModelSpec peek_checkpoint_spec(const std::filesystem::path& path) {
    return spec_from_json(read_checkpoint_json(path).at("spec"));
}

void load_checkpoint(const std::filesystem::path& path, Model& model) {
    json j = read_checkpoint_json(path);
    std::map<std::string, const json*> by_name;
    for (const auto& p : j.at("params")) by_name[p.at("name").get<std::string>()] = &p;
    for (Parameter* p : model.parameters()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: missing parameter " + p->name);
        const json& src = *it->second;
        if (src.at("shape").get<std::vector<int>>() != p->value.shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + p->name);
        p->value.v = src.at("data").get<std::vector<double>>();
    }
}

}  // namespace s4mi::models
