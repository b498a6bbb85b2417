#include "s4mi/harness/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace s4mi::harness {

using nlohmann::json;

std::string method_name(Method m) {
    switch (m) {
        case Method::supervised: return "supervised";
        case Method::semi_cross_teach: return "semi_cross_teach";
        case Method::selfsup_aug: return "selfsup_aug";
        case Method::selfsup_arch: return "selfsup_arch";
        case Method::picie: return "picie";
    }
    throw std::logic_error("method_name: bad enum");
}

Method method_from_name(const std::string& name) {
    if (name == "supervised") return Method::supervised;
    if (name == "semi_cross_teach") return Method::semi_cross_teach;
    if (name == "selfsup_aug") return Method::selfsup_aug;
    if (name == "selfsup_arch") return Method::selfsup_arch;
    if (name == "picie") return Method::picie;
    throw std::invalid_argument("unknown method: " + name);
}

namespace {

template <class T>
void maybe(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

TrainConfig parse_config(const json& j) {
    TrainConfig c;
    c.method = method_from_name(j.at("method").get<std::string>());
    maybe(j, "dataset", c.dataset);
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        maybe(s, "n_images", c.synthetic.n_images);
        maybe(s, "image_size", c.synthetic.image_size);
        maybe(s, "seed", c.synthetic.seed);
        maybe(s, "fg_fraction", c.synthetic.fg_fraction);
        maybe(s, "noise", c.synthetic.noise);
        maybe(s, "two_color", c.synthetic.two_color);
    }
    maybe(j, "label_fraction", c.label_fraction);
    maybe(j, "seeds", c.seeds);
    maybe(j, "epochs", c.epochs);
    maybe(j, "pretrain_epochs", c.pretrain_epochs);
    maybe(j, "batch_size", c.batch_size);
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        if (o.contains("kind"))
            c.optimizer.kind = o.at("kind").get<std::string>() == "sgd"
                                   ? train::OptimizerConfig::Kind::sgd
                                   : train::OptimizerConfig::Kind::adam;
        maybe(o, "lr", c.optimizer.lr);
        maybe(o, "weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        if (s.contains("kind"))
            c.schedule.kind = s.at("kind").get<std::string>() == "step"
                                  ? train::ScheduleConfig::Kind::step
                                  : train::ScheduleConfig::Kind::cosine_annealing;
        maybe(s, "t_max", c.schedule.t_max);
        maybe(s, "lr_min", c.schedule.lr_min);
        maybe(s, "step_size", c.schedule.step_size);
        maybe(s, "gamma", c.schedule.gamma);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        if (m.contains("family")) c.model.family = models::family_from_name(m.at("family"));
        maybe(m, "width", c.model.width);
        maybe(m, "depth", c.model.depth);
        maybe(m, "num_classes", c.model.num_classes);
        maybe(m, "in_channels", c.model.in_channels);
        maybe(m, "patch", c.model.patch);
        maybe(m, "window", c.model.window);
        maybe(m, "input_size", c.model.input_size);
    }
    maybe(j, "pair_budget", c.pair_budget);
    if (j.contains("preprocess")) {
        const json& p = j.at("preprocess");
        if (p.contains("mode"))
            c.preprocess.mode = p.at("mode").get<std::string>() == "tile"
                                    ? data::PreprocessMode::tile
                                    : data::PreprocessMode::interpolate;
        maybe(p, "intermediate", c.preprocess.intermediate_size);
        maybe(p, "final", c.preprocess.final_size);
        maybe(p, "red_norm", c.preprocess.red_norm);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        maybe(s, "train", c.split.train_frac);
        maybe(s, "val", c.split.val_frac);
        maybe(s, "test", c.split.test_frac);
        maybe(s, "seed", c.split.seed);
    }
    maybe(j, "unsup_weight", c.unsup_weight);
    maybe(j, "augment", c.augment);
    maybe(j, "fifteen_one", c.fifteen_one);
    maybe(j, "multilabel", c.multilabel);
    maybe(j, "metric", c.metric);
    maybe(j, "picie_k", c.picie_k);
    maybe(j, "allow_any_fraction", c.allow_any_fraction);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path.string());
    return parse_config(json::parse(in));
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["method"] = method_name(c.method);
    j["dataset"] = c.dataset;
    j["synthetic"] = {{"n_images", c.synthetic.n_images},
                      {"image_size", c.synthetic.image_size},
                      {"seed", c.synthetic.seed},
                      {"fg_fraction", c.synthetic.fg_fraction},
                      {"noise", c.synthetic.noise},
                      {"two_color", c.synthetic.two_color}};
    j["label_fraction"] = c.label_fraction;
    j["seeds"] = c.seeds;
    j["epochs"] = c.epochs;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["batch_size"] = c.batch_size;
    j["optimizer"] = {{"kind", c.optimizer.kind == train::OptimizerConfig::Kind::sgd ? "sgd"
                                                                                     : "adam"},
                      {"lr", c.optimizer.lr},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["schedule"] = {{"kind", c.schedule.kind == train::ScheduleConfig::Kind::step
                                  ? "step"
                                  : "cosine_annealing"},
                     {"t_max", c.schedule.t_max},
                     {"lr_min", c.schedule.lr_min},
                     {"step_size", c.schedule.step_size},
                     {"gamma", c.schedule.gamma}};
    j["model"] = {{"family", models::family_name(c.model.family)},
                  {"width", c.model.width},
                  {"depth", c.model.depth},
                  {"num_classes", c.model.num_classes},
                  {"in_channels", c.model.in_channels},
                  {"patch", c.model.patch},
                  {"window", c.model.window},
                  {"input_size", c.model.input_size}};
    j["pair_budget"] = c.pair_budget;
    j["preprocess"] = {{"mode", c.preprocess.mode == data::PreprocessMode::tile ? "tile"
                                                                                : "interpolate"},
                       {"intermediate", c.preprocess.intermediate_size},
                       {"final", c.preprocess.final_size},
                       {"red_norm", c.preprocess.red_norm}};
    j["split"] = {{"train", c.split.train_frac},
                  {"val", c.split.val_frac},
                  {"test", c.split.test_frac},
                  {"seed", c.split.seed}};
    j["unsup_weight"] = c.unsup_weight;
    j["augment"] = c.augment;
    j["fifteen_one"] = c.fifteen_one;
    j["multilabel"] = c.multilabel;
    j["metric"] = c.metric;
    j["picie_k"] = c.picie_k;
    j["allow_any_fraction"] = c.allow_any_fraction;
    j["output_dir"] = c.output_dir.string();
    return j;
}

void validate_config(const TrainConfig& c) {
    const double f = c.label_fraction;
    auto near = [&](double x) { return std::abs(f - x) < 1e-12; };
    if (!c.allow_any_fraction && !(near(0.0) || near(0.1) || near(0.5) || near(0.7) || near(1.0)))
        throw std::invalid_argument(
            "config: label_fraction outside the {0, 0.1, 0.5, 0.7, 1.0} grid "
            "(pass allow_any_fraction to override)");
    switch (c.method) {
        case Method::picie:
            if (!near(0.0))
                throw std::invalid_argument("config: picie requires label_fraction 0.0");
            break;
        case Method::selfsup_aug:
        case Method::selfsup_arch:
            if (!(near(0.1) || near(1.0)))
                throw std::invalid_argument(
                    "config: self-supervised fine-tuning uses label_fraction 0.1 or 1.0");
            break;
        case Method::supervised:
        case Method::semi_cross_teach:
            if (f <= 0.0)
                throw std::invalid_argument("config: supervised/semi need label_fraction > 0");
            break;
    }
    if (c.seeds.empty()) throw std::invalid_argument("config: needs at least one seed");
    if (c.epochs < 0 || c.pretrain_epochs < 0 || c.batch_size < 1)
        throw std::invalid_argument("config: bad epochs/batch_size");
    if (c.metric != "iou" && c.metric != "f1" && c.metric != "recall")
        throw std::invalid_argument("config: metric must be iou|f1|recall");
}

std::string config_hash(const TrainConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("seeds");
    j.erase("output_dir");
    std::string canonical = j.dump();  // nlohmann objects iterate in sorted key order
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : canonical) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::filesystem::path output_root(const TrainConfig& cfg) {
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    if (const char* env = std::getenv("S4MI_OUT")) return std::filesystem::path(env);
    return std::filesystem::path("s4mi_out");
}

}  // namespace s4mi::harness
