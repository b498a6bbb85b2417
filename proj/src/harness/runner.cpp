#include "s4mi/harness/runner.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <iostream>

#include "s4mi/harness/synthetic.hpp"
#include "s4mi/picie/picie.hpp"
#include "s4mi/selfsup/selfsup.hpp"

namespace s4mi::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json history_to_json(const train::TrainHistory& h) {
    json epochs = json::array();
    for (const auto& e : h.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"lr", e.lr},
                          {"train_loss", e.train_loss},
                          {"val_metrics", e.val_metrics}});
    return {{"epochs", epochs}, {"final_metrics", h.final_metrics}, {"best_epoch", h.best_epoch}};
}

train::TrainHistory history_from_json(const json& j) {
    train::TrainHistory h;
    for (const auto& e : j.at("epochs")) {
        train::EpochRecord r;
        r.epoch = e.at("epoch").get<int>();
        r.lr = e.at("lr").get<double>();
        r.train_loss = e.at("train_loss").get<std::map<std::string, double>>();
        r.val_metrics = e.at("val_metrics").get<std::map<std::string, double>>();
        h.epochs.push_back(std::move(r));
    }
    h.final_metrics = j.at("final_metrics").get<std::map<std::string, double>>();
    h.best_epoch = j.at("best_epoch").get<int>();
    return h;
}

void write_json_atomic(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

uint64_t spec_hash(const json& j) {
    std::string s = j.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// source (pre-tiling) id of a processed sample, recovered from its steps
std::string source_of(const data::ProcessedSample& s) {
    for (const auto& step : s.steps)
        if (step.at("op") == "tile") {
            std::string suffix = "_t" + std::to_string(step.at("row").get<int>()) + "x" +
                                 std::to_string(step.at("col").get<int>());
            if (s.id.size() > suffix.size() &&
                s.id.compare(s.id.size() - suffix.size(), suffix.size(), suffix) == 0)
                return s.id.substr(0, s.id.size() - suffix.size());
        }
    return s.id;
}

struct ProcessedIndex {
    std::vector<std::string> ids;
    std::map<std::string, std::string> source;  // processed id -> raw id
};

ProcessedIndex load_index(const fs::path& processed_dir) {
    std::ifstream in(processed_dir / "index.json");
    if (!in) throw std::runtime_error("processed index missing in " + processed_dir.string());
    json j = json::parse(in);
    ProcessedIndex idx;
    idx.ids = j.at("ids").get<std::vector<std::string>>();
    idx.source = j.at("source").get<std::map<std::string, std::string>>();
    return idx;
}

// split raw sources, then expand to processed ids so sibling tiles never
// straddle a split boundary
data::Splits split_processed(const ProcessedIndex& idx, const data::SplitSpec& spec) {
    std::vector<std::string> sources;
    for (const auto& id : idx.ids) {
        const std::string& src = idx.source.at(id);
        if (sources.empty() || std::find(sources.begin(), sources.end(), src) == sources.end())
            sources.push_back(src);
    }
    data::Splits raw = data::split_dataset(sources, spec);
    auto expand = [&](const std::vector<std::string>& srcs) {
        std::vector<std::string> out;
        for (const auto& id : idx.ids)
            if (std::find(srcs.begin(), srcs.end(), idx.source.at(id)) != srcs.end())
                out.push_back(id);
        return out;
    };
    data::Splits out;
    out.train = expand(raw.train);
    out.val = expand(raw.val);
    out.test = expand(raw.test);
    return out;
}

// classification label projection: multilabel runs use the bit columns,
// single-label runs the class column
data::SampleSet project_labels(data::SampleSet set, bool multilabel) {
    std::vector<data::ProcessedSample> items;
    for (size_t i = 0; i < set.size(); ++i) {
        // copy out through the audited interface is unnecessary here; this
        // happens before training starts
        data::ProcessedSample s;
        s.id = set.id(i);
        s.image = set.image(i);
        if (set.has_mask(i)) s.mask = set.mask(i);
        if (set.has_labels(i)) {
            const std::vector<int>& lab = set.labels(i);
            if (multilabel)
                s.labels.assign(lab.begin() + 1, lab.end());
            else
                s.labels = {lab.at(0)};
        }
        items.push_back(std::move(s));
    }
    data::SampleSet out(std::move(items));
    out.reset_audit();
    return out;
}

models::ModelSpec seg_spec(const TrainConfig& cfg, models::Family family) {
    models::ModelSpec s = cfg.model;
    s.family = family;
    s.in_channels = 3;
    s.num_classes = 2;
    s.input_size = cfg.preprocess.final_size;
    return s;
}

train::TrainerConfig trainer_config(const TrainConfig& cfg) {
    train::TrainerConfig t;
    t.opt = cfg.optimizer;
    t.sched = cfg.schedule;
    t.batch_size = cfg.batch_size;
    t.unsup_weight = cfg.unsup_weight;
    t.fifteen_one = cfg.fifteen_one;
    t.augment = cfg.augment;
    return t;
}

}  // namespace

json record_to_json(const RunRecord& r) {
    return {{"version", 1},
            {"config_hash", r.config_hash},
            {"seed", r.seed},
            {"method", r.method},
            {"status", r.status},
            {"diagnostic", r.diagnostic},
            {"history", history_to_json(r.history)},
            {"final", r.final},
            {"wall_clock_s", r.wall_clock_s},
            {"artifacts", r.artifacts}};
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.method = j.at("method").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.diagnostic = j.at("diagnostic").get<std::string>();
    r.history = history_from_json(j.at("history"));
    r.final = j.at("final").get<std::map<std::string, double>>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return r;
}

fs::path run_dir(const TrainConfig& cfg, uint64_t seed) {
    return output_root(cfg) / "runs" / (config_hash(cfg) + "-s" + std::to_string(seed));
}

fs::path aggregate_path(const TrainConfig& cfg) {
    return output_root(cfg) / "aggregates" / (config_hash(cfg) + ".json");
}

fs::path ensure_dataset(const TrainConfig& cfg) {
    if (cfg.dataset != "synthetic") {
        if (!fs::is_directory(cfg.dataset))
            throw std::runtime_error("dataset directory not found: " + cfg.dataset);
        return cfg.dataset;
    }
    json sj = {{"n", cfg.synthetic.n_images},     {"size", cfg.synthetic.image_size},
               {"seed", cfg.synthetic.seed},      {"fg", cfg.synthetic.fg_fraction},
               {"noise", cfg.synthetic.noise},    {"two_color", cfg.synthetic.two_color}};
    fs::path dir = output_root(cfg) / "datasets" / ("synth-" + hex16(spec_hash(sj)));
    if (!fs::exists(dir / "labels.csv")) generate_synthetic(cfg.synthetic, dir);
    return dir;
}

fs::path ensure_processed(const TrainConfig& cfg) {
    fs::path raw_dir = ensure_dataset(cfg);
    json pj = {{"raw", raw_dir.filename().string()},
               {"mode", cfg.preprocess.mode == data::PreprocessMode::tile ? "tile" : "interp"},
               {"intermediate", cfg.preprocess.intermediate_size},
               {"final", cfg.preprocess.final_size},
               {"red_norm", cfg.preprocess.red_norm}};
    fs::path dir = output_root(cfg) / "processed" / hex16(spec_hash(pj));
    if (fs::exists(dir / "index.json")) return dir;
    fs::create_directories(dir);
    std::vector<data::RawSample> raws = data::load_raw_dir(raw_dir);
    if (raws.empty()) throw std::runtime_error("no raw samples in " + raw_dir.string());
    ProcessedIndex idx;
    for (const data::RawSample& raw : raws) {
        for (data::ProcessedSample& ps : data::preprocess_sample(raw, cfg.preprocess)) {
            data::write_sample(dir / (ps.id + ".s4ms"), ps);
            idx.source[ps.id] = source_of(ps);
            idx.ids.push_back(ps.id);
        }
    }
    write_json_atomic(dir / "index.json", json{{"ids", idx.ids}, {"source", idx.source}});
    return dir;
}

namespace {

RunRecord execute_run(const TrainConfig& cfg, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = seed;
    rec.method = method_name(cfg.method);
    fs::path dir = run_dir(cfg, seed);
    fs::create_directories(dir);

    fs::path processed = ensure_processed(cfg);
    ProcessedIndex idx = load_index(processed);
    data::SplitSpec split_spec = cfg.split;
    split_spec.seed = derive_seed(cfg.split.seed, "run-split", seed);
    data::Splits splits = split_processed(idx, split_spec);
    data::Manifest manifest;
    manifest.train = splits.train;
    manifest.val = splits.val;
    manifest.test = splits.test;

    data::LabelFractionSplit lf =
        data::subsample_labels(splits.train, cfg.label_fraction, derive_seed(seed, "fraction"));
    manifest.label_fractions[std::to_string(cfg.label_fraction)] = lf;
    data::write_manifest(dir / "manifest.json", manifest);

    train::TrainerConfig tcfg = trainer_config(cfg);

    switch (cfg.method) {
        case Method::supervised: {
            data::SampleSet train_set = data::SampleSet::load(processed, lf.labeled);
            data::SampleSet val_set = data::SampleSet::load(processed, splits.val);
            data::SampleSet test_set = data::SampleSet::load(processed, splits.test);
            models::ModelSpec spec = seg_spec(cfg, models::Family::conv_unet);
            auto model = models::build_model(spec, seed);
            rec.history = train::train_supervised(*model, train_set, val_set, tcfg, cfg.epochs, seed);
            rec.final = rec.history.final_metrics;
            rec.final["test_iou"] = train::evaluate_seg_iou(*model, test_set);
            rec.final["primary"] = rec.final["test_iou"];
            fs::path ckpt = dir / "model.s4mc";
            models::save_checkpoint(ckpt, *model, spec);
            rec.artifacts["checkpoint"] = ckpt.string();
            break;
        }
        case Method::semi_cross_teach: {
            data::SampleSet labeled_set = data::SampleSet::load(processed, lf.labeled);
            data::SampleSet unlabeled_set = data::SampleSet::load(processed, lf.unlabeled);
            data::SampleSet val_set = data::SampleSet::load(processed, splits.val);
            data::SampleSet test_set = data::SampleSet::load(processed, splits.test);
            models::ModelSpec base = seg_spec(cfg, models::Family::conv_unet);
            int64_t budget = cfg.pair_budget;
            if (budget == 0) budget = models::parameter_count(*models::build_model(base, seed));
            models::ModelSpec conv_spec, attn_spec;
            auto [conv_model, attn_model] =
                models::comparable_pair(budget, base, seed, &conv_spec, &attn_spec);
            rec.history =
                train::train_cross_teaching(*conv_model, *attn_model, labeled_set, unlabeled_set,
                                            val_set, cfg.label_fraction, tcfg, cfg.epochs, seed);
            rec.final = rec.history.final_metrics;
            double test_conv = train::evaluate_seg_iou(*conv_model, test_set);
            double test_attn = train::evaluate_seg_iou(*attn_model, test_set);
            rec.final["test_iou_conv"] = test_conv;
            rec.final["test_iou_attn"] = test_attn;
            bool attn_is_best = rec.final.count("val_iou_attn") &&
                                rec.final.at("val_iou_attn") >= rec.final.at("val_iou_conv");
            rec.final["test_iou"] = attn_is_best ? test_attn : test_conv;
            rec.final["primary"] = rec.final["test_iou"];
            fs::path c1 = dir / "model_conv.s4mc", c2 = dir / "model_attn.s4mc";
            models::save_checkpoint(c1, *conv_model, conv_spec);
            models::save_checkpoint(c2, *attn_model, attn_spec);
            rec.artifacts["checkpoint_conv"] = c1.string();
            rec.artifacts["checkpoint_attn"] = c2.string();
            break;
        }
        case Method::selfsup_aug:
        case Method::selfsup_arch: {
            data::SampleSet train_raw = data::SampleSet::load(processed, splits.train);
            data::SampleSet train_set = project_labels(std::move(train_raw), cfg.multilabel);
            data::SampleSet val_set =
                project_labels(data::SampleSet::load(processed, splits.val), cfg.multilabel);
            data::SampleSet test_set =
                project_labels(data::SampleSet::load(processed, splits.test), cfg.multilabel);

            selfsup::PretrainConfig pcfg;
            pcfg.opt = cfg.optimizer;
            pcfg.sched = cfg.schedule;
            pcfg.batch_size = cfg.batch_size;

            models::ModelSpec cls_spec = cfg.model;
            cls_spec.in_channels = 3;
            cls_spec.input_size = cfg.preprocess.final_size;
            if (cls_spec.family != models::Family::attention_classifier)
                cls_spec.family = models::Family::conv_classifier;

            std::unique_ptr<models::Backbone> finetune_backbone;
            train::TrainHistory pre_hist;
            train_set.reset_audit();
            if (cfg.method == Method::selfsup_aug) {
                auto backbone = models::build_backbone(cls_spec, seed);
                pre_hist = selfsup::pretrain_augmentation(*backbone, train_set,
                                                          cfg.pretrain_epochs, pcfg, seed);
                finetune_backbone = std::move(backbone);
            } else {
                models::ModelSpec conv_spec = cls_spec;
                conv_spec.family = models::Family::conv_classifier;
                models::ModelSpec attn_spec = cls_spec;
                attn_spec.family = models::Family::attention_classifier;
                auto conv_bb = models::build_backbone(conv_spec, seed);
                auto attn_bb = models::build_backbone(attn_spec, derive_seed(seed, "attn-bb"));
                pre_hist = selfsup::pretrain_architecture(*conv_bb, *attn_bb, train_set,
                                                          cfg.pretrain_epochs, pcfg, seed);
                finetune_backbone = cfg.model.family == models::Family::attention_classifier
                                        ? std::move(attn_bb)
                                        : std::move(conv_bb);
            }
            rec.final["pretrain_label_reads"] =
                static_cast<double>(train_set.audit().label_reads);

            selfsup::FinetuneConfig fcfg;
            fcfg.opt = cfg.optimizer;
            fcfg.sched = cfg.schedule;
            fcfg.batch_size = cfg.batch_size;
            fcfg.multilabel = cfg.multilabel;
            fcfg.metric = cfg.metric == "recall" ? selfsup::ClsMetric::recall
                                                 : selfsup::ClsMetric::f1;
            selfsup::FinetuneResult ft = selfsup::finetune(
                std::move(finetune_backbone), train_set, val_set, cfg.epochs,
                cfg.label_fraction, fcfg, seed);
            // merge the two phases: pretrain epochs first, then fine-tuning
            rec.history = pre_hist;
            for (auto& e : ft.history.epochs) {
                e.epoch += static_cast<int>(pre_hist.epochs.size());
                rec.history.epochs.push_back(e);
            }
            rec.history.best_epoch = ft.history.best_epoch;
            for (const auto& [k, v] : ft.history.final_metrics) rec.final[k] = v;
            double test_metric = selfsup::evaluate_classifier(*ft.classifier, test_set, fcfg);
            rec.final[cfg.metric == "recall" ? "test_recall" : "test_f1"] = test_metric;
            rec.final["primary"] = test_metric;
            fs::path ckpt = dir / "classifier.s4mc";
            models::ModelSpec saved = cls_spec;
            if (cfg.method == Method::selfsup_arch)
                saved.family = cfg.model.family == models::Family::attention_classifier
                                   ? models::Family::attention_classifier
                                   : models::Family::conv_classifier;
            models::save_checkpoint(ckpt, *ft.classifier, saved);
            rec.artifacts["checkpoint"] = ckpt.string();
            break;
        }
        case Method::picie: {
            data::SampleSet train_set = data::SampleSet::load(processed, splits.train);
            data::SampleSet test_set = data::SampleSet::load(processed, splits.test);
            picie::PicieConfig picie_cfg;
            picie_cfg.opt = cfg.optimizer;
            picie_cfg.opt.kind = train::OptimizerConfig::Kind::sgd;
            picie_cfg.sched = cfg.schedule;
            picie_cfg.k = cfg.picie_k;
            picie_cfg.batch_size = cfg.batch_size;
            auto extractor =
                picie::build_feature_extractor(3, 32, cfg.model.width, seed, false);
            train_set.reset_audit();
            picie::PicieResult pr =
                picie::train_picie(*extractor, train_set, cfg.epochs, picie_cfg, seed);
            rec.history = pr.history;
            rec.final["train_label_reads"] =
                static_cast<double>(train_set.audit().label_reads);

            std::vector<Mask> preds, gts;
            fs::path mask_dir = dir / "masks";
            fs::create_directories(mask_dir);
            for (size_t i = 0; i < test_set.size(); ++i) {
                Mask pred = picie::segment_unsupervised(*extractor, pr.clusters,
                                                        test_set.image(i));
                data::write_mask_pgm(mask_dir / (test_set.id(i) + ".pgm"), pred);
                preds.push_back(std::move(pred));
                gts.push_back(test_set.mask(i));
            }
            double miou = metrics::matched_mean_iou(preds, gts, picie_cfg.k, 2);
            rec.final["test_miou"] = miou;
            rec.final["primary"] = miou;
            // cluster-to-class matching report
            std::vector<std::vector<int64_t>> inter(
                static_cast<size_t>(picie_cfg.k), std::vector<int64_t>(2, 0));
            for (size_t i = 0; i < preds.size(); ++i)
                for (size_t px = 0; px < preds[i].v.size(); ++px)
                    ++inter[static_cast<size_t>(preds[i].v[px])]
                           [static_cast<size_t>(gts[i].v[px])];
            std::vector<int> mapping = metrics::hungarian_match(inter);
            write_json_atomic(dir / "cluster_matching.json",
                              json{{"mapping", mapping}, {"intersection", inter}});
            rec.artifacts["masks"] = mask_dir.string();
            rec.artifacts["matching"] = (dir / "cluster_matching.json").string();
            break;
        }
    }
    auto t1 = std::chrono::steady_clock::now();
    rec.wall_clock_s = std::chrono::duration<double>(t1 - t0).count();
    return rec;
}

}  // namespace

RunRecord run_single_seed(const TrainConfig& cfg, uint64_t seed) {
    try {
        return execute_run(cfg, seed);
    } catch (const train::TrainAbort& e) {
        RunRecord rec;
        rec.config_hash = config_hash(cfg);
        rec.seed = seed;
        rec.method = method_name(cfg.method);
        rec.status = "aborted";
        rec.diagnostic = e.what();
        return rec;
    }
}

ExperimentResult run_experiment(const TrainConfig& cfg, int jobs) {
    validate_config(cfg);
    ensure_processed(cfg);  // shared cache built once, before any fork

    std::vector<uint64_t> pending;
    for (uint64_t seed : cfg.seeds)
        if (!fs::exists(run_dir(cfg, seed) / "record.json")) pending.push_back(seed);

    auto run_and_persist = [&](uint64_t seed) {
        RunRecord rec = run_single_seed(cfg, seed);
        write_json_atomic(run_dir(cfg, seed) / "record.json", record_to_json(rec));
    };

    if (jobs <= 1 || pending.size() <= 1) {
        for (uint64_t seed : pending) run_and_persist(seed);
    } else {
        // one worker process per pending seed, at most `jobs` in flight
        size_t next = 0;
        int in_flight = 0;
        while (next < pending.size() || in_flight > 0) {
            while (next < pending.size() && in_flight < jobs) {
                pid_t pid = fork();
                if (pid == 0) {
                    run_and_persist(pending[next]);
                    _exit(0);
                }
                if (pid < 0) throw std::runtime_error("run_experiment: fork failed");
                ++next;
                ++in_flight;
            }
            int status = 0;
            if (wait(&status) > 0) --in_flight;
        }
        for (uint64_t seed : pending)
            if (!fs::exists(run_dir(cfg, seed) / "record.json"))
                throw std::runtime_error("worker for seed " + std::to_string(seed) +
                                         " left no record");
    }

    ExperimentResult out;
    switch (cfg.method) {
        case Method::picie: out.primary_metric = "test_miou"; break;
        case Method::selfsup_aug:
        case Method::selfsup_arch:
            out.primary_metric = cfg.metric == "recall" ? "test_recall" : "test_f1";
            break;
        default: out.primary_metric = "test_iou"; break;
    }
    std::vector<double> values;
    for (uint64_t seed : cfg.seeds) {
        std::ifstream in(run_dir(cfg, seed) / "record.json");
        if (!in) throw std::runtime_error("missing record for seed " + std::to_string(seed));
        RunRecord rec = record_from_json(json::parse(in));
        if (rec.status == "ok")
            values.push_back(rec.final.at("primary"));
        else
            out.all_ok = false;
        out.records.push_back(std::move(rec));
    }
    if (values.size() >= 2) {
        out.aggregate = metrics::aggregate_seeds(values);
        write_json_atomic(aggregate_path(cfg),
                          json{{"config_hash", config_hash(cfg)},
                               {"method", method_name(cfg.method)},
                               {"dataset", cfg.dataset},
                               {"label_fraction", cfg.label_fraction},
                               {"metric", out.primary_metric},
                               {"values", out.aggregate->values},
                               {"mean", out.aggregate->mean},
                               {"ci_halfwidth", out.aggregate->ci_halfwidth}});
    }
    return out;
}

}  // namespace s4mi::harness
