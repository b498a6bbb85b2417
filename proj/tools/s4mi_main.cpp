#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "s4mi/data/sample_io.hpp"
#include "s4mi/harness/report.hpp"
#include "s4mi/harness/runner.hpp"
#include "s4mi/harness/synthetic.hpp"
#include "s4mi/metrics/metrics.hpp"
#include "s4mi/weights/class_weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s4mi;

namespace {

int cmd_synth(const std::string& out, int n, int size, uint64_t seed, double fg, double noise,
              bool two_color) {
    harness::SyntheticSpec spec;
    spec.n_images = n;
    spec.image_size = size;
    spec.seed = seed;
    spec.fg_fraction = fg;
    spec.noise = noise;
    spec.two_color = two_color;
    harness::generate_synthetic(spec, out);
    std::cout << "wrote " << n << " samples to " << out << "\n";
    return 0;
}

int cmd_preprocess(const std::string& in_dir, const std::string& out_dir, const std::string& mode,
                   int intermediate, int final_size, bool no_red_norm, uint64_t seed,
                   double train_frac, double val_frac, double test_frac,
                   const std::vector<double>& fractions) {
    data::PreprocessOptions opts;
    opts.mode = mode == "tile" ? data::PreprocessMode::tile : data::PreprocessMode::interpolate;
    opts.intermediate_size = intermediate;
    opts.final_size = final_size;
    opts.red_norm = !no_red_norm;

    fs::create_directories(out_dir);
    std::vector<data::RawSample> raws = data::load_raw_dir(in_dir);
    if (raws.empty()) {
        std::cerr << "no raw samples found in " << in_dir << "\n";
        return 1;
    }
    std::vector<std::string> sources;
    std::map<std::string, std::vector<std::string>> by_source;
    for (const auto& raw : raws) {
        sources.push_back(raw.id);
        for (auto& ps : data::preprocess_sample(raw, opts)) {
            data::write_sample(fs::path(out_dir) / (ps.id + ".s4ms"), ps);
            by_source[raw.id].push_back(ps.id);
        }
    }
    data::SplitSpec split{train_frac, val_frac, test_frac, seed};
    data::Splits s = data::split_dataset(sources, split);
    data::Manifest manifest;
    auto expand = [&](const std::vector<std::string>& srcs, std::vector<std::string>& into) {
        for (const auto& src : srcs)
            for (const auto& id : by_source[src]) into.push_back(id);
    };
    expand(s.train, manifest.train);
    expand(s.val, manifest.val);
    expand(s.test, manifest.test);
    for (double f : fractions) {
        char key[16];
        std::snprintf(key, sizeof(key), "%.2f", f);
        manifest.label_fractions[key] =
            data::subsample_labels(manifest.train, f, derive_seed(seed, "fraction"));
    }
    data::write_manifest(fs::path(out_dir) / "manifest.json", manifest);
    std::cout << "processed " << raws.size() << " raw samples -> " << manifest.train.size()
              << "/" << manifest.val.size() << "/" << manifest.test.size()
              << " train/val/test items in " << out_dir << "\n";
    return 0;
}

int cmd_weights(const std::string& mask_dir, int num_classes, const std::string& orientation) {
    std::vector<Mask> masks;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(mask_dir))
        if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) masks.push_back(data::read_mask_pgm(f));
    if (masks.empty()) {
        std::cerr << "no .pgm masks in " << mask_dir << "\n";
        return 1;
    }
    weights::ClassFrequencies freqs = weights::pixel_class_frequencies(masks, num_classes);
    weights::ClassWeights pr = weights::pixel_ratio_weights(
        freqs, orientation == "direct" ? weights::PixelRatioOrientation::direct
                                       : weights::PixelRatioOrientation::complement);
    weights::ClassWeights mf = weights::median_frequency_weights(freqs);
    json out = {{"n_masks", masks.size()},
                {"frequencies", freqs.freqs},
                {"pixel_ratio", {{"weights", pr.weights}, {"orientation", orientation}}},
                {"median_frequency", {{"weights", mf.weights}}}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, int jobs, const std::string& out_override) {
    harness::TrainConfig cfg = harness::load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    harness::validate_config(cfg);
    harness::ExperimentResult res = harness::run_experiment(cfg, jobs);
    for (const auto& rec : res.records) {
        std::cout << "seed " << rec.seed << ": " << rec.status;
        if (rec.status == "ok")
            std::cout << " primary=" << rec.final.at("primary");
        else
            std::cout << " (" << rec.diagnostic << ")";
        std::cout << " [" << rec.wall_clock_s << "s]\n";
    }
    if (res.aggregate)
        std::cout << res.primary_metric << ": " << res.aggregate->mean << " ± "
                  << res.aggregate->ci_halfwidth << " over " << res.aggregate->values.size()
                  << " seeds\n";
    return res.all_ok ? 0 : 1;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_file,
             int positive_class) {
    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.path().extension() == ".pgm") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) {
        std::cerr << "no predictions in " << pred_dir << "\n";
        return 1;
    }
    json per_file = json::array();
    double iou_sum = 0, f1_sum = 0, dice_sum = 0;
    int matched = 0;
    for (const auto& p : preds) {
        std::string stem = p.stem().string();
        fs::path gt = fs::path(gt_dir) / (stem + ".pgm");
        if (!fs::exists(gt)) gt = fs::path(gt_dir) / (stem + "_mask.pgm");
        if (!fs::exists(gt)) continue;
        Mask pm = data::read_mask_pgm(p);
        Mask gm = data::read_mask_pgm(gt);
        metrics::ConfusionCounts c = metrics::confusion_counts(pm, gm, positive_class);
        double iou_v = metrics::iou(pm, gm, positive_class);
        double f1_v = metrics::f1(c);
        double dice_v = metrics::dice_coefficient(pm, gm, positive_class);
        per_file.push_back({{"id", stem}, {"iou", iou_v}, {"f1", f1_v}, {"dice", dice_v}});
        iou_sum += iou_v;
        f1_sum += f1_v;
        dice_sum += dice_v;
        ++matched;
    }
    if (matched == 0) {
        std::cerr << "no prediction/ground-truth pairs matched by stem\n";
        return 1;
    }
    json out = {{"n", matched},
                {"mean_iou", iou_sum / matched},
                {"mean_f1", f1_sum / matched},
                {"mean_dice", dice_sum / matched},
                {"per_file", per_file}};
    if (!out_file.empty()) {
        std::ofstream f(out_file);
        f << out.dump(2) << "\n";
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string& aggregates, const std::string& out_dir) {
    auto files = harness::render_report(aggregates, out_dir);
    for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
    if (files.empty()) {
        std::cerr << "no aggregates found in " << aggregates << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"S4MI: supervised / semi- / self- / un-supervised image analysis harness"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic lesion dataset");
    std::string synth_out = "synthetic";
    int synth_n = 200, synth_size = 64;
    uint64_t synth_seed = 7;
    double synth_fg = 0.2, synth_noise = 0.04;
    bool synth_two_color = false;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--n", synth_n, "number of images");
    synth->add_option("--size", synth_size, "image side length");
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--fg", synth_fg, "target foreground pixel fraction");
    synth->add_option("--noise", synth_noise, "additive noise amplitude");
    synth->add_flag("--two-color", synth_two_color, "color-separable foreground");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "tile/interpolate raw images into model-ready samples");
    std::string pre_in, pre_out = "processed", pre_mode = "interpolate";
    int pre_intermediate = 480, pre_final = 224;
    bool pre_no_red = false;
    uint64_t pre_seed = 0;
    double pre_train = 0.7, pre_val = 0.1, pre_test = 0.2;
    std::vector<double> pre_fractions;
    pre->add_option("--in", pre_in, "raw dataset directory")->required();
    pre->add_option("--out", pre_out, "output directory");
    pre->add_option("--mode", pre_mode, "tile | interpolate")
        ->check(CLI::IsMember({"tile", "interpolate"}));
    pre->add_option("--intermediate", pre_intermediate, "tile/interpolation size");
    pre->add_option("--final", pre_final, "final resize");
    pre->add_flag("--no-red-norm", pre_no_red, "skip red-channel normalization");
    pre->add_option("--seed", pre_seed, "split seed");
    pre->add_option("--train", pre_train, "train fraction");
    pre->add_option("--val", pre_val, "val fraction");
    pre->add_option("--test", pre_test, "test fraction");
    pre->add_option("--fractions", pre_fractions, "label fractions to precompute");

    // weights
    auto* wts = app.add_subcommand("weights", "pixel frequencies and class-weight vectors");
    std::string wts_dir, wts_orient = "complement";
    int wts_classes = 2;
    wts->add_option("--masks", wts_dir, "directory of .pgm masks")->required();
    wts->add_option("--classes", wts_classes, "number of classes");
    wts->add_option("--orientation", wts_orient, "pixel-ratio orientation")
        ->check(CLI::IsMember({"complement", "direct"}));

    // train
    auto* tr = app.add_subcommand("train", "run an experiment config across its seeds");
    std::string tr_config, tr_out;
    int tr_jobs = 1;
    tr->add_option("--config", tr_config, "experiment config (json)")->required();
    tr->add_option("--jobs", tr_jobs, "parallel seed workers");
    tr->add_option("--out", tr_out, "output root override");

    // eval
    auto* ev = app.add_subcommand("eval", "score a prediction directory against ground truth");
    std::string ev_pred, ev_gt, ev_out;
    int ev_cls = 1;
    ev->add_option("--pred", ev_pred, "predicted masks (.pgm)")->required();
    ev->add_option("--gt", ev_gt, "ground-truth masks (.pgm)")->required();
    ev->add_option("--out", ev_out, "metrics record file");
    ev->add_option("--positive-class", ev_cls, "positive class id");

    // report
    auto* rp = app.add_subcommand("report", "render method x fraction tables and plots");
    std::string rp_agg, rp_out = "reports";
    rp->add_option("--aggregates", rp_agg, "aggregates directory")->required();
    rp->add_option("--out", rp_out, "report output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth)
            return cmd_synth(synth_out, synth_n, synth_size, synth_seed, synth_fg, synth_noise,
                             synth_two_color);
        if (*pre)
            return cmd_preprocess(pre_in, pre_out, pre_mode, pre_intermediate, pre_final,
                                  pre_no_red, pre_seed, pre_train, pre_val, pre_test,
                                  pre_fractions);
        if (*wts) return cmd_weights(wts_dir, wts_classes, wts_orient);
        if (*tr) return cmd_train(tr_config, tr_jobs, tr_out);
        if (*ev) return cmd_eval(ev_pred, ev_gt, ev_out, ev_cls);
        if (*rp) return cmd_report(rp_agg, rp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
