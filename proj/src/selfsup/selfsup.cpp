#include "s4mi/selfsup/selfsup.hpp"

#include <algorithm>
#include <cmath>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/rng.hpp"
#include "s4mi/data/pipeline.hpp"
#include "s4mi/loss/losses.hpp"
#include "s4mi/metrics/metrics.hpp"

namespace s4mi::selfsup {

namespace {

Image color_jitter(const Image& image, Rng& rng) {
    Image out = image;
    double brightness = rng.uniform(-0.2, 0.2);
    double contrast = rng.uniform(0.8, 1.2);
    double saturation = image.c == 3 ? rng.uniform(0.8, 1.2) : 1.0;
    double mean = 0.0;
    for (double v : out.v) mean += v;
    mean /= static_cast<double>(out.v.size());
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double gray = 0.0;
            if (image.c == 3)
                for (int ch = 0; ch < 3; ++ch) gray += out.at(y, x, ch) / 3.0;
            for (int ch = 0; ch < out.c; ++ch) {
                double v = out.at(y, x, ch);
                if (image.c == 3) v = gray + saturation * (v - gray);
                v = mean + contrast * (v - mean) + brightness;
                out.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
            }
        }
    return out;
}

Image random_crop_resize(const Image& image, Rng& rng) {
    double scale = rng.uniform(0.6, 1.0);
    int side = std::max(1, static_cast<int>(std::floor(std::min(image.h, image.w) * scale)));
    int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(image.h - side + 1)));
    int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(image.w - side + 1)));
    Image crop(side, side, image.c);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int ch = 0; ch < image.c; ++ch) crop.at(y, x, ch) = image.at(y0 + y, x0 + x, ch);
    return kernels::bilinear_resize(crop, image.h, image.w);
}

Image one_view(const Image& image, Rng& rng) {
    Image v = random_crop_resize(image, rng);
    if (rng.below(2) == 1) {
        data::DihedralTransform flip;
        flip.hflip = true;
        v = data::apply_dihedral(flip, v);
    }
    return color_jitter(v, rng);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

ViewPair make_view_pair(const Image& image, Regime regime, uint64_t seed) {
    if (image.empty()) throw std::invalid_argument("make_view_pair: empty image");
    ViewPair out;
    out.provenance = regime;
    if (regime == Regime::architecture_asymmetric) {
        out.view_a = image;
        out.view_b = image;
        return out;
    }
    Rng rng_a(derive_seed(seed, "view-a"));
    Rng rng_b(derive_seed(seed, "view-b"));
    out.view_a = one_view(image, rng_a);
    out.view_b = one_view(image, rng_b);
    return out;
}

double similarity_loss(const std::vector<double>& e1, const std::vector<double>& e2) {
    if (e1.size() != e2.size() || e1.empty())
        throw std::invalid_argument("similarity_loss: dimension mismatch");
    double n1 = std::sqrt(dot(e1, e1)), n2 = std::sqrt(dot(e2, e2));
    if (n1 == 0.0 || n2 == 0.0) throw std::invalid_argument("similarity_loss: zero-norm embedding");
    double cos = dot(e1, e2) / (n1 * n2);
    return 0.5 * ((1.0 - cos) + (1.0 - cos));
}

double similarity_loss_with_grad(const std::vector<double>& e1, const std::vector<double>& e2,
                                 std::vector<double>& g1, std::vector<double>& g2) {
    double value = similarity_loss(e1, e2);
    double n1 = std::sqrt(dot(e1, e1)), n2 = std::sqrt(dot(e2, e2));
    double d12 = dot(e1, e2);
    g1.resize(e1.size());
    g2.resize(e2.size());
    // d/de1 of 0.5*(1 - cos(e1, const e2)); the symmetrized twin term stops
    // gradient at e1, so it contributes nothing here
    for (size_t i = 0; i < e1.size(); ++i)
        g1[i] = -0.5 * (e2[i] / (n1 * n2) - e1[i] * d12 / (n1 * n1 * n1 * n2));
    for (size_t i = 0; i < e2.size(); ++i)
        g2[i] = -0.5 * (e1[i] / (n1 * n2) - e2[i] * d12 / (n2 * n2 * n2 * n1));
    return value;
}

namespace {

struct ProjMlp {
    models::Linear l1, l2;
    models::LeakyReLU act;

    ProjMlp(int in_dim, const PretrainConfig& cfg, Rng& rng)
        : l1("proj.l1", in_dim, cfg.proj_hidden, rng),
          l2("proj.l2", cfg.proj_hidden, cfg.embed_dim, rng) {}

    Tensor forward(const Tensor& x) { return l2.forward(act.forward(l1.forward(x))); }
    Tensor backward(const Tensor& dy) { return l1.backward(act.backward(l2.backward(dy))); }
    void collect(std::vector<models::Parameter*>& ps) {
        l1.collect(ps);
        l2.collect(ps);
    }
};

Tensor images_to_tensor(const std::vector<Image>& imgs) {
    const Image& first = imgs.front();
    Tensor x({static_cast<int>(imgs.size()), first.c, first.h, first.w});
    for (size_t i = 0; i < imgs.size(); ++i) image_to_chw(imgs[i], x, static_cast<int>(i));
    return x;
}

// mean per-dim variance across the batch; the collapse guard trips when
// every embedding has become (numerically) the same vector
double batch_embedding_variance(const Tensor& e) {
    const int b = e.dim(0), d = e.dim(1);
    if (b < 2) return std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int i = 0; i < b; ++i) mean += e.at(i, j);
        mean /= b;
        double var = 0.0;
        for (int i = 0; i < b; ++i) var += (e.at(i, j) - mean) * (e.at(i, j) - mean);
        total += var / b;
    }
    return total / d;
}

// batch objective: mean over rows of the symmetric stop-gradient cosine;
// returns per-branch gradients
double batch_similarity_with_grad(const Tensor& ea, const Tensor& eb, Tensor& ga, Tensor& gb) {
    const int b = ea.dim(0), d = ea.dim(1);
    ga = Tensor(ea.shape);
    gb = Tensor(eb.shape);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        std::vector<double> e1(static_cast<size_t>(d)), e2(static_cast<size_t>(d)), g1, g2;
        for (int j = 0; j < d; ++j) {
            e1[static_cast<size_t>(j)] = ea.at(i, j);
            e2[static_cast<size_t>(j)] = eb.at(i, j);
        }
        total += similarity_loss_with_grad(e1, e2, g1, g2);
        for (int j = 0; j < d; ++j) {
            ga.at(i, j) = g1[static_cast<size_t>(j)] / b;
            gb.at(i, j) = g2[static_cast<size_t>(j)] / b;
        }
    }
    return total / b;
}

}  // namespace

train::TrainHistory pretrain_augmentation(models::Backbone& backbone,
                                          const data::SampleSet& images, int epochs,
                                          const PretrainConfig& cfg, uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("pretrain: empty image set");
    train::TrainHistory hist;
    Rng proj_rng(derive_seed(seed, "proj"));
    ProjMlp proj(backbone.feature_dim(), cfg, proj_rng);
    auto opt = train::make_optimizer(cfg.opt);
    std::vector<models::Parameter*> params = backbone.parameters();
    proj.collect(params);

    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = train::schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        Rng rng(derive_seed(seed, "pre-epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<Image> va, vb;
            for (size_t i = start; i < stop; ++i) {
                ViewPair vp = make_view_pair(
                    images.image(order[i]), Regime::augmentation_asymmetric,
                    derive_seed(seed, "views", static_cast<uint64_t>(epoch), order[i]));
                va.push_back(std::move(vp.view_a));
                vb.push_back(std::move(vp.view_b));
            }
            // two passes through the one backbone; gradients accumulate
            backbone.zero_grad();
            for (models::Parameter* p : params) p->zero_grad();
            Tensor ea = proj.forward(backbone.forward(images_to_tensor(va)));
            double var = batch_embedding_variance(ea);
            if (var < cfg.collapse_threshold)
                throw train::TrainAbort("embedding collapse: batch variance " +
                                        std::to_string(var) + " below threshold");
            // layer caches hold one branch at a time: stash A's embedding,
            // run B, push B's gradient, then recompute A and push its
            Tensor ea_vals = ea;
            Tensor ga, gb;
            Tensor eb = proj.forward(backbone.forward(images_to_tensor(vb)));
            double loss = batch_similarity_with_grad(ea_vals, eb, ga, gb);
            if (!std::isfinite(loss))
                throw train::TrainAbort("non-finite pretrain loss at epoch " +
                                        std::to_string(epoch));
            // caches currently hold branch B
            backbone.backward(proj.backward(gb));
            // recompute branch A activations, then push its gradient
            ea = proj.forward(backbone.forward(images_to_tensor(va)));
            backbone.backward(proj.backward(ga));
            opt->step(params, lr);
            loss_sum += loss;
            ++steps;
        }
        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss["similarity"] = loss_sum / std::max(1, steps);
        hist.epochs.push_back(std::move(rec));
    }
    if (!hist.epochs.empty())
        hist.final_metrics["similarity"] = hist.epochs.back().train_loss.at("similarity");
    return hist;
}

train::TrainHistory pretrain_architecture(models::Backbone& conv_backbone,
                                          models::Backbone& attn_backbone,
                                          const data::SampleSet& images, int epochs,
                                          const PretrainConfig& cfg, uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("pretrain: empty image set");
    train::TrainHistory hist;
    Rng rng_a(derive_seed(seed, "proj-conv"));
    Rng rng_b(derive_seed(seed, "proj-attn"));
    ProjMlp proj_conv(conv_backbone.feature_dim(), cfg, rng_a);
    ProjMlp proj_attn(attn_backbone.feature_dim(), cfg, rng_b);
    auto opt_conv = train::make_optimizer(cfg.opt);
    auto opt_attn = train::make_optimizer(cfg.opt);
    std::vector<models::Parameter*> params_conv = conv_backbone.parameters();
    proj_conv.collect(params_conv);
    std::vector<models::Parameter*> params_attn = attn_backbone.parameters();
    proj_attn.collect(params_attn);

    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = train::schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        Rng rng(derive_seed(seed, "pre-epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<Image> batch;
            for (size_t i = start; i < stop; ++i) batch.push_back(images.image(order[i]));
            Tensor x = images_to_tensor(batch);
            for (models::Parameter* p : params_conv) p->zero_grad();
            for (models::Parameter* p : params_attn) p->zero_grad();
            Tensor ea = proj_conv.forward(conv_backbone.forward(x));
            Tensor eb = proj_attn.forward(attn_backbone.forward(x));
            double var = std::min(batch_embedding_variance(ea), batch_embedding_variance(eb));
            if (var < cfg.collapse_threshold)
                throw train::TrainAbort("embedding collapse: batch variance " +
                                        std::to_string(var) + " below threshold");
            Tensor ga, gb;
            double loss = batch_similarity_with_grad(ea, eb, ga, gb);
            if (!std::isfinite(loss))
                throw train::TrainAbort("non-finite pretrain loss at epoch " +
                                        std::to_string(epoch));
            conv_backbone.backward(proj_conv.backward(ga));
            attn_backbone.backward(proj_attn.backward(gb));
            opt_conv->step(params_conv, lr);
            opt_attn->step(params_attn, lr);
            loss_sum += loss;
            ++steps;
        }
        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss["similarity"] = loss_sum / std::max(1, steps);
        hist.epochs.push_back(std::move(rec));
    }
    if (!hist.epochs.empty())
        hist.final_metrics["similarity"] = hist.epochs.back().train_loss.at("similarity");
    return hist;
}

double evaluate_classifier(models::Classifier& clf, const data::SampleSet& ds,
                           const FinetuneConfig& cfg, int eval_batch) {
    if (ds.empty()) throw std::invalid_argument("evaluate_classifier: empty set");
    models::Mode prior = clf.mode();
    clf.set_mode(models::Mode::eval);
    std::vector<int> pred_cls, gt_cls;
    std::vector<std::vector<int>> pred_ml, gt_ml;
    size_t n = ds.size();
    int num_classes = 0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(eval_batch)) {
        size_t stop = std::min(n, start + static_cast<size_t>(eval_batch));
        std::vector<Image> batch;
        for (size_t i = start; i < stop; ++i) batch.push_back(ds.image(i));
        Tensor logits = clf.forward(images_to_tensor(batch));
        num_classes = logits.dim(1);
        for (size_t i = start; i < stop; ++i) {
            int row = static_cast<int>(i - start);
            const std::vector<int>& lab = ds.labels(i);
            if (cfg.multilabel) {
                std::vector<int> p(static_cast<size_t>(logits.dim(1)));
                for (int j = 0; j < logits.dim(1); ++j) p[static_cast<size_t>(j)] =
                    logits.at(row, j) > 0.0 ? 1 : 0;  // sigmoid(z) > 0.5
                pred_ml.push_back(std::move(p));
                gt_ml.push_back(lab);
            } else {
                int best = 0;
                for (int j = 1; j < logits.dim(1); ++j)
                    if (logits.at(row, j) > logits.at(row, best)) best = j;
                pred_cls.push_back(best);
                gt_cls.push_back(lab.at(0));
            }
        }
    }
    clf.set_mode(prior);
    if (cfg.multilabel) return metrics::macro_f1_multilabel(pred_ml, gt_ml);
    return cfg.metric == ClsMetric::f1
               ? metrics::macro_f1_multiclass(pred_cls, gt_cls, num_classes)
               : metrics::macro_recall_multiclass(pred_cls, gt_cls, num_classes);
}

FinetuneResult finetune(std::unique_ptr<models::Backbone> backbone,
                        const data::SampleSet& labeled, const data::SampleSet& val, int epochs,
                        double fraction, const FinetuneConfig& cfg, uint64_t seed) {
    if (labeled.empty()) throw std::invalid_argument("finetune: empty labeled set");
    // infer class count from the stored labels
    int num_classes = 0;
    if (cfg.multilabel) {
        num_classes = static_cast<int>(labeled.labels(0).size());
    } else {
        for (size_t i = 0; i < labeled.size(); ++i)
            num_classes = std::max(num_classes, labeled.labels(i).at(0) + 1);
        num_classes = std::max(num_classes, 2);
    }

    FinetuneResult out;
    out.classifier = std::make_unique<models::Classifier>(std::move(backbone), num_classes,
                                                          derive_seed(seed, "finetune-head"));
    models::Classifier& clf = *out.classifier;

    // label-fraction subset of the fine-tuning pool
    std::vector<std::string> ids;
    for (size_t i = 0; i < labeled.size(); ++i) ids.push_back(labeled.id(i));
    data::LabelFractionSplit lf = data::subsample_labels(ids, fraction, seed);
    std::vector<size_t> pool;
    for (size_t i = 0; i < labeled.size(); ++i)
        if (std::find(lf.labeled.begin(), lf.labeled.end(), labeled.id(i)) != lf.labeled.end())
            pool.push_back(i);
    out.history.final_metrics["n_labeled_used"] = static_cast<double>(pool.size());
    if (pool.empty()) throw std::invalid_argument("finetune: fraction leaves no labeled images");

    auto opt = train::make_optimizer(cfg.opt);
    auto params = clf.parameters();
    std::vector<Tensor> best_snapshot;
    double best_val = -1.0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = train::schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        Rng rng(derive_seed(seed, "ft-epoch", static_cast<uint64_t>(epoch)));
        std::vector<size_t> order = pool;
        rng.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<Image> batch;
            std::vector<int> labels_cls;
            std::vector<std::vector<int>> labels_ml;
            for (size_t i = start; i < stop; ++i) {
                batch.push_back(labeled.image(order[i]));
                const std::vector<int>& lab = labeled.labels(order[i]);
                if (cfg.multilabel)
                    labels_ml.push_back(lab);
                else
                    labels_cls.push_back(lab.at(0));
            }
            clf.zero_grad();
            Tensor logits = clf.forward(images_to_tensor(batch));
            Tensor dlogits;
            loss::LossValue lv = cfg.multilabel
                                     ? loss::multilabel_bce_with_grad(logits, labels_ml, dlogits)
                                     : loss::softmax_ce_with_grad(logits, labels_cls, dlogits);
            if (!std::isfinite(lv.value))
                throw train::TrainAbort("non-finite finetune loss at epoch " +
                                        std::to_string(epoch));
            clf.backward(dlogits);
            opt->step(params, lr);
            loss_sum += lv.value;
            ++steps;
        }
        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss["cls"] = loss_sum / std::max(1, steps);
        if (!val.empty()) {
            double v = evaluate_classifier(clf, val, cfg);
            rec.val_metrics[cfg.metric == ClsMetric::f1 || cfg.multilabel ? "val_f1"
                                                                          : "val_recall"] = v;
            if (v > best_val) {
                best_val = v;
                best_snapshot.clear();
                for (models::Parameter* p : params) best_snapshot.push_back(p->value);
                out.history.best_epoch = epoch;
            }
        }
        out.history.epochs.push_back(std::move(rec));
    }
    if (!best_snapshot.empty()) {
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_snapshot[i];
        out.history.final_metrics[cfg.metric == ClsMetric::f1 || cfg.multilabel
                                      ? "val_f1"
                                      : "val_recall"] = best_val;
    }
    return out;
}

}  // namespace s4mi::selfsup
