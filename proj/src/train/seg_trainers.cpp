#include "s4mi/train/seg_trainers.hpp"

#include <algorithm>
#include <cmath>

#include "s4mi/core/rng.hpp"
#include "s4mi/data/pipeline.hpp"
#include "s4mi/loss/losses.hpp"
#include "s4mi/metrics/metrics.hpp"

namespace s4mi::train {

namespace {

std::vector<Tensor> clone_params(models::Model& m) {
    std::vector<Tensor> out;
    for (models::Parameter* p : m.parameters()) out.push_back(p->value);
    return out;
}

void restore_params(models::Model& m, const std::vector<Tensor>& snap) {
    auto ps = m.parameters();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
}

// gathers one batch; masks are fetched only when `with_masks` is set so the
// access audit reflects true label usage
struct Batch {
    Tensor x;
    IntTensor target;
};

Batch assemble(const data::SampleSet& ds, const std::vector<size_t>& idx, bool with_masks,
               bool augment_batch, uint64_t aug_seed) {
    const Image& first = ds.image(idx.at(0));
    const int n = static_cast<int>(idx.size());
    Batch b;
    b.x = Tensor({n, first.c, first.h, first.w});
    if (with_masks) b.target = IntTensor({n, first.h, first.w});
    for (int i = 0; i < n; ++i) {
        Image img = ds.image(idx[static_cast<size_t>(i)]);
        std::optional<Mask> mask;
        if (with_masks) mask = ds.mask(idx[static_cast<size_t>(i)]);
        if (augment_batch) {
            data::DihedralTransform t =
                data::draw_dihedral(derive_seed(aug_seed, "aug-item", static_cast<uint64_t>(i)));
            img = data::apply_dihedral(t, img);
            if (mask) mask = data::apply_dihedral(t, *mask);
        }
        image_to_chw(img, b.x, i);
        if (with_masks)
            for (int y = 0; y < first.h; ++y)
                for (int x = 0; x < first.w; ++x) b.target.at(i, y, x) = mask->at(y, x);
    }
    return b;
}

std::vector<double> effective_weights(const TrainerConfig& cfg, int num_classes) {
    if (cfg.class_weights.empty()) return std::vector<double>(static_cast<size_t>(num_classes), 1.0);
    if (static_cast<int>(cfg.class_weights.size()) != num_classes)
        throw std::invalid_argument("trainer: class_weights length mismatch");
    return cfg.class_weights;
}

void check_finite_or_abort(double v, const std::string& where, int epoch, int step) {
    if (!std::isfinite(v))
        throw TrainAbort("non-finite loss in " + where + " at epoch " + std::to_string(epoch) +
                         " step " + std::to_string(step));
}

void accumulate_components(std::map<std::string, double>& sums, const loss::LossValue& lv) {
    sums["total"] += lv.value;
    for (const auto& [k, v] : lv.components) sums[k] += v;
}

}  // namespace

SemiBatch compose_semi_batch(size_t labeled_pool, size_t unlabeled_pool, double fraction,
                             int batch_size, uint64_t seed) {
    if (batch_size < 2) throw std::invalid_argument("compose_semi_batch: batch_size < 2");
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("compose_semi_batch: fraction out of range");
    SemiBatch out;
    Rng rng(derive_seed(seed, "semi-batch"));
    auto draw_without_replacement = [&rng](size_t pool, size_t count) {
        std::vector<size_t> all(pool);
        for (size_t i = 0; i < pool; ++i) all[i] = i;
        rng.shuffle(all);
        all.resize(count);
        return all;
    };
    if (fraction >= 1.0) {
        // 15+1 rule: one image keeps the cross-teaching term alive; it comes
        // from the labeled pool but its mask stays unused
        size_t nl = static_cast<size_t>(batch_size - 1);
        if (labeled_pool < nl + 1)
            throw std::invalid_argument("compose_semi_batch: labeled pool too small for 15+1");
        std::vector<size_t> picks = draw_without_replacement(labeled_pool, nl + 1);
        out.labeled.assign(picks.begin(), picks.begin() + static_cast<long>(nl));
        out.unlabeled.assign(picks.end() - 1, picks.end());
        out.unlabeled_from_labeled = true;
    } else {
        size_t nl = static_cast<size_t>(batch_size / 2);
        size_t nu = static_cast<size_t>(batch_size) - nl;
        if (labeled_pool < nl)
            throw std::invalid_argument("compose_semi_batch: labeled pool too small");
        if (unlabeled_pool < nu)
            throw std::invalid_argument("compose_semi_batch: unlabeled pool too small");
        out.labeled = draw_without_replacement(labeled_pool, nl);
        out.unlabeled = draw_without_replacement(unlabeled_pool, nu);
    }
    return out;
}

double evaluate_seg_iou(models::Model& model, const data::SampleSet& ds, int eval_batch) {
    if (ds.empty()) throw std::invalid_argument("evaluate_seg_iou: empty set");
    models::Mode prior = model.mode();
    model.set_mode(models::Mode::eval);
    double total = 0.0;
    size_t n = ds.size();
    for (size_t start = 0; start < n; start += static_cast<size_t>(eval_batch)) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(n, start + static_cast<size_t>(eval_batch)); ++i)
            idx.push_back(i);
        Batch b = assemble(ds, idx, true, false, 0);
        IntTensor pred = loss::pseudo_label(model.forward(b.x));
        for (size_t i = 0; i < idx.size(); ++i) {
            Mask pm(pred.dim(1), pred.dim(2)), gm(pred.dim(1), pred.dim(2));
            for (int y = 0; y < pred.dim(1); ++y)
                for (int x = 0; x < pred.dim(2); ++x) {
                    pm.at(y, x) = pred.at(static_cast<int>(i), y, x);
                    gm.at(y, x) = b.target.at(static_cast<int>(i), y, x);
                }
            total += metrics::iou(pm, gm, 1);
        }
    }
    model.set_mode(prior);
    return total / static_cast<double>(n);
}

TrainHistory train_supervised(models::Model& model, const data::SampleSet& train,
                              const data::SampleSet& val, const TrainerConfig& cfg, int epochs,
                              uint64_t seed) {
    if (train.empty()) throw std::invalid_argument("train_supervised: empty training set");
    TrainHistory hist;
    auto opt = make_optimizer(cfg.opt);
    auto params = model.parameters();
    std::vector<Tensor> best_snapshot;
    double best_val = -1.0;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    // class count from the first mask
    int num_classes = 2;
    {
        const Mask& m = train.mask(0);
        for (int v : m.v) num_classes = std::max(num_classes, v + 1);
    }
    std::vector<double> weights = effective_weights(cfg, num_classes);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        Rng rng(derive_seed(seed, "sup-epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        std::map<std::string, double> loss_sums;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                                    order.begin() +
                                        static_cast<long>(std::min(order.size(),
                                                                   start + static_cast<size_t>(
                                                                               cfg.batch_size))));
            uint64_t aug = derive_seed(seed, "sup-aug", static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(steps));
            Batch b = assemble(train, idx, true, cfg.augment, aug);
            model.zero_grad();
            Tensor logits = model.forward(b.x);
            Tensor dlogits;
            loss::LossValue lv =
                loss::supervised_loss_with_grad(logits, b.target, weights, dlogits, cfg.dice_eps);
            check_finite_or_abort(lv.value, "train_supervised", epoch, steps);
            model.backward(dlogits);
            opt->step(params, lr);
            accumulate_components(loss_sums, lv);
            ++steps;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        for (auto& [k, v] : loss_sums) rec.train_loss[k] = v / std::max(1, steps);
        if (!val.empty()) {
            double v = evaluate_seg_iou(model, val);
            rec.val_metrics["val_iou"] = v;
            if (v > best_val) {
                best_val = v;
                best_snapshot = clone_params(model);
                hist.best_epoch = epoch;
            }
        }
        hist.epochs.push_back(std::move(rec));
    }
    if (!best_snapshot.empty()) restore_params(model, best_snapshot);
    if (best_val >= 0.0) hist.final_metrics["val_iou"] = best_val;
    return hist;
}

TrainHistory train_cross_teaching(models::Model& conv_model, models::Model& attn_model,
                                  const data::SampleSet& labeled, const data::SampleSet& unlabeled,
                                  const data::SampleSet& val, double fraction,
                                  const TrainerConfig& cfg, int epochs, uint64_t seed) {
    if (labeled.empty()) throw std::invalid_argument("train_cross_teaching: no labeled data");
    TrainHistory hist;
    auto opt_conv = make_optimizer(cfg.opt);
    auto opt_attn = make_optimizer(cfg.opt);
    auto params_conv = conv_model.parameters();
    auto params_attn = attn_model.parameters();
    std::vector<Tensor> best_conv, best_attn;
    double best_val_conv = -1.0, best_val_attn = -1.0;
    int num_classes = 2;
    {
        const Mask& m = labeled.mask(0);
        for (int v : m.v) num_classes = std::max(num_classes, v + 1);
    }
    std::vector<double> weights = effective_weights(cfg, num_classes);

    const bool use_unsup = cfg.fifteen_one || !unlabeled.empty();
    const size_t per_epoch_items = labeled.size() + unlabeled.size();
    const int steps_per_epoch = std::max<int>(
        1, static_cast<int>((per_epoch_items + static_cast<size_t>(cfg.batch_size) - 1) /
                            static_cast<size_t>(cfg.batch_size)));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        double lr = schedule_lr(epoch, cfg.sched, cfg.opt.lr);
        std::map<std::string, double> sums_conv, sums_attn;
        for (int step = 0; step < steps_per_epoch; ++step) {
            uint64_t step_seed = derive_seed(seed, "semi-step", static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step));
            std::optional<SemiBatch> sb;
            std::vector<size_t> labeled_idx;
            if (use_unsup) {
                double f = unlabeled.empty() ? 1.0 : fraction;
                sb = compose_semi_batch(labeled.size(), unlabeled.size(), f, cfg.batch_size,
                                        step_seed);
                labeled_idx = sb->labeled;
            } else {
                // unsupervised term disabled: plain supervised batches
                std::vector<size_t> all(labeled.size());
                for (size_t i = 0; i < all.size(); ++i) all[i] = i;
                Rng rng(derive_seed(step_seed, "sup-only"));
                rng.shuffle(all);
                all.resize(std::min(all.size(), static_cast<size_t>(cfg.batch_size)));
                labeled_idx = std::move(all);
            }

            Batch lb = assemble(labeled, labeled_idx, true, cfg.augment,
                                derive_seed(step_seed, "aug-labeled"));
            conv_model.zero_grad();
            attn_model.zero_grad();

            loss::LossValue unsup_conv, unsup_attn;
            if (sb && !sb->unlabeled.empty()) {
                const data::SampleSet& upool = sb->unlabeled_from_labeled ? labeled : unlabeled;
                Batch ub = assemble(upool, sb->unlabeled, false, cfg.augment,
                                    derive_seed(step_seed, "aug-unlabeled"));
                Tensor logits_u_conv = conv_model.forward(ub.x);
                Tensor logits_u_attn = attn_model.forward(ub.x);
                IntTensor pseudo_for_conv = loss::pseudo_label(logits_u_attn);
                IntTensor pseudo_for_attn = loss::pseudo_label(logits_u_conv);
                Tensor du_conv, du_attn;
                unsup_conv = loss::cross_teach_unsup_loss_with_grad(logits_u_conv, pseudo_for_conv,
                                                                    du_conv, cfg.dice_eps);
                unsup_attn = loss::cross_teach_unsup_loss_with_grad(logits_u_attn, pseudo_for_attn,
                                                                    du_attn, cfg.dice_eps);
                if (cfg.unsup_weight != 1.0) {
                    for (double& g : du_conv.v) g *= cfg.unsup_weight;
                    for (double& g : du_attn.v) g *= cfg.unsup_weight;
                    unsup_conv.value *= cfg.unsup_weight;
                    unsup_attn.value *= cfg.unsup_weight;
                }
                conv_model.backward(du_conv);
                attn_model.backward(du_attn);
            }

            Tensor dl_conv, dl_attn;
            Tensor logits_l_conv = conv_model.forward(lb.x);
            loss::LossValue sup_conv = loss::supervised_loss_with_grad(logits_l_conv, lb.target,
                                                                       weights, dl_conv,
                                                                       cfg.dice_eps);
            conv_model.backward(dl_conv);
            Tensor logits_l_attn = attn_model.forward(lb.x);
            loss::LossValue sup_attn = loss::supervised_loss_with_grad(logits_l_attn, lb.target,
                                                                       weights, dl_attn,
                                                                       cfg.dice_eps);
            attn_model.backward(dl_attn);

            loss::LossValue total_conv = loss::total_semi_loss(sup_conv, unsup_conv);
            loss::LossValue total_attn = loss::total_semi_loss(sup_attn, unsup_attn);
            check_finite_or_abort(total_conv.value, "cross_teaching(conv)", epoch, step);
            check_finite_or_abort(total_attn.value, "cross_teaching(attn)", epoch, step);

            opt_conv->step(params_conv, lr);
            opt_attn->step(params_attn, lr);
            accumulate_components(sums_conv, total_conv);
            accumulate_components(sums_attn, total_attn);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        for (auto& [k, v] : sums_conv) rec.train_loss["conv." + k] = v / steps_per_epoch;
        for (auto& [k, v] : sums_attn) rec.train_loss["attn." + k] = v / steps_per_epoch;
        if (!val.empty()) {
            double vc = evaluate_seg_iou(conv_model, val);
            double va = evaluate_seg_iou(attn_model, val);
            rec.val_metrics["val_iou_conv"] = vc;
            rec.val_metrics["val_iou_attn"] = va;
            rec.val_metrics["val_iou"] = std::max(vc, va);
            if (vc > best_val_conv) {
                best_val_conv = vc;
                best_conv = clone_params(conv_model);
            }
            if (va > best_val_attn) {
                best_val_attn = va;
                best_attn = clone_params(attn_model);
                hist.best_epoch = epoch;
            }
        }
        hist.epochs.push_back(std::move(rec));
    }
    if (!best_conv.empty()) restore_params(conv_model, best_conv);
    if (!best_attn.empty()) restore_params(attn_model, best_attn);
    if (best_val_conv >= 0.0) {
        hist.final_metrics["val_iou_conv"] = best_val_conv;
        hist.final_metrics["val_iou_attn"] = best_val_attn;
        hist.final_metrics["val_iou"] = std::max(best_val_conv, best_val_attn);
    }
    return hist;
}

}  // namespace s4mi::train
