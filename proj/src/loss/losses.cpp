#include "s4mi/loss/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "s4mi/core/parallel.hpp"

namespace s4mi::loss {

namespace {

void check_seg_shapes(const Tensor& scores, const IntTensor& target) {
    if (scores.shape.size() != 4 || target.shape.size() != 3)
        throw std::invalid_argument("loss: expected [B,C,H,W] scores and [B,H,W] target");
    if (scores.dim(0) != target.dim(0) || scores.dim(2) != target.dim(1) ||
        scores.dim(3) != target.dim(2))
        throw std::invalid_argument("loss: score/target shape mismatch");
    if (scores.dim(1) < 2) throw std::invalid_argument("loss: need C >= 2");
    for (int t : target.v)
        if (t < 0 || t >= scores.dim(1))
            throw std::invalid_argument("loss: target class id out of range");
}

void check_simplex(const Tensor& probs) {
    const int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    for (int bi = 0; bi < b; ++bi)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int ci = 0; ci < c; ++ci) s += probs.at(bi, ci, y, x);
                if (std::abs(s - 1.0) > 1e-5)
                    throw std::invalid_argument("dice_loss: probs do not sum to 1 over classes");
            }
}

// per-(batch,class) overlap sums used by the dice value and gradient
struct DiceSums {
    std::vector<double> inter, psum, gsum;  // indexed b*C + c
};

DiceSums dice_sums(const Tensor& probs, const IntTensor& target) {
    const int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    DiceSums s;
    s.inter.assign(static_cast<size_t>(b) * c, 0.0);
    s.psum.assign(static_cast<size_t>(b) * c, 0.0);
    s.gsum.assign(static_cast<size_t>(b) * c, 0.0);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        double inter = 0.0, psum = 0.0, gsum = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double p = probs.at(bi, ci, y, x);
                double g = target.at(bi, y, x) == ci ? 1.0 : 0.0;
                inter += p * g;
                psum += p;
                gsum += g;
            }
        s.inter[static_cast<size_t>(idx)] = inter;
        s.psum[static_cast<size_t>(idx)] = psum;
        s.gsum[static_cast<size_t>(idx)] = gsum;
    });
    return s;
}

double dice_value_from_sums(const DiceSums& s, int b, int c, double eps) {
    double total = 0.0;
    for (size_t i = 0; i < s.inter.size(); ++i)
        total += 1.0 - (2.0 * s.inter[i] + eps) / (s.psum[i] + s.gsum[i] + eps);
    return total / (static_cast<double>(b) * c);
}

}  // namespace

Tensor softmax_channels(const Tensor& logits) {
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    Tensor probs(logits.shape);
    parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        double mx = logits.at(bi, 0, y, x);
        for (int ci = 1; ci < c; ++ci) mx = std::max(mx, logits.at(bi, ci, y, x));
        double denom = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            double e = std::exp(logits.at(bi, ci, y, x) - mx);
            probs.at(bi, ci, y, x) = e;
            denom += e;
        }
        for (int ci = 0; ci < c; ++ci) probs.at(bi, ci, y, x) /= denom;
    });
    return probs;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs) {
    const int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    Tensor dlogits(probs.shape);
    parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        double dot = 0.0;
        for (int ci = 0; ci < c; ++ci) dot += probs.at(bi, ci, y, x) * dprobs.at(bi, ci, y, x);
        for (int ci = 0; ci < c; ++ci)
            dlogits.at(bi, ci, y, x) = probs.at(bi, ci, y, x) * (dprobs.at(bi, ci, y, x) - dot);
    });
    return dlogits;
}

LossValue dice_loss(const Tensor& probs, const IntTensor& target, double eps) {
    check_seg_shapes(probs, target);
    check_simplex(probs);
    DiceSums s = dice_sums(probs, target);
    LossValue out;
    out.value = dice_value_from_sums(s, probs.dim(0), probs.dim(1), eps);
    out.components["dice"] = out.value;
    return out;
}

Tensor dice_loss_grad(const Tensor& probs, const IntTensor& target, double eps) {
    check_seg_shapes(probs, target);
    const int b = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    DiceSums s = dice_sums(probs, target);
    Tensor grad(probs.shape);
    const double scale = 1.0 / (static_cast<double>(b) * c);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        double numer = 2.0 * s.inter[static_cast<size_t>(idx)] + eps;
        double denom = s.psum[static_cast<size_t>(idx)] + s.gsum[static_cast<size_t>(idx)] + eps;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double g = target.at(bi, y, x) == ci ? 1.0 : 0.0;
                grad.at(bi, ci, y, x) = -scale * (2.0 * g * denom - numer) / (denom * denom);
            }
    });
    return grad;
}

LossValue weighted_cross_entropy(const Tensor& logits, const IntTensor& target,
                                 const std::vector<double>& weights) {
    check_seg_shapes(logits, target);
    if (static_cast<int>(weights.size()) != logits.dim(1))
        throw std::invalid_argument("weighted_cross_entropy: weights length != C");
    if (!all_finite(logits))
        throw std::invalid_argument("weighted_cross_entropy: non-finite logits");
    Tensor probs = softmax_channels(logits);
    const int b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
    const int64_t n = static_cast<int64_t>(b) * h * w;
    double wsum = block_sum(n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        return weights[static_cast<size_t>(target.at(bi, rem / w, rem % w))];
    });
    double num = block_sum(n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        int t = target.at(bi, y, x);
        double p = std::max(probs.at(bi, t, y, x), 1e-300);
        return -weights[static_cast<size_t>(t)] * std::log(p);
    });
    LossValue out;
    out.value = num / wsum;
    out.components["cross_entropy"] = out.value;
    return out;
}

Tensor weighted_cross_entropy_grad(const Tensor& logits, const IntTensor& target,
                                   const std::vector<double>& weights) {
    check_seg_shapes(logits, target);
    if (static_cast<int>(weights.size()) != logits.dim(1))
        throw std::invalid_argument("weighted_cross_entropy: weights length != C");
    Tensor probs = softmax_channels(logits);
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const int64_t n = static_cast<int64_t>(b) * h * w;
    double wsum = block_sum(n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        return weights[static_cast<size_t>(target.at(bi, rem / w, rem % w))];
    });
    Tensor grad(logits.shape);
    parallel_for(n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        int t = target.at(bi, y, x);
        double wt = weights[static_cast<size_t>(t)];
        for (int ci = 0; ci < c; ++ci) {
            double ind = ci == t ? 1.0 : 0.0;
            grad.at(bi, ci, y, x) = wt * (probs.at(bi, ci, y, x) - ind) / wsum;
        }
    });
    return grad;
}

LossValue supervised_loss(const Tensor& logits, const IntTensor& target,
                          const std::vector<double>& weights, double eps) {
    LossValue ce = weighted_cross_entropy(logits, target, weights);
    LossValue dice = dice_loss(softmax_channels(logits), target, eps);
    LossValue out;
    out.components["dice"] = dice.value;
    out.components["cross_entropy"] = ce.value;
    out.value = 0.5 * (dice.value + ce.value);
    return out;
}

LossValue supervised_loss_with_grad(const Tensor& logits, const IntTensor& target,
                                    const std::vector<double>& weights, Tensor& dlogits,
                                    double eps) {
    LossValue out = supervised_loss(logits, target, weights, eps);
    Tensor probs = softmax_channels(logits);
    Tensor ddice = softmax_channels_backward(probs, dice_loss_grad(probs, target, eps));
    Tensor dce = weighted_cross_entropy_grad(logits, target, weights);
    dlogits = Tensor(logits.shape);
    parallel_for(dlogits.numel(), [&](int64_t i) {
        dlogits.v[static_cast<size_t>(i)] =
            0.5 * (ddice.v[static_cast<size_t>(i)] + dce.v[static_cast<size_t>(i)]);
    });
    return out;
}

IntTensor pseudo_label(const Tensor& logits) {
    if (logits.shape.size() != 4) throw std::invalid_argument("pseudo_label: expected [B,C,H,W]");
    if (!all_finite(logits)) throw std::invalid_argument("pseudo_label: non-finite logits");
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    IntTensor out({b, h, w});
    parallel_for(static_cast<int64_t>(b) * h * w, [&](int64_t idx) {
        int bi = static_cast<int>(idx / (static_cast<int64_t>(h) * w));
        int rem = static_cast<int>(idx % (static_cast<int64_t>(h) * w));
        int y = rem / w, x = rem % w;
        int best = 0;
        double bv = logits.at(bi, 0, y, x);
        for (int ci = 1; ci < c; ++ci) {
            double v = logits.at(bi, ci, y, x);
            if (v > bv) {  // strict: ties keep the lowest index
                bv = v;
                best = ci;
            }
        }
        out.at(bi, y, x) = best;
    });
    return out;
}

LossValue cross_teach_unsup_loss(const Tensor& logits_self, const IntTensor& pseudo_other,
                                 double eps) {
    LossValue dice = dice_loss(softmax_channels(logits_self), pseudo_other, eps);
    LossValue out;
    out.value = dice.value;
    out.components["unsup_dice"] = dice.value;
    return out;
}

LossValue cross_teach_unsup_loss_with_grad(const Tensor& logits_self,
                                           const IntTensor& pseudo_other, Tensor& dlogits,
                                           double eps) {
    LossValue out = cross_teach_unsup_loss(logits_self, pseudo_other, eps);
    Tensor probs = softmax_channels(logits_self);
    dlogits = softmax_channels_backward(probs, dice_loss_grad(probs, pseudo_other, eps));
    return out;
}

LossValue total_semi_loss(const LossValue& sup, const LossValue& unsup) {
    if (sup.value < 0.0 || unsup.value < 0.0)
        throw std::invalid_argument("total_semi_loss: losses must be non-negative");
    LossValue out;
    out.value = sup.value + unsup.value;
    out.components["sup"] = sup.value;
    out.components["unsup"] = unsup.value;
    for (const auto& [k, v] : sup.components) out.components["sup." + k] = v;
    for (const auto& [k, v] : unsup.components) out.components["unsup." + k] = v;
    return out;
}

// --- classification losses -----------------------------------------------------

namespace {

void check_cls_shapes(const Tensor& logits, size_t n_rows) {
    if (logits.shape.size() != 2) throw std::invalid_argument("cls loss: expected [B,K] logits");
    if (static_cast<size_t>(logits.dim(0)) != n_rows)
        throw std::invalid_argument("cls loss: batch size mismatch");
    if (!all_finite(logits)) throw std::invalid_argument("cls loss: non-finite logits");
}

}  // namespace

LossValue softmax_ce(const Tensor& logits, const std::vector<int>& labels) {
    check_cls_shapes(logits, labels.size());
    const int b = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
            throw std::invalid_argument("softmax_ce: label out of range");
        double mx = logits.at(i, 0);
        for (int j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(logits.at(i, j) - mx);
        total += -(logits.at(i, labels[static_cast<size_t>(i)]) - mx - std::log(denom));
    }
    LossValue out;
    out.value = total / b;
    out.components["cross_entropy"] = out.value;
    return out;
}

LossValue softmax_ce_with_grad(const Tensor& logits, const std::vector<int>& labels,
                               Tensor& dlogits) {
    LossValue out = softmax_ce(logits, labels);
    const int b = logits.dim(0), k = logits.dim(1);
    dlogits = Tensor(logits.shape);
    for (int i = 0; i < b; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(logits.at(i, j) - mx);
        for (int j = 0; j < k; ++j) {
            double p = std::exp(logits.at(i, j) - mx) / denom;
            double ind = j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0;
            dlogits.at(i, j) = (p - ind) / b;
        }
    }
    return out;
}

LossValue multilabel_bce(const Tensor& logits, const std::vector<std::vector<int>>& targets) {
    check_cls_shapes(logits, targets.size());
    const int b = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        if (static_cast<int>(targets[static_cast<size_t>(i)].size()) != k)
            throw std::invalid_argument("multilabel_bce: target width mismatch");
        for (int j = 0; j < k; ++j) {
            double z = logits.at(i, j);
            double t = targets[static_cast<size_t>(i)][static_cast<size_t>(j)] ? 1.0 : 0.0;
            // stable form of -t*log(sigmoid) - (1-t)*log(1-sigmoid)
            double loss = std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
            total += loss;
        }
    }
    LossValue out;
    out.value = total / (static_cast<double>(b) * k);
    out.components["bce"] = out.value;
    return out;
}

LossValue multilabel_bce_with_grad(const Tensor& logits,
                                   const std::vector<std::vector<int>>& targets,
                                   Tensor& dlogits) {
    LossValue out = multilabel_bce(logits, targets);
    const int b = logits.dim(0), k = logits.dim(1);
    dlogits = Tensor(logits.shape);
    const double scale = 1.0 / (static_cast<double>(b) * k);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < k; ++j) {
            double p = 1.0 / (1.0 + std::exp(-logits.at(i, j)));
            double t = targets[static_cast<size_t>(i)][static_cast<size_t>(j)] ? 1.0 : 0.0;
            dlogits.at(i, j) = (p - t) * scale;
        }
    return out;
}

}  // namespace s4mi::loss
