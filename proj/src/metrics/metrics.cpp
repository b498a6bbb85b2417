#include "s4mi/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "s4mi/models/model.hpp"

namespace s4mi::metrics {

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt, int positive_class) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion_counts: shape mismatch");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        bool p = pred.v[i] == positive_class;
        bool g = gt.v[i] == positive_class;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double iou(const Mask& pred, const Mask& gt, int positive_class) {
    ConfusionCounts c = confusion_counts(pred, gt, positive_class);
    int64_t uni = c.tp + c.fp + c.fn;
    if (uni == 0) return 1.0;  // both regions empty: perfect agreement
    return static_cast<double>(c.tp) / static_cast<double>(uni);
}

double dice_coefficient(const Mask& pred, const Mask& gt, int positive_class) {
    ConfusionCounts c = confusion_counts(pred, gt, positive_class);
    int64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) {
    return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
    return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1(const ConfusionCounts& c) {
    int64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double mean_iou(const Mask& pred, const Mask& gt, int num_classes) {
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) total += iou(pred, gt, c);
    return total / num_classes;
}

namespace {

ConfusionCounts one_vs_rest(const std::vector<int>& pred, const std::vector<int>& gt, int cls) {
    ConfusionCounts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] == cls, g = gt[i] == cls;
        if (p && g)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

}  // namespace

double macro_f1_multiclass(const std::vector<int>& pred, const std::vector<int>& gt,
                           int num_classes) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("macro_f1: size mismatch");
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) total += f1(one_vs_rest(pred, gt, c));
    return total / num_classes;
}

double macro_recall_multiclass(const std::vector<int>& pred, const std::vector<int>& gt,
                               int num_classes) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("macro_recall: size mismatch");
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) total += recall(one_vs_rest(pred, gt, c));
    return total / num_classes;
}

double macro_f1_multilabel(const std::vector<std::vector<int>>& pred,
                           const std::vector<std::vector<int>>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("macro_f1_multilabel: size mismatch");
    const size_t k = pred[0].size();
    double total = 0.0;
    for (size_t c = 0; c < k; ++c) {
        ConfusionCounts counts;
        for (size_t i = 0; i < pred.size(); ++i) {
            bool p = pred[i].at(c) != 0, g = gt[i].at(c) != 0;
            if (p && g)
                ++counts.tp;
            else if (p)
                ++counts.fp;
            else if (g)
                ++counts.fn;
            else
                ++counts.tn;
        }
        total += f1(counts);
    }
    return total / static_cast<double>(k);
}

SeedAggregate aggregate_seeds(const std::vector<double>& values) {
    if (values.size() < 2) throw std::invalid_argument("aggregate_seeds: need >= 2 values");
    SeedAggregate out;
    out.values = values;
    const double n = static_cast<double>(values.size());
    for (double v : values) out.mean += v;
    out.mean /= n;
    bool identical = std::all_of(values.begin(), values.end(),
                                 [&](double v) { return v == values.front(); });
    if (identical) {
        out.mean = values.front();  // exact, no accumulation residue
        out.ci_halfwidth = 0.0;
        return out;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    double sd = std::sqrt(ss / (n - 1.0));
    out.ci_halfwidth = 1.96 * sd / std::sqrt(n);
    return out;
}

// O(n^3) Hungarian algorithm on a square cost matrix (minimization with
// potentials); we feed it negated intersections to maximize overlap.
std::vector<int> hungarian_match(const std::vector<std::vector<int64_t>>& intersection) {
    const size_t rows = intersection.size();
    if (rows == 0) throw std::invalid_argument("hungarian_match: empty matrix");
    size_t cols = intersection[0].size();
    for (const auto& r : intersection)
        if (r.size() != cols) throw std::invalid_argument("hungarian_match: ragged matrix");
    const size_t n = std::max(rows, cols);  // pad to square with zero overlap
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j)
            cost[i][j] = -static_cast<double>(intersection[i][j]);

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<size_t> p(n + 1, 0), way(n + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        p[0] = i;
        size_t j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            size_t i0 = p[j0], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> mapping(rows, -1);
    for (size_t j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        size_t i = p[j] - 1;
        if (i < rows && j - 1 < cols) mapping[i] = static_cast<int>(j - 1);
    }
    return mapping;
}

double matched_mean_iou(const std::vector<Mask>& pred_clusters, const std::vector<Mask>& gts,
                        int k, int num_classes) {
    if (pred_clusters.size() != gts.size() || pred_clusters.empty())
        throw std::invalid_argument("matched_mean_iou: mismatched mask lists");
    // pool intersections over the whole set, match once, then score
    std::vector<std::vector<int64_t>> inter(static_cast<size_t>(k),
                                            std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
    for (size_t i = 0; i < pred_clusters.size(); ++i) {
        const Mask& p = pred_clusters[i];
        const Mask& g = gts[i];
        if (p.h != g.h || p.w != g.w) throw std::invalid_argument("matched_mean_iou: shape mismatch");
        for (size_t px = 0; px < p.v.size(); ++px)
            ++inter[static_cast<size_t>(p.v[px])][static_cast<size_t>(g.v[px])];
    }
    std::vector<int> mapping = hungarian_match(inter);
    double total = 0.0;
    for (size_t i = 0; i < pred_clusters.size(); ++i) {
        Mask relabeled = pred_clusters[i];
        for (int& v : relabeled.v) {
            int m = mapping[static_cast<size_t>(v)];
            v = m >= 0 ? m : num_classes;  // unmatched clusters score as a void class
        }
        total += mean_iou(relabeled, gts[i], num_classes);
    }
    return total / static_cast<double>(pred_clusters.size());
}

SaliencyMap saliency_map(models::Model& classifier, const Image& image, int class_index) {
    Tensor x({1, image.c, image.h, image.w});
    image_to_chw(image, x, 0);
    models::Mode prior = classifier.mode();
    classifier.set_mode(models::Mode::eval);
    classifier.zero_grad();
    Tensor logits = classifier.forward(x);
    if (logits.shape.size() != 2 || class_index < 0 || class_index >= logits.dim(1))
        throw std::invalid_argument("saliency_map: class index out of range");
    Tensor dlogits(logits.shape);
    dlogits.at(0, class_index) = 1.0;
    Tensor dx = classifier.backward(dlogits);
    classifier.zero_grad();  // parameter grads from the probe are discarded
    classifier.set_mode(prior);

    SaliencyMap out;
    out.class_index = class_index;
    out.values = Image(image.h, image.w, 1);
    double mx = 0.0;
    for (int y = 0; y < image.h; ++y)
        for (int xx = 0; xx < image.w; ++xx) {
            double m = 0.0;
            for (int ch = 0; ch < image.c; ++ch) m = std::max(m, std::abs(dx.at(0, ch, y, xx)));
            out.values.at(y, xx, 0) = m;
            mx = std::max(mx, m);
        }
    if (mx > 0.0)
        for (double& v : out.values.v) v /= mx;
    return out;
}

}  // namespace s4mi::metrics
