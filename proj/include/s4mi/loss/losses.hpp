#ifndef S4MI_LOSS_LOSSES_HPP
#define S4MI_LOSS_LOSSES_HPP

#include <map>
#include <string>
#include <vector>

#include "s4mi/core/tensor.hpp"

namespace s4mi::loss {

struct LossValue {
    double value = 0.0;
    std::map<std::string, double> components;
};

// softmax over the channel dim of [B,C,H,W]
Tensor softmax_channels(const Tensor& logits);
// chain rule through softmax_channels: given dL/dprobs and probs, return dL/dlogits
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs);

// Soft Dice: per-class 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), averaged
// over classes and batch. probs must lie on the channel simplex.
LossValue dice_loss(const Tensor& probs, const IntTensor& target, double eps = 1e-5);
Tensor dice_loss_grad(const Tensor& probs, const IntTensor& target, double eps = 1e-5);

// Weighted-mean cross-entropy over pixels: sum(w_y * -log p_y) / sum(w_y).
LossValue weighted_cross_entropy(const Tensor& logits, const IntTensor& target,
                                 const std::vector<double>& weights);
Tensor weighted_cross_entropy_grad(const Tensor& logits, const IntTensor& target,
                                   const std::vector<double>& weights);

// 0.5 * (dice + cross_entropy); both sub-losses reported as components
LossValue supervised_loss(const Tensor& logits, const IntTensor& target,
                          const std::vector<double>& weights, double eps = 1e-5);
LossValue supervised_loss_with_grad(const Tensor& logits, const IntTensor& target,
                                    const std::vector<double>& weights, Tensor& dlogits,
                                    double eps = 1e-5);

// per-pixel argmax; ties break toward the lowest class index; no gradient
// flows through the result
IntTensor pseudo_label(const Tensor& logits);

// unweighted Dice of softmax(logits_self) against the peer's pseudo mask,
// which is treated as a constant
LossValue cross_teach_unsup_loss(const Tensor& logits_self, const IntTensor& pseudo_other,
                                 double eps = 1e-5);
LossValue cross_teach_unsup_loss_with_grad(const Tensor& logits_self,
                                           const IntTensor& pseudo_other, Tensor& dlogits,
                                           double eps = 1e-5);

// value = sup + unsup, sub-components retained under "sup."/"unsup." keys
LossValue total_semi_loss(const LossValue& sup, const LossValue& unsup);

// classification heads: multiclass softmax CE over [B,K] logits
LossValue softmax_ce(const Tensor& logits, const std::vector<int>& labels);
LossValue softmax_ce_with_grad(const Tensor& logits, const std::vector<int>& labels,
                               Tensor& dlogits);
// multilabel sigmoid BCE over [B,K] logits with 0/1 targets per class
LossValue multilabel_bce(const Tensor& logits, const std::vector<std::vector<int>>& targets);
LossValue multilabel_bce_with_grad(const Tensor& logits,
                                   const std::vector<std::vector<int>>& targets, Tensor& dlogits);

}  // namespace s4mi::loss

#endif
