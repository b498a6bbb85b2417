#include "s4mi/train/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "s4mi/core/parallel.hpp"

namespace s4mi::train {

double cosine_lr(int epoch, const ScheduleConfig& cfg, double lr0) {
    if (epoch < 0) throw std::invalid_argument("cosine_lr: negative epoch");
    if (cfg.t_max < 1) throw std::invalid_argument("cosine_lr: t_max must be >= 1");
    if (epoch > cfg.t_max) return cfg.lr_min;
    return cfg.lr_min +
           0.5 * (lr0 - cfg.lr_min) * (1.0 + std::cos(M_PI * epoch / static_cast<double>(cfg.t_max)));
}

double step_lr(int epoch, const ScheduleConfig& cfg, double lr0) {
    if (epoch < 0) throw std::invalid_argument("step_lr: negative epoch");
    if (cfg.step_size < 1) throw std::invalid_argument("step_lr: step_size must be >= 1");
    return lr0 * std::pow(cfg.gamma, epoch / cfg.step_size);
}

double schedule_lr(int epoch, const ScheduleConfig& cfg, double lr0) {
    return cfg.kind == ScheduleConfig::Kind::cosine_annealing ? cosine_lr(epoch, cfg, lr0)
                                                              : step_lr(epoch, cfg, lr0);
}

void Adam::step(const std::vector<models::Parameter*>& params, double lr) {
    if (m_.empty()) {
        for (const models::Parameter* p : params) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("Adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        models::Parameter& p = *params[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        parallel_for(p.value.numel(), [&](int64_t j) {
            size_t k = static_cast<size_t>(j);
            double g = p.grad.v[k] + wd_ * p.value.v[k];
            m.v[k] = beta1_ * m.v[k] + (1.0 - beta1_) * g;
            v.v[k] = beta2_ * v.v[k] + (1.0 - beta2_) * g * g;
            double mhat = m.v[k] / bc1;
            double vhat = v.v[k] / bc2;
            p.value.v[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
        });
    }
}

void Sgd::step(const std::vector<models::Parameter*>& params, double lr) {
    for (models::Parameter* p : params) {
        parallel_for(p->value.numel(), [&](int64_t j) {
            size_t k = static_cast<size_t>(j);
            p->value.v[k] -= lr * (p->grad.v[k] + wd_ * p->value.v[k]);
        });
    }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("optimizer: lr must be positive");
    if (cfg.weight_decay < 0.0) throw std::invalid_argument("optimizer: negative weight decay");
    if (cfg.kind == OptimizerConfig::Kind::adam) return std::make_unique<Adam>(cfg.weight_decay);
    return std::make_unique<Sgd>(cfg.weight_decay);
}

}  // namespace s4mi::train
