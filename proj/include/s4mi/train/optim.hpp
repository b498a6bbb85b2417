#ifndef S4MI_TRAIN_OPTIM_HPP
#define S4MI_TRAIN_OPTIM_HPP

#include <memory>
#include <vector>

#include "s4mi/models/model.hpp"

namespace s4mi::train {

struct OptimizerConfig {
    enum class Kind { adam, sgd };
    Kind kind = Kind::adam;
    double lr = 3.6e-4;
    double weight_decay = 1e-5;
};

struct ScheduleConfig {
    enum class Kind { cosine_annealing, step };
    Kind kind = Kind::cosine_annealing;
    int t_max = 50;
    double lr_min = 3.4e-4;
    int step_size = 20;   // step schedule only
    double gamma = 0.5;   // step schedule only
};

// lr_min + 0.5*(lr0 - lr_min)*(1 + cos(pi*epoch/t_max)); epochs past t_max
// clamp to lr_min
double cosine_lr(int epoch, const ScheduleConfig& cfg, double lr0);
double step_lr(int epoch, const ScheduleConfig& cfg, double lr0);
double schedule_lr(int epoch, const ScheduleConfig& cfg, double lr0);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    // one update over the parameter list; the list must be the same, in the
    // same order, on every call (moment state is positional)
    virtual void step(const std::vector<models::Parameter*>& params, double lr) = 0;
};

// Adam with L2 weight decay folded into the gradient
class Adam : public Optimizer {
public:
    explicit Adam(double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<models::Parameter*>& params, double lr) override;

private:
    double wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

class Sgd : public Optimizer {
public:
    explicit Sgd(double weight_decay) : wd_(weight_decay) {}
    void step(const std::vector<models::Parameter*>& params, double lr) override;

private:
    double wd_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg);

}  // namespace s4mi::train

#endif
