#ifndef S4MI_MODELS_MODEL_HPP
#define S4MI_MODELS_MODEL_HPP

#include <memory>
#include <string>
#include <vector>

#include "s4mi/core/tensor.hpp"

namespace s4mi::models {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}

    void zero_grad() { grad.zero(); }
};

enum class Mode { train, eval };

// Differentiable-model contract: forward to logits, backward from the
// logit gradient all the way to the input (the input gradient feeds the
// saliency maps), and enumerable parameters an optimizer updates in place.
class Model {
public:
    virtual ~Model() = default;

    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dout) = 0;
    virtual std::vector<Parameter*> parameters() = 0;

    void set_mode(Mode m) { mode_ = m; }
    Mode mode() const { return mode_; }

    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }

protected:
    Mode mode_ = Mode::train;
};

int64_t parameter_count(Model& model);

}  // namespace s4mi::models

#endif
