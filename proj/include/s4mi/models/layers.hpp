#ifndef S4MI_MODELS_LAYERS_HPP
#define S4MI_MODELS_LAYERS_HPP

#include <string>
#include <vector>

#include "s4mi/core/rng.hpp"
#include "s4mi/core/tensor.hpp"
#include "s4mi/models/model.hpp"

namespace s4mi::models {

// Layers cache whatever their backward pass needs on forward; a model owns
// its layers and wires the gradient chain explicitly (no autograd tape).

struct Conv2d {
    int in_c, out_c, k, stride, pad;
    Parameter w, b;
    Tensor x_;

    Conv2d(const std::string& name, int in_c, int out_c, int k, int stride, int pad, Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);  // accumulates w.grad/b.grad, returns dx
    void collect(std::vector<Parameter*>& ps);
};

struct LeakyReLU {
    double slope = 0.01;
    Tensor x_;
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
};

struct AvgPool2 {
    Tensor forward(const Tensor& x);  // halves H and W (both must be even)
    Tensor backward(const Tensor& dy);

private:
    std::vector<int> in_shape_;
};

struct NearestUp2 {
    Tensor forward(const Tensor& x);  // doubles H and W
    Tensor backward(const Tensor& dy);

private:
    std::vector<int> in_shape_;
};

struct Linear {
    int in_f, out_f;
    Parameter w, b;  // w is [in_f, out_f]
    Tensor x_;

    Linear(const std::string& name, int in_f, int out_f, Rng& rng);
    Tensor forward(const Tensor& x);  // x [N, in_f] -> [N, out_f]
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Parameter*>& ps);
};

struct LayerNorm {
    int dim;
    double eps = 1e-5;
    Parameter gamma, beta;
    Tensor x_, xhat_;
    std::vector<double> inv_std_;

    LayerNorm(const std::string& name, int dim);
    Tensor forward(const Tensor& x);  // normalizes the last dim of [N, dim]
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Parameter*>& ps);
};

// Multi-head self-attention over non-overlapping square windows of a token
// grid. Tokens arrive as [N, dim] with N = batch * th * tw in row-major
// (batch, row, col) order; th and tw must be multiples of the window size.
struct WindowAttention {
    int dim, heads, window;
    Parameter wq, wk, wv, wo, bq, bk, bv, bo;

    WindowAttention(const std::string& name, int dim, int heads, int window, Rng& rng);
    Tensor forward(const Tensor& tokens, int batch, int th, int tw);
    Tensor backward(const Tensor& dtokens);
    void collect(std::vector<Parameter*>& ps);

private:
    int batch_ = 0, th_ = 0, tw_ = 0;
    // per-window caches
    std::vector<Tensor> xw_, qw_, kw_, vw_, aw_, ow_;
};

// channel concat along dim 1 of [B,C,H,W] tensors, plus the split used on
// the way back through a skip connection
Tensor cat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& dy, int c_a, Tensor& da, Tensor& db);

Tensor global_avg_pool(const Tensor& x);                       // [B,C,H,W] -> [B,C]
Tensor global_avg_pool_backward(const Tensor& dy, const std::vector<int>& in_shape);

// [B*T, D] tokens -> [B, D] mean over each batch row's T tokens
Tensor mean_pool_tokens(const Tensor& tokens, int batch);
Tensor mean_pool_tokens_backward(const Tensor& dy, int batch, int tokens_per_batch);

}  // namespace s4mi::models

#endif
