#include "s4mi/models/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "s4mi/core/kernels.hpp"
#include "s4mi/core/parallel.hpp"

namespace s4mi::models {

namespace {

void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (double& v : t.v) v = rng.normal(0.0, stddev);
}

void add_inplace(Tensor& dst, const Tensor& src) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

// y[N,F] += bias[F]; also dbias accumulation helper
void add_bias_rows(Tensor& y, const Tensor& bias) {
    const int n = y.dim(0), f = y.dim(1);
    parallel_for(n, [&](int64_t r) {
        for (int j = 0; j < f; ++j) y.at(static_cast<int>(r), j) += bias.v[static_cast<size_t>(j)];
    });
}

void accumulate_col_sums(const Tensor& dy, Tensor& db) {
    const int n = dy.dim(0), f = dy.dim(1);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < f; ++j) db.v[static_cast<size_t>(j)] += dy.at(r, j);
}

}  // namespace

int64_t parameter_count(Model& model) {
    int64_t n = 0;
    for (Parameter* p : model.parameters()) n += p->value.numel();
    return n;
}

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_c_, int out_c_, int k_, int stride_, int pad_,
               Rng& rng)
    : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
      w(name + ".w", {out_c_, in_c_, k_, k_}), b(name + ".b", {out_c_}) {
    fill_normal(w.value, rng, std::sqrt(2.0 / (in_c_ * k_ * k_)));
}

Tensor Conv2d::forward(const Tensor& x) {
    x_ = x;
    Tensor y;
    kernels::conv2d_forward(x, w.value, b.value, y, stride, pad);
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    kernels::conv2d_backward_params(x_, dy, w.grad, b.grad, stride, pad);
    Tensor dx(x_.shape);
    kernels::conv2d_backward_input(dy, w.value, dx, stride, pad);
    return dx;
}

void Conv2d::collect(std::vector<Parameter*>& ps) {
    ps.push_back(&w);
    ps.push_back(&b);
}

// --- LeakyReLU ---------------------------------------------------------------

Tensor LeakyReLU::forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    parallel_for(y.numel(), [&](int64_t i) {
        if (y.v[static_cast<size_t>(i)] < 0.0) y.v[static_cast<size_t>(i)] *= slope;
    });
    return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
    Tensor dx = dy;
    parallel_for(dx.numel(), [&](int64_t i) {
        if (x_.v[static_cast<size_t>(i)] < 0.0) dx.v[static_cast<size_t>(i)] *= slope;
    });
    return dx;
}

// --- pooling / upsampling ----------------------------------------------------

Tensor AvgPool2::forward(const Tensor& x) {
    in_shape_ = x.shape;
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("AvgPool2: odd spatial size");
    Tensor y({b, c, h / 2, w / 2});
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        for (int oy = 0; oy < h / 2; ++oy)
            for (int ox = 0; ox < w / 2; ++ox)
                y.at(bi, ci, oy, ox) = 0.25 * (x.at(bi, ci, 2 * oy, 2 * ox) +
                                               x.at(bi, ci, 2 * oy, 2 * ox + 1) +
                                               x.at(bi, ci, 2 * oy + 1, 2 * ox) +
                                               x.at(bi, ci, 2 * oy + 1, 2 * ox + 1));
    });
    return y;
}

Tensor AvgPool2::backward(const Tensor& dy) {
    Tensor dx(in_shape_);
    const int b = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) dx.at(bi, ci, y, x) = 0.25 * dy.at(bi, ci, y / 2, x / 2);
    });
    return dx;
}

Tensor NearestUp2::forward(const Tensor& x) {
    in_shape_ = x.shape;
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({b, c, 2 * h, 2 * w});
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        for (int oy = 0; oy < 2 * h; ++oy)
            for (int ox = 0; ox < 2 * w; ++ox) y.at(bi, ci, oy, ox) = x.at(bi, ci, oy / 2, ox / 2);
    });
    return y;
}

Tensor NearestUp2::backward(const Tensor& dy) {
    Tensor dx(in_shape_);
    const int b = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                dx.at(bi, ci, y, x) = dy.at(bi, ci, 2 * y, 2 * x) + dy.at(bi, ci, 2 * y, 2 * x + 1) +
                                      dy.at(bi, ci, 2 * y + 1, 2 * x) +
                                      dy.at(bi, ci, 2 * y + 1, 2 * x + 1);
    });
    return dx;
}

// --- Linear -------------------------------------------------------------------

Linear::Linear(const std::string& name, int in_f_, int out_f_, Rng& rng)
    : in_f(in_f_), out_f(out_f_), w(name + ".w", {in_f_, out_f_}), b(name + ".b", {out_f_}) {
    fill_normal(w.value, rng, std::sqrt(2.0 / (in_f_ + out_f_)));
}

Tensor Linear::forward(const Tensor& x) {
    x_ = x;
    Tensor y;
    kernels::matmul(x, w.value, y);
    add_bias_rows(y, b.value);
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dw;
    kernels::matmul_tn(x_, dy, dw);
    add_inplace(w.grad, dw);
    accumulate_col_sums(dy, b.grad);
    Tensor dx;
    kernels::matmul_nt(dy, w.value, dx);
    return dx;
}

void Linear::collect(std::vector<Parameter*>& ps) {
    ps.push_back(&w);
    ps.push_back(&b);
}

// --- LayerNorm ------------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, int dim_)
    : dim(dim_), gamma(name + ".g", {dim_}), beta(name + ".b", {dim_}) {
    std::fill(gamma.value.v.begin(), gamma.value.v.end(), 1.0);
}

Tensor LayerNorm::forward(const Tensor& x) {
    const int n = x.dim(0);
    x_ = x;
    xhat_ = Tensor(x.shape);
    inv_std_.assign(static_cast<size_t>(n), 0.0);
    Tensor y(x.shape);
    parallel_for(n, [&](int64_t ri) {
        int r = static_cast<int>(ri);
        double mean = 0.0;
        for (int j = 0; j < dim; ++j) mean += x.at(r, j);
        mean /= dim;
        double var = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = x.at(r, j) - mean;
            var += d * d;
        }
        var /= dim;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std_[static_cast<size_t>(r)] = inv;
        for (int j = 0; j < dim; ++j) {
            double xh = (x.at(r, j) - mean) * inv;
            xhat_.at(r, j) = xh;
            y.at(r, j) = gamma.value.v[static_cast<size_t>(j)] * xh +
                         beta.value.v[static_cast<size_t>(j)];
        }
    });
    return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
    const int n = dy.dim(0);
    Tensor dx(dy.shape);
    // parameter grads folded serially over rows for determinism
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < dim; ++j) {
            gamma.grad.v[static_cast<size_t>(j)] += dy.at(r, j) * xhat_.at(r, j);
            beta.grad.v[static_cast<size_t>(j)] += dy.at(r, j);
        }
    parallel_for(n, [&](int64_t ri) {
        int r = static_cast<int>(ri);
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < dim; ++j) {
            double dxh = dy.at(r, j) * gamma.value.v[static_cast<size_t>(j)];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat_.at(r, j);
        }
        mean_dxhat /= dim;
        mean_dxhat_xhat /= dim;
        double inv = inv_std_[static_cast<size_t>(r)];
        for (int j = 0; j < dim; ++j) {
            double dxh = dy.at(r, j) * gamma.value.v[static_cast<size_t>(j)];
            dx.at(r, j) = inv * (dxh - mean_dxhat - xhat_.at(r, j) * mean_dxhat_xhat);
        }
    });
    return dx;
}

void LayerNorm::collect(std::vector<Parameter*>& ps) {
    ps.push_back(&gamma);
    ps.push_back(&beta);
}

// --- WindowAttention --------------------------------------------------------------

WindowAttention::WindowAttention(const std::string& name, int dim_, int heads_, int window_,
                                 Rng& rng)
    : dim(dim_), heads(heads_), window(window_),
      wq(name + ".wq", {dim_, dim_}), wk(name + ".wk", {dim_, dim_}),
      wv(name + ".wv", {dim_, dim_}), wo(name + ".wo", {dim_, dim_}),
      bq(name + ".bq", {dim_}), bk(name + ".bk", {dim_}), bv(name + ".bv", {dim_}),
      bo(name + ".bo", {dim_}) {
    if (dim_ % heads_ != 0) throw std::invalid_argument("WindowAttention: dim % heads != 0");
    double s = std::sqrt(1.0 / dim_);
    fill_normal(wq.value, rng, s);
    fill_normal(wk.value, rng, s);
    fill_normal(wv.value, rng, s);
    fill_normal(wo.value, rng, s);
}

namespace {

// global token row of window-local token t inside window wi
inline int window_token_row(int wi, int t, int th, int tw, int window) {
    const int wpr = tw / window;
    const int windows_per_batch = (th / window) * wpr;
    int b = wi / windows_per_batch;
    int local = wi % windows_per_batch;
    int wy = local / wpr, wx = local % wpr;
    int r = t / window, c = t % window;
    return (b * th + wy * window + r) * tw + wx * window + c;
}

}  // namespace

Tensor WindowAttention::forward(const Tensor& tokens, int batch, int th, int tw) {
    if (th % window != 0 || tw % window != 0)
        throw std::invalid_argument("WindowAttention: grid not divisible by window");
    batch_ = batch;
    th_ = th;
    tw_ = tw;
    const int n = tokens.dim(0);
    const int t_n = window * window;
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int n_windows = batch * (th / window) * (tw / window);

    xw_.assign(1, tokens);  // cache full token matrix in slot 0
    Tensor q, k, v;
    kernels::matmul(tokens, wq.value, q);
    add_bias_rows(q, bq.value);
    kernels::matmul(tokens, wk.value, k);
    add_bias_rows(k, bk.value);
    kernels::matmul(tokens, wv.value, v);
    add_bias_rows(v, bv.value);
    qw_.assign(1, q);
    kw_.assign(1, k);
    vw_.assign(1, v);

    aw_.assign(static_cast<size_t>(n_windows), Tensor());
    Tensor o({n, dim});
    parallel_for(n_windows, [&](int64_t wi64) {
        int wi = static_cast<int>(wi64);
        Tensor attn({heads * t_n, t_n});
        for (int h = 0; h < heads; ++h) {
            for (int ti = 0; ti < t_n; ++ti) {
                int ri = window_token_row(wi, ti, th, tw, window);
                // scores for row ti
                double mx = -1e300;
                std::vector<double> row(static_cast<size_t>(t_n));
                for (int tj = 0; tj < t_n; ++tj) {
                    int rj = window_token_row(wi, tj, th, tw, window);
                    double s = 0.0;
                    for (int d = 0; d < dh; ++d)
                        s += q.at(ri, h * dh + d) * k.at(rj, h * dh + d);
                    s *= scale;
                    row[static_cast<size_t>(tj)] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (double& s : row) {
                    s = std::exp(s - mx);
                    denom += s;
                }
                for (int tj = 0; tj < t_n; ++tj)
                    attn.at(h * t_n + ti, tj) = row[static_cast<size_t>(tj)] / denom;
                // output row
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int tj = 0; tj < t_n; ++tj) {
                        int rj = window_token_row(wi, tj, th, tw, window);
                        acc += attn.at(h * t_n + ti, tj) * v.at(rj, h * dh + d);
                    }
                    o.at(ri, h * dh + d) = acc;
                }
            }
        }
        aw_[static_cast<size_t>(wi)] = std::move(attn);
    });
    ow_.assign(1, o);

    Tensor y;
    kernels::matmul(o, wo.value, y);
    add_bias_rows(y, bo.value);
    return y;
}

Tensor WindowAttention::backward(const Tensor& dtokens) {
    const Tensor& x = xw_[0];
    const Tensor& q = qw_[0];
    const Tensor& k = kw_[0];
    const Tensor& v = vw_[0];
    const Tensor& o = ow_[0];
    const int n = x.dim(0);
    const int t_n = window * window;
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int n_windows = batch_ * (th_ / window) * (tw_ / window);

    // output projection
    Tensor dwo_t;
    kernels::matmul_tn(o, dtokens, dwo_t);
    add_inplace(wo.grad, dwo_t);
    accumulate_col_sums(dtokens, bo.grad);
    Tensor do_;
    kernels::matmul_nt(dtokens, wo.value, do_);

    Tensor dq({n, dim}), dk({n, dim}), dv({n, dim});
    parallel_for(n_windows, [&](int64_t wi64) {
        int wi = static_cast<int>(wi64);
        const Tensor& attn = aw_[static_cast<size_t>(wi)];
        for (int h = 0; h < heads; ++h) {
            // dA = dOh Vh^T, then softmax backward, then dQ/dK/dV rows
            for (int ti = 0; ti < t_n; ++ti) {
                int ri = window_token_row(wi, ti, th_, tw_, window);
                std::vector<double> da(static_cast<size_t>(t_n), 0.0);
                for (int tj = 0; tj < t_n; ++tj) {
                    int rj = window_token_row(wi, tj, th_, tw_, window);
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d)
                        acc += do_.at(ri, h * dh + d) * v.at(rj, h * dh + d);
                    da[static_cast<size_t>(tj)] = acc;
                }
                double dot = 0.0;
                for (int tj = 0; tj < t_n; ++tj)
                    dot += attn.at(h * t_n + ti, tj) * da[static_cast<size_t>(tj)];
                for (int tj = 0; tj < t_n; ++tj) {
                    int rj = window_token_row(wi, tj, th_, tw_, window);
                    double ds = attn.at(h * t_n + ti, tj) * (da[static_cast<size_t>(tj)] - dot) *
                                scale;
                    for (int d = 0; d < dh; ++d) {
                        dq.at(ri, h * dh + d) += ds * k.at(rj, h * dh + d);
                        dk.at(rj, h * dh + d) += ds * q.at(ri, h * dh + d);
                    }
                }
            }
            // dV: accumulate A^T dOh
            for (int tj = 0; tj < t_n; ++tj) {
                int rj = window_token_row(wi, tj, th_, tw_, window);
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int ti = 0; ti < t_n; ++ti) {
                        int ri = window_token_row(wi, ti, th_, tw_, window);
                        acc += attn.at(h * t_n + ti, tj) * do_.at(ri, h * dh + d);
                    }
                    dv.at(rj, h * dh + d) += acc;
                }
            }
        }
    });

    auto proj_back = [&](const Tensor& dproj, Parameter& wsel, Parameter& bsel) {
        Tensor dwm;
        kernels::matmul_tn(x, dproj, dwm);
        add_inplace(wsel.grad, dwm);
        accumulate_col_sums(dproj, bsel.grad);
        Tensor dxm;
        kernels::matmul_nt(dproj, wsel.value, dxm);
        return dxm;
    };
    Tensor dx = proj_back(dq, wq, bq);
    add_inplace(dx, proj_back(dk, wk, bk));
    add_inplace(dx, proj_back(dv, wv, bv));
    return dx;
}

void WindowAttention::collect(std::vector<Parameter*>& ps) {
    for (Parameter* p : {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo}) ps.push_back(p);
}

// --- channel concat / pooling helpers -----------------------------------------------

Tensor cat_channels(const Tensor& a, const Tensor& b) {
    const int bn = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    if (b.dim(0) != bn || b.dim(2) != h || b.dim(3) != w)
        throw std::invalid_argument("cat_channels: shape mismatch");
    Tensor y({bn, ca + cb, h, w});
    parallel_for(bn, [&](int64_t bi64) {
        int bi = static_cast<int>(bi64);
        for (int c = 0; c < ca; ++c)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) y.at(bi, c, yy, xx) = a.at(bi, c, yy, xx);
        for (int c = 0; c < cb; ++c)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) y.at(bi, ca + c, yy, xx) = b.at(bi, c, yy, xx);
    });
    return y;
}

void split_channels(const Tensor& dy, int c_a, Tensor& da, Tensor& db) {
    const int bn = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    da = Tensor({bn, c_a, h, w});
    db = Tensor({bn, c - c_a, h, w});
    parallel_for(bn, [&](int64_t bi64) {
        int bi = static_cast<int>(bi64);
        for (int ci = 0; ci < c_a; ++ci)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) da.at(bi, ci, yy, xx) = dy.at(bi, ci, yy, xx);
        for (int ci = c_a; ci < c; ++ci)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) db.at(bi, ci - c_a, yy, xx) = dy.at(bi, ci, yy, xx);
    });
}

Tensor global_avg_pool(const Tensor& x) {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({b, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        double s = 0.0;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) s += x.at(bi, ci, yy, xx);
        y.at(bi, ci) = s * inv;
    });
    return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, const std::vector<int>& in_shape) {
    Tensor dx(in_shape);
    const int b = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
    const double inv = 1.0 / (static_cast<double>(h) * w);
    parallel_for(static_cast<int64_t>(b) * c, [&](int64_t idx) {
        int bi = static_cast<int>(idx / c), ci = static_cast<int>(idx % c);
        double g = dy.at(bi, ci) * inv;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) dx.at(bi, ci, yy, xx) = g;
    });
    return dx;
}

Tensor mean_pool_tokens(const Tensor& tokens, int batch) {
    const int n = tokens.dim(0), d = tokens.dim(1);
    const int t = n / batch;
    Tensor y({batch, d});
    parallel_for(batch, [&](int64_t bi64) {
        int bi = static_cast<int>(bi64);
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int r = 0; r < t; ++r) s += tokens.at(bi * t + r, j);
            y.at(bi, j) = s / t;
        }
    });
    return y;
}

Tensor mean_pool_tokens_backward(const Tensor& dy, int batch, int tokens_per_batch) {
    const int d = dy.dim(1);
    Tensor dx({batch * tokens_per_batch, d});
    const double inv = 1.0 / tokens_per_batch;
    parallel_for(static_cast<int64_t>(batch) * tokens_per_batch, [&](int64_t r) {
        int bi = static_cast<int>(r / tokens_per_batch);
        for (int j = 0; j < d; ++j) dx.at(static_cast<int>(r), j) = dy.at(bi, j) * inv;
    });
    return dx;
}

}  // namespace s4mi::models
