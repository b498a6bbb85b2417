#include "s4mi/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "s4mi/core/parallel.hpp"

namespace s4mi {

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape.size() != 4 || w.shape.size() != 4)
        throw std::invalid_argument("conv2d: expected 4-D tensors");
    if (x.dim(1) != w.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
    if (b.numel() != w.dim(0)) throw std::invalid_argument("conv2d: bias size mismatch");
}

inline int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

double conv_pixel(const Tensor& x, const Tensor& w, const Tensor& b,
                  int bi, int oc, int oh, int ow, int stride, int pad) {
    const int ic_n = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(2);
    double acc = b.v[static_cast<size_t>(oc)];
    for (int ic = 0; ic < ic_n; ++ic)
        for (int kh = 0; kh < k; ++kh) {
            int ih = oh * stride + kh - pad;
            if (ih < 0 || ih >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
                int iw = ow * stride + kw - pad;
                if (iw < 0 || iw >= wd) continue;
                acc += x.at(bi, ic, ih, iw) * w.at(oc, ic, kh, kw);
            }
        }
    return acc;
}

double bilinear_sample(const Image& src, double sy, double sx, int ch) {
    int y0 = static_cast<int>(std::floor(sy));
    int x0 = static_cast<int>(std::floor(sx));
    int y1 = std::min(y0 + 1, src.h - 1);
    int x1 = std::min(x0 + 1, src.w - 1);
    y0 = std::clamp(y0, 0, src.h - 1);
    x0 = std::clamp(x0, 0, src.w - 1);
    double fy = sy - y0, fx = sx - x0;
    double a = src.at(y0, x0, ch), bb = src.at(y0, x1, ch);
    double c = src.at(y1, x0, ch), d = src.at(y1, x1, ch);
    return a * (1 - fy) * (1 - fx) + bb * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx;
}

Image bilinear_impl(const Image& src, int out_h, int out_w, bool parallel) {
    if (src.empty()) throw std::invalid_argument("bilinear_resize: empty image");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: bad output dims");
    Image dst(out_h, out_w, src.c);
    // corner-aligned sampling grid; a single-row/column output samples at 0
    double sy_scale = out_h > 1 ? static_cast<double>(src.h - 1) / (out_h - 1) : 0.0;
    double sx_scale = out_w > 1 ? static_cast<double>(src.w - 1) / (out_w - 1) : 0.0;
    auto row = [&](int64_t oy) {
        double sy = oy * sy_scale;
        for (int ox = 0; ox < out_w; ++ox) {
            double sx = ox * sx_scale;
            for (int ch = 0; ch < src.c; ++ch)
                dst.at(static_cast<int>(oy), ox, ch) = bilinear_sample(src, sy, sx, ch);
        }
    };
    if (parallel)
        parallel_for(out_h, row);
    else
        for (int64_t oy = 0; oy < out_h; ++oy) row(oy);
    return dst;
}

void kmeans_assign_impl(const Tensor& points, const Tensor& centroids,
                        std::vector<int>& assign, double* sse, bool parallel) {
    if (points.shape.size() != 2 || centroids.shape.size() != 2 ||
        points.dim(1) != centroids.dim(1))
        throw std::invalid_argument("kmeans_assign: dimension mismatch");
    const int n = points.dim(0), k = centroids.dim(0), d = points.dim(1);
    assign.assign(static_cast<size_t>(n), 0);
    auto nearest = [&](int64_t i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                double diff = points.at(static_cast<int>(i), j) - centroids.at(c, j);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        assign[static_cast<size_t>(i)] = arg;
        return best;
    };
    if (parallel) {
        parallel_for(n, [&](int64_t i) { nearest(i); });
        if (sse) {
            *sse = block_sum(n, [&](int64_t i) {
                int c = assign[static_cast<size_t>(i)];
                double dist = 0.0;
                for (int j = 0; j < d; ++j) {
                    double diff = points.at(static_cast<int>(i), j) - centroids.at(c, j);
                    dist += diff * diff;
                }
                return dist;
            });
        }
    } else {
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) total += nearest(i);
        if (sse) *sse = total;
    }
}

}  // namespace

namespace kernels {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                    int stride, int pad) {
    check_conv_shapes(x, w, b);
    const int bn = x.dim(0), oc_n = w.dim(0), k = w.dim(2);
    const int oh = conv_out(x.dim(2), k, stride, pad), ow = conv_out(x.dim(3), k, stride, pad);
    y = Tensor({bn, oc_n, oh, ow});
    parallel_for(static_cast<int64_t>(bn) * oc_n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / oc_n), oc = static_cast<int>(idx % oc_n);
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx)
                y.at(bi, oc, yy, xx) = conv_pixel(x, w, b, bi, oc, yy, xx, stride, pad);
    });
}

void conv2d_backward_input(const Tensor& dy, const Tensor& w, Tensor& dx,
                           int stride, int pad) {
    const int bn = dy.dim(0), oc_n = w.dim(0), ic_n = w.dim(1), k = w.dim(2);
    const int oh = dy.dim(2), ow = dy.dim(3);
    const int h = dx.dim(2), wd = dx.dim(3);
    // each task owns one (batch, input-channel) slice of dx
    parallel_for(static_cast<int64_t>(bn) * ic_n, [&](int64_t idx) {
        int bi = static_cast<int>(idx / ic_n), ic = static_cast<int>(idx % ic_n);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < wd; ++xx) dx.at(bi, ic, yy, xx) = 0.0;
        for (int oc = 0; oc < oc_n; ++oc)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    double g = dy.at(bi, oc, yy, xx);
                    if (g == 0.0) continue;
                    for (int kh = 0; kh < k; ++kh) {
                        int ih = yy * stride + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            int iw = xx * stride + kw - pad;
                            if (iw < 0 || iw >= wd) continue;
                            dx.at(bi, ic, ih, iw) += g * w.at(oc, ic, kh, kw);
                        }
                    }
                }
    });
}

void conv2d_backward_params(const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db,
                            int stride, int pad) {
    const int bn = x.dim(0), ic_n = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int oc_n = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3), k = dw.dim(2);
    // each task owns one output channel's weights and bias
    parallel_for(oc_n, [&](int64_t oc) {
        int o = static_cast<int>(oc);
        double bsum = 0.0;
        for (int bi = 0; bi < bn; ++bi)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    double g = dy.at(bi, o, yy, xx);
                    if (g == 0.0) continue;
                    bsum += g;
                    for (int ic = 0; ic < ic_n; ++ic)
                        for (int kh = 0; kh < k; ++kh) {
                            int ih = yy * stride + kh - pad;
                            if (ih < 0 || ih >= h) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                int iw = xx * stride + kw - pad;
                                if (iw < 0 || iw >= wd) continue;
                                dw.at(o, ic, kh, kw) += g * x.at(bi, ic, ih, iw);
                            }
                        }
                }
        db.v[static_cast<size_t>(o)] += bsum;
    });
}

void matmul(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.dim(0), kk = a.dim(1), n = b.dim(1);
    if (b.dim(0) != kk) throw std::invalid_argument("matmul: inner dim mismatch");
    c = Tensor({m, n});
    parallel_for(m, [&](int64_t i) {
        int r = static_cast<int>(i);
        for (int k2 = 0; k2 < kk; ++k2) {
            double av = a.at(r, k2);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) c.at(r, j) += av * b.at(k2, j);
        }
    });
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
    const int kk = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != kk) throw std::invalid_argument("matmul_tn: inner dim mismatch");
    c = Tensor({m, n});
    parallel_for(m, [&](int64_t i) {
        int r = static_cast<int>(i);
        for (int k2 = 0; k2 < kk; ++k2) {
            double av = a.at(k2, r);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) c.at(r, j) += av * b.at(k2, j);
        }
    });
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.dim(0), kk = a.dim(1), n = b.dim(0);
    if (b.dim(1) != kk) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    c = Tensor({m, n});
    parallel_for(m, [&](int64_t i) {
        int r = static_cast<int>(i);
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k2 = 0; k2 < kk; ++k2) s += a.at(r, k2) * b.at(j, k2);
            c.at(r, j) = s;
        }
    });
}

Image bilinear_resize(const Image& src, int out_h, int out_w) {
    return bilinear_impl(src, out_h, out_w, true);
}

void kmeans_assign(const Tensor& points, const Tensor& centroids,
                   std::vector<int>& assign, double* sse) {
    kmeans_assign_impl(points, centroids, assign, sse, true);
}

}  // namespace kernels

namespace ref {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                    int stride, int pad) {
    check_conv_shapes(x, w, b);
    const int bn = x.dim(0), oc_n = w.dim(0), k = w.dim(2);
    const int oh = conv_out(x.dim(2), k, stride, pad), ow = conv_out(x.dim(3), k, stride, pad);
    y = Tensor({bn, oc_n, oh, ow});
    for (int bi = 0; bi < bn; ++bi)
        for (int oc = 0; oc < oc_n; ++oc)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx)
                    y.at(bi, oc, yy, xx) = conv_pixel(x, w, b, bi, oc, yy, xx, stride, pad);
}

void matmul(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.dim(0), kk = a.dim(1), n = b.dim(1);
    if (b.dim(0) != kk) throw std::invalid_argument("matmul: inner dim mismatch");
    c = Tensor({m, n});
    for (int r = 0; r < m; ++r)
        for (int k2 = 0; k2 < kk; ++k2) {
            double av = a.at(r, k2);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) c.at(r, j) += av * b.at(k2, j);
        }
}

Image bilinear_resize(const Image& src, int out_h, int out_w) {
    return bilinear_impl(src, out_h, out_w, false);
}

void kmeans_assign(const Tensor& points, const Tensor& centroids,
                   std::vector<int>& assign, double* sse) {
    kmeans_assign_impl(points, centroids, assign, sse, false);
}

}  // namespace ref

}  // namespace s4mi
