#ifndef S4MI_CORE_KERNELS_HPP
#define S4MI_CORE_KERNELS_HPP

#include <vector>

#include "s4mi/core/image.hpp"
#include "s4mi/core/tensor.hpp"

namespace s4mi {

// OpenMP kernels. Every loop partitions its output so iterations never
// share a destination; scalar folds use block_sum. kernels:: results are
// bit-identical to the serial ref:: versions for any thread count, which
// the test suite and tools/bench_kernels check.
namespace kernels {

// y[B,OC,OH,OW] = conv(x[B,IC,H,W], w[OC,IC,K,K]) + b[OC], zero padding.
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                    int stride, int pad);
void conv2d_backward_input(const Tensor& dy, const Tensor& w, Tensor& dx,
                           int stride, int pad);
// accumulates into dw/db (caller zeroes per step)
void conv2d_backward_params(const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db,
                            int stride, int pad);

// c[M,N] = a[M,K] * b[K,N]
void matmul(const Tensor& a, const Tensor& b, Tensor& c);
// c[M,N] = a[K,M]^T * b[K,N]
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c);
// c[M,N] = a[M,K] * b[N,K]^T
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c);

// corner-aligned bilinear resize of an HWC image
Image bilinear_resize(const Image& src, int out_h, int out_w);

// nearest-centroid assignment; optionally returns summed squared distance
void kmeans_assign(const Tensor& points, const Tensor& centroids,
                   std::vector<int>& assign, double* sse = nullptr);

}  // namespace kernels

// Serial reference implementations, kept as the oracle side of the pair.
// Tests compare kernels:: against these; the benchmark tool times both.
namespace ref {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                    int stride, int pad);
void matmul(const Tensor& a, const Tensor& b, Tensor& c);
Image bilinear_resize(const Image& src, int out_h, int out_w);
void kmeans_assign(const Tensor& points, const Tensor& centroids,
                   std::vector<int>& assign, double* sse = nullptr);

}  // namespace ref

}  // namespace s4mi

#endif
