#ifndef S4MI_CORE_PARALLEL_HPP
#define S4MI_CORE_PARALLEL_HPP

#include <cstdint>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace s4mi {

// Parallelism policy: loops whose iterations write disjoint outputs run
// under plain `omp parallel for`; scalar reductions go through block_sum,
// which accumulates fixed-size blocks and folds them in index order.
// Results are therefore bit-identical for any thread count.

inline constexpr int64_t kSumBlock = 4096;

template <class F>
void parallel_for(int64_t n, F&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) body(i);
}

// Deterministic sum of term(i) for i in [0, n).
template <class F>
double block_sum(int64_t n, F&& term) {
    if (n <= 0) return 0.0;
    int64_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(static_cast<size_t>(nblocks), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t blk = 0; blk < nblocks; ++blk) {
        int64_t lo = blk * kSumBlock;
        int64_t hi = std::min(n, lo + kSumBlock);
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += term(i);
        partial[static_cast<size_t>(blk)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

inline int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace s4mi

#endif
