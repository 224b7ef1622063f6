#pragma once

#include "vdiff/kernels.hpp"

namespace vdiff::refkernels {

// Serial reference implementations: straight nested loops, no tiling, no
// OpenMP. These are the ground truth the parallel kernels are tested against
// and the baseline the benchmark tool compares with.

using kernels::Conv2dDims;

template <typename T>
void gemm_nn(long m, long n, long k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out,
                    const Conv2dDims& d);

template <typename T>
void conv1d_temporal_forward(const T* in, const T* kernel, const T* bias, T* out,
                             long batch, long cin, long cout, long frames,
                             long spatial, long kt);

template <typename T>
void group_norm_forward(const T* x, T* y, long rows, long len, double eps);

template <typename T>
void softmax_forward(const T* x, T* y, long rows, long len);

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, long bh,
                       long len, long dim);

}  // namespace vdiff::refkernels
