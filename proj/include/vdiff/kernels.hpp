#pragma once

#include <cstdint>

namespace vdiff::kernels {

// OpenMP-parallel compute kernels. Parallel loops only ever split independent
// output elements across threads; every reduction runs in a fixed serial
// order per output element, so results do not depend on the thread count.

struct Conv2dDims {
  long batch, cin, h, w;
  long cout, kh, kw;
  long stride, pad;
  long ho, wo;
};

// C[M,N] = A[M,K] * B[K,N]  (+= when accumulate)
template <typename T>
void gemm_nn(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate);
// C[M,N] = A^T * B with A stored [K,M]
template <typename T>
void gemm_tn(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate);
// C[M,N] = A * B^T with B stored [N,K]
template <typename T>
void gemm_nt(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate);

// col[cin*kh*kw, ho*wo] from one image in[cin, h, w] (zero padding).
template <typename T>
void im2col(const T* in, T* col, const Conv2dDims& d);
// Adjoint of im2col: accumulates into in_grad[cin, h, w].
template <typename T>
void col2im_acc(const T* col, T* in_grad, const Conv2dDims& d);

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out,
                    const Conv2dDims& d);
template <typename T>
void conv2d_backward(const T* in, const T* kernel, const T* out_grad, T* in_grad,
                     T* kernel_grad, T* bias_grad, const Conv2dDims& d);

// x[B,C,N,H,W] (*) kernel[O,C,kt] along the frame axis, replicate-edge padding.
template <typename T>
void conv1d_temporal_forward(const T* in, const T* kernel, const T* bias, T* out,
                             long batch, long cin, long cout, long frames,
                             long spatial, long kt);
template <typename T>
void conv1d_temporal_backward(const T* in, const T* kernel, const T* out_grad,
                              T* in_grad, T* kernel_grad, T* bias_grad, long batch,
                              long cin, long cout, long frames, long spatial, long kt);

// Row-wise zero-mean unit-variance normalization; rows are contiguous spans of
// length len. Saves per-row mean and 1/sqrt(var+eps) for the backward pass.
template <typename T>
void rows_normalize_forward(const T* x, T* y, long rows, long len, double eps,
                            double* mean, double* inv_std);
template <typename T>
void rows_normalize_backward(const T* y, const T* y_grad, T* x_grad, long rows,
                             long len, const double* inv_std);

// Row-wise softmax over trailing dimension.
template <typename T>
void softmax_forward(const T* x, T* y, long rows, long len);
template <typename T>
void softmax_backward(const T* y, const T* y_grad, T* x_grad, long rows, long len);

// Batched scaled dot-product attention over [BH, L, d] slabs; probs[BH, L, L]
// is saved for backward.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs,
                       long bh, long len, long dim);
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs,
                        const T* out_grad, T* q_grad, T* k_grad, T* v_grad,
                        long bh, long len, long dim);

// Deterministic full reduction: fixed-size blocks summed in parallel, block
// sums combined serially in index order. Accumulates in double.
template <typename T>
double reduce_sum(const T* x, long n);

}  // namespace vdiff::kernels
