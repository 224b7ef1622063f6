#include "vdiff/ref_kernels.hpp"

#include <cmath>
#include <vector>

namespace vdiff::refkernels {

template <typename T>
void gemm_nn(long m, long n, long k, const T* a, const T* b, T* c) {
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < n; ++j) {
      T s = T(0);
      for (long p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out,
                    const kernels::Conv2dDims& d) {
  for (long b = 0; b < d.batch; ++b) {
    for (long o = 0; o < d.cout; ++o) {
      for (long oy = 0; oy < d.ho; ++oy) {
        for (long ox = 0; ox < d.wo; ++ox) {
          T s = bias ? bias[o] : T(0);
          for (long c = 0; c < d.cin; ++c) {
            for (long ki = 0; ki < d.kh; ++ki) {
              long iy = oy * d.stride + ki - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              for (long kj = 0; kj < d.kw; ++kj) {
                long ix = ox * d.stride + kj - d.pad;
                if (ix < 0 || ix >= d.w) continue;
                s += in[((b * d.cin + c) * d.h + iy) * d.w + ix] *
                     kernel[((o * d.cin + c) * d.kh + ki) * d.kw + kj];
              }
            }
          }
          out[((b * d.cout + o) * d.ho + oy) * d.wo + ox] = s;
        }
      }
    }
  }
}

template <typename T>
void conv1d_temporal_forward(const T* in, const T* kernel, const T* bias, T* out,
                             long batch, long cin, long cout, long frames,
                             long spatial, long kt) {
  const long r = (kt - 1) / 2;
  for (long b = 0; b < batch; ++b) {
    for (long o = 0; o < cout; ++o) {
      for (long n = 0; n < frames; ++n) {
        for (long s = 0; s < spatial; ++s) {
          T acc = bias ? bias[o] : T(0);
          for (long c = 0; c < cin; ++c) {
            for (long j = 0; j < kt; ++j) {
              long nc = n + j - r;
              nc = nc < 0 ? 0 : (nc >= frames ? frames - 1 : nc);
              acc += kernel[(o * cin + c) * kt + j] *
                     in[((b * cin + c) * frames + nc) * spatial + s];
            }
          }
          out[((b * cout + o) * frames + n) * spatial + s] = acc;
        }
      }
    }
  }
}

template <typename T>
void group_norm_forward(const T* x, T* y, long rows, long len, double eps) {
  for (long r = 0; r < rows; ++r) {
    const T* xr = x + r * len;
    T* yr = y + r * len;
    double m = 0.0;
    for (long j = 0; j < len; ++j) m += static_cast<double>(xr[j]);
    m /= static_cast<double>(len);
    double v = 0.0;
    for (long j = 0; j < len; ++j) {
      double dlt = static_cast<double>(xr[j]) - m;
      v += dlt * dlt;
    }
    v /= static_cast<double>(len);
    double is = 1.0 / std::sqrt(v + eps);
    for (long j = 0; j < len; ++j)
      yr[j] = static_cast<T>((static_cast<double>(xr[j]) - m) * is);
  }
}

template <typename T>
void softmax_forward(const T* x, T* y, long rows, long len) {
  for (long r = 0; r < rows; ++r) {
    const T* xr = x + r * len;
    T* yr = y + r * len;
    T mx = xr[0];
    for (long j = 1; j < len; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double sum = 0.0;
    for (long j = 0; j < len; ++j) {
      double e = std::exp(static_cast<double>(xr[j] - mx));
      yr[j] = static_cast<T>(e);
      sum += e;
    }
    T inv = static_cast<T>(1.0 / sum);
    for (long j = 0; j < len; ++j) yr[j] *= inv;
  }
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, long bh,
                       long len, long dim) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<T> scores(static_cast<size_t>(len) * len);
  for (long s = 0; s < bh; ++s) {
    const T* qs = q + s * len * dim;
    const T* ks = k + s * len * dim;
    const T* vs = v + s * len * dim;
    T* os = out + s * len * dim;
    for (long i = 0; i < len; ++i) {
      for (long j = 0; j < len; ++j) {
        T dot = T(0);
        for (long p = 0; p < dim; ++p) dot += qs[i * dim + p] * ks[j * dim + p];
        scores[i * len + j] = dot * static_cast<T>(inv_sqrt_d);
      }
    }
    softmax_forward(scores.data(), scores.data(), len, len);
    for (long i = 0; i < len; ++i) {
      for (long p = 0; p < dim; ++p) {
        T acc = T(0);
        for (long j = 0; j < len; ++j) acc += scores[i * len + j] * vs[j * dim + p];
        os[i * dim + p] = acc;
      }
    }
  }
}

#define VDIFF_REF_INSTANTIATE(T)                                                 \
  template void gemm_nn<T>(long, long, long, const T*, const T*, T*);            \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*,              \
                                  const kernels::Conv2dDims&);                   \
  template void conv1d_temporal_forward<T>(const T*, const T*, const T*, T*,     \
                                           long, long, long, long, long, long);  \
  template void group_norm_forward<T>(const T*, T*, long, long, double);         \
  template void softmax_forward<T>(const T*, T*, long, long);                    \
  template void attention_forward<T>(const T*, const T*, const T*, T*, long,     \
                                     long, long);

VDIFF_REF_INSTANTIATE(float)
VDIFF_REF_INSTANTIATE(double)

#undef VDIFF_REF_INSTANTIATE

}  // namespace vdiff::refkernels
