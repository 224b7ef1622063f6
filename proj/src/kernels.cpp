#include "vdiff/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace vdiff::kernels {

namespace {

// Small serial matmul helpers used inside already-parallel per-slab loops.
template <typename T>
void micro_nn(long m, long n, long k, const T* a, const T* b, T* c) {
  for (long i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (long j = 0; j < n; ++j) crow[j] = T(0);
    for (long p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] = a^T b, a stored [k,m]
template <typename T>
void micro_tn(long m, long n, long k, const T* a, const T* b, T* c) {
  for (long i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (long j = 0; j < n; ++j) crow[j] = T(0);
    for (long p = 0; p < k; ++p) {
      T av = a[p * m + i];
      const T* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] = a b^T, b stored [n,k]
template <typename T>
void micro_nt(long m, long n, long k, const T* a, const T* b, T* c) {
  for (long i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (long j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = T(0);
      for (long p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

template <typename T>
void softmax_rows_inplace(T* x, long rows, long len) {
  for (long r = 0; r < rows; ++r) {
    T* row = x + r * len;
    T mx = row[0];
    for (long j = 1; j < len; ++j) mx = row[j] > mx ? row[j] : mx;
    double sum = 0.0;
    for (long j = 0; j < len; ++j) {
      double e = std::exp(static_cast<double>(row[j] - mx));
      row[j] = static_cast<T>(e);
      sum += e;
    }
    T inv = static_cast<T>(1.0 / sum);
    for (long j = 0; j < len; ++j) row[j] *= inv;
  }
}

}  // namespace

template <typename T>
void gemm_nn(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (long j = 0; j < n; ++j) crow[j] = T(0);
    for (long p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (long j = 0; j < n; ++j) crow[j] = T(0);
    for (long p = 0; p < k; ++p) {
      T av = a[p * m + i];
      const T* brow = b + p * n;
      for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(long m, long n, long k, const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (long j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = T(0);
      for (long p = 0; p < k; ++p) s += arow[p] * brow[p];
      if (accumulate)
        crow[j] += s;
      else
        crow[j] = s;
    }
  }
}

template <typename T>
void im2col(const T* in, T* col, const Conv2dDims& d) {
  const long positions = d.ho * d.wo;
  for (long c = 0; c < d.cin; ++c) {
    for (long ki = 0; ki < d.kh; ++ki) {
      for (long kj = 0; kj < d.kw; ++kj) {
        T* crow = col + ((c * d.kh + ki) * d.kw + kj) * positions;
        for (long oy = 0; oy < d.ho; ++oy) {
          long iy = oy * d.stride + ki - d.pad;
          T* dst = crow + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            for (long ox = 0; ox < d.wo; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = in + (c * d.h + iy) * d.w;
          for (long ox = 0; ox < d.wo; ++ox) {
            long ix = ox * d.stride + kj - d.pad;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, T* in_grad, const Conv2dDims& d) {
  const long positions = d.ho * d.wo;
  for (long c = 0; c < d.cin; ++c) {
    for (long ki = 0; ki < d.kh; ++ki) {
      for (long kj = 0; kj < d.kw; ++kj) {
        const T* crow = col + ((c * d.kh + ki) * d.kw + kj) * positions;
        for (long oy = 0; oy < d.ho; ++oy) {
          long iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          T* dst = in_grad + (c * d.h + iy) * d.w;
          const T* src = crow + oy * d.wo;
          for (long ox = 0; ox < d.wo; ++ox) {
            long ix = ox * d.stride + kj - d.pad;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* in, const T* kernel, const T* bias, T* out,
                    const Conv2dDims& d) {
  const long positions = d.ho * d.wo;
  const long krows = d.cin * d.kh * d.kw;
  std::vector<T> colbuf(static_cast<size_t>(d.batch) * krows * positions);

#pragma omp parallel for schedule(static)
  for (long b = 0; b < d.batch; ++b)
    im2col(in + b * d.cin * d.h * d.w, colbuf.data() + b * krows * positions, d);

#pragma omp parallel for schedule(static)
  for (long t = 0; t < d.batch * d.cout; ++t) {
    long b = t / d.cout;
    long o = t % d.cout;
    const T* col = colbuf.data() + b * krows * positions;
    T* orow = out + (b * d.cout + o) * positions;
    T bv = bias ? bias[o] : T(0);
    for (long p = 0; p < positions; ++p) orow[p] = bv;
    const T* krow = kernel + o * krows;
    for (long k = 0; k < krows; ++k) {
      T kv = krow[k];
      const T* cr = col + k * positions;
      for (long p = 0; p < positions; ++p) orow[p] += kv * cr[p];
    }
  }
}

template <typename T>
void conv2d_backward(const T* in, const T* kernel, const T* out_grad, T* in_grad,
                     T* kernel_grad, T* bias_grad, const Conv2dDims& d) {
  const long positions = d.ho * d.wo;
  const long krows = d.cin * d.kh * d.kw;
  std::vector<T> colbuf(static_cast<size_t>(d.batch) * krows * positions);

#pragma omp parallel for schedule(static)
  for (long b = 0; b < d.batch; ++b)
    im2col(in + b * d.cin * d.h * d.w, colbuf.data() + b * krows * positions, d);

  if (bias_grad) {
#pragma omp parallel for schedule(static)
    for (long o = 0; o < d.cout; ++o) {
      double s = 0.0;
      for (long b = 0; b < d.batch; ++b) {
        const T* g = out_grad + (b * d.cout + o) * positions;
        for (long p = 0; p < positions; ++p) s += static_cast<double>(g[p]);
      }
      bias_grad[o] += static_cast<T>(s);
    }
  }

  if (kernel_grad) {
#pragma omp parallel for schedule(static)
    for (long t = 0; t < d.cout * krows; ++t) {
      long o = t / krows;
      long k = t % krows;
      double s = 0.0;
      for (long b = 0; b < d.batch; ++b) {
        const T* g = out_grad + (b * d.cout + o) * positions;
        const T* cr = colbuf.data() + (b * krows + k) * positions;
        for (long p = 0; p < positions; ++p)
          s += static_cast<double>(g[p]) * static_cast<double>(cr[p]);
      }
      kernel_grad[t] += static_cast<T>(s);
    }
  }

  if (in_grad) {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < d.batch; ++b) {
      T* dcol = colbuf.data() + b * krows * positions;  // reuse as scratch
      micro_tn(krows, positions, d.cout, kernel, out_grad + b * d.cout * positions,
               dcol);
      col2im_acc(dcol, in_grad + b * d.cin * d.h * d.w, d);
    }
  }
}

template <typename T>
void conv1d_temporal_forward(const T* in, const T* kernel, const T* bias, T* out,
                             long batch, long cin, long cout, long frames,
                             long spatial, long kt) {
  const long r = (kt - 1) / 2;
#pragma omp parallel for schedule(static)
  for (long t = 0; t < batch * cout * frames; ++t) {
    long b = t / (cout * frames);
    long o = (t / frames) % cout;
    long n = t % frames;
    T* orow = out + ((b * cout + o) * frames + n) * spatial;
    T bv = bias ? bias[o] : T(0);
    for (long s = 0; s < spatial; ++s) orow[s] = bv;
    for (long c = 0; c < cin; ++c) {
      for (long j = 0; j < kt; ++j) {
        long nc = n + j - r;
        nc = nc < 0 ? 0 : (nc >= frames ? frames - 1 : nc);
        T w = kernel[(o * cin + c) * kt + j];
        const T* xr = in + ((b * cin + c) * frames + nc) * spatial;
        for (long s = 0; s < spatial; ++s) orow[s] += w * xr[s];
      }
    }
  }
}

template <typename T>
void conv1d_temporal_backward(const T* in, const T* kernel, const T* out_grad,
                              T* in_grad, T* kernel_grad, T* bias_grad, long batch,
                              long cin, long cout, long frames, long spatial,
                              long kt) {
  const long r = (kt - 1) / 2;

  if (bias_grad) {
#pragma omp parallel for schedule(static)
    for (long o = 0; o < cout; ++o) {
      double s = 0.0;
      for (long b = 0; b < batch; ++b) {
        const T* g = out_grad + (b * cout + o) * frames * spatial;
        for (long i = 0; i < frames * spatial; ++i) s += static_cast<double>(g[i]);
      }
      bias_grad[o] += static_cast<T>(s);
    }
  }

  if (kernel_grad) {
#pragma omp parallel for schedule(static)
    for (long t = 0; t < cout * cin * kt; ++t) {
      long o = t / (cin * kt);
      long c = (t / kt) % cin;
      long j = t % kt;
      double s = 0.0;
      for (long b = 0; b < batch; ++b) {
        for (long n = 0; n < frames; ++n) {
          long nc = n + j - r;
          nc = nc < 0 ? 0 : (nc >= frames ? frames - 1 : nc);
          const T* g = out_grad + ((b * cout + o) * frames + n) * spatial;
          const T* xr = in + ((b * cin + c) * frames + nc) * spatial;
          for (long sp = 0; sp < spatial; ++sp)
            s += static_cast<double>(g[sp]) * static_cast<double>(xr[sp]);
        }
      }
      kernel_grad[t] += static_cast<T>(s);
    }
  }

  if (in_grad) {
#pragma omp parallel for schedule(static)
    for (long t = 0; t < batch * cin; ++t) {
      long b = t / cin;
      long c = t % cin;
      T* gin = in_grad + (b * cin + c) * frames * spatial;
      for (long o = 0; o < cout; ++o) {
        const T* g = out_grad + (b * cout + o) * frames * spatial;
        for (long n = 0; n < frames; ++n) {
          for (long j = 0; j < kt; ++j) {
            long nc = n + j - r;
            nc = nc < 0 ? 0 : (nc >= frames ? frames - 1 : nc);
            T w = kernel[(o * cin + c) * kt + j];
            const T* grow = g + n * spatial;
            T* drow = gin + nc * spatial;
            for (long sp = 0; sp < spatial; ++sp) drow[sp] += w * grow[sp];
          }
        }
      }
    }
  }
}

template <typename T>
void rows_normalize_forward(const T* x, T* y, long rows, long len, double eps,
                            double* mean, double* inv_std) {
#pragma omp parallel for schedule(static)
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
    mean[r] = m;
    inv_std[r] = is;
    for (long j = 0; j < len; ++j)
      yr[j] = static_cast<T>((static_cast<double>(xr[j]) - m) * is);
  }
}

template <typename T>
void rows_normalize_backward(const T* y, const T* y_grad, T* x_grad, long rows,
                             long len, const double* inv_std) {
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const T* yr = y + r * len;
    const T* gr = y_grad + r * len;
    T* xr = x_grad + r * len;
    double gmean = 0.0, gymean = 0.0;
    for (long j = 0; j < len; ++j) {
      gmean += static_cast<double>(gr[j]);
      gymean += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
    }
    gmean /= static_cast<double>(len);
    gymean /= static_cast<double>(len);
    double is = inv_std[r];
    for (long j = 0; j < len; ++j)
      xr[j] += static_cast<T>(is * (static_cast<double>(gr[j]) - gmean -
                                    static_cast<double>(yr[j]) * gymean));
  }
}

template <typename T>
void softmax_forward(const T* x, T* y, long rows, long len) {
#pragma omp parallel for schedule(static)
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
void softmax_backward(const T* y, const T* y_grad, T* x_grad, long rows, long len) {
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const T* yr = y + r * len;
    const T* gr = y_grad + r * len;
    T* xr = x_grad + r * len;
    double dot = 0.0;
    for (long j = 0; j < len; ++j)
      dot += static_cast<double>(yr[j]) * static_cast<double>(gr[j]);
    for (long j = 0; j < len; ++j)
      xr[j] += static_cast<T>(static_cast<double>(yr[j]) *
                              (static_cast<double>(gr[j]) - dot));
  }
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs,
                       long bh, long len, long dim) {
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
#pragma omp parallel for schedule(static)
  for (long s = 0; s < bh; ++s) {
    const T* qs = q + s * len * dim;
    const T* ks = k + s * len * dim;
    const T* vs = v + s * len * dim;
    T* ps = probs + s * len * len;
    micro_nt(len, len, dim, qs, ks, ps);
    for (long i = 0; i < len * len; ++i) ps[i] *= inv_sqrt_d;
    softmax_rows_inplace(ps, len, len);
    micro_nn(len, dim, len, ps, vs, out + s * len * dim);
  }
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs,
                        const T* out_grad, T* q_grad, T* k_grad, T* v_grad,
                        long bh, long len, long dim) {
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
#pragma omp parallel for schedule(static)
  for (long s = 0; s < bh; ++s) {
    const T* qs = q + s * len * dim;
    const T* ks = k + s * len * dim;
    const T* vs = v + s * len * dim;
    const T* ps = probs + s * len * len;
    const T* gs = out_grad + s * len * dim;
    std::vector<T> dprobs(static_cast<size_t>(len) * len);
    std::vector<T> dscores(static_cast<size_t>(len) * len);
    std::vector<T> tmp(static_cast<size_t>(len) * dim);

    // dv += probs^T g
    micro_tn(len, dim, len, ps, gs, tmp.data());
    T* vg = v_grad + s * len * dim;
    for (long i = 0; i < len * dim; ++i) vg[i] += tmp[i];

    // dprobs = g v^T, then softmax backward rows -> dscores
    micro_nt(len, len, dim, gs, vs, dprobs.data());
    for (long r = 0; r < len; ++r) {
      const T* pr = ps + r * len;
      const T* dr = dprobs.data() + r * len;
      T* sr = dscores.data() + r * len;
      double dot = 0.0;
      for (long j = 0; j < len; ++j)
        dot += static_cast<double>(pr[j]) * static_cast<double>(dr[j]);
      for (long j = 0; j < len; ++j)
        sr[j] = static_cast<T>(static_cast<double>(pr[j]) *
                               (static_cast<double>(dr[j]) - dot)) *
                inv_sqrt_d;
    }

    // dq += dscores k ; dk += dscores^T q
    micro_nn(len, dim, len, dscores.data(), ks, tmp.data());
    T* qg = q_grad + s * len * dim;
    for (long i = 0; i < len * dim; ++i) qg[i] += tmp[i];
    micro_tn(len, dim, len, dscores.data(), qs, tmp.data());
    T* kg = k_grad + s * len * dim;
    for (long i = 0; i < len * dim; ++i) kg[i] += tmp[i];
  }
}

template <typename T>
double reduce_sum(const T* x, long n) {
  const long block = 8192;
  const long nblocks = (n + block - 1) / block;
  std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < nblocks; ++b) {
    double s = 0.0;
    long end = b + 1 < nblocks ? (b + 1) * block : n;
    for (long i = b * block; i < end; ++i) s += static_cast<double>(x[i]);
    partial[b] = s;
  }
  double total = 0.0;
  for (long b = 0; b < nblocks; ++b) total += partial[b];
  return total;
}

#define VDIFF_INSTANTIATE(T)                                                       \
  template void gemm_nn<T>(long, long, long, const T*, const T*, T*, bool);        \
  template void gemm_tn<T>(long, long, long, const T*, const T*, T*, bool);        \
  template void gemm_nt<T>(long, long, long, const T*, const T*, T*, bool);        \
  template void im2col<T>(const T*, T*, const Conv2dDims&);                        \
  template void col2im_acc<T>(const T*, T*, const Conv2dDims&);                    \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*,                \
                                  const Conv2dDims&);                              \
  template void conv2d_backward<T>(const T*, const T*, const T*, T*, T*, T*,       \
                                   const Conv2dDims&);                             \
  template void conv1d_temporal_forward<T>(const T*, const T*, const T*, T*, long, \
                                           long, long, long, long, long);          \
  template void conv1d_temporal_backward<T>(const T*, const T*, const T*, T*, T*,  \
                                            T*, long, long, long, long, long,      \
                                            long);                                 \
  template void rows_normalize_forward<T>(const T*, T*, long, long, double,        \
                                          double*, double*);                       \
  template void rows_normalize_backward<T>(const T*, const T*, T*, long, long,     \
                                           const double*);                         \
  template void softmax_forward<T>(const T*, T*, long, long);                      \
  template void softmax_backward<T>(const T*, const T*, T*, long, long);           \
  template void attention_forward<T>(const T*, const T*, const T*, T*, T*, long,   \
                                     long, long);                                  \
  template void attention_backward<T>(const T*, const T*, const T*, const T*,      \
                                      const T*, T*, T*, T*, long, long, long);     \
  template double reduce_sum<T>(const T*, long);

VDIFF_INSTANTIATE(float)
VDIFF_INSTANTIATE(double)

#undef VDIFF_INSTANTIATE

}  // namespace vdiff::kernels
