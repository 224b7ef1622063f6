#include "vdiff/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "vdiff/kernels.hpp"

namespace vdiff {

namespace {

DType g_default_dtype = DType::F64;

template <typename F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::F64)
    f(0.0);
  else
    f(0.0f);
}

}  // namespace

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dt) { g_default_dtype = dt; }

bool debug_checks_enabled() {
  static const bool enabled = [] {
#ifdef NDEBUG
    bool v = false;
#else
    bool v = true;
#endif
    if (const char* e = std::getenv("VDIFF_DEBUG_CHECKS")) v = e[0] != '0';
    return v;
  }();
  return enabled;
}

long shape_numel(const Shape& shape) {
  long n = 1;
  for (long d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (dtype == DType::F64) {
    if (gd.empty()) gd.assign(static_cast<size_t>(numel), 0.0);
  } else {
    if (gf.empty()) gf.assign(static_cast<size_t>(numel), 0.0f);
  }
}

void TensorImpl::zero_grad() {
  if (!gd.empty()) gd.assign(gd.size(), 0.0);
  if (!gf.empty()) gf.assign(gf.size(), 0.0f);
}

double TensorImpl::value_at(long i) const {
  return dtype == DType::F64 ? vd[static_cast<size_t>(i)]
                             : static_cast<double>(vf[static_cast<size_t>(i)]);
}

void TensorImpl::set_value(long i, double v) {
  if (dtype == DType::F64)
    vd[static_cast<size_t>(i)] = v;
  else
    vf[static_cast<size_t>(i)] = static_cast<float>(v);
}

double TensorImpl::grad_at(long i) const {
  if (dtype == DType::F64) return gd.empty() ? 0.0 : gd[static_cast<size_t>(i)];
  return gf.empty() ? 0.0 : static_cast<double>(gf[static_cast<size_t>(i)]);
}

Tensor make_tensor(Shape shape, DType dt) {
  auto impl = std::make_shared<TensorImpl>();
  impl->numel = shape_numel(shape);
  if (impl->numel < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(shape));
  impl->shape = std::move(shape);
  impl->dtype = dt;
  if (dt == DType::F64)
    impl->vd.assign(static_cast<size_t>(impl->numel), 0.0);
  else
    impl->vf.assign(static_cast<size_t>(impl->numel), 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dt) { return make_tensor(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  for (long i = 0; i < t.numel(); ++i) t.set_value(i, value);
  return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  if (static_cast<long>(values.size()) != t.numel())
    throw std::invalid_argument("from_values: got " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.shape()));
  for (long i = 0; i < t.numel(); ++i) t.set_value(i, values[static_cast<size_t>(i)]);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, DType dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  for (long i = 0; i < t.numel(); ++i) t.set_value(i, rng.normal() * stddev);
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi, DType dt) {
  Tensor t = make_tensor(std::move(shape), dt);
  for (long i = 0; i < t.numel(); ++i) t.set_value(i, lo + (hi - lo) * rng.uniform());
  return t;
}

Tensor Tensor::scalar(double v, DType dt) { return full({1}, v, dt); }

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (long i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = value_at(i);
  return out;
}

std::vector<double> Tensor::grad_to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (long i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = grad_at(i);
  return out;
}

Tensor Tensor::clone() const {
  Tensor t = make_tensor(p_->shape, p_->dtype);
  if (p_->dtype == DType::F64)
    t.p_->vd = p_->vd;
  else
    t.p_->vf = p_->vf;
  return t;
}

Tensor Tensor::to(DType dt) const {
  if (dt == p_->dtype) return clone();
  Tensor t = make_tensor(p_->shape, dt);
  for (long i = 0; i < numel(); ++i) t.set_value(i, value_at(i));
  return t;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, std::function<void()> backward) {
  records_.push_back({op, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) shape_error("backward", "loss must be a single element, got " + shape_str(loss.shape()));
  loss.impl()->ensure_grad();
  if (loss.dtype() == DType::F64)
    loss.impl()->gd[0] = 1.0;
  else
    loss.impl()->gf[0] = 1.0f;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
  records_.clear();
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw std::logic_error("backward: no active tape");
  t->backward(loss);
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    shape_error(op, std::string("dtype mismatch: ") + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
}

void check_finite(const char* op, const Tensor& t) {
  for (long i = 0; i < t.numel(); ++i) {
    double v = t.value_at(i);
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) + ": non-finite value " + std::to_string(v) +
                               " at flat index " + std::to_string(i));
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

namespace {

// Common tail for every op: optional finite check, then tape bookkeeping.
// Grad buffers of the output and of all grad-requiring inputs are allocated
// here so backward closures can assume they exist.
void finish(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> bwd) {
  if (debug_checks_enabled()) check_finite(op, out);
  if (!grad_enabled(inputs)) return;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) t->impl()->ensure_grad();
  out.set_requires_grad(true);
  out.impl()->ensure_grad();
  Tape::active()->record(op, std::move(bwd));
}

template <typename T>
T* grad_ptr(const Tensor& t) {
  return t.impl()->grads<T>().data();
}

long inner_numel(const Shape& s, size_t from) {
  long n = 1;
  for (size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_same_dtype("add", a, b);
  Tensor out = make_tensor(a.shape(), a.dtype());
  long n = out.numel();
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  });
  finish("add", {&a, &b}, out, [a, b, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (a.requires_grad()) {
        T* ga = grad_ptr<T>(a);
        for (long i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        T* gb = grad_ptr<T>(b);
        for (long i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_same_dtype("sub", a, b);
  Tensor out = make_tensor(a.shape(), a.dtype());
  long n = out.numel();
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  });
  finish("sub", {&a, &b}, out, [a, b, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (a.requires_grad()) {
        T* ga = grad_ptr<T>(a);
        for (long i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        T* gb = grad_ptr<T>(b);
        for (long i = 0; i < n; ++i) gb[i] -= go[i];
      }
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_same_dtype("mul", a, b);
  Tensor out = make_tensor(a.shape(), a.dtype());
  long n = out.numel();
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  });
  finish("mul", {&a, &b}, out, [a, b, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (a.requires_grad()) {
        T* ga = grad_ptr<T>(a);
        const T* pb = b.data<T>();
        for (long i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
      }
      if (b.requires_grad()) {
        T* gb = grad_ptr<T>(b);
        const T* pa = a.data<T>();
        for (long i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
      }
    });
  });
  return out;
}

Tensor scalar_mul(const Tensor& x, double c) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  long n = out.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    T cc = static_cast<T>(c);
    for (long i = 0; i < n; ++i) po[i] = cc * px[i];
  });
  finish("scalar_mul", {&x}, out, [x, out, c, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      T cc = static_cast<T>(c);
      for (long i = 0; i < n; ++i) gx[i] += cc * go[i];
    });
  });
  return out;
}

Tensor scalar_add(const Tensor& x, double c) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  long n = out.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    T cc = static_cast<T>(c);
    for (long i = 0; i < n; ++i) po[i] = px[i] + cc;
  });
  finish("scalar_add", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[i] += go[i];
    });
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  long n = out.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) {
      double v = static_cast<double>(px[i]);
      po[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
    }
  });
  finish("silu", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      const T* px = x.data<T>();
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) {
        double v = static_cast<double>(px[i]);
        double s = 1.0 / (1.0 + std::exp(-v));
        gx[i] += static_cast<T>(static_cast<double>(go[i]) * s * (1.0 + v * (1.0 - s)));
      }
    });
  });
  return out;
}

Tensor tanh_op(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  long n = out.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = static_cast<T>(std::tanh(static_cast<double>(px[i])));
  });
  finish("tanh", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      const T* po = out.data<T>();
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[i] += go[i] * (T(1) - po[i] * po[i]);
    });
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                               " changes element count");
  Tensor out = make_tensor(std::move(new_shape), x.dtype());
  long n = out.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = px[i];
  });
  finish("reshape", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[i] += go[i];
    });
  });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd)
    shape_error("permute", "perm has " + std::to_string(perm.size()) + " entries for " +
                               std::to_string(nd) + "-d tensor");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)])
      shape_error("permute", "invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape oshape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i)
    oshape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  std::vector<long> istr(static_cast<size_t>(nd));
  long s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    istr[static_cast<size_t>(i)] = s;
    s *= x.shape()[static_cast<size_t>(i)];
  }

  long n = x.numel();
  auto idxmap = std::make_shared<std::vector<long>>(static_cast<size_t>(n));
  std::vector<long> coord(static_cast<size_t>(nd), 0);
  for (long oi = 0; oi < n; ++oi) {
    long rem = oi, src = 0;
    for (int i = 0; i < nd; ++i) {
      long extent = oshape[static_cast<size_t>(i)];
      long stride_rest = 1;
      for (int j = i + 1; j < nd; ++j) stride_rest *= oshape[static_cast<size_t>(j)];
      long c = rem / stride_rest;
      rem -= c * stride_rest;
      src += c * istr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      (void)extent;
    }
    (*idxmap)[static_cast<size_t>(oi)] = src;
  }

  Tensor out = make_tensor(oshape, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long i = 0; i < n; ++i) po[i] = px[(*idxmap)[static_cast<size_t>(i)]];
  });
  finish("permute", {&x}, out, [x, out, idxmap, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[(*idxmap)[static_cast<size_t>(i)]] += go[i];
    });
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || a.ndim() != b.ndim())
    shape_error("concat_channels", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_same_dtype("concat_channels", a, b);
  for (int i = 0; i < a.ndim(); ++i)
    if (i != 1 && a.dim(i) != b.dim(i))
      shape_error("concat_channels", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  long batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  long inner = inner_numel(a.shape(), 2);
  Shape oshape = a.shape();
  oshape[1] = ca + cb;
  Tensor out = make_tensor(oshape, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mutable_data<T>();
    for (long bi = 0; bi < batch; ++bi) {
      T* dst = po + bi * (ca + cb) * inner;
      const T* sa = pa + bi * ca * inner;
      const T* sb = pb + bi * cb * inner;
      for (long i = 0; i < ca * inner; ++i) dst[i] = sa[i];
      for (long i = 0; i < cb * inner; ++i) dst[ca * inner + i] = sb[i];
    }
  });
  finish("concat_channels", {&a, &b}, out, [a, b, out, batch, ca, cb, inner]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      for (long bi = 0; bi < batch; ++bi) {
        const T* src = go + bi * (ca + cb) * inner;
        if (a.requires_grad()) {
          T* ga = grad_ptr<T>(a) + bi * ca * inner;
          for (long i = 0; i < ca * inner; ++i) ga[i] += src[i];
        }
        if (b.requires_grad()) {
          T* gb = grad_ptr<T>(b) + bi * cb * inner;
          for (long i = 0; i < cb * inner; ++i) gb[i] += src[ca * inner + i];
        }
      }
    });
  });
  return out;
}

Tensor slice_channels(const Tensor& x, long begin, long count) {
  if (x.ndim() < 2) shape_error("slice_channels", "needs at least 2-d, got " + shape_str(x.shape()));
  long c = x.dim(1);
  if (begin < 0 || count <= 0 || begin + count > c)
    shape_error("slice_channels", "range [" + std::to_string(begin) + ", " +
                                      std::to_string(begin + count) + ") out of " +
                                      std::to_string(c) + " channels");
  long batch = x.dim(0);
  long inner = inner_numel(x.shape(), 2);
  Shape oshape = x.shape();
  oshape[1] = count;
  Tensor out = make_tensor(oshape, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long bi = 0; bi < batch; ++bi) {
      const T* src = px + (bi * c + begin) * inner;
      T* dst = po + bi * count * inner;
      for (long i = 0; i < count * inner; ++i) dst[i] = src[i];
    }
  });
  finish("slice_channels", {&x}, out, [x, out, batch, c, begin, count, inner]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long bi = 0; bi < batch; ++bi) {
        const T* src = go + bi * count * inner;
        T* dst = gx + (bi * c + begin) * inner;
        for (long i = 0; i < count * inner; ++i) dst[i] += src[i];
      }
    });
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_tensor({1}, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    double s = kernels::reduce_sum(x.data<T>(), x.numel());
    out.mutable_data<T>()[0] = static_cast<T>(s);
  });
  long n = x.numel();
  finish("sum", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      T g = grad_ptr<T>(out)[0];
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[i] += g;
    });
  });
  return out;
}

Tensor mean(const Tensor& x) {
  Tensor out = make_tensor({1}, x.dtype());
  long n = x.numel();
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    double s = kernels::reduce_sum(x.data<T>(), n);
    out.mutable_data<T>()[0] = static_cast<T>(s / static_cast<double>(n));
  });
  finish("mean", {&x}, out, [x, out, n]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      T g = static_cast<T>(static_cast<double>(grad_ptr<T>(out)[0]) / static_cast<double>(n));
      T* gx = grad_ptr<T>(x);
      for (long i = 0; i < n; ++i) gx[i] += g;
    });
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1))
    shape_error("linear", "x " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  check_same_dtype("linear", x, weight);
  long batch = x.dim(0), in = x.dim(1), outdim = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != outdim))
    shape_error("linear", "bias " + shape_str(bias.shape()) + " for " + std::to_string(outdim) +
                              " outputs");
  Tensor out = make_tensor({batch, outdim}, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::gemm_nt(batch, outdim, in, x.data<T>(), weight.data<T>(), out.mutable_data<T>(),
                     false);
    if (bias.defined()) {
      const T* pb = bias.data<T>();
      T* po = out.mutable_data<T>();
      for (long b = 0; b < batch; ++b)
        for (long o = 0; o < outdim; ++o) po[b * outdim + o] += pb[o];
    }
  });
  finish("linear", {&x, &weight, &bias}, out, [x, weight, bias, out, batch, in, outdim]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (x.requires_grad())
        kernels::gemm_nn(batch, in, outdim, go, weight.data<T>(), grad_ptr<T>(x), true);
      if (weight.requires_grad())
        kernels::gemm_tn(outdim, in, batch, go, x.data<T>(), grad_ptr<T>(weight), true);
      if (bias.defined() && bias.requires_grad()) {
        T* gb = grad_ptr<T>(bias);
        for (long o = 0; o < outdim; ++o) {
          double s = 0.0;
          for (long b = 0; b < batch; ++b) s += static_cast<double>(go[b * outdim + o]);
          gb[o] += static_cast<T>(s);
        }
      }
    });
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  check_same_dtype("matmul", a, b);
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_tensor({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::gemm_nn(m, n, k, a.data<T>(), b.data<T>(), out.mutable_data<T>(), false);
  });
  finish("matmul", {&a, &b}, out, [a, b, out, m, n, k]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (a.requires_grad()) kernels::gemm_nt(m, k, n, go, b.data<T>(), grad_ptr<T>(a), true);
      if (b.requires_grad()) kernels::gemm_tn(k, n, m, a.data<T>(), go, grad_ptr<T>(b), true);
    });
  });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, long stride,
              long padding) {
  if (input.ndim() != 4 || kernel.ndim() != 4 || input.dim(1) != kernel.dim(1))
    shape_error("conv2d", "input " + shape_str(input.shape()) + " kernel " +
                              shape_str(kernel.shape()));
  check_same_dtype("conv2d", input, kernel);
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  kernels::Conv2dDims d;
  d.batch = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  d.pad = padding;
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.ho < 1 || d.wo < 1) shape_error("conv2d", "kernel larger than padded input");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.cout))
    shape_error("conv2d", "bias " + shape_str(bias.shape()));

  Tensor out = make_tensor({d.batch, d.cout, d.ho, d.wo}, input.dtype());
  dispatch(input.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::conv2d_forward(input.data<T>(), kernel.data<T>(),
                            bias.defined() ? bias.data<T>() : nullptr, out.mutable_data<T>(), d);
  });
  finish("conv2d", {&input, &kernel, &bias}, out, [input, kernel, bias, out, d]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      kernels::conv2d_backward(input.data<T>(), kernel.data<T>(), grad_ptr<T>(out),
                               input.requires_grad() ? grad_ptr<T>(input) : nullptr,
                               kernel.requires_grad() ? grad_ptr<T>(kernel) : nullptr,
                               bias.defined() && bias.requires_grad() ? grad_ptr<T>(bias)
                                                                      : nullptr,
                               d);
    });
  });
  return out;
}

Tensor conv1d_temporal(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  if (input.ndim() != 5 || kernel.ndim() != 3 || input.dim(1) != kernel.dim(1))
    shape_error("conv1d_temporal", "input " + shape_str(input.shape()) + " kernel " +
                                       shape_str(kernel.shape()));
  check_same_dtype("conv1d_temporal", input, kernel);
  if (kernel.dim(2) % 2 == 0) shape_error("conv1d_temporal", "kernel width must be odd");
  long batch = input.dim(0), cin = input.dim(1), frames = input.dim(2);
  long spatial = input.dim(3) * input.dim(4);
  long cout = kernel.dim(0), kt = kernel.dim(2);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
    shape_error("conv1d_temporal", "bias " + shape_str(bias.shape()));

  Tensor out = make_tensor({batch, cout, frames, input.dim(3), input.dim(4)}, input.dtype());
  dispatch(input.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::conv1d_temporal_forward(input.data<T>(), kernel.data<T>(),
                                     bias.defined() ? bias.data<T>() : nullptr,
                                     out.mutable_data<T>(), batch, cin, cout, frames, spatial,
                                     kt);
  });
  finish("conv1d_temporal", {&input, &kernel, &bias}, out,
         [input, kernel, bias, out, batch, cin, cout, frames, spatial, kt]() {
           dispatch(out.dtype(), [&](auto z) {
             using T = decltype(z);
             kernels::conv1d_temporal_backward(
                 input.data<T>(), kernel.data<T>(), grad_ptr<T>(out),
                 input.requires_grad() ? grad_ptr<T>(input) : nullptr,
                 kernel.requires_grad() ? grad_ptr<T>(kernel) : nullptr,
                 bias.defined() && bias.requires_grad() ? grad_ptr<T>(bias) : nullptr, batch,
                 cin, cout, frames, spatial, kt);
           });
         });
  return out;
}

Tensor group_norm(const Tensor& input, long groups, double eps) {
  if (input.ndim() < 2) shape_error("group_norm", "needs at least 2-d, got " + shape_str(input.shape()));
  long c = input.dim(1);
  if (groups < 1 || c % groups != 0)
    shape_error("group_norm", std::to_string(c) + " channels not divisible into " +
                                  std::to_string(groups) + " groups");
  long rows = input.dim(0) * groups;
  long len = (c / groups) * inner_numel(input.shape(), 2);
  Tensor out = make_tensor(input.shape(), input.dtype());
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  dispatch(input.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::rows_normalize_forward(input.data<T>(), out.mutable_data<T>(), rows, len, eps,
                                    mean->data(), inv_std->data());
  });
  finish("group_norm", {&input}, out, [input, out, rows, len, inv_std]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      kernels::rows_normalize_backward(out.data<T>(), grad_ptr<T>(out), grad_ptr<T>(input),
                                       rows, len, inv_std->data());
    });
  });
  return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& scale) {
  if (x.ndim() < 2 || scale.ndim() != 1 || scale.dim(0) != x.dim(1))
    shape_error("scale_channels", "x " + shape_str(x.shape()) + " scale " +
                                      shape_str(scale.shape()));
  check_same_dtype("scale_channels", x, scale);
  long batch = x.dim(0), c = x.dim(1);
  long inner = inner_numel(x.shape(), 2);
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    const T* ps = scale.data<T>();
    T* po = out.mutable_data<T>();
    for (long b = 0; b < batch; ++b)
      for (long ch = 0; ch < c; ++ch) {
        T s = ps[ch];
        const T* xr = px + (b * c + ch) * inner;
        T* orow = po + (b * c + ch) * inner;
        for (long i = 0; i < inner; ++i) orow[i] = s * xr[i];
      }
  });
  finish("scale_channels", {&x, &scale}, out, [x, scale, out, batch, c, inner]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (x.requires_grad()) {
        T* gx = grad_ptr<T>(x);
        const T* ps = scale.data<T>();
        for (long b = 0; b < batch; ++b)
          for (long ch = 0; ch < c; ++ch) {
            T s = ps[ch];
            const T* gr = go + (b * c + ch) * inner;
            T* xr = gx + (b * c + ch) * inner;
            for (long i = 0; i < inner; ++i) xr[i] += s * gr[i];
          }
      }
      if (scale.requires_grad()) {
        T* gs = grad_ptr<T>(scale);
        const T* px = x.data<T>();
        for (long ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (long b = 0; b < batch; ++b) {
            const T* gr = go + (b * c + ch) * inner;
            const T* xr = px + (b * c + ch) * inner;
            for (long i = 0; i < inner; ++i)
              s += static_cast<double>(gr[i]) * static_cast<double>(xr[i]);
          }
          gs[ch] += static_cast<T>(s);
        }
      }
    });
  });
  return out;
}

Tensor add_bias_channels(const Tensor& x, const Tensor& bias) {
  if (x.ndim() < 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1))
    shape_error("add_bias_channels", "x " + shape_str(x.shape()) + " bias " +
                                         shape_str(bias.shape()));
  check_same_dtype("add_bias_channels", x, bias);
  long batch = x.dim(0), c = x.dim(1);
  long inner = inner_numel(x.shape(), 2);
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    const T* pb = bias.data<T>();
    T* po = out.mutable_data<T>();
    for (long b = 0; b < batch; ++b)
      for (long ch = 0; ch < c; ++ch) {
        T bv = pb[ch];
        const T* xr = px + (b * c + ch) * inner;
        T* orow = po + (b * c + ch) * inner;
        for (long i = 0; i < inner; ++i) orow[i] = xr[i] + bv;
      }
  });
  finish("add_bias_channels", {&x, &bias}, out, [x, bias, out, batch, c, inner]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (x.requires_grad()) {
        T* gx = grad_ptr<T>(x);
        for (long i = 0; i < batch * c * inner; ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        T* gb = grad_ptr<T>(bias);
        for (long ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (long b = 0; b < batch; ++b) {
            const T* gr = go + (b * c + ch) * inner;
            for (long i = 0; i < inner; ++i) s += static_cast<double>(gr[i]);
          }
          gb[ch] += static_cast<T>(s);
        }
      }
    });
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() < 1) shape_error("softmax", "needs at least 1-d");
  long len = x.dim(x.ndim() - 1);
  long rows = x.numel() / len;
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::softmax_forward(x.data<T>(), out.mutable_data<T>(), rows, len);
  });
  finish("softmax", {&x}, out, [x, out, rows, len]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      kernels::softmax_backward(out.data<T>(), grad_ptr<T>(out), grad_ptr<T>(x), rows, len);
    });
  });
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 4 || !q.same_shape(k) || !q.same_shape(v))
    shape_error("attention", "q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                                 " v " + shape_str(v.shape()));
  check_same_dtype("attention", q, k);
  check_same_dtype("attention", q, v);
  long bh = q.dim(0) * q.dim(1), len = q.dim(2), dim = q.dim(3);
  Tensor out = make_tensor(q.shape(), q.dtype());
  Tensor probs = make_tensor({bh, len, len}, q.dtype());
  dispatch(q.dtype(), [&](auto z) {
    using T = decltype(z);
    kernels::attention_forward(q.data<T>(), k.data<T>(), v.data<T>(), out.mutable_data<T>(),
                               probs.mutable_data<T>(), bh, len, dim);
  });
  finish("attention", {&q, &k, &v}, out, [q, k, v, out, probs, bh, len, dim]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      // all three inputs share one kernel call; grads for inputs that do not
      // require them land in throwaway scratch
      std::vector<T> jq, jk, jv;
      auto scratch = [&](const Tensor& t, std::vector<T>& j) -> T* {
        if (t.requires_grad()) return grad_ptr<T>(t);
        j.assign(static_cast<size_t>(t.numel()), T(0));
        return j.data();
      };
      kernels::attention_backward(q.data<T>(), k.data<T>(), v.data<T>(), probs.data<T>(),
                                  grad_ptr<T>(out), scratch(q, jq), scratch(k, jk),
                                  scratch(v, jv), bh, len, dim);
    });
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<long>& ids) {
  if (table.ndim() != 2) shape_error("embedding_lookup", "table " + shape_str(table.shape()));
  long vocab = table.dim(0), dim = table.dim(1);
  for (long id : ids)
    if (id < 0 || id >= vocab)
      shape_error("embedding_lookup", "id " + std::to_string(id) + " out of range [0, " +
                                          std::to_string(vocab) + ")");
  long batch = static_cast<long>(ids.size());
  Tensor out = make_tensor({batch, dim}, table.dtype());
  dispatch(table.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* pt = table.data<T>();
    T* po = out.mutable_data<T>();
    for (long b = 0; b < batch; ++b) {
      const T* row = pt + ids[static_cast<size_t>(b)] * dim;
      for (long i = 0; i < dim; ++i) po[b * dim + i] = row[i];
    }
  });
  finish("embedding_lookup", {&table}, out, [table, out, ids, batch, dim]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gt = grad_ptr<T>(table);
      for (long b = 0; b < batch; ++b) {
        T* row = gt + ids[static_cast<size_t>(b)] * dim;
        for (long i = 0; i < dim; ++i) row[i] += go[b * dim + i];
      }
    });
  });
  return out;
}

Tensor repeat_rows(const Tensor& x, long times) {
  if (x.ndim() != 2 || times < 1)
    shape_error("repeat_rows", shape_str(x.shape()) + " times " + std::to_string(times));
  long batch = x.dim(0), dim = x.dim(1);
  Tensor out = make_tensor({batch * times, dim}, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long b = 0; b < batch; ++b)
      for (long r = 0; r < times; ++r)
        for (long i = 0; i < dim; ++i) po[(b * times + r) * dim + i] = px[b * dim + i];
  });
  finish("repeat_rows", {&x}, out, [x, out, batch, times, dim]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long b = 0; b < batch; ++b)
        for (long i = 0; i < dim; ++i) {
          double acc = 0;
          for (long r = 0; r < times; ++r)
            acc += static_cast<double>(go[(b * times + r) * dim + i]);
          gx[b * dim + i] += static_cast<T>(acc);
        }
    });
  });
  return out;
}

Tensor add_bias_spatial(const Tensor& x, const Tensor& bias) {
  if (x.ndim() < 2 || bias.ndim() != 2 || bias.dim(0) != x.dim(0) || bias.dim(1) != x.dim(1))
    shape_error("add_bias_spatial", shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  check_same_dtype("add_bias_spatial", x, bias);
  long rows = x.dim(0) * x.dim(1);
  long inner = x.numel() / rows;
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    const T* pb = bias.data<T>();
    T* po = out.mutable_data<T>();
    for (long r = 0; r < rows; ++r)
      for (long i = 0; i < inner; ++i) po[r * inner + i] = px[r * inner + i] + pb[r];
  });
  finish("add_bias_spatial", {&x, &bias}, out, [x, bias, out, rows, inner]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      if (x.requires_grad()) {
        T* gx = grad_ptr<T>(x);
        for (long i = 0; i < x.numel(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        T* gb = grad_ptr<T>(bias);
        for (long r = 0; r < rows; ++r) {
          double acc = 0;
          for (long i = 0; i < inner; ++i) acc += static_cast<double>(go[r * inner + i]);
          gb[r] += static_cast<T>(acc);
        }
      }
    });
  });
  return out;
}

Tensor nearest_downsample(const Tensor& x, long factor) {
  if (x.ndim() < 2) shape_error("nearest_downsample", shape_str(x.shape()));
  long h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    shape_error("nearest_downsample", shape_str(x.shape()) + " by factor " +
                                          std::to_string(factor));
  long lead = x.numel() / (h * w);
  long ho = h / factor, wo = w / factor;
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = ho;
  oshape[oshape.size() - 1] = wo;
  Tensor out = make_tensor(oshape, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long l = 0; l < lead; ++l)
      for (long y = 0; y < ho; ++y)
        for (long xx = 0; xx < wo; ++xx)
          po[(l * ho + y) * wo + xx] = px[(l * h + y * factor) * w + xx * factor];
  });
  finish("nearest_downsample", {&x}, out, [x, out, lead, h, w, ho, wo, factor]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long l = 0; l < lead; ++l)
        for (long y = 0; y < ho; ++y)
          for (long xx = 0; xx < wo; ++xx)
            gx[(l * h + y * factor) * w + xx * factor] += go[(l * ho + y) * wo + xx];
    });
  });
  return out;
}

Tensor nearest_upsample(const Tensor& x, long factor) {
  if (x.ndim() < 2) shape_error("nearest_upsample", shape_str(x.shape()));
  if (factor < 1) shape_error("nearest_upsample", "factor must be >= 1");
  long h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
  long lead = x.numel() / (h * w);
  long ho = h * factor, wo = w * factor;
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = ho;
  oshape[oshape.size() - 1] = wo;
  Tensor out = make_tensor(oshape, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    for (long l = 0; l < lead; ++l)
      for (long y = 0; y < ho; ++y)
        for (long xx = 0; xx < wo; ++xx)
          po[(l * ho + y) * wo + xx] = px[(l * h + y / factor) * w + xx / factor];
  });
  finish("nearest_upsample", {&x}, out, [x, out, lead, h, w, ho, wo, factor]() {
    dispatch(out.dtype(), [&](auto z) {
      using T = decltype(z);
      const T* go = grad_ptr<T>(out);
      T* gx = grad_ptr<T>(x);
      for (long l = 0; l < lead; ++l)
        for (long y = 0; y < ho; ++y)
          for (long xx = 0; xx < wo; ++xx)
            gx[(l * h + y / factor) * w + xx / factor] += go[(l * ho + y) * wo + xx];
    });
  });
  return out;
}

}  // namespace ops

}  // namespace vdiff
