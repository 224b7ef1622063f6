#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/rng.hpp"

namespace vdiff {

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F64 ? "f64" : "f32"; }

// Process-wide default dtype, set once from --precision before any tensors
// are built.
DType default_dtype();
void set_default_dtype(DType dt);

// Runtime toggle for post-op finite checks. Defaults to on in debug builds;
// the VDIFF_DEBUG_CHECKS env var (0/1) overrides.
bool debug_checks_enabled();

using Shape = std::vector<long>;

long shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F64;
  long numel = 0;
  bool requires_grad = false;
  std::vector<double> vd;
  std::vector<float> vf;
  std::vector<double> gd;
  std::vector<float> gf;

  template <typename T>
  std::vector<T>& values();
  template <typename T>
  const std::vector<T>& values() const;
  template <typename T>
  std::vector<T>& grads();

  void ensure_grad();  // allocate zero grad buffer if missing
  void zero_grad();
  double value_at(long i) const;
  void set_value(long i, double v);
  double grad_at(long i) const;
};

template <>
inline std::vector<double>& TensorImpl::values<double>() { return vd; }
template <>
inline std::vector<float>& TensorImpl::values<float>() { return vf; }
template <>
inline const std::vector<double>& TensorImpl::values<double>() const { return vd; }
template <>
inline const std::vector<float>& TensorImpl::values<float>() const { return vf; }
template <>
inline std::vector<double>& TensorImpl::grads<double>() { return gd; }
template <>
inline std::vector<float>& TensorImpl::grads<float>() { return gf; }

// Dense row-major tensor handle. Values are treated as immutable once the
// tensor has entered an op; gradients accumulate in a side buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = default_dtype());
  static Tensor full(Shape shape, double value, DType dt = default_dtype());
  static Tensor from_values(Shape shape, const std::vector<double>& values,
                            DType dt = default_dtype());
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      DType dt = default_dtype());
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             DType dt = default_dtype());
  static Tensor scalar(double v, DType dt = default_dtype());

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  long dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  long numel() const { return p_->numel; }
  DType dtype() const { return p_->dtype; }

  bool requires_grad() const { return p_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    p_->requires_grad = b;
    return *this;
  }

  double value_at(long i) const { return p_->value_at(i); }
  void set_value(long i, double v) { p_->set_value(i, v); }
  double grad_at(long i) const { return p_->grad_at(i); }
  std::vector<double> to_vector() const;
  std::vector<double> grad_to_vector() const;
  void zero_grad() { p_->zero_grad(); }

  template <typename T>
  const T* data() const {
    return p_->values<T>().data();
  }
  template <typename T>
  T* mutable_data() {
    return p_->values<T>().data();
  }

  TensorImpl* impl() const { return p_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return p_; }

  // Deep copy of values (grad not copied).
  Tensor clone() const;
  // Same data converted to another dtype.
  Tensor to(DType dt) const;

  bool same_shape(const Tensor& o) const { return p_->shape == o.p_->shape; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorImpl> p_;
  friend Tensor make_tensor(Shape shape, DType dt);
};

Tensor make_tensor(Shape shape, DType dt);

// Define-by-run gradient tape. One tape per training step; ops record onto
// the innermost active tape of the current thread.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::function<void()> backward);
  // Seeds d(loss)/d(loss) = 1, walks records in reverse, then clears them.
  void backward(const Tensor& loss);
  size_t size() const { return records_.size(); }

  static Tape* active();

 private:
  struct Record {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
  Tape* prev_;
};

// True when an op with these inputs should be recorded.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

[[noreturn]] void shape_error(const std::string& op, const std::string& detail);
void check_same_dtype(const char* op, const Tensor& a, const Tensor& b);
void check_finite(const char* op, const Tensor& t);

namespace ops {

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);
Tensor silu(const Tensor& x);
Tensor tanh_op(const Tensor& x);

// Shape
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // axis 1
Tensor slice_channels(const Tensor& x, long begin, long count);

// Reductions
Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

// Linear algebra / NN
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);  // x[B,I] w[O,I] b[O]
Tensor matmul(const Tensor& a, const Tensor& b);                           // [M,K]x[K,N]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              long stride, long padding);  // in[B,C,H,W] k[O,C,kh,kw]
Tensor conv1d_temporal(const Tensor& input, const Tensor& kernel,
                       const Tensor& bias);  // in[B,C,N,H,W] k[O,C,kt], replicate pad
Tensor group_norm(const Tensor& input, long groups, double eps = 1e-5);
Tensor scale_channels(const Tensor& x, const Tensor& scale);     // scale[C]
Tensor add_bias_channels(const Tensor& x, const Tensor& bias);   // bias[C]
Tensor softmax(const Tensor& x);                                 // last axis
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);  // [B,h,L,d]
Tensor embedding_lookup(const Tensor& table, const std::vector<long>& ids);  // table[V,D]
Tensor repeat_rows(const Tensor& x, long times);                 // [B,C] -> [B*times,C]
Tensor add_bias_spatial(const Tensor& x, const Tensor& bias);    // x[R,C,H,W] + bias[R,C]
Tensor nearest_downsample(const Tensor& x, long factor);  // [B,C,H,W]
Tensor nearest_upsample(const Tensor& x, long factor);

}  // namespace ops

// Backward pass through the active tape; loss must be scalar.
void backward(const Tensor& loss);

}  // namespace vdiff
