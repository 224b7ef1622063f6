#include "vdiff/prior.hpp"

#include <cmath>

namespace vdiff {

Tensor VideoClip::frame(long i) const {
  if (i < 0 || i >= frames()) throw std::out_of_range("clip: frame index out of range");
  long per = latent.numel() / frames();
  Shape fshape(latent.shape().begin() + 1, latent.shape().end());
  Tensor out = make_tensor(fshape, latent.dtype());
  for (long j = 0; j < per; ++j) out.set_value(j, latent.value_at(i * per + j));
  return out;
}

namespace {

void check_frame_shape(const char* op, const Tensor& seq, const Tensor& frame) {
  bool ok = seq.ndim() == frame.ndim() + 1;
  for (int i = 1; ok && i < seq.ndim(); ++i) ok = seq.dim(i) == frame.dim(i - 1);
  if (!ok)
    shape_error(op, "sequence " + shape_str(seq.shape()) + " vs frame " +
                        shape_str(frame.shape()));
}

}  // namespace

Tensor make_training_noise(const Tensor& eps_n, const Tensor& z_c, double lambda) {
  check_frame_shape("make_training_noise", eps_n, z_c);
  check_same_dtype("make_training_noise", eps_n, z_c);
  long n = eps_n.dim(0);
  long per = eps_n.numel() / n;
  Tensor out = make_tensor(eps_n.shape(), eps_n.dtype());
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < per; ++j)
      out.set_value(i * per + j, lambda * z_c.value_at(j) + eps_n.value_at(i * per + j));
  return out;
}

Tensor make_training_noise_seq(const Tensor& eps_n, const Tensor& mean_seq, double lambda) {
  if (!eps_n.same_shape(mean_seq))
    shape_error("make_training_noise_seq", shape_str(eps_n.shape()) + " vs " +
                                               shape_str(mean_seq.shape()));
  check_same_dtype("make_training_noise_seq", eps_n, mean_seq);
  Tensor out = make_tensor(eps_n.shape(), eps_n.dtype());
  for (long i = 0; i < eps_n.numel(); ++i)
    out.set_value(i, lambda * mean_seq.value_at(i) + eps_n.value_at(i));
  return out;
}

Tensor q_sample(const Tensor& z0, long t, const Tensor& eps, const NoiseSchedule& s) {
  if (!z0.same_shape(eps))
    shape_error("q_sample", shape_str(z0.shape()) + " vs " + shape_str(eps.shape()));
  check_same_dtype("q_sample", z0, eps);
  double ab = s.alpha_bar_at(t);  // range-checks t
  double a = std::sqrt(ab);
  double b = std::sqrt(1.0 - ab);
  Tensor out = make_tensor(z0.shape(), z0.dtype());
  for (long i = 0; i < z0.numel(); ++i)
    out.set_value(i, a * z0.value_at(i) + b * eps.value_at(i));
  return out;
}

Tensor initial_sampling_noise_seq(const Tensor& mean_seq, double coeff, Rng& rng) {
  Tensor out = make_tensor(mean_seq.shape(), mean_seq.dtype());
  for (long i = 0; i < mean_seq.numel(); ++i)
    out.set_value(i, coeff * mean_seq.value_at(i) + rng.normal());
  return out;
}

Tensor initial_sampling_noise(const Tensor& z_c, long num_frames, double lambda,
                              double gamma, Rng& rng) {
  if (num_frames < 1) shape_error("initial_sampling_noise", "num_frames must be >= 1");
  Shape seq_shape;
  seq_shape.push_back(num_frames);
  for (long d : z_c.shape()) seq_shape.push_back(d);
  long per = z_c.numel();
  Tensor mean_seq = make_tensor(seq_shape, z_c.dtype());
  for (long i = 0; i < num_frames; ++i)
    for (long j = 0; j < per; ++j) mean_seq.set_value(i * per + j, z_c.value_at(j));
  return initial_sampling_noise_seq(mean_seq, lambda + gamma, rng);
}

}  // namespace vdiff
