#pragma once

#include "vdiff/rng.hpp"
#include "vdiff/schedule.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

// Center-frame noise prior: training noise per frame is lambda*z_c + eps_n,
// inference initialization is (lambda+gamma)*z_c + eps_n. lambda = gamma = 0
// reduces everything to the vanilla process bitwise.
struct AppearancePrior {
  double lambda = 0.0;
  double gamma = 0.0;
};

struct VideoClip {
  Tensor latent;  // [N,C,H,W]
  double fps = 2.0;
  long condition_id = 0;

  long frames() const { return latent.dim(0); }
  long center_index() const { return latent.dim(0) / 2; }
  Tensor frame(long i) const;         // [C,H,W] copy
  Tensor center_frame() const { return frame(center_index()); }
};

// eps^i = lambda * z_c + eps_n^i for every frame i.
Tensor make_training_noise(const Tensor& eps_n, const Tensor& z_c, double lambda);

// Same, with a per-frame mean sequence (the frame-interpolation model trains
// against interpolated latents instead of a single replicated center frame).
Tensor make_training_noise_seq(const Tensor& eps_n, const Tensor& mean_seq, double lambda);

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
Tensor q_sample(const Tensor& z0, long t, const Tensor& eps, const NoiseSchedule& s);

// Per frame: (lambda + gamma) * z_c + fresh standard normal draw.
Tensor initial_sampling_noise(const Tensor& z_c, long num_frames, double lambda,
                              double gamma, Rng& rng);
Tensor initial_sampling_noise_seq(const Tensor& mean_seq, double coeff, Rng& rng);

}  // namespace vdiff
