#include "vdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vdiff {

void SamplerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (guidance_scale < 0) throw std::invalid_argument("sampler: guidance_scale must be >= 0");
}

Tensor ode_step(const Tensor& z, double x, double dx, const Tensor& f_out,
                const NoiseSchedule& s) {
  if (!z.same_shape(f_out))
    shape_error("ode_step", shape_str(z.shape()) + " vs " + shape_str(f_out.shape()));
  if (!(x > 0.0) || x > 1.0)
    throw std::out_of_range("ode_step: x must be in (0, 1], got " + std::to_string(x));
  ContinuousPoint p = continuous(s, x);
  double one_minus = 1.0 - p.alpha_bar;
  if (one_minus <= 0.0)
    throw std::domain_error("ode_step: alpha_bar(x) = 1 at x = " + std::to_string(x));
  double drift = -0.5 * p.beta * dx;
  double gain = 0.5 * p.beta * dx / std::sqrt(one_minus);
  return ops::add(z, ops::add(ops::scalar_mul(z, drift), ops::scalar_mul(f_out, gain)));
}

Tensor cfg_combine(const Tensor& uncond, const Tensor& cond, double scale) {
  if (!uncond.same_shape(cond))
    shape_error("cfg_combine", shape_str(uncond.shape()) + " vs " + shape_str(cond.shape()));
  if (scale == 1.0) return cond;
  if (scale == 0.0) return uncond;
  return ops::add(uncond, ops::scalar_mul(ops::sub(cond, uncond), scale));
}

Tensor ode_integrate(Tensor z, const DenoiseFn& f, long steps, const NoiseSchedule& s) {
  if (steps < 1) throw std::invalid_argument("ode_integrate: steps must be >= 1");
  double dx = -1.0 / static_cast<double>(steps);
  for (long i = 0; i < steps; ++i) {
    double x = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
    z = ode_step(z, x, dx, f(z, x), s);
  }
  return z;
}

long discrete_t(double x, long T) {
  return std::clamp(std::lround(x * static_cast<double>(T)), 1L, T);
}

namespace {

VideoClip run(const UNet3D& model, const Tensor& cond_seq, const Tensor& mean_seq, long cond_id,
              const SamplerConfig& cfg, const NoiseSchedule& schedule) {
  cfg.validate();
  Rng rng(cfg.seed);
  Tensor z = initial_sampling_noise_seq(mean_seq, cfg.prior.lambda + cfg.prior.gamma, rng);
  long null_id = model.config().null_cond_id();
  DenoiseFn fn = [&](const Tensor& zt, double x) {
    long t = discrete_t(x, schedule.T);
    Tensor cond = model.forward_with_cond_seq(zt, t, cond_seq, cond_id);
    if (cfg.guidance_scale == 1.0) return cond;
    Tensor unc = model.forward_with_cond_seq(zt, t, cond_seq, null_id);
    return cfg_combine(unc, cond, cfg.guidance_scale);
  };
  VideoClip clip;
  clip.latent = ode_integrate(z, fn, cfg.steps, schedule);
  clip.condition_id = cond_id;
  return clip;
}

}  // namespace

VideoClip sample(const UNet3D& model, const Tensor& z_c, long cond_id, const SamplerConfig& cfg,
                 const NoiseSchedule& schedule) {
  Tensor cond_seq = make_cond_sequence(z_c, model.config().num_frames);
  return run(model, cond_seq, cond_seq, cond_id, cfg, schedule);
}

VideoClip sample_interp(const UNet3D& model, const Tensor& z_first, const Tensor& z_last,
                        long cond_id, const SamplerConfig& cfg, const NoiseSchedule& schedule) {
  Tensor cond_seq = make_interp_cond_sequence(z_first, z_last, model.config().num_frames);
  VideoClip clip = run(model, cond_seq, cond_seq, cond_id, cfg, schedule);
  clip.fps = 8.0;
  return clip;
}

}  // namespace vdiff
