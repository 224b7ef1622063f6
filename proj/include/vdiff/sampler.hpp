#pragma once

#include <cstdint>
#include <functional>

#include "vdiff/net.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/schedule.hpp"

namespace vdiff {

struct SamplerConfig {
  long steps = 50;
  double guidance_scale = 7.5;
  AppearancePrior prior;
  std::uint64_t seed = 0;

  void validate() const;
};

// Denoiser hook: model output at (z, x). Lets tests swap the network for
// analytic predictors.
using DenoiseFn = std::function<Tensor(const Tensor& z, double x)>;

// One explicit-Euler update of the reverse ODE
//   dz = -(beta(x)/2) z dx + f_out / (2 sqrt(1 - alpha_bar(x))) * beta(x) dx.
// dx = 0 returns z unchanged bitwise.
Tensor ode_step(const Tensor& z, double x, double dx, const Tensor& f_out,
                const NoiseSchedule& s);

// uncond + scale * (cond - uncond); scale 1 / 0 return the inputs bitwise.
Tensor cfg_combine(const Tensor& uncond, const Tensor& cond, double scale);

// Integrate from x=1 down to x=0 on a uniform grid, evaluating f at the
// pre-step x of each interval.
Tensor ode_integrate(Tensor z, const DenoiseFn& f, long steps, const NoiseSchedule& s);

// Map continuous time to the discrete step index the network embeds.
long discrete_t(double x, long T);

VideoClip sample(const UNet3D& model, const Tensor& z_c, long cond_id,
                 const SamplerConfig& cfg, const NoiseSchedule& schedule);

// Frame-interpolation variant: conditioning and prior mean come from the
// blended endpoint frames instead of a replicated center frame.
VideoClip sample_interp(const UNet3D& model, const Tensor& z_first, const Tensor& z_last,
                        long cond_id, const SamplerConfig& cfg, const NoiseSchedule& schedule);

}  // namespace vdiff
