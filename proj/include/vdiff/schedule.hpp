#pragma once

#include <string>
#include <vector>

namespace vdiff {

// Discrete DDPM noise schedule plus the continuous-time interpolants the
// reverse ODE integrates against. Discrete tables are 1-based in t (t=1..T);
// the continuous view uses x = t/T in [0,1] with alpha_bar(0) pinned to 1.
struct NoiseSchedule {
  long T = 0;
  std::vector<double> betas;       // betas[t-1] = beta_t
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s

  double beta_at(long t) const;       // t in [1, T]
  double alpha_at(long t) const;
  double alpha_bar_at(long t) const;
};

// beta_t linear from beta_start (t=1) to beta_end (t=T).
NoiseSchedule linear_schedule(long T, double beta_start, double beta_end);

// sqrt(beta_t) linear from sqrt(beta_start) to sqrt(beta_end) — the common
// latent-diffusion convention, kept selectable for comparison against the
// plain linear default.
NoiseSchedule scaled_linear_schedule(long T, double beta_start, double beta_end);

NoiseSchedule make_schedule(const std::string& kind, long T, double beta_start,
                            double beta_end);

struct ContinuousPoint {
  double alpha_bar;  // monotone piecewise-linear interpolation of alpha_bar_t
  double beta;       // T * beta_t, interpolated likewise
};

// x in [0,1]; values at x = t/T match the discrete tables exactly.
ContinuousPoint continuous(const NoiseSchedule& s, double x);

}  // namespace vdiff
