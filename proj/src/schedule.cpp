#include "vdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace vdiff {

namespace {

void check_t(const NoiseSchedule& s, long t) {
  if (t < 1 || t > s.T)
    throw std::out_of_range("schedule: t = " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.T) + "]");
}

NoiseSchedule from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.T = static_cast<long>(betas.size());
  s.betas = std::move(betas);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  long double prod = 1.0L;
  for (size_t i = 0; i < s.betas.size(); ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= static_cast<long double>(s.alphas[i]);
    s.alpha_bars[i] = static_cast<double>(prod);
  }
  return s;
}

void check_bounds(long T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
}

}  // namespace

double NoiseSchedule::beta_at(long t) const {
  check_t(*this, t);
  return betas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(long t) const {
  check_t(*this, t);
  return alphas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(long t) const {
  check_t(*this, t);
  return alpha_bars[static_cast<size_t>(t - 1)];
}

NoiseSchedule linear_schedule(long T, double beta_start, double beta_end) {
  check_bounds(T, beta_start, beta_end);
  std::vector<double> betas(static_cast<size_t>(T));
  for (long t = 0; t < T; ++t)
    betas[static_cast<size_t>(t)] =
        T == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                  static_cast<double>(T - 1);
  return from_betas(std::move(betas));
}

NoiseSchedule scaled_linear_schedule(long T, double beta_start, double beta_end) {
  check_bounds(T, beta_start, beta_end);
  double rs = std::sqrt(beta_start), re = std::sqrt(beta_end);
  std::vector<double> betas(static_cast<size_t>(T));
  for (long t = 0; t < T; ++t) {
    double r = T == 1 ? rs
                      : rs + (re - rs) * static_cast<double>(t) / static_cast<double>(T - 1);
    betas[static_cast<size_t>(t)] = r * r;
  }
  return from_betas(std::move(betas));
}

NoiseSchedule make_schedule(const std::string& kind, long T, double beta_start,
                            double beta_end) {
  if (kind == "linear") return linear_schedule(T, beta_start, beta_end);
  if (kind == "scaled-linear") return scaled_linear_schedule(T, beta_start, beta_end);
  throw std::invalid_argument("schedule: unknown kind `" + kind +
                              "` (want linear | scaled-linear)");
}

ContinuousPoint continuous(const NoiseSchedule& s, double x) {
  if (!(x >= 0.0) || !(x <= 1.0))
    throw std::out_of_range("schedule: x = " + std::to_string(x) + " outside [0, 1]");
  const double Td = static_cast<double>(s.T);
  double u = x * Td;
  double r = std::round(u);
  // Snap to knots so continuous(s, t/T) reproduces the tables exactly even
  // when t/T is not representable.
  if (std::abs(u - r) < 1e-9) u = r;
  long t0 = static_cast<long>(std::floor(u));
  if (t0 >= s.T) t0 = s.T - 1;  // x == 1 lands on the last interval's end
  double frac = u - static_cast<double>(t0);

  // knot t=0 extends the tables: alpha_bar = 1 (no noise), beta = beta_1.
  double ab0 = t0 == 0 ? 1.0 : s.alpha_bars[static_cast<size_t>(t0 - 1)];
  double ab1 = s.alpha_bars[static_cast<size_t>(t0)];
  double b0 = t0 == 0 ? s.betas[0] : s.betas[static_cast<size_t>(t0 - 1)];
  double b1 = s.betas[static_cast<size_t>(t0)];

  ContinuousPoint p;
  if (frac == 0.0) {
    p.alpha_bar = ab0;
    p.beta = Td * b0;
  } else if (frac == 1.0) {
    p.alpha_bar = ab1;
    p.beta = Td * b1;
  } else {
    p.alpha_bar = ab0 + (ab1 - ab0) * frac;
    p.beta = Td * (b0 + (b1 - b0) * frac);
  }
  return p;
}

}  // namespace vdiff
