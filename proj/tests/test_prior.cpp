#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "vdiff/prior.hpp"

using namespace vdiff;

TEST_CASE("make_training_noise reductions") {
  Rng rng(21);
  Tensor eps = Tensor::randn({5, 2, 3, 3}, rng);
  Tensor zc = Tensor::randn({2, 3, 3}, rng);

  Tensor zero_lambda = make_training_noise(eps, zc, 0.0);
  for (long i = 0; i < eps.numel(); ++i) CHECK(zero_lambda.value_at(i) == eps.value_at(i));

  Tensor zero_center = make_training_noise(eps, Tensor::zeros({2, 3, 3}), 0.7);
  for (long i = 0; i < eps.numel(); ++i) CHECK(zero_center.value_at(i) == eps.value_at(i));

  // every frame gets the same shift
  Tensor shifted = make_training_noise(eps, zc, 0.5);
  long per = zc.numel();
  for (long f = 0; f < 5; ++f)
    for (long j = 0; j < per; ++j)
      CHECK(shifted.value_at(f * per + j) ==
            doctest::Approx(eps.value_at(f * per + j) + 0.5 * zc.value_at(j)).epsilon(1e-15));

  CHECK_THROWS_AS(make_training_noise(eps, Tensor::zeros({2, 3, 2}), 0.1),
                  std::invalid_argument);
}

TEST_CASE("make_training_noise Monte Carlo mean is lambda * z_c") {
  const double lambda = 0.03;
  const long draws = 100000;
  Tensor zc = Tensor::from_values({1, 2, 2}, {0.8, -1.2, 0.4, 2.0});
  Rng rng(22);
  std::vector<double> acc(8, 0.0);
  for (long d = 0; d < draws; ++d) {
    Tensor eps = Tensor::randn({2, 1, 2, 2}, rng);
    Tensor out = make_training_noise(eps, zc, lambda);
    for (long i = 0; i < 8; ++i) acc[static_cast<size_t>(i)] += out.value_at(i);
  }
  double se = 1.0 / std::sqrt(static_cast<double>(draws));
  for (long f = 0; f < 2; ++f)
    for (long j = 0; j < 4; ++j)
      CHECK(std::abs(acc[static_cast<size_t>(f * 4 + j)] / draws - lambda * zc.value_at(j)) <
            3 * se);
}

TEST_CASE("q_sample basic identities") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  Rng rng(23);
  Tensor z0 = Tensor::randn({3, 2, 2, 2}, rng);
  Tensor eps = Tensor::randn({3, 2, 2, 2}, rng);

  // t=1: deviation bounded by sqrt(1 - alpha_bar_1)
  Tensor z1 = q_sample(z0, 1, eps, s);
  double bound = std::sqrt(1 - s.alpha_bar_at(1));
  for (long i = 0; i < z0.numel(); ++i)
    CHECK(std::abs(z1.value_at(i) - z0.value_at(i)) <=
          (1 - std::sqrt(s.alpha_bar_at(1))) * std::abs(z0.value_at(i)) +
              bound * std::abs(eps.value_at(i)) + 1e-12);

  CHECK_THROWS_AS(q_sample(z0, 0, eps, s), std::out_of_range);
  CHECK_THROWS_AS(q_sample(z0, 1001, eps, s), std::out_of_range);
  CHECK_THROWS_AS(q_sample(z0, 1, Tensor::zeros({1, 1, 1, 1}), s), std::invalid_argument);
}

TEST_CASE("q_sample moments match the shifted-forward-process identity") {
  // E[z_t] = sqrt(ab) z0 + sqrt(1-ab) lambda z_c ; Var[z_t] = (1 - ab)
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  const long draws = 100000;
  Tensor z0 = Tensor::from_values({3, 1, 2, 2}, {0.5, -0.2, 1.0, -1.0,  //
                                                 0.1, 0.9, -0.6, 0.3,   //
                                                 -0.4, 0.7, 0.2, -0.8});
  Tensor zc = Tensor::from_values({1, 2, 2}, {0.1, 0.9, -0.6, 0.3});  // center frame of z0
  const long n = z0.numel();

  for (long t : {250L, 1000L}) {
    for (double lambda : {0.0, 0.1}) {
      Rng rng(240 + t + static_cast<long>(lambda * 100));
      std::vector<double> sum(static_cast<size_t>(n), 0.0), sum2(static_cast<size_t>(n), 0.0);
      for (long d = 0; d < draws; ++d) {
        Tensor eps_n = Tensor::randn(z0.shape(), rng);
        Tensor eps = make_training_noise(eps_n, zc, lambda);
        Tensor zt = q_sample(z0, t, eps, s);
        for (long i = 0; i < n; ++i) {
          double v = zt.value_at(i);
          sum[static_cast<size_t>(i)] += v;
          sum2[static_cast<size_t>(i)] += v * v;
        }
      }
      double ab = s.alpha_bar_at(t);
      double sa = std::sqrt(ab), sb = std::sqrt(1 - ab);
      double se_mean = sb / std::sqrt(static_cast<double>(draws));
      double se_var = (1 - ab) * std::sqrt(2.0 / static_cast<double>(draws));
      long per = zc.numel();
      for (long i = 0; i < n; ++i) {
        double m = sum[static_cast<size_t>(i)] / draws;
        double v = sum2[static_cast<size_t>(i)] / draws - m * m;
        double want_m = sa * z0.value_at(i) + sb * lambda * zc.value_at(i % per);
        CHECK(std::abs(m - want_m) < 3 * se_mean);
        CHECK(std::abs(v - (1 - ab)) < 5 * se_var);
      }
    }
  }
}

TEST_CASE("prior shifts means but never correlates frames") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  const long draws = 50000;
  Rng rng(25);
  Tensor z0 = Tensor::randn({2, 1, 1, 1}, rng);
  Tensor zc = Tensor::from_values({1, 1, 1}, {1.5});
  double sum0 = 0, sum1 = 0, sum01 = 0;
  for (long d = 0; d < draws; ++d) {
    Tensor eps = make_training_noise(Tensor::randn(z0.shape(), rng), zc, 0.1);
    Tensor zt = q_sample(z0, 500, eps, s);
    double a = zt.value_at(0), b = zt.value_at(1);
    sum0 += a;
    sum1 += b;
    sum01 += a * b;
  }
  double cov = sum01 / draws - (sum0 / draws) * (sum1 / draws);
  double ab = s.alpha_bar_at(500);
  CHECK(std::abs(cov) < 3 * (1 - ab) / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("initial_sampling_noise determinism and reduction") {
  Tensor zc = Tensor::from_values({1, 2, 2}, {0.3, -0.7, 1.1, 0.0});

  Rng a(7), b(7);
  Tensor n1 = initial_sampling_noise(zc, 4, 0.03, 0.02, a);
  Tensor n2 = initial_sampling_noise(zc, 4, 0.03, 0.02, b);
  CHECK(n1.shape() == Shape{4, 1, 2, 2});
  for (long i = 0; i < n1.numel(); ++i) CHECK(n1.value_at(i) == n2.value_at(i));

  // lambda = gamma = 0 consumes the stream exactly like a plain normal draw
  Rng c(9), d(9);
  Tensor plain = Tensor::randn({4, 1, 2, 2}, c);
  Tensor reduced = initial_sampling_noise(zc, 4, 0.0, 0.0, d);
  for (long i = 0; i < plain.numel(); ++i) CHECK(reduced.value_at(i) == plain.value_at(i));
}

TEST_CASE("initial_sampling_noise with zero prior passes a KS normality check") {
  Tensor zc = Tensor::full({1, 10, 10}, 123.0);  // must not leak through at lambda=gamma=0
  Rng rng(26);
  Tensor n = initial_sampling_noise(zc, 1000, 0.0, 0.0, rng);
  const long count = n.numel();
  std::vector<double> xs(static_cast<size_t>(count));
  for (long i = 0; i < count; ++i) xs[static_cast<size_t>(i)] = n.value_at(i);
  std::sort(xs.begin(), xs.end());
  double dstat = 0;
  for (long i = 0; i < count; ++i) {
    double cdf = 0.5 * std::erfc(-xs[static_cast<size_t>(i)] / std::sqrt(2.0));
    dstat = std::max({dstat, std::abs(cdf - static_cast<double>(i + 1) / count),
                      std::abs(cdf - static_cast<double>(i) / count)});
  }
  CHECK(dstat < 1.63 / std::sqrt(static_cast<double>(count)));
}

TEST_CASE("initial_sampling_noise mean tracks (lambda + gamma) z_c") {
  Tensor zc = Tensor::from_values({1, 1, 2}, {2.0, -3.0});
  Rng rng(27);
  const long frames = 50000;
  Tensor n = initial_sampling_noise(zc, frames, 0.03, 0.02, rng);
  double m0 = 0, m1 = 0;
  for (long f = 0; f < frames; ++f) {
    m0 += n.value_at(f * 2);
    m1 += n.value_at(f * 2 + 1);
  }
  double se = 1.0 / std::sqrt(static_cast<double>(frames));
  CHECK(std::abs(m0 / frames - 0.05 * 2.0) < 3 * se);
  CHECK(std::abs(m1 / frames - 0.05 * -3.0) < 3 * se);
}

TEST_CASE("video clip frame access") {
  VideoClip clip;
  clip.latent = Tensor::from_values({3, 1, 1, 2}, {0, 1, 10, 11, 20, 21});
  clip.condition_id = 4;
  CHECK(clip.frames() == 3);
  CHECK(clip.center_index() == 1);
  Tensor c = clip.center_frame();
  CHECK(c.shape() == Shape{1, 1, 2});
  CHECK(c.value_at(0) == 10.0);
  CHECK(c.value_at(1) == 11.0);
  CHECK_THROWS_AS(clip.frame(3), std::out_of_range);
}
