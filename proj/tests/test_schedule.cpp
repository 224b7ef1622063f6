#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vdiff/schedule.hpp"

using namespace vdiff;

TEST_CASE("linear schedule endpoints and shape") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  CHECK(s.T == 1000);
  CHECK(s.beta_at(1) == 0.00085);
  CHECK(s.beta_at(1000) == 0.012);
  CHECK(s.alpha_at(1) == doctest::Approx(1 - 0.00085).epsilon(1e-15));
  CHECK(s.alpha_bar_at(1) == doctest::Approx(1 - 0.00085).epsilon(1e-15));

  NoiseSchedule one = linear_schedule(1, 0.1, 0.1);
  CHECK(one.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("alpha_bar matches a cumulative-product oracle") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  long double prod = 1.0L;
  for (long t = 1; t <= 1000; ++t) {
    double beta = 0.00085 + (0.012 - 0.00085) * static_cast<double>(t - 1) / 999.0;
    prod *= (1.0L - static_cast<long double>(beta));
    CHECK(std::abs(s.alpha_bar_at(t) - static_cast<double>(prod)) <=
          1e-12 * static_cast<double>(prod));
  }
  // monotone, in (0,1)
  for (long t = 2; t <= 1000; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  CHECK(s.alpha_bar_at(1000) > 0.0);
  CHECK(s.alpha_bar_at(1000) < 1.0);
}

TEST_CASE("variance-preserving identity") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  for (long t : {1L, 77L, 500L, 1000L}) {
    double a = std::sqrt(s.alpha_bar_at(t));
    double b = std::sqrt(1 - s.alpha_bar_at(t));
    CHECK(std::abs(a * a + b * b - 1.0) < 1e-12);
  }
}

TEST_CASE("scaled-linear variant differs but shares endpoints") {
  NoiseSchedule lin = linear_schedule(1000, 0.00085, 0.012);
  NoiseSchedule sc = scaled_linear_schedule(1000, 0.00085, 0.012);
  CHECK(sc.beta_at(1) == doctest::Approx(0.00085).epsilon(1e-12));
  CHECK(sc.beta_at(1000) == doctest::Approx(0.012).epsilon(1e-12));
  CHECK(sc.beta_at(500) < lin.beta_at(500));  // sqrt-space ramp grows slower early
  // midpoint value against the direct formula
  double r = std::sqrt(0.00085) + (std::sqrt(0.012) - std::sqrt(0.00085)) * 499.0 / 999.0;
  CHECK(sc.beta_at(500) == doctest::Approx(r * r).epsilon(1e-14));

  CHECK(make_schedule("linear", 10, 0.1, 0.2).T == 10);
  CHECK(make_schedule("scaled-linear", 10, 0.1, 0.2).T == 10);
  CHECK_THROWS(make_schedule("cosine", 10, 0.1, 0.2));
}

TEST_CASE("schedule bounds checking") {
  CHECK_THROWS_AS(linear_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.1, 1.0), std::invalid_argument);
  NoiseSchedule s = linear_schedule(10, 0.1, 0.2);
  CHECK_THROWS_AS(s.beta_at(0), std::out_of_range);
  CHECK_THROWS_AS(s.beta_at(11), std::out_of_range);
  CHECK_THROWS_AS(continuous(s, -0.001), std::out_of_range);
  CHECK_THROWS_AS(continuous(s, 1.001), std::out_of_range);
}

TEST_CASE("continuous interpolant hits every knot exactly") {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  for (long t = 1; t <= 1000; ++t) {
    ContinuousPoint p = continuous(s, static_cast<double>(t) / 1000.0);
    CHECK(p.alpha_bar == s.alpha_bar_at(t));
    CHECK(p.beta == 1000.0 * s.beta_at(t));
  }
  ContinuousPoint origin = continuous(s, 0.0);
  CHECK(origin.alpha_bar == 1.0);
  CHECK(origin.beta == 1000.0 * s.beta_at(1));
}

TEST_CASE("continuous interpolant midpoints are arithmetic means") {
  NoiseSchedule s = linear_schedule(100, 0.001, 0.02);
  for (long t : {0L, 5L, 50L, 99L}) {
    double x = (static_cast<double>(t) + 0.5) / 100.0;
    ContinuousPoint p = continuous(s, x);
    double ab0 = t == 0 ? 1.0 : s.alpha_bar_at(t);
    double ab1 = s.alpha_bar_at(t + 1);
    double b0 = t == 0 ? s.beta_at(1) : s.beta_at(t);
    double b1 = s.beta_at(t + 1);
    CHECK(p.alpha_bar == doctest::Approx((ab0 + ab1) / 2).epsilon(1e-12));
    CHECK(p.beta == doctest::Approx(100.0 * (b0 + b1) / 2).epsilon(1e-12));
  }
}

TEST_CASE("continuous alpha_bar is non-increasing and beta positive") {
  NoiseSchedule s = linear_schedule(50, 0.002, 0.03);
  double prev = continuous(s, 0.0).alpha_bar;
  for (int i = 1; i <= 500; ++i) {
    double x = static_cast<double>(i) / 500.0;
    ContinuousPoint p = continuous(s, x);
    CHECK(p.alpha_bar <= prev);
    CHECK(p.beta > 0.0);
    prev = p.alpha_bar;
  }
}
