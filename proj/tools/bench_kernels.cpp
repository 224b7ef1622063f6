// Times the OpenMP kernels against the serial reference loops and checks that
// the two produce bitwise identical outputs while at it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vdiff/kernels.hpp"
#include "vdiff/ref_kernels.hpp"
#include "vdiff/rng.hpp"

using namespace vdiff;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> randv(long n, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

double time_us(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::micro>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void report(const char* name, double ref_us, double par_us, double diff) {
  std::printf("%-18s %12.1f %12.1f %9.2fx   %s\n", name, ref_us, par_us, ref_us / par_us,
              diff == 0.0 ? "bitwise" : "DIFFERS");
}

}  // namespace

int main() {
  Rng rng(7);
  std::printf("%-18s %12s %12s %10s   %s\n", "kernel", "serial us", "parallel us", "speedup",
              "match");

  {  // gemm: 192x192x192
    const long m = 192, n = 192, k = 192;
    auto a = randv(m * k, rng), b = randv(k * n, rng);
    std::vector<double> c_ref(m * n), c_par(m * n);
    double ref = time_us([&]() { refkernels::gemm_nn(m, n, k, a.data(), b.data(), c_ref.data()); }, 5);
    double par = time_us(
        [&]() { kernels::gemm_nn(m, n, k, a.data(), b.data(), c_par.data(), false); }, 5);
    report("gemm_nn", ref, par, max_abs_diff(c_ref, c_par));
  }

  {  // conv2d: 4x32 -> 64 @ 32x32, 3x3
    kernels::Conv2dDims d{4, 32, 32, 32, 64, 3, 3, 1, 1, 32, 32};
    auto in = randv(d.batch * d.cin * d.h * d.w, rng);
    auto kr = randv(d.cout * d.cin * d.kh * d.kw, rng);
    auto bias = randv(d.cout, rng);
    std::vector<double> out_ref(d.batch * d.cout * d.ho * d.wo), out_par(out_ref.size());
    double ref = time_us(
        [&]() { refkernels::conv2d_forward(in.data(), kr.data(), bias.data(), out_ref.data(), d); },
        3);
    double par = time_us(
        [&]() { kernels::conv2d_forward(in.data(), kr.data(), bias.data(), out_par.data(), d); },
        3);
    report("conv2d_forward", ref, par, max_abs_diff(out_ref, out_par));
  }

  {  // temporal conv: 2 batches, 32 -> 32 channels, 9 frames, 16x16 spatial
    const long batch = 2, cin = 32, cout = 32, frames = 9, spatial = 256, kt = 3;
    auto in = randv(batch * cin * frames * spatial, rng);
    auto kr = randv(cout * cin * kt, rng);
    auto bias = randv(cout, rng);
    std::vector<double> out_ref(batch * cout * frames * spatial), out_par(out_ref.size());
    double ref = time_us(
        [&]() {
          refkernels::conv1d_temporal_forward(in.data(), kr.data(), bias.data(), out_ref.data(),
                                              batch, cin, cout, frames, spatial, kt);
        },
        3);
    double par = time_us(
        [&]() {
          kernels::conv1d_temporal_forward(in.data(), kr.data(), bias.data(), out_par.data(),
                                           batch, cin, cout, frames, spatial, kt);
        },
        3);
    report("conv1d_temporal", ref, par, max_abs_diff(out_ref, out_par));
  }

  {  // row normalization: 256 rows of 4096
    const long rows = 256, len = 4096;
    auto x = randv(rows * len, rng);
    std::vector<double> y_ref(rows * len), y_par(rows * len);
    std::vector<double> mean(rows), inv_std(rows);
    double ref = time_us(
        [&]() { refkernels::group_norm_forward(x.data(), y_ref.data(), rows, len, 1e-5); }, 10);
    double par = time_us(
        [&]() {
          kernels::rows_normalize_forward(x.data(), y_par.data(), rows, len, 1e-5, mean.data(),
                                          inv_std.data());
        },
        10);
    report("rows_normalize", ref, par, max_abs_diff(y_ref, y_par));
  }

  {  // softmax: 2048 rows of 512
    const long rows = 2048, len = 512;
    auto x = randv(rows * len, rng);
    std::vector<double> y_ref(rows * len), y_par(rows * len);
    double ref =
        time_us([&]() { refkernels::softmax_forward(x.data(), y_ref.data(), rows, len); }, 10);
    double par =
        time_us([&]() { kernels::softmax_forward(x.data(), y_par.data(), rows, len); }, 10);
    report("softmax", ref, par, max_abs_diff(y_ref, y_par));
  }

  {  // attention: 8 heads, 256 tokens, dim 64
    const long bh = 8, len = 256, dim = 64;
    auto q = randv(bh * len * dim, rng), k = randv(bh * len * dim, rng),
         v = randv(bh * len * dim, rng);
    std::vector<double> out_ref(bh * len * dim), out_par(out_ref.size());
    std::vector<double> probs(bh * len * len);
    double ref = time_us(
        [&]() {
          refkernels::attention_forward(q.data(), k.data(), v.data(), out_ref.data(), bh, len, dim);
        },
        3);
    double par = time_us(
        [&]() {
          kernels::attention_forward(q.data(), k.data(), v.data(), out_par.data(), probs.data(),
                                     bh, len, dim);
        },
        3);
    report("attention", ref, par, max_abs_diff(out_ref, out_par));
  }

  return 0;
}
