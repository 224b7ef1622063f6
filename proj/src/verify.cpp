#include "vdiff/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "vdiff/net.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/sampler.hpp"
#include "vdiff/schedule.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

bool VerifyReport::all_pass() const {
  for (const VerifyCheck& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string VerifyReport::render() const {
  std::ostringstream os;
  for (const VerifyCheck& c : checks) {
    char line[256];
    std::snprintf(line, sizeof(line), "[%s] %-42s measured %11.4e  tol %9.2e", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), c.measured, c.tolerance);
    os << line;
    if (!c.note.empty()) os << "  (" << c.note << ")";
    os << "\n";
  }
  return os.str();
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names = {
      "gradients", "moments", "zeroinit", "shifted-init", "gaussian-ode", "schedule", "all"};
  return names;
}

namespace {

struct DtypeGuard {
  DType saved = default_dtype();
  explicit DtypeGuard(DType want) { set_default_dtype(want); }
  ~DtypeGuard() { set_default_dtype(saved); }
};

void add_check(VerifyReport& rep, const std::string& name, double measured, double tol,
               const std::string& note = "") {
  rep.checks.push_back({name, measured, tol, measured <= tol, note});
}

// ---- gradients --------------------------------------------------------------

using OpFn = std::function<Tensor(std::vector<Tensor>&)>;

double projected_loss(const OpFn& f, std::vector<Tensor>& inputs, const std::vector<double>& w) {
  Tensor out = f(inputs);
  double s = 0.0;
  for (long i = 0; i < out.numel(); ++i) s += w[static_cast<size_t>(i)] * out.value_at(i);
  return s;
}

double fd_max_rel_err(const OpFn& f, std::vector<Tensor> inputs, std::uint64_t seed) {
  Tensor probe = f(inputs);
  Rng rng(seed, 17);
  std::vector<double> w(static_cast<size_t>(probe.numel()));
  for (auto& v : w) v = rng.normal();

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor out = f(inputs);
    Tensor wt = Tensor::from_values(out.shape(), w, out.dtype());
    Tensor loss = ops::sum(ops::mul(out, wt));
    tape.backward(loss);
  }

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& t : inputs) {
    for (long i = 0; i < t.numel(); ++i) {
      double orig = t.value_at(i);
      t.set_value(i, orig + h);
      double lp = projected_loss(f, inputs, w);
      t.set_value(i, orig - h);
      double lm = projected_loss(f, inputs, w);
      t.set_value(i, orig);
      double fd = (lp - lm) / (2.0 * h);
      double ad = t.grad_at(i);
      double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

void gradients_suite(VerifyReport& rep, std::uint64_t seed) {
  DtypeGuard f64(DType::F64);  // the criterion is a 64-bit check
  const double tol = 1e-4;
  Rng rng(seed);
  auto rnd = [&rng](Shape s) { return Tensor::randn(std::move(s), rng); };
  auto primitive = [&](const char* name, const OpFn& f, std::vector<Tensor> inputs) {
    add_check(rep, std::string("gradients/") + name, fd_max_rel_err(f, std::move(inputs), seed),
              tol);
  };

  Tensor a = rnd({3, 4}), b = rnd({3, 4});
  primitive("add", [](auto& in) { return ops::add(in[0], in[1]); }, {a, b});
  primitive("sub", [](auto& in) { return ops::sub(in[0], in[1]); }, {a, b});
  primitive("mul", [](auto& in) { return ops::mul(in[0], in[1]); }, {a, b});
  primitive("scalar_mul", [](auto& in) { return ops::scalar_mul(in[0], -1.7); }, {a});
  primitive("scalar_add", [](auto& in) { return ops::scalar_add(in[0], 0.4); }, {a});
  primitive("silu", [](auto& in) { return ops::silu(in[0]); }, {a});
  primitive("tanh", [](auto& in) { return ops::tanh_op(in[0]); }, {a});
  primitive("sum", [](auto& in) { return ops::sum(in[0]); }, {a});
  primitive("mean", [](auto& in) { return ops::mean(in[0]); }, {a});
  primitive("reshape", [](auto& in) { return ops::reshape(in[0], {4, 3}); }, {a});
  primitive("permute", [](auto& in) { return ops::permute(in[0], {1, 0}); }, {a});

  Tensor c4 = rnd({2, 3, 4, 4}), c4b = rnd({2, 2, 4, 4});
  primitive("concat_channels", [](auto& in) { return ops::concat_channels(in[0], in[1]); },
            {c4, c4b});
  primitive("slice_channels", [](auto& in) { return ops::slice_channels(in[0], 1, 2); }, {c4});
  primitive("nearest_downsample", [](auto& in) { return ops::nearest_downsample(in[0], 2); },
            {c4});
  primitive("nearest_upsample", [](auto& in) { return ops::nearest_upsample(in[0], 2); }, {c4});

  primitive("linear", [](auto& in) { return ops::linear(in[0], in[1], in[2]); },
            {rnd({4, 3}), rnd({2, 3}), rnd({2})});
  primitive("matmul", [](auto& in) { return ops::matmul(in[0], in[1]); },
            {rnd({3, 4}), rnd({4, 2})});
  primitive("conv2d_s1", [](auto& in) { return ops::conv2d(in[0], in[1], in[2], 1, 1); },
            {rnd({2, 2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})});
  primitive("conv2d_s2", [](auto& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); },
            {rnd({2, 2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})});
  primitive("conv1d_temporal", [](auto& in) { return ops::conv1d_temporal(in[0], in[1], in[2]); },
            {rnd({2, 3, 4, 3, 3}), rnd({2, 3, 3}), rnd({2})});
  primitive("group_norm", [](auto& in) { return ops::group_norm(in[0], 2); }, {rnd({2, 4, 5, 5})});
  primitive("scale_channels", [](auto& in) { return ops::scale_channels(in[0], in[1]); },
            {c4, rnd({3})});
  primitive("add_bias_channels", [](auto& in) { return ops::add_bias_channels(in[0], in[1]); },
            {c4, rnd({3})});
  primitive("softmax", [](auto& in) { return ops::softmax(in[0]); }, {rnd({3, 7})});
  primitive("attention", [](auto& in) { return ops::attention(in[0], in[1], in[2]); },
            {rnd({2, 2, 5, 3}), rnd({2, 2, 5, 3}), rnd({2, 2, 5, 3})});
  primitive("embedding_lookup",
            [](auto& in) { return ops::embedding_lookup(in[0], {0, 3, 3, 1}); }, {rnd({5, 4})});
  primitive("repeat_rows", [](auto& in) { return ops::repeat_rows(in[0], 3); }, {rnd({2, 5})});
  primitive("add_bias_spatial", [](auto& in) { return ops::add_bias_spatial(in[0], in[1]); },
            {c4, rnd({2, 3})});

  // composite: a full network forward, probing a spread of parameter elements
  UNetConfig cfg;
  cfg.in_channels = 2;
  cfg.base_channels = 16;
  cfg.channel_multipliers = {1, 2};
  cfg.attention_levels = {1};
  cfg.head_channels = 8;
  cfg.num_frames = 5;
  cfg.norm_groups = 8;
  Rng net_rng(seed + 1);
  UNet3D net(cfg, net_rng);
  Tensor z = rnd({5, 2, 8, 8});
  Tensor zc = rnd({2, 8, 8});
  const long t = 321;
  auto net_loss = [&]() {
    Tensor out = net.forward(z, t, zc, 2);
    return ops::mean(ops::mul(out, out));
  };
  for (Param& p : net.params()) p.value.zero_grad();
  {
    Tape tape;
    tape.backward(net_loss());
  }
  double worst = 0.0;
  auto& params = net.params();
  Rng pick(seed + 2);
  const double h = 1e-5;
  for (int probe = 0; probe < 24; ++probe) {
    size_t pi = static_cast<size_t>(pick.uniform() * static_cast<double>(params.size()));
    pi = std::min(pi, params.size() - 1);
    Tensor& pv = params[pi].value;
    long ei = std::min(static_cast<long>(pick.uniform() * static_cast<double>(pv.numel())),
                       pv.numel() - 1);
    double ad = pv.grad_at(ei);
    double orig = pv.value_at(ei);
    pv.set_value(ei, orig + h);
    double lp = net_loss().value_at(0);
    pv.set_value(ei, orig - h);
    double lm = net_loss().value_at(0);
    pv.set_value(ei, orig);
    double fd = (lp - lm) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)}));
  }
  add_check(rep, "gradients/composite_unet", worst, tol, "24 sampled parameter elements");
}

// ---- moments ----------------------------------------------------------------

void moments_suite(VerifyReport& rep, std::uint64_t seed) {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);
  Rng base(seed);
  Tensor z0 = Tensor::randn({6, 2, 8, 8}, base);
  Tensor zc = Tensor::randn({2, 8, 8}, base);
  Tensor zc_seq = make_cond_sequence(zc, 6);
  const long elems = z0.numel();
  const long reps = (100000 + elems - 1) / elems;  // >= 1e5 pooled draws
  const double n = static_cast<double>(reps * elems);

  long combo = 0;
  for (long t : {1L, 250L, 500L, 1000L}) {
    double ab = s.alpha_bar_at(t);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (double lambda : {0.0, 0.03, 0.1}) {
      Rng rng = base.fork(static_cast<std::uint64_t>(++combo));
      double acc = 0, acc2 = 0;
      for (long r = 0; r < reps; ++r) {
        Tensor eps_n = Tensor::randn(z0.shape(), rng);
        Tensor eps = make_training_noise_seq(eps_n, zc_seq, lambda);
        Tensor zt = q_sample(z0, t, eps, s);
        for (long i = 0; i < elems; ++i) {
          double resid = zt.value_at(i) - sa * z0.value_at(i) - sb * lambda * zc_seq.value_at(i);
          acc += resid;
          acc2 += resid * resid;
        }
      }
      // residual is N(0, 1-ab): pooled z-scores for its mean and variance
      double mean = acc / n;
      double var = acc2 / n - mean * mean;
      double z_mean = std::abs(mean) / (sb / std::sqrt(n));
      double z_var = std::abs(var - (1.0 - ab)) / ((1.0 - ab) * std::sqrt(2.0 / n));
      char label[64];
      std::snprintf(label, sizeof(label), "moments/mean[t=%ld,lambda=%g]", t, lambda);
      add_check(rep, label, z_mean, 3.0, "standard-error units");
      std::snprintf(label, sizeof(label), "moments/var[t=%ld,lambda=%g]", t, lambda);
      add_check(rep, label, z_var, 5.0, "standard-error units");
    }
  }
}

// ---- zeroinit ---------------------------------------------------------------

void zeroinit_suite(VerifyReport& rep, std::uint64_t seed) {
  DtypeGuard f64(DType::F64);
  UNetConfig cfg;
  cfg.in_channels = 2;
  cfg.base_channels = 16;
  cfg.channel_multipliers = {1, 2};
  cfg.attention_levels = {1};
  cfg.head_channels = 8;
  cfg.num_frames = 5;
  cfg.norm_groups = 8;
  for (InjectionMode mode : {InjectionMode::Concat, InjectionMode::AddToDec,
                             InjectionMode::AddToEncDec, InjectionMode::AddToEncDecSpade}) {
    cfg.injection_mode = mode;
    Rng rng(seed);
    UNet3D net(cfg, rng);
    Rng data(seed + 99);
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      Tensor z = Tensor::randn({5, 2, 8, 8}, data);
      Tensor zc = Tensor::randn({2, 8, 8}, data);
      long t = 1 + static_cast<long>(data.uniform() * 999.0);
      Tensor out3d = net.forward(z, t, zc, 1);
      Tensor out2d = net.forward_2d_reference(z, t, zc, 1);
      for (long i = 0; i < out3d.numel(); ++i)
        worst = std::max(worst, std::abs(out3d.value_at(i) - out2d.value_at(i)));
    }
    add_check(rep, std::string("zeroinit/") + injection_mode_name(mode), worst, 1e-6,
              "fresh model, 5 random inputs");
  }
}

// ---- shifted-init -----------------------------------------------------------

void shifted_init_suite(VerifyReport& rep, std::uint64_t seed) {
  // pinned to f64: the two code paths round differently under f32 storage
  DtypeGuard f64(DType::F64);
  UNetConfig cfg;
  cfg.in_channels = 1;
  cfg.base_channels = 4;
  cfg.channel_multipliers = {1, 2};
  cfg.attention_levels = {1};
  cfg.head_channels = 4;
  cfg.num_frames = 3;
  cfg.norm_groups = 2;
  cfg.injection_mode = InjectionMode::AddToDec;
  Rng rng(seed + 5);
  UNet3D net(cfg, rng);
  NoiseSchedule sched = linear_schedule(50, 0.00085, 0.012);
  Rng data(seed + 6);
  Tensor zc = Tensor::randn({1, 4, 4}, data);
  Tensor cond_seq = make_cond_sequence(zc, cfg.num_frames);
  const long cond_id = 1;

  for (double lambda : {0.0, 0.03, 0.1}) {
    for (double gamma : {0.0, 0.02, 0.05}) {
      SamplerConfig sc;
      sc.steps = 5;
      sc.guidance_scale = 1.0;
      sc.prior = {lambda, gamma};
      sc.seed = seed + 77;
      VideoClip via_prior = sample(net, zc, cond_id, sc, sched);

      // same integration with the shift applied by hand to plain noise
      Rng nrng(sc.seed);
      Tensor z = initial_sampling_noise_seq(cond_seq, 0.0, nrng);
      z = ops::add(z, ops::scalar_mul(cond_seq, lambda + gamma));
      DenoiseFn f = [&](const Tensor& zt, double x) {
        return net.forward_with_cond_seq(zt, discrete_t(x, sched.T), cond_seq, cond_id);
      };
      Tensor manual = ode_integrate(z, f, sc.steps, sched);

      double worst = 0;
      for (long i = 0; i < manual.numel(); ++i) {
        double d = std::abs(via_prior.latent.value_at(i) - manual.value_at(i));
        worst = std::max(worst, d);
      }
      char label[64];
      std::snprintf(label, sizeof(label), "shifted-init/lambda=%g,gamma=%g", lambda, gamma);
      rep.checks.push_back({label, worst, 0.0, worst == 0.0, "bitwise"});
    }
  }
}

// ---- gaussian-ode -----------------------------------------------------------

void gaussian_ode_suite(VerifyReport& rep, std::uint64_t seed, long clips) {
  NoiseSchedule sched = linear_schedule(1000, 0.00085, 0.012);
  // the sampler inits from N(0, I) rather than the exact x=1 marginal, which
  // leaves a step-count-independent relative mean offset of about
  // sqrt(alpha_bar_T) * sd ~ 0.8%; sd also cannot go much lower because the
  // Euler variance bias grows like (1/sd^2 - 1) / steps
  const double m = 0.8, sd = 0.2;
  const long clip_elems = 32;
  const long n = clips * clip_elems;

  for (double lambda : {0.0, 0.03}) {
    const double gamma = lambda > 0 ? 0.02 : 0.0;
    Rng rng(seed + 11);
    Tensor zc = Tensor::randn({n}, rng);
    Tensor mu = ops::scalar_mul(zc, lambda);

    // optimal eps-prediction for data N(m, sd^2 I) under the prior-noise
    // convention: f*(z,x) = mu + sqrt(1-ab) (z - sqrt(ab) m - sqrt(1-ab) mu)
    //                      / (ab sd^2 + 1 - ab)
    DenoiseFn oracle = [&](const Tensor& z, double x) {
      double ab = continuous(sched, x).alpha_bar;
      double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      Tensor dev = ops::sub(z, ops::add(Tensor::full(z.shape(), sa * m, z.dtype()),
                                        ops::scalar_mul(mu, sb)));
      return ops::add(mu, ops::scalar_mul(dev, sb / (ab * sd * sd + 1.0 - ab)));
    };

    Rng noise(seed + 13);
    Tensor init = ops::add(Tensor::randn({n}, noise), ops::scalar_mul(zc, lambda + gamma));

    Tensor z200 = ode_integrate(init.clone(), oracle, 200, sched);
    Tensor z400 = ode_integrate(init.clone(), oracle, 400, sched);
    Tensor zref = ode_integrate(init.clone(), oracle, 1600, sched);

    double acc = 0, acc2 = 0, e200 = 0, e400 = 0;
    for (long i = 0; i < n; ++i) {
      double v = z200.value_at(i);
      acc += v;
      acc2 += v * v;
      e200 += std::abs(v - zref.value_at(i));
      e400 += std::abs(z400.value_at(i) - zref.value_at(i));
    }
    double mean = acc / static_cast<double>(n);
    double var = acc2 / static_cast<double>(n) - mean * mean;

    char label[64];
    const char* tag = lambda > 0 ? "with-prior" : "plain";
    std::snprintf(label, sizeof(label), "gaussian-ode/%s/mean", tag);
    add_check(rep, label, std::abs(mean - m) / m, 0.01, "200 steps, relative");
    std::snprintf(label, sizeof(label), "gaussian-ode/%s/var", tag);
    add_check(rep, label, std::abs(var - sd * sd) / (sd * sd), 0.05, "200 steps, relative");
    // first-order convergence, measured against a 1600-step run of the same
    // init so the step-independent init offset cancels out
    std::snprintf(label, sizeof(label), "gaussian-ode/%s/order", tag);
    add_check(rep, label, e400 / std::max(e200, 1e-300), 0.6, "err(400)/err(200) vs 1600-step");
  }
}

// ---- schedule ---------------------------------------------------------------

void schedule_suite(VerifyReport& rep, std::uint64_t) {
  NoiseSchedule s = linear_schedule(1000, 0.00085, 0.012);

  add_check(rep, "schedule/beta_endpoints",
            std::max(std::abs(s.beta_at(1) - 0.00085), std::abs(s.beta_at(1000) - 0.012)), 0.0,
            "bitwise");

  double worst_mono = 0, min_ab = 1e300;
  for (long t = 1; t < s.T; ++t)
    worst_mono = std::max(worst_mono, s.alpha_bar_at(t + 1) - s.alpha_bar_at(t));
  for (long t = 1; t <= s.T; ++t) min_ab = std::min(min_ab, s.alpha_bar_at(t));
  add_check(rep, "schedule/alpha_bar_monotone", worst_mono, 0.0, "max increase");
  add_check(rep, "schedule/alpha_bar_positive", min_ab > 0 ? 0.0 : 1.0, 0.0,
            "min alpha_bar > 0");

  add_check(rep, "schedule/alpha_bar_at_zero", std::abs(continuous(s, 0.0).alpha_bar - 1.0),
            0.0, "pinned to 1");

  double worst_ab = 0, worst_beta = 0;
  for (long t = 1; t <= s.T; ++t) {
    double x = static_cast<double>(t) / static_cast<double>(s.T);
    ContinuousPoint p = continuous(s, x);
    worst_ab = std::max(worst_ab, std::abs(p.alpha_bar - s.alpha_bar_at(t)));
    worst_beta = std::max(worst_beta, std::abs(p.beta - static_cast<double>(s.T) * s.beta_at(t)));
  }
  add_check(rep, "schedule/alpha_bar_nodes", worst_ab, 1e-12, "continuous vs table");
  add_check(rep, "schedule/beta_nodes", worst_beta, 1e-9, "continuous vs T*beta_t");

  NoiseSchedule sl = scaled_linear_schedule(200, 0.00085, 0.012);
  double a = std::sqrt(0.00085), b = std::sqrt(0.012), worst_sl = 0;
  for (long t = 1; t <= sl.T; ++t) {
    double w = static_cast<double>(t - 1) / static_cast<double>(sl.T - 1);
    double want = (a + (b - a) * w) * (a + (b - a) * w);
    worst_sl = std::max(worst_sl, std::abs(sl.beta_at(t) - want));
  }
  add_check(rep, "schedule/scaled_linear_sqrt", worst_sl, 1e-12, "sqrt(beta) linear");
}

}  // namespace

VerifyReport run_verify_suite(const std::string& suite, std::uint64_t seed,
                              long gaussian_ode_clips) {
  bool known = false;
  for (const auto& s : verify_suite_names()) known = known || s == suite;
  if (!known) {
    std::string msg = "unknown verify suite '" + suite + "'; expected one of";
    for (const auto& s : verify_suite_names()) msg += " " + s;
    throw std::invalid_argument(msg);
  }

  VerifyReport rep;
  bool all = suite == "all";
  if (all || suite == "gradients") gradients_suite(rep, seed);
  if (all || suite == "moments") moments_suite(rep, seed);
  if (all || suite == "zeroinit") zeroinit_suite(rep, seed);
  if (all || suite == "shifted-init") shifted_init_suite(rep, seed);
  if (all || suite == "gaussian-ode") gaussian_ode_suite(rep, seed, gaussian_ode_clips);
  if (all || suite == "schedule") schedule_suite(rep, seed);
  return rep;
}

}  // namespace vdiff
