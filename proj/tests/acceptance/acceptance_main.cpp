// Acceptance gate: one pass/fail line per shipping criterion, run end to end
// against the real library. The slow part is criterion 7 (nine short training
// runs); everything else finishes in seconds. Artifacts land in a scratch
// directory and are reused across invocations where that is safe.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/eval.hpp"
#include "vdiff/net.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/sampler.hpp"
#include "vdiff/sprites.hpp"
#include "vdiff/train.hpp"
#include "vdiff/verify.hpp"

namespace fs = std::filesystem;
using namespace vdiff;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kSeed = 123;

struct Result {
  int id = 0;
  bool pass = false;
  std::string text;
  double secs = 0;
};

std::vector<Result> g_results;

void note(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  std::fputs("  .. ", stderr);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
  va_end(ap);
}

struct Timer {
  Clock::time_point t0 = Clock::now();
  double secs() const { return std::chrono::duration<double>(Clock::now() - t0).count(); }
};

struct DtypeGuard {
  DType saved = default_dtype();
  explicit DtypeGuard(DType want) { set_default_dtype(want); }
  ~DtypeGuard() { set_default_dtype(saved); }
};

double worst_measured(const VerifyReport& rep) {
  double w = 0;
  for (const auto& c : rep.checks) w = std::max(w, c.measured);
  return w;
}

double mse(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (long i = 0; i < a.numel(); ++i) {
    double d = a.value_at(i) - b.value_at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

fs::path scratch() {
  static fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "vdiff_acceptance";
    fs::create_directories(d);
    return d;
  }();
  return p;
}

// ---- shared training helper (criteria 7 and 8) ------------------------------

std::string ablation_train_cfg(const std::string& mode, double lambda, bool tsr) {
  std::string s =
      "in_channels = 1\nbase_channels = 8\nchannel_multipliers = 1, 2\n"
      "attention_levels = 1\nhead_channels = 4\nnum_frames = 9\nnorm_groups = 4\n"
      "injection_mode = " + mode + "\n" +
      "steps = 5000\nbatch_size = 1\nlr_temporal = 2e-4\n" +
      "prior_lambda = " + std::to_string(lambda) + "\n";
  if (tsr) s += "mode = tsr\n";
  return s;
}

void train_to_checkpoint(const std::string& cfg_text, std::uint64_t seed,
                         const std::vector<VideoClip>& data, const fs::path& ck_path) {
  Config cfg = Config::parse_string(cfg_text, "<acceptance>");
  TrainConfig tc = TrainConfig::from_config(cfg);
  ScheduleSpec spec = ScheduleSpec::from_config(cfg);
  UNetConfig nc = UNetConfig::from_config(cfg);
  cfg.check_all_consumed();
  tc.seed = seed;
  Rng init_rng(seed, 99);
  UNet3D model(nc, init_rng);
  Trainer trainer(model, tc, spec, data);
  while (trainer.step() < tc.steps) trainer.train_step();
  save_checkpoint(ck_path.string(), trainer.snapshot());
}

const std::vector<VideoClip>& ablation_dataset() {
  static std::vector<VideoClip> data = [] {
    DtypeGuard f32(DType::F32);
    SpriteDatasetConfig sc;
    sc.resolution = 16;
    sc.channels = 1;
    sc.frames = 9;
    sc.clips_per_class = 64;  // big enough that 5k steps can't memorize it
    sc.seed = 100;
    std::vector<VideoClip> clips = synth_dataset(sc);
    write_dataset((scratch() / "abl_ds").string(), clips);
    return clips;
  }();
  return data;
}

double eval_frechet(const fs::path& ck_path, double lambda) {
  EvalConfig ec;
  ec.clips_per_class = 8;
  ec.steps = 25;
  ec.guidance_scale = 1.0;
  ec.prior_lambda = lambda;
  ec.prior_gamma = lambda > 0 ? 0.02 : 0.0;
  ec.dump_frames = 0;
  ec.seed = 555;
  std::string report = eval_run(ck_path.string(), (scratch() / "abl_ds").string(),
                                (scratch() / "abl_eval").string(), ec);
  size_t pos = report.find("frechet = ");
  if (pos == std::string::npos) throw std::runtime_error("eval report missing frechet line");
  return std::stod(report.substr(pos + 10));
}

fs::path ablation_checkpoint(const std::string& mode, double lambda, std::uint64_t seed) {
  char name[96];
  std::snprintf(name, sizeof(name), "ck_%s_%g_s%llu.bin", mode.c_str(), lambda,
                static_cast<unsigned long long>(seed));
  fs::path ck = scratch() / name;
  if (!fs::exists(ck)) {
    Timer t;
    note("training %s lambda=%g seed=%llu", mode.c_str(), lambda,
         static_cast<unsigned long long>(seed));
    train_to_checkpoint(ablation_train_cfg(mode, lambda, false), seed, ablation_dataset(), ck);
    note("done in %.0fs", t.secs());
  } else {
    note("reusing %s", ck.string().c_str());
  }
  return ck;
}

// ---- criteria ---------------------------------------------------------------

void c1_gradients() {
  Timer t;
  VerifyReport rep = run_verify_suite("gradients", kSeed);
  double secs = t.secs();
  bool pass = rep.all_pass() && secs < 120;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "autodiff vs central differences: max rel err %.2e (tol 1e-4, 64-bit), %.1fs "
                "(budget 120s)",
                worst_measured(rep), secs);
  g_results.push_back({1, pass, buf, secs});
}

void c2_moments() {
  Timer t;
  VerifyReport rep = run_verify_suite("moments", kSeed);
  double secs = t.secs();
  bool pass = rep.all_pass() && secs < 60;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "q_sample moments on the t x lambda grid: worst z %.2f (mean tol 3, var tol 5), "
                "%.1fs (budget 60s)",
                worst_measured(rep), secs);
  g_results.push_back({2, pass, buf, secs});
}

void c3_zeroinit() {
  Timer t;
  VerifyReport rep = run_verify_suite("zeroinit", kSeed);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "fresh 3d model equals per-frame 2d reference: max abs diff %.2e (tol 1e-6, 20 "
                "inputs, 4 injection modes)",
                worst_measured(rep));
  g_results.push_back({3, rep.all_pass(), buf, t.secs()});
}

void c4_spade_reduction() {
  Timer t;
  DtypeGuard f64(DType::F64);
  Rng rng(kSeed);
  Tensor h = Tensor::randn({5, 8, 6, 6}, rng);
  Tensor fa = Tensor::randn({5, 4, 6, 6}, rng);
  Tensor gw = Tensor::zeros({8, 4, 3, 3}), gb = Tensor::zeros({8});
  Tensor bw = Tensor::zeros({8, 4, 3, 3}), bb = Tensor::zeros({8});
  Tensor got = spade_inject(h, fa, 4, gw, gb, bw, bb);
  Tensor want = ops::group_norm(h, 4);
  double worst = 0;
  for (long i = 0; i < got.numel(); ++i)
    worst = std::max(worst, std::abs(got.value_at(i) - want.value_at(i)));
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "zero-init spade equals plain group norm: max abs diff %.2e (tol 1e-12)", worst);
  g_results.push_back({4, worst <= 1e-12, buf, t.secs()});
}

void c5_shifted_init() {
  Timer t;
  VerifyReport rep = run_verify_suite("shifted-init", kSeed);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "prior-shifted init equals hand-shifted integration: max abs diff %.2e (bitwise, "
                "3x3 lambda/gamma grid)",
                worst_measured(rep));
  g_results.push_back({5, rep.all_pass(), buf, t.secs()});
}

void c6_gaussian_ode() {
  Timer t;
  VerifyReport rep = run_verify_suite("gaussian-ode", kSeed, 10000);
  double secs = t.secs();
  bool pass = rep.all_pass() && secs < 300;
  double mean_err = 0, var_err = 0, order = 0;
  for (const auto& c : rep.checks) {
    if (c.name.find("/mean") != std::string::npos) mean_err = std::max(mean_err, c.measured);
    if (c.name.find("/var") != std::string::npos) var_err = std::max(var_err, c.measured);
    if (c.name.find("/order") != std::string::npos) order = std::max(order, c.measured);
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "analytic-gaussian ode: mean err %.2f%% (tol 1%%), var err %.2f%% (tol 5%%), "
                "err(400)/err(200) %.2f (tol 0.6), %.0fs (budget 300s)",
                mean_err * 100, var_err * 100, order, secs);
  g_results.push_back({6, pass, buf, secs});
}

void c7_ablation() {
  Timer t;
  DtypeGuard f32(DType::F32);
  ablation_dataset();  // eval_run reads it from disk even when checkpoints are cached
  int wins_lambda = 0, wins_mode = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    double fr_prior = eval_frechet(ablation_checkpoint("add-encdec-spade", 0.03, seed), 0.03);
    double fr_plain = eval_frechet(ablation_checkpoint("add-encdec-spade", 0.0, seed), 0.0);
    double fr_adddec = eval_frechet(ablation_checkpoint("add-dec", 0.03, seed), 0.03);
    note("seed %llu frechet: spade+prior %.3f, spade %.3f, add-dec+prior %.3f",
         static_cast<unsigned long long>(seed), fr_prior, fr_plain, fr_adddec);
    if (fr_prior < fr_plain) ++wins_lambda;
    if (fr_prior <= fr_adddec) ++wins_mode;
  }
  double secs = t.secs();
  bool pass = wins_lambda >= 2 && wins_mode >= 2 && secs <= 7200;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "directional ablation: prior beats no-prior %d/3 seeds (need 2), spade <= add-dec "
                "%d/3 seeds (need 2), %.0fs (budget 7200s)",
                wins_lambda, wins_mode, secs);
  g_results.push_back({7, pass, buf, secs});
}

void c8_tsr_endpoints() {
  Timer t;
  DtypeGuard f32(DType::F32);
  const std::vector<VideoClip>& data = ablation_dataset();

  fs::path base_ck = ablation_checkpoint("add-encdec-spade", 0.03, 1);
  fs::path tsr_ck = scratch() / "ck_tsr.bin";
  if (!fs::exists(tsr_ck)) {
    Timer tt;
    note("training frame-interpolation model");
    train_to_checkpoint(ablation_train_cfg("add-encdec-spade", 0.03, true), 1, data, tsr_ck);
    note("done in %.0fs", tt.secs());
  }

  const VideoClip& clip = data[1];
  SamplerConfig sc;
  sc.steps = 25;
  sc.guidance_scale = 1.0;
  sc.prior = {0.03, 0.02};
  sc.seed = kSeed;

  Checkpoint bck = load_checkpoint(base_ck.string());
  std::unique_ptr<UNet3D> base = model_from_checkpoint(bck);
  VideoClip base_gen = sample(*base, clip.center_frame(), clip.condition_id, sc,
                              bck.schedule.build());
  double mse_center = mse(base_gen.frame(base_gen.center_index()), clip.center_frame());

  Checkpoint tck = load_checkpoint(tsr_ck.string());
  std::unique_ptr<UNet3D> tsr = model_from_checkpoint(tck);
  VideoClip tsr_gen = sample_interp(*tsr, clip.frame(0), clip.frame(clip.frames() - 1),
                                    tsr->config().null_cond_id(), sc, tck.schedule.build());
  double mse_ends = 0.5 * (mse(tsr_gen.frame(0), clip.frame(0)) +
                           mse(tsr_gen.frame(tsr_gen.frames() - 1), clip.frame(clip.frames() - 1)));

  bool pass = mse_ends <= 10.0 * mse_center;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "interpolation endpoint fidelity: endpoint mse %.4f vs 10x base center mse %.4f",
                mse_ends, 10.0 * mse_center);
  g_results.push_back({8, pass, buf, t.secs()});
}

void c9_frechet_sanity() {
  Timer t;
  FeatureStats a, b;
  a.mean = {1.5};
  a.cov = {{4.0}};
  b.mean = {-0.5};
  b.cov = {{9.0}};
  double d1_err = std::abs(frechet_distance(a, b) - 5.0);

  SpriteDatasetConfig sc;
  sc.clips_per_class = 64;
  sc.seed = 5;
  std::vector<VideoClip> clips = synth_dataset(sc);
  auto class_half = [&](long cls, int parity) {
    std::vector<VideoClip> out;
    int k = 0;
    for (const auto& c : clips)
      if (c.condition_id == cls && (k++ % 2) == parity) out.push_back(c);
    return out;
  };
  const std::uint64_t fseed = 99;
  double real = 0, shuffled = 0;
  for (long cls = 0; cls < kNumSpriteClasses; ++cls) {
    FeatureStats even = featurize(class_half(cls, 0), fseed);
    FeatureStats odd = featurize(class_half(cls, 1), fseed);
    FeatureStats wrong = featurize(class_half((cls + 1) % kNumSpriteClasses, 1), fseed);
    real += frechet_distance(even, odd);
    shuffled += frechet_distance(even, wrong);
  }
  bool pass = d1_err <= 1e-10 && real <= 0.1 * shuffled;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "frechet sanity: real-vs-real %.3f <= 0.1 x shuffled %.3f, d=1 closed form err "
                "%.1e (tol 1e-10)",
                real, shuffled, d1_err);
  g_results.push_back({9, pass, buf, t.secs()});
}

void c10_reproducibility() {
  Timer t;
  DtypeGuard f64(DType::F64);
  SpriteDatasetConfig sc;
  sc.resolution = 16;
  sc.channels = 2;
  sc.frames = 5;
  sc.clips_per_class = 2;
  sc.seed = 7;
  std::vector<VideoClip> data = synth_dataset(sc);

  std::string cfg_text =
      "in_channels = 2\nbase_channels = 8\nchannel_multipliers = 1, 2\n"
      "attention_levels = 1\nhead_channels = 4\nnum_frames = 5\nnorm_groups = 4\n"
      "injection_mode = add-encdec-spade\nsteps = 10\nbatch_size = 2\nlr_temporal = 2e-5\n";
  auto build = [&]() {
    Config cfg = Config::parse_string(cfg_text, "<acceptance>");
    TrainConfig tc = TrainConfig::from_config(cfg);
    ScheduleSpec spec = ScheduleSpec::from_config(cfg);
    UNetConfig nc = UNetConfig::from_config(cfg);
    cfg.check_all_consumed();
    tc.seed = 3;
    return std::tuple<TrainConfig, ScheduleSpec, UNetConfig>(tc, spec, nc);
  };

  // uninterrupted 10 steps
  auto [tc, spec, nc] = build();
  Rng init_a(3, 99);
  UNet3D model_a(nc, init_a);
  Trainer trainer_a(model_a, tc, spec, data);
  std::vector<double> losses_a;
  while (trainer_a.step() < 10) losses_a.push_back(trainer_a.train_step());

  // 5 steps, checkpoint to disk, reload, 5 more
  Rng init_b(3, 99);
  UNet3D model_b(nc, init_b);
  fs::path ck_path = scratch() / "repro_ck.bin";
  std::vector<double> losses_b;
  {
    Trainer trainer_b(model_b, tc, spec, data);
    while (trainer_b.step() < 5) losses_b.push_back(trainer_b.train_step());
    save_checkpoint(ck_path.string(), trainer_b.snapshot());
  }
  Checkpoint ck = load_checkpoint(ck_path.string());
  std::unique_ptr<UNet3D> model_c = model_from_checkpoint(ck);
  Trainer trainer_c(*model_c, tc, spec, data);
  trainer_c.restore(ck);
  while (trainer_c.step() < 10) losses_b.push_back(trainer_c.train_step());

  bool losses_equal = losses_a == losses_b;
  bool params_equal = true;
  auto& pa = model_a.params();
  auto& pc = model_c->params();
  for (size_t i = 0; i < pa.size(); ++i)
    for (long j = 0; j < pa[i].value.numel(); ++j)
      params_equal = params_equal && pa[i].value.value_at(j) == pc[i].value.value_at(j);

  // fixed-seed sampling is bitwise stable
  SamplerConfig smp;
  smp.steps = 5;
  smp.guidance_scale = 1.5;
  smp.prior = {0.03, 0.02};
  smp.seed = 17;
  NoiseSchedule sched = spec.build();
  VideoClip s1 = sample(model_a, data[0].center_frame(), data[0].condition_id, smp, sched);
  VideoClip s2 = sample(model_a, data[0].center_frame(), data[0].condition_id, smp, sched);
  bool sample_equal = true;
  for (long i = 0; i < s1.latent.numel(); ++i)
    sample_equal = sample_equal && s1.latent.value_at(i) == s2.latent.value_at(i);

  bool pass = losses_equal && params_equal && sample_equal;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "reproducibility: resumed training bitwise over 10 steps (losses %s, params %s), "
                "fixed-seed sampling bitwise (%s)",
                losses_equal ? "equal" : "DIFFER", params_equal ? "equal" : "DIFFER",
                sample_equal ? "equal" : "DIFFER");
  g_results.push_back({10, pass, buf, t.secs()});
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      for (const char* p = argv[++i]; *p;) {
        only.insert(static_cast<int>(std::strtol(p, const_cast<char**>(&p), 10)));
        if (*p == ',') ++p;
      }
    } else {
      std::fprintf(stderr, "usage: vdiff_acceptance [--only 1,2,...]\n");
      return 2;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };

  Timer total;
  if (want(1)) c1_gradients();
  if (want(2)) c2_moments();
  if (want(3)) c3_zeroinit();
  if (want(4)) c4_spade_reduction();
  if (want(5)) c5_shifted_init();
  if (want(6)) c6_gaussian_ode();
  if (want(9)) c9_frechet_sanity();
  if (want(10)) c10_reproducibility();
  if (want(7)) c7_ablation();
  if (want(8)) c8_tsr_endpoints();

  std::sort(g_results.begin(), g_results.end(),
            [](const Result& a, const Result& b) { return a.id < b.id; });
  size_t passed = 0;
  for (const Result& r : g_results) {
    std::printf("[%2d] %s  %s\n", r.id, r.pass ? "PASS" : "FAIL", r.text.c_str());
    passed += r.pass ? 1 : 0;
  }
  std::printf("acceptance: %zu/%zu criteria passed in %.0fs\n", passed, g_results.size(),
              total.secs());
  return passed == g_results.size() ? 0 : 1;
}
