// Command-line front end: dataset synthesis, training, sampling, frame
// interpolation, evaluation, and the self-check suites.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/eval.hpp"
#include "vdiff/net.hpp"
#include "vdiff/ppm.hpp"
#include "vdiff/atns.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/sampler.hpp"
#include "vdiff/sprites.hpp"
#include "vdiff/train.hpp"
#include "vdiff/verify.hpp"

namespace fs = std::filesystem;
using namespace vdiff;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  std::string precision = "f64";
  std::string config_path;

  Config load_config() const {
    if (config_path.empty()) return Config::parse_string("", "<none>");
    return Config::parse_file(config_path);
  }
};

void write_frames(const fs::path& dir, const VideoClip& clip) {
  fs::create_directories(dir);
  for (long f = 0; f < clip.frames(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02ld.ppm", f);
    save_ppm((dir / name).string(), clip.frame(f));
  }
  // exact latent alongside the quantized previews
  save_atns((dir / "latent.atns").string(), clip.latent);
}

VideoClip load_clip(const std::string& data_dir, long index) {
  std::vector<VideoClip> clips = load_dataset(data_dir);
  if (index < 0 || index >= static_cast<long>(clips.size()))
    throw std::out_of_range("clip index " + std::to_string(index) + " out of range (dataset has " +
                            std::to_string(clips.size()) + " clips)");
  return clips[static_cast<size_t>(index)];
}

int cmd_make_data(const GlobalOpts& g, const std::string& out_dir) {
  Config cfg = g.load_config();
  SpriteDatasetConfig sc = SpriteDatasetConfig::from_config(cfg);
  cfg.check_all_consumed();
  if (g.seed) sc.seed = *g.seed;
  std::vector<VideoClip> clips = synth_dataset(sc);
  write_dataset(out_dir, clips);
  std::printf("wrote %zu clips (%ldx%ld, %ld frames) to %s\n", clips.size(), sc.resolution,
              sc.resolution, sc.frames, out_dir.c_str());
  return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir, const std::string& out_path,
              const std::string& resume_path, long save_every, long log_every) {
  Config cfg = g.load_config();
  TrainConfig tc = TrainConfig::from_config(cfg);
  ScheduleSpec spec = ScheduleSpec::from_config(cfg);
  UNetConfig net_cfg = UNetConfig::from_config(cfg);
  cfg.check_all_consumed();
  if (g.seed) tc.seed = *g.seed;

  std::vector<VideoClip> data = load_dataset(data_dir);
  std::unique_ptr<UNet3D> model;
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    model = model_from_checkpoint(*resume);
  } else {
    Rng init_rng(tc.seed, 99);
    model = std::make_unique<UNet3D>(net_cfg, init_rng);
  }

  Trainer trainer(*model, tc, spec, std::move(data));
  if (resume) trainer.restore(*resume);

  auto save = [&]() {
    save_checkpoint(out_path, trainer.snapshot());
    std::printf("step %ld: saved %s\n", trainer.step(), out_path.c_str());
  };
  while (trainer.step() < tc.steps) {
    double loss = trainer.train_step();
    if (log_every > 0 && trainer.step() % log_every == 0)
      std::printf("step %ld loss %.17g\n", trainer.step(), loss);
    if (save_every > 0 && trainer.step() % save_every == 0 && trainer.step() < tc.steps) save();
  }
  save();
  return 0;
}

int cmd_sample(const GlobalOpts& g, const std::string& ckpt, const std::string& data_dir,
               long clip_index, long cond_override, SamplerConfig sc, double lambda_flag,
               const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(ckpt);
  std::unique_ptr<UNet3D> model = model_from_checkpoint(ck);
  NoiseSchedule sched = ck.schedule.build();

  VideoClip src = load_clip(data_dir, clip_index);
  sc.prior.lambda = lambda_flag < 0 ? ck.prior_lambda : lambda_flag;
  if (g.seed) sc.seed = *g.seed;
  long cond = cond_override >= 0 ? cond_override : src.condition_id;

  VideoClip out = sample(*model, src.center_frame(), cond, sc, sched);
  write_frames(out_dir, out);
  std::printf("sampled %ld frames (cond %ld, %ld steps, cfg %g, lambda %g, gamma %g) to %s\n",
              out.frames(), cond, sc.steps, sc.guidance_scale, sc.prior.lambda, sc.prior.gamma,
              out_dir.c_str());
  return 0;
}

int cmd_interpolate(const GlobalOpts& g, const std::string& ckpt, const std::string& data_dir,
                    long clip_index, long last_clip, long cond_override, SamplerConfig sc,
                    double lambda_flag, const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(ckpt);
  std::unique_ptr<UNet3D> model = model_from_checkpoint(ck);
  NoiseSchedule sched = ck.schedule.build();

  VideoClip first_src = load_clip(data_dir, clip_index);
  VideoClip last_src = last_clip >= 0 ? load_clip(data_dir, last_clip) : first_src;
  Tensor z_first = first_src.frame(0);
  Tensor z_last = last_src.frame(last_src.frames() - 1);

  sc.prior.lambda = lambda_flag < 0 ? ck.prior_lambda : lambda_flag;
  if (g.seed) sc.seed = *g.seed;
  // the interpolation model trains unconditionally, so default to the null id
  long cond = cond_override >= 0 ? cond_override : model->config().null_cond_id();

  VideoClip out = sample_interp(*model, z_first, z_last, cond, sc, sched);
  write_frames(out_dir, out);
  std::printf("interpolated %ld frames (%ld steps, lambda %g, gamma %g) to %s\n", out.frames(),
              sc.steps, sc.prior.lambda, sc.prior.gamma, out_dir.c_str());
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt, const std::string& data_dir,
             const std::string& out_dir) {
  Config cfg = g.load_config();
  EvalConfig ec = EvalConfig::from_config(cfg);
  cfg.check_all_consumed();
  if (g.seed) ec.seed = *g.seed;
  std::string report = eval_run(ckpt, data_dir, out_dir, ec);
  std::fputs(report.c_str(), stdout);
  return 0;
}

int cmd_verify(const GlobalOpts& g, const std::string& suite, long clips) {
  std::uint64_t seed = g.seed.value_or(123);
  VerifyReport rep = run_verify_suite(suite, seed, clips);
  std::fputs(rep.render().c_str(), stdout);
  size_t passed = 0;
  for (const auto& c : rep.checks) passed += c.pass ? 1 : 0;
  std::printf("verify %s: %zu/%zu checks passed\n", suite.c_str(), passed, rep.checks.size());
  return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent video diffusion workbench"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "override the subcommand's seed");
  app.add_option("--precision", g.precision, "tensor element type")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--config", g.config_path, "key = value config file");

  int rc = 0;
  auto run = [&](auto fn) {
    return [&, fn]() {
      set_default_dtype(g.precision == "f32" ? DType::F32 : DType::F64);
      rc = fn();
    };
  };

  // make-data
  auto* mk = app.add_subcommand("make-data", "synthesize a sprite clip dataset");
  mk->fallthrough();
  std::string mk_out;
  mk->add_option("--out", mk_out, "output directory")->required();
  mk->callback(run([&]() { return cmd_make_data(g, mk_out); }));

  // train
  auto* tr = app.add_subcommand("train", "train a denoiser on a clip dataset");
  tr->fallthrough();
  std::string tr_data, tr_out, tr_resume;
  long tr_save_every = 0, tr_log_every = 10;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_option("--save-every", tr_save_every, "also save every N steps");
  tr->add_option("--log-every", tr_log_every, "print the loss every N steps");
  tr->callback(
      run([&]() { return cmd_train(g, tr_data, tr_out, tr_resume, tr_save_every, tr_log_every); }));

  auto add_sampling_opts = [](CLI::App* sub, SamplerConfig& sc, double& lambda, long& clip,
                              long& cond, std::string& ckpt, std::string& data,
                              std::string& out) {
    sub->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    sub->add_option("--data", data, "dataset directory for conditioning frames")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--clip", clip, "conditioning clip index");
    sub->add_option("--cond", cond, "condition id override");
    sub->add_option("--steps", sc.steps, "sampler steps");
    sub->add_option("--cfg", sc.guidance_scale, "classifier-free guidance scale");
    sub->add_option("--prior-lambda", lambda, "prior strength (default: from checkpoint)");
    sub->add_option("--prior-gamma", sc.prior.gamma, "extra prior shift at sampling");
  };

  // sample
  auto* sm = app.add_subcommand("sample", "generate a clip from a conditioning frame");
  sm->fallthrough();
  std::string sm_ckpt, sm_data, sm_out;
  long sm_clip = 0, sm_cond = -1;
  double sm_lambda = -1;
  SamplerConfig sm_sc;
  sm_sc.prior.gamma = 0.02;
  add_sampling_opts(sm, sm_sc, sm_lambda, sm_clip, sm_cond, sm_ckpt, sm_data, sm_out);
  sm->callback(run(
      [&]() { return cmd_sample(g, sm_ckpt, sm_data, sm_clip, sm_cond, sm_sc, sm_lambda, sm_out); }));

  // interpolate
  auto* ip = app.add_subcommand("interpolate", "generate the frames between two endpoint frames");
  ip->fallthrough();
  std::string ip_ckpt, ip_data, ip_out;
  long ip_clip = 0, ip_last = -1, ip_cond = -1;
  double ip_lambda = -1;
  SamplerConfig ip_sc;
  ip_sc.guidance_scale = 1.0;
  ip_sc.prior.gamma = 0.02;
  add_sampling_opts(ip, ip_sc, ip_lambda, ip_clip, ip_cond, ip_ckpt, ip_data, ip_out);
  ip->add_option("--last-clip", ip_last, "take the end frame from this clip instead");
  ip->callback(run([&]() {
    return cmd_interpolate(g, ip_ckpt, ip_data, ip_clip, ip_last, ip_cond, ip_sc, ip_lambda,
                           ip_out);
  }));

  // eval
  auto* ev = app.add_subcommand("eval", "score generated clips against held-out data");
  ev->fallthrough();
  std::string ev_ckpt, ev_data, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->callback(run([&]() { return cmd_eval(g, ev_ckpt, ev_data, ev_out); }));

  // verify
  auto* vf = app.add_subcommand("verify", "run a self-check suite");
  vf->fallthrough();
  std::string vf_suite;
  long vf_clips = 10000;
  std::string suites;
  for (const auto& s : verify_suite_names()) suites += (suites.empty() ? "" : "|") + s;
  vf->add_option("suite", vf_suite, suites)->required();
  vf->add_option("--clips", vf_clips, "clip count for the gaussian-ode suite");
  vf->callback(run([&]() { return cmd_verify(g, vf_suite, vf_clips); }));

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vdiff: %s\n", e.what());
    return 1;
  }
  return rc;
}
