#include "vdiff/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vdiff/ppm.hpp"
#include "vdiff/sampler.hpp"
#include "vdiff/sprites.hpp"
#include "vdiff/train.hpp"

namespace vdiff {

std::vector<double> clip_features(const VideoClip& clip, std::uint64_t seed, bool linear_mode) {
  if (!clip.latent.defined() || clip.latent.ndim() != 4)
    throw std::invalid_argument("featurize: clip must be [N,C,H,W]");
  const long n = clip.latent.dim(0), c = clip.latent.dim(1);
  const long h = clip.latent.dim(2), w = clip.latent.dim(3);
  if (h < 4 || w < 4) throw std::invalid_argument("featurize: frames smaller than 4x4");

  Rng rng(seed);
  Tensor w1 = Tensor::randn({16, 2 * c, 3, 3}, rng, 1.0 / std::sqrt(9.0 * 2 * c));
  Tensor wt = Tensor::randn({32, 16, 3}, rng, 1.0 / std::sqrt(3.0 * 16.0));
  Tensor w3 = Tensor::randn({kFeatureDim, 32, 3, 3}, rng, 1.0 / std::sqrt(9.0 * 32.0));
  Tensor b1 = Tensor::zeros({16}), bt = Tensor::zeros({32}), b3 = Tensor::zeros({kFeatureDim});

  auto act = [linear_mode](const Tensor& x) { return linear_mode ? x : ops::tanh_op(x); };

  // Input channels are the frames plus their temporal forward differences, so
  // motion direction is visible to the very first projection. The difference
  // channels are unchanged by a constant offset, keeping the linear mode
  // affine in the clip.
  const long fsz = c * h * w;
  Tensor aug = Tensor::zeros({n, 2 * c, h, w});
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < fsz; ++j) {
      double cur = clip.latent.value_at(i * fsz + j);
      double prev = i > 0 ? clip.latent.value_at((i - 1) * fsz + j) : cur;
      aug.set_value(i * 2 * fsz + j, cur);
      // x8 pushes the differences into tanh saturation, reading off motion
      // direction rather than motion speed
      aug.set_value(i * 2 * fsz + fsz + j, 8.0 * (cur - prev));
    }

  Tensor h1 = act(ops::conv2d(aug, w1, b1, 2, 1));  // [N,16,h2,w2]
  long h2 = h1.dim(2), w2 = h1.dim(3);
  Tensor ht = ops::permute(ops::reshape(h1, {1, n, 16, h2, w2}), {0, 2, 1, 3, 4});
  ht = act(ops::conv1d_temporal(ht, wt, bt));  // [1,32,N,h2,w2]
  ht = ops::reshape(ops::permute(ht, {0, 2, 1, 3, 4}), {n, 32, h2, w2});
  Tensor h3 = act(ops::conv2d(ht, w3, b3, 2, 1));  // [N,64,h4,w4]

  const long hw = h3.dim(2) * h3.dim(3);
  std::vector<double> f(kFeatureDim, 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < kFeatureDim; ++j) {
      double acc = 0;
      for (long p = 0; p < hw; ++p) acc += h3.value_at((i * kFeatureDim + j) * hw + p);
      f[static_cast<size_t>(j)] += acc;
    }
  for (double& v : f) v /= static_cast<double>(n * hw);
  return f;
}

FeatureStats featurize(const std::vector<VideoClip>& clips, std::uint64_t seed,
                       bool linear_mode) {
  if (clips.empty()) throw std::invalid_argument("featurize: no clips");
  const long c0 = clips[0].latent.dim(1);
  for (const VideoClip& c : clips)
    if (c.latent.dim(1) != c0)
      throw std::invalid_argument("featurize: clips disagree on channel count");
  const long n = static_cast<long>(clips.size());
  if (n < kFeatureDim + 1)
    std::fprintf(stderr,
                 "featurize: %ld clips for a %ld-dim covariance, expect rank deficiency\n", n,
                 kFeatureDim);

  std::vector<std::vector<double>> feats;
  feats.reserve(clips.size());
  for (const VideoClip& c : clips) feats.push_back(clip_features(c, seed, linear_mode));

  FeatureStats st;
  st.mean.assign(kFeatureDim, 0.0);
  for (const auto& f : feats)
    for (long j = 0; j < kFeatureDim; ++j) st.mean[static_cast<size_t>(j)] += f[static_cast<size_t>(j)];
  for (double& m : st.mean) m /= static_cast<double>(n);

  st.cov.assign(kFeatureDim, std::vector<double>(kFeatureDim, 0.0));
  if (n > 1) {
    for (const auto& f : feats)
      for (long j = 0; j < kFeatureDim; ++j)
        for (long k = 0; k < kFeatureDim; ++k)
          st.cov[static_cast<size_t>(j)][static_cast<size_t>(k)] +=
              (f[static_cast<size_t>(j)] - st.mean[static_cast<size_t>(j)]) *
              (f[static_cast<size_t>(k)] - st.mean[static_cast<size_t>(k)]);
    for (auto& row : st.cov)
      for (double& v : row) v /= static_cast<double>(n - 1);
  }
  return st;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  const long d = a.d();
  if (d == 0 || b.d() != d)
    throw std::invalid_argument("frechet: dimension mismatch");
  // The trace term is symmetric in exact arithmetic but not in floating
  // point; order the arguments canonically so d(a,b) == d(b,a) bitwise.
  if (b.cov < a.cov || (b.cov == a.cov && b.mean < a.mean)) return frechet_distance(b, a);
  Eigen::MatrixXd A(d, d), B(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) {
      A(i, j) = a.cov[static_cast<size_t>(i)][static_cast<size_t>(j)];
      B(i, j) = b.cov[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A);
  if (ea.info() != Eigen::Success)
    throw std::runtime_error("frechet: eigendecomposition failed");
  Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd sqrt_a =
      ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();

  Eigen::MatrixXd m = sqrt_a * B * sqrt_a;
  m = 0.5 * (m + m.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
  if (em.info() != Eigen::Success)
    throw std::runtime_error("frechet: eigendecomposition failed");
  double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double mean_term = 0;
  for (long i = 0; i < d; ++i) {
    double dm = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
    mean_term += dm * dm;
  }
  double val = mean_term + A.trace() + B.trace() - 2.0 * tr_sqrt;
  return std::max(val, 0.0);
}

double temporal_consistency(const VideoClip& clip) {
  const long n = clip.frames();
  if (n < 2) throw std::invalid_argument("temporal_consistency: need at least 2 frames");
  const long fsz = clip.latent.numel() / n;
  double acc = 0;
  for (long i = 0; i + 1 < n; ++i) {
    double s = 0;
    for (long j = 0; j < fsz; ++j) {
      double d = clip.latent.value_at((i + 1) * fsz + j) - clip.latent.value_at(i * fsz + j);
      s += d * d;
    }
    acc += std::sqrt(s / static_cast<double>(fsz));
  }
  return acc / static_cast<double>(n - 1);
}

void EvalConfig::validate() const {
  if (clips_per_class < 1) throw std::invalid_argument("eval: clips_per_class must be >= 1");
  if (steps < 1) throw std::invalid_argument("eval: steps must be >= 1");
  if (prior_lambda < 0 || prior_gamma < 0)
    throw std::invalid_argument("eval: prior coefficients must be >= 0");
  if (dump_frames < 0) throw std::invalid_argument("eval: dump_frames must be >= 0");
}

EvalConfig EvalConfig::from_config(Config& cfg) {
  EvalConfig e;
  e.clips_per_class = cfg.get_long("clips_per_class", e.clips_per_class);
  e.steps = cfg.get_long("steps", e.steps);
  e.guidance_scale = cfg.get_double("guidance_scale", e.guidance_scale);
  e.prior_lambda = cfg.get_double("prior_lambda", e.prior_lambda);
  e.prior_gamma = cfg.get_double("prior_gamma", e.prior_gamma);
  e.dump_frames = cfg.get_long("dump_frames", e.dump_frames);
  e.seed = cfg.get_u64("seed", e.seed);
  e.validate();
  return e;
}

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string eval_run(const std::string& checkpoint_path, const std::string& dataset_dir,
                     const std::string& out_dir, const EvalConfig& ec) {
  ec.validate();
  Checkpoint ck = load_checkpoint(checkpoint_path);
  auto model = model_from_checkpoint(ck);
  NoiseSchedule sched = ck.schedule.build();
  std::vector<VideoClip> clips = load_dataset(dataset_dir);

  std::vector<VideoClip> ref, held;
  for (size_t i = 0; i < clips.size(); ++i)
    (i % 2 == 0 ? ref : held).push_back(clips[i]);
  if (ref.empty() || held.empty())
    throw std::runtime_error("eval: dataset too small to split");

  std::map<long, std::vector<const VideoClip*>> by_class;
  for (const VideoClip& c : held) by_class[c.condition_id].push_back(&c);

  std::filesystem::create_directories(out_dir);
  SamplerConfig scfg;
  scfg.steps = ec.steps;
  scfg.guidance_scale = ec.guidance_scale;
  scfg.prior = {ec.prior_lambda, ec.prior_gamma};

  std::vector<VideoClip> gen;
  double tc_gen = 0;
  std::uint64_t counter = 0;
  for (const auto& [cls, members] : by_class) {
    for (long k = 0; k < ec.clips_per_class; ++k, ++counter) {
      const VideoClip& src = *members[static_cast<size_t>(k) % members.size()];
      scfg.seed = derive_seed(ec.seed, counter);
      VideoClip g = sample(*model, src.center_frame(), cls, scfg, sched);
      g.condition_id = cls;
      g.fps = src.fps;
      tc_gen += temporal_consistency(g);
      if (k < ec.dump_frames)
        for (long f = 0; f < g.frames(); ++f) {
          std::ostringstream name;
          name << out_dir << "/gen_c" << cls << "_k" << k << "_f" << f << ".ppm";
          save_ppm(name.str(), g.frame(f));
        }
      gen.push_back(std::move(g));
    }
  }
  tc_gen /= static_cast<double>(gen.size());

  std::uint64_t feat_seed = derive_seed(ec.seed, 0xFEA7);
  double fd = frechet_distance(featurize(gen, feat_seed), featurize(ref, feat_seed));
  double tc_real = 0;
  for (const VideoClip& c : ref) tc_real += temporal_consistency(c);
  tc_real /= static_cast<double>(ref.size());

  std::ostringstream rep;
  rep.precision(17);
  rep << "clips_real = " << ref.size() << "\n";
  rep << "clips_generated = " << gen.size() << "\n";
  rep << "sampler_steps = " << ec.steps << "\n";
  rep << "guidance_scale = " << ec.guidance_scale << "\n";
  rep << "prior_lambda = " << ec.prior_lambda << "\n";
  rep << "prior_gamma = " << ec.prior_gamma << "\n";
  rep << "frechet = " << fd << "\n";
  rep << "temporal_consistency = " << tc_gen << "\n";
  rep << "temporal_consistency_real = " << tc_real << "\n";

  std::ofstream out(out_dir + "/report.txt", std::ios::binary);
  if (!out) throw std::runtime_error("eval: cannot write report in " + out_dir);
  out << rep.str();
  return rep.str();
}

}  // namespace vdiff
