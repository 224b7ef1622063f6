#pragma once

#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/prior.hpp"

namespace vdiff {

inline constexpr long kFeatureDim = 64;

struct FeatureStats {
  std::vector<double> mean;              // d
  std::vector<std::vector<double>> cov;  // d x d, symmetric
  long d() const { return static_cast<long>(mean.size()); }
};

// Embedding through a fixed random conv net whose weights are drawn from
// seed: conv s2 -> tanh -> temporal conv -> tanh -> conv s2 -> tanh -> mean
// over frames and pixels. linear_mode skips the tanh stages (used to test
// that an affine featurizer shifts the mean but not the covariance).
std::vector<double> clip_features(const VideoClip& clip, std::uint64_t seed,
                                  bool linear_mode = false);

// Sample mean and covariance of the clip embeddings. Warns to stderr when
// there are too few clips for a full-rank covariance.
FeatureStats featurize(const std::vector<VideoClip>& clips, std::uint64_t seed,
                       bool linear_mode = false);

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), matrix square
// roots by symmetric eigendecomposition with eigenvalues clamped at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Mean over adjacent frame pairs of the RMS frame difference.
double temporal_consistency(const VideoClip& clip);

struct EvalConfig {
  long clips_per_class = 2;
  long steps = 25;
  double guidance_scale = 1.0;
  double prior_lambda = 0.03;
  double prior_gamma = 0.02;
  long dump_frames = 1;  // sampled clips per class written out as PPM frames
  std::uint64_t seed = 0;

  void validate() const;
  static EvalConfig from_config(Config& cfg);
};

// Samples clips_per_class clips per class conditioned on held-out center
// frames, scores them against the held-in half of the dataset, writes a
// "key = value" report plus PPM dumps into out_dir, and returns the report.
std::string eval_run(const std::string& checkpoint_path, const std::string& dataset_dir,
                     const std::string& out_dir, const EvalConfig& ec);

}  // namespace vdiff
