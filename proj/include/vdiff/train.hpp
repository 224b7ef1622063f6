#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/net.hpp"
#include "vdiff/prior.hpp"
#include "vdiff/schedule.hpp"
#include "vdiff/sprites.hpp"

namespace vdiff {

// Schedule described by its parameters rather than the expanded tables, so it
// can live in a checkpoint.
struct ScheduleSpec {
  std::string kind = "linear";
  long timesteps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;

  NoiseSchedule build() const { return make_schedule(kind, timesteps, beta_start, beta_end); }
  static ScheduleSpec from_config(Config& cfg);
};

struct TrainConfig {
  double lr_temporal = 2e-5;
  double lr_spatial = 2e-6;  // temporal / 10
  long batch_size = 4;
  long steps = 100;
  double cond_drop_rate = 0.1;
  double prior_lambda = 0.03;
  std::uint64_t seed = 0;
  std::string mode = "base";  // base | tsr
  bool ema = false;           // stub: accepted but not implemented

  void validate() const;
  static TrainConfig from_config(Config& cfg);
};

// Adam over the model's parameter registry with split spatial/temporal
// learning rates. Moments are kept in f64 regardless of parameter dtype so
// checkpoints restore the optimizer exactly.
class Adam {
 public:
  Adam(std::vector<Param>& params, double lr_spatial, double lr_temporal, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Param>* params_;
  double lr_spatial_, lr_temporal_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Noise-prediction MSE for one clip at step t. Consumes from rng, in order:
// one condition-dropout uniform, then the noise draw.
Tensor clip_loss(const UNet3D& model, const VideoClip& clip, long t, Rng& rng,
                 const AppearancePrior& prior, const NoiseSchedule& schedule,
                 const TrainConfig& tc);

// Same computation with the network swapped for an arbitrary denoiser, so the
// loss can be checked against oracles.
using DenoiseModelFn =
    std::function<Tensor(const Tensor& z_t, long t, const Tensor& cond_seq, long cond_id)>;
Tensor clip_loss_with(const DenoiseModelFn& fn, long null_cond_id, const VideoClip& clip, long t,
                      Rng& rng, const AppearancePrior& prior, const NoiseSchedule& schedule,
                      const TrainConfig& tc);

struct Checkpoint {
  UNetConfig net;
  ScheduleSpec schedule;
  double prior_lambda = 0.03;
  long step = 0;
  Rng::State rng_state{};
  long adam_step = 0;
  std::vector<std::string> names;
  std::vector<char> temporal_flags;
  std::vector<Tensor> values;
  std::vector<std::vector<double>> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Rebuild the architecture in the checkpoint and overwrite its weights.
std::unique_ptr<UNet3D> model_from_checkpoint(const Checkpoint& ck);

class Trainer {
 public:
  Trainer(UNet3D& model, const TrainConfig& tc, const ScheduleSpec& spec,
          std::vector<VideoClip> dataset);

  double train_step();
  long step() const { return step_; }
  Adam& opt() { return opt_; }
  Rng& rng() { return rng_; }
  const NoiseSchedule& schedule() const { return sched_; }

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);  // rng, step counter, optimizer state

 private:
  UNet3D& model_;
  TrainConfig tc_;
  ScheduleSpec spec_;
  NoiseSchedule sched_;
  std::vector<VideoClip> data_;
  Rng rng_;
  Adam opt_;
  long step_ = 0;
};

}  // namespace vdiff
