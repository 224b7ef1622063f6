#include "vdiff/train.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vdiff/atns.hpp"

namespace vdiff {

ScheduleSpec ScheduleSpec::from_config(Config& cfg) {
  ScheduleSpec s;
  s.kind = cfg.get_string("schedule", s.kind);
  s.timesteps = cfg.get_long("timesteps", s.timesteps);
  s.beta_start = cfg.get_double("beta_start", s.beta_start);
  s.beta_end = cfg.get_double("beta_end", s.beta_end);
  return s;
}

void TrainConfig::validate() const {
  if (lr_temporal < 0 || lr_spatial < 0)
    throw std::invalid_argument("train: learning rates must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (cond_drop_rate < 0 || cond_drop_rate > 1)
    throw std::invalid_argument("train: cond_drop_rate must be in [0, 1]");
  if (prior_lambda < 0) throw std::invalid_argument("train: prior_lambda must be >= 0");
  if (mode != "base" && mode != "tsr")
    throw std::invalid_argument("train: mode must be base or tsr");
  if (mode == "tsr" && cond_drop_rate != 1.0)
    throw std::invalid_argument("train: tsr mode requires cond_drop_rate = 1");
  if (ema) throw std::invalid_argument("train: ema is a stub; leave ema = 0");
}

TrainConfig TrainConfig::from_config(Config& cfg) {
  TrainConfig c;
  c.mode = cfg.get_string("mode", c.mode);
  c.lr_temporal = cfg.get_double("lr_temporal", c.lr_temporal);
  c.lr_spatial = cfg.get_double("lr_spatial", c.lr_temporal / 10.0);
  c.batch_size = cfg.get_long("batch_size", c.batch_size);
  c.steps = cfg.get_long("steps", c.steps);
  c.cond_drop_rate = cfg.get_double("cond_drop_rate", c.mode == "tsr" ? 1.0 : 0.1);
  c.prior_lambda = cfg.get_double("prior_lambda", c.prior_lambda);
  c.seed = cfg.get_u64("seed", c.seed);
  c.ema = cfg.get_long("ema", 0) != 0;
  c.validate();
  return c;
}

Adam::Adam(std::vector<Param>& params, double lr_spatial, double lr_temporal, double beta1,
           double beta2, double eps)
    : params_(&params),
      lr_spatial_(lr_spatial),
      lr_temporal_(lr_temporal),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const Param& p : params) {
    m_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_->size(); ++i) {
    Param& p = (*params_)[i];
    double lr = p.temporal ? lr_temporal_ : lr_spatial_;
    long n = p.value.numel();
    for (long j = 0; j < n; ++j) {
      double g = p.value.grad_at(j);
      double m = m_[i][static_cast<size_t>(j)] =
          beta1_ * m_[i][static_cast<size_t>(j)] + (1.0 - beta1_) * g;
      double v = v_[i][static_cast<size_t>(j)] =
          beta2_ * v_[i][static_cast<size_t>(j)] + (1.0 - beta2_) * g * g;
      double upd = lr * (m / c1) / (std::sqrt(v / c2) + eps_);
      p.value.set_value(j, p.value.value_at(j) - upd);
    }
  }
}

void Adam::zero_grad() {
  for (Param& p : *params_) p.value.zero_grad();
}

Tensor clip_loss_with(const DenoiseModelFn& fn, long null_cond_id, const VideoClip& clip, long t,
                      Rng& rng, const AppearancePrior& prior, const NoiseSchedule& schedule,
                      const TrainConfig& tc) {
  const bool tsr = tc.mode == "tsr";
  Tensor cond_seq =
      tsr ? make_interp_cond_sequence(clip.frame(0), clip.frame(clip.frames() - 1),
                                      clip.frames())
          : make_cond_sequence(clip.center_frame(), clip.frames());
  double u = rng.uniform();
  long cond_id = (tsr || u < tc.cond_drop_rate) ? null_cond_id : clip.condition_id;
  Tensor eps_n = Tensor::randn(clip.latent.shape(), rng);
  Tensor eps = make_training_noise_seq(eps_n, cond_seq, prior.lambda);
  Tensor z_t = q_sample(clip.latent, t, eps, schedule);
  Tensor out = fn(z_t, t, cond_seq, cond_id);
  Tensor d = ops::sub(out, eps);
  return ops::mean(ops::mul(d, d));
}

Tensor clip_loss(const UNet3D& model, const VideoClip& clip, long t, Rng& rng,
                 const AppearancePrior& prior, const NoiseSchedule& schedule,
                 const TrainConfig& tc) {
  DenoiseModelFn fn = [&model](const Tensor& z_t, long tt, const Tensor& cond_seq,
                               long cond_id) {
    return model.forward_with_cond_seq(z_t, tt, cond_seq, cond_id);
  };
  return clip_loss_with(fn, model.config().null_cond_id(), clip, t, rng, prior, schedule, tc);
}

Trainer::Trainer(UNet3D& model, const TrainConfig& tc, const ScheduleSpec& spec,
                 std::vector<VideoClip> dataset)
    : model_(model),
      tc_(tc),
      spec_(spec),
      sched_(spec.build()),
      data_(std::move(dataset)),
      rng_(tc.seed),
      opt_(model.params(), tc.lr_spatial, tc.lr_temporal) {
  tc_.validate();
  if (data_.empty()) throw std::invalid_argument("trainer: empty dataset");
  for (const VideoClip& c : data_) {
    if (!c.latent.defined()) throw std::invalid_argument("trainer: clip without data");
    if (c.latent.ndim() != 4 || c.frames() != model.config().num_frames ||
        c.latent.dim(1) != model.config().in_channels)
      throw std::invalid_argument("trainer: clip shape " + shape_str(c.latent.shape()) +
                                  " does not match the model");
  }
}

double Trainer::train_step() {
  Tape tape;
  Tensor total;
  const long size = static_cast<long>(data_.size());
  for (long b = 0; b < tc_.batch_size; ++b) {
    long idx = std::min(static_cast<long>(rng_.uniform() * static_cast<double>(size)), size - 1);
    long t = 1 + std::min(static_cast<long>(rng_.uniform() * static_cast<double>(sched_.T)),
                          sched_.T - 1);
    Tensor l = clip_loss(model_, data_[static_cast<size_t>(idx)], t, rng_,
                         {tc_.prior_lambda, 0.0}, sched_, tc_);
    total = total.defined() ? ops::add(total, l) : l;
  }
  total = ops::scalar_mul(total, 1.0 / static_cast<double>(tc_.batch_size));
  double val = total.value_at(0);
  if (!std::isfinite(val))
    throw std::runtime_error("training aborted: non-finite loss " + std::to_string(val) +
                             " at step " + std::to_string(step_));
  tape.backward(total);
  opt_.step();
  opt_.zero_grad();
  ++step_;
  return val;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.net = model_.config();
  ck.schedule = spec_;
  ck.prior_lambda = tc_.prior_lambda;
  ck.step = step_;
  ck.rng_state = rng_.state();
  ck.adam_step = opt_.steps_taken();
  for (const Param& p : model_.params()) {
    ck.names.push_back(p.name);
    ck.temporal_flags.push_back(p.temporal ? 1 : 0);
    ck.values.push_back(p.value.clone());
  }
  ck.adam_m = opt_.first_moments();
  ck.adam_v = opt_.second_moments();
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.adam_m.size() != model_.params().size())
    throw std::runtime_error("checkpoint optimizer state does not match the model");
  rng_.restore(ck.rng_state);
  step_ = ck.step;
  opt_.set_steps_taken(ck.adam_step);
  opt_.first_moments() = ck.adam_m;
  opt_.second_moments() = ck.adam_v;
}

std::unique_ptr<UNet3D> model_from_checkpoint(const Checkpoint& ck) {
  Rng scratch(0);
  auto model = std::make_unique<UNet3D>(ck.net, scratch);
  if (ck.names.size() != model->params().size())
    throw std::runtime_error("checkpoint parameter count does not match the architecture");
  for (size_t i = 0; i < ck.names.size(); ++i) {
    Param* p = model->find_param(ck.names[i]);
    if (p == nullptr) throw std::runtime_error("checkpoint parameter missing: " + ck.names[i]);
    const Tensor& src = ck.values[i];
    if (src.dtype() != p->value.dtype())
      throw std::runtime_error("checkpoint dtype mismatch for " + ck.names[i] +
                               " (rerun with the matching --precision)");
    if (!(src.shape() == p->value.shape()))
      throw std::runtime_error("checkpoint shape mismatch for " + ck.names[i]);
    for (long j = 0; j < src.numel(); ++j) p->value.set_value(j, src.value_at(j));
  }
  return model;
}

// ---- checkpoint file format -------------------------------------------------
// "VDCK" | u32 version | u64 payload size | payload | u32 crc32(payload).
// Little-endian host assumed, as in the tensor container format.

namespace {

constexpr std::uint32_t kCkptVersion = 1;

void wr(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void wr_u8(std::ostream& os, std::uint8_t v) { wr(os, &v, 1); }
void wr_u32(std::ostream& os, std::uint32_t v) { wr(os, &v, 4); }
void wr_u64(std::ostream& os, std::uint64_t v) { wr(os, &v, 8); }
void wr_i64(std::ostream& os, long v) { wr_u64(os, static_cast<std::uint64_t>(v)); }
void wr_f64(std::ostream& os, double v) { wr(os, &v, 8); }
void wr_str(std::ostream& os, const std::string& s) {
  wr_u32(os, static_cast<std::uint32_t>(s.size()));
  wr(os, s.data(), s.size());
}
void wr_i64_list(std::ostream& os, const std::vector<long>& v) {
  wr_u64(os, v.size());
  for (long x : v) wr_i64(os, x);
}
void wr_f64_list(std::ostream& os, const std::vector<double>& v) {
  wr_u64(os, v.size());
  for (double x : v) wr_f64(os, x);
}

void rd(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("truncated checkpoint");
}
std::uint8_t rd_u8(std::istream& is) {
  std::uint8_t v;
  rd(is, &v, 1);
  return v;
}
std::uint32_t rd_u32(std::istream& is) {
  std::uint32_t v;
  rd(is, &v, 4);
  return v;
}
std::uint64_t rd_u64(std::istream& is) {
  std::uint64_t v;
  rd(is, &v, 8);
  return v;
}
long rd_i64(std::istream& is) { return static_cast<long>(rd_u64(is)); }
double rd_f64(std::istream& is) {
  double v;
  rd(is, &v, 8);
  return v;
}
std::string rd_str(std::istream& is) {
  std::uint32_t n = rd_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("truncated checkpoint");
  std::string s(n, '\0');
  rd(is, s.data(), n);
  return s;
}
std::vector<long> rd_i64_list(std::istream& is) {
  std::uint64_t n = rd_u64(is);
  std::vector<long> v(n);
  for (auto& x : v) x = rd_i64(is);
  return v;
}
std::vector<double> rd_f64_list(std::istream& is) {
  std::uint64_t n = rd_u64(is);
  std::vector<double> v(n);
  for (auto& x : v) x = rd_f64(is);
  return v;
}

std::uint32_t payload_crc(const std::string& payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream body;
  wr_i64(body, ck.net.in_channels);
  wr_i64(body, ck.net.base_channels);
  wr_i64_list(body, ck.net.channel_multipliers);
  wr_i64_list(body, ck.net.attention_levels);
  wr_i64(body, ck.net.head_channels);
  wr_i64(body, ck.net.temporal_kernel);
  wr_i64(body, ck.net.num_frames);
  wr_i64(body, ck.net.cond_vocab_size);
  wr_i64(body, ck.net.cond_embed_dim);
  wr_i64(body, ck.net.norm_groups);
  wr_str(body, injection_mode_name(ck.net.injection_mode));
  wr_str(body, ck.schedule.kind);
  wr_i64(body, ck.schedule.timesteps);
  wr_f64(body, ck.schedule.beta_start);
  wr_f64(body, ck.schedule.beta_end);
  wr_f64(body, ck.prior_lambda);
  wr_i64(body, ck.step);
  wr_u64(body, ck.rng_state.seed);
  wr_u64(body, ck.rng_state.stream);
  wr_u64(body, ck.rng_state.counter);
  for (std::uint32_t b : ck.rng_state.buf) wr_u32(body, b);
  wr_i64(body, ck.rng_state.buf_pos);
  wr_u8(body, ck.rng_state.has_cached_normal ? 1 : 0);
  wr_f64(body, ck.rng_state.cached_normal);
  wr_i64(body, ck.adam_step);
  wr_u64(body, ck.names.size());
  if (ck.temporal_flags.size() != ck.names.size() || ck.values.size() != ck.names.size() ||
      ck.adam_m.size() != ck.names.size() || ck.adam_v.size() != ck.names.size())
    throw std::invalid_argument("checkpoint: inconsistent parameter lists");
  for (size_t i = 0; i < ck.names.size(); ++i) {
    wr_str(body, ck.names[i]);
    wr_u8(body, static_cast<std::uint8_t>(ck.temporal_flags[i]));
    write_atns(body, ck.values[i]);
    wr_f64_list(body, ck.adam_m[i]);
    wr_f64_list(body, ck.adam_v[i]);
  }

  std::string payload = body.str();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write("VDCK", 4);
  std::uint32_t version = kCkptVersion;
  wr_u32(os, version);
  wr_u64(os, payload.size());
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  wr_u32(os, payload_crc(payload));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  rd(is, magic, 4);
  if (std::memcmp(magic, "VDCK", 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::uint32_t version = rd_u32(is);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t size = rd_u64(is);
  std::string payload(size, '\0');
  rd(is, payload.data(), size);
  std::uint32_t want_crc = rd_u32(is);
  if (payload_crc(payload) != want_crc)
    throw std::runtime_error("checkpoint checksum mismatch in " + path);

  std::istringstream body(payload);
  Checkpoint ck;
  ck.net.in_channels = rd_i64(body);
  ck.net.base_channels = rd_i64(body);
  ck.net.channel_multipliers = rd_i64_list(body);
  ck.net.attention_levels = rd_i64_list(body);
  ck.net.head_channels = rd_i64(body);
  ck.net.temporal_kernel = rd_i64(body);
  ck.net.num_frames = rd_i64(body);
  ck.net.cond_vocab_size = rd_i64(body);
  ck.net.cond_embed_dim = rd_i64(body);
  ck.net.norm_groups = rd_i64(body);
  ck.net.injection_mode = parse_injection_mode(rd_str(body));
  ck.net.validate();
  ck.schedule.kind = rd_str(body);
  ck.schedule.timesteps = rd_i64(body);
  ck.schedule.beta_start = rd_f64(body);
  ck.schedule.beta_end = rd_f64(body);
  ck.prior_lambda = rd_f64(body);
  ck.step = rd_i64(body);
  ck.rng_state.seed = rd_u64(body);
  ck.rng_state.stream = rd_u64(body);
  ck.rng_state.counter = rd_u64(body);
  for (auto& b : ck.rng_state.buf) b = rd_u32(body);
  ck.rng_state.buf_pos = static_cast<int>(rd_i64(body));
  ck.rng_state.has_cached_normal = rd_u8(body) != 0;
  ck.rng_state.cached_normal = rd_f64(body);
  ck.adam_step = rd_i64(body);
  std::uint64_t count = rd_u64(body);
  for (std::uint64_t i = 0; i < count; ++i) {
    ck.names.push_back(rd_str(body));
    ck.temporal_flags.push_back(static_cast<char>(rd_u8(body)));
    ck.values.push_back(read_atns(body));
    ck.adam_m.push_back(rd_f64_list(body));
    ck.adam_v.push_back(rd_f64_list(body));
  }
  return ck;
}

}  // namespace vdiff
