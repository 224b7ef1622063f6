#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vdiff/config.hpp"
#include "vdiff/rng.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

// How the appearance branch feeds the denoiser.
enum class InjectionMode { Concat, AddToDec, AddToEncDec, AddToEncDecSpade };

InjectionMode parse_injection_mode(const std::string& name);
std::string injection_mode_name(InjectionMode mode);

struct UNetConfig {
  long in_channels = 4;
  long base_channels = 32;
  std::vector<long> channel_multipliers = {1, 2, 4};
  std::vector<long> attention_levels = {1, 2};  // indices into channel_multipliers
  long head_channels = 8;
  long temporal_kernel = 3;
  long num_frames = 9;
  long cond_vocab_size = 6;
  long cond_embed_dim = 32;
  long norm_groups = 32;
  InjectionMode injection_mode = InjectionMode::AddToEncDecSpade;

  long levels() const { return static_cast<long>(channel_multipliers.size()); }
  long null_cond_id() const { return cond_vocab_size; }
  long channels_at(long level) const {
    return base_channels * channel_multipliers[static_cast<size_t>(level)];
  }
  bool attention_at(long level) const;
  void validate() const;

  static UNetConfig from_config(Config& cfg);
};

struct Param {
  std::string name;
  Tensor value;
  bool temporal = false;
};

// Conditioning-sequence builders: the base model replicates the center frame,
// the frame-interpolation variant blends the two endpoint frames.
Tensor make_cond_sequence(const Tensor& z_c, long n);                              // [N,C,H,W]
Tensor make_interp_cond_sequence(const Tensor& z_first, const Tensor& z_last, long n);

// o = (gamma + 1) * group_norm(h) + beta, with gamma/beta produced by 3x3 convs
// over the appearance feature. Zero-init convs make this plain group norm.
Tensor spade_inject(const Tensor& h, const Tensor& f_a, long groups, const Tensor& gamma_w,
                    const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b);

class UNet3D {
 public:
  UNet3D(const UNetConfig& cfg, Rng& rng);

  // z_t [N,C,H,W], z_c [C,H,W]; predicts the training noise.
  Tensor forward(const Tensor& z_t, long t, const Tensor& z_c, long cond_id) const;
  // Same but with an explicit per-frame conditioning sequence [N,C,H,W].
  Tensor forward_with_cond_seq(const Tensor& z_t, long t, const Tensor& cond_seq,
                               long cond_id) const;
  // Batched: z_t [B,N,C,H,W], cond_seqs [B,N,C,H,W], one t / cond id per sample.
  Tensor forward_batch(const Tensor& z_t, const std::vector<long>& ts, const Tensor& cond_seqs,
                       const std::vector<long>& cond_ids) const;
  // Frame-by-frame pass through the spatial layers only; the zero-init oracle.
  Tensor forward_2d_reference(const Tensor& z_t, long t, const Tensor& z_c, long cond_id) const;

  const UNetConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param* find_param(const std::string& name);
  long param_count() const;
  long appearance_eval_count() const { return appearance_evals_; }

 private:
  struct Conv {
    Tensor w, b;
    long stride = 1, pad = 1;
  };
  struct Lin {
    Tensor w, b;
  };
  struct Affine {
    Tensor scale, bias;
  };
  struct Spade {
    Tensor gamma_w, gamma_b, beta_w, beta_b;
  };
  struct ResBlock {
    long cin = 0, cout = 0, groups_in = 1, groups_out = 1;
    Affine gn1;  // unused when spade is set
    std::optional<Spade> spade;
    Conv c1;
    Lin temb;
    Affine gn2;
    Conv c2;
    std::optional<Conv> skip;  // 1x1 when cin != cout
  };
  struct Attn {
    long heads = 1, groups = 1;
    Affine gn;
    Conv q, k, v, o;
  };
  struct TConv {
    Tensor w, b;  // [C,C,kt], zero-init
  };
  struct Level {
    ResBlock res;
    TConv tconv;
    bool has_attn = false;
    Attn sa, ta;
    std::optional<Conv> inject;  // zero-init 1x1 adapter for additive modes
  };
  struct AppearLevel {
    ResBlock res;
    bool has_attn = false;
    Attn sa;
  };
  struct AppearFeatures {
    std::vector<Tensor> level;  // per encoder level
    Tensor middle;
  };

  Tensor add_param(const std::string& name, const Shape& shape, double stddev, bool temporal,
                   Rng& rng);
  Tensor add_const_param(const std::string& name, const Shape& shape, double value,
                         bool temporal);
  Tensor copy_param(const std::string& name, const Tensor& src);

  Conv make_conv(const std::string& name, long cin, long cout, long k, long stride, long pad,
                 bool zero, bool temporal, Rng& rng);
  Lin make_lin(const std::string& name, long in, long out, bool zero, bool temporal, Rng& rng);
  Affine make_affine(const std::string& name, long channels, bool temporal);
  Attn make_attn(const std::string& name, long channels, bool temporal, Rng& rng);
  TConv make_tconv(const std::string& name, long channels, Rng& rng);
  ResBlock make_res(const std::string& name, long cin, long cout, long appear_ch, Rng& rng);
  Conv copy_conv(const std::string& name, const Conv& src);
  Affine copy_affine(const std::string& name, const Affine& src);
  Attn copy_attn(const std::string& name, const Attn& src);
  ResBlock copy_res(const std::string& name, const ResBlock& src);

  long groups_for(long channels) const;
  Tensor time_cond_rows(const std::vector<long>& ts, const std::vector<long>& cond_ids) const;
  Tensor affine_norm(const Affine& a, const Tensor& x, long groups) const;
  Tensor res_forward(const ResBlock& rb, const Tensor& x, const Tensor& temb_rows,
                     const Tensor* f_a) const;
  Tensor attn_forward(const Attn& at, const Tensor& x) const;
  Tensor temporal_attn_forward(const Attn& at, const Tensor& x, long batch) const;
  Tensor tconv_forward(const TConv& tc, const Tensor& x, long batch) const;
  AppearFeatures appearance_forward(const Tensor& cond_rows, const Tensor& temb_rows) const;
  Tensor core_forward(const Tensor& x, long batch, const Tensor& temb_rows,
                      const Tensor& cond_rows, bool temporal) const;

  UNetConfig cfg_;
  std::vector<Param> params_;
  mutable long appearance_evals_ = 0;

  long temb_dim_ = 0;
  long sin_dim_ = 0;
  Tensor cond_table_;
  Lin cond_proj_;
  Lin temb_mlp1_, temb_mlp2_;
  Conv stem_;
  std::vector<Level> enc_;
  std::vector<Conv> down_;
  Level mid_a_;  // res + tconv + attention pair
  ResBlock mid_res2_;
  TConv mid_tconv2_;
  std::vector<Level> dec_;
  std::vector<Conv> up_;
  Affine out_norm_;
  Conv out_conv_;

  bool has_appearance_ = false;
  Conv appear_stem_;
  std::vector<AppearLevel> appear_enc_;
  std::vector<Conv> appear_down_;
  ResBlock appear_mid_res1_, appear_mid_res2_;
  Attn appear_mid_sa_;
};

}  // namespace vdiff
