#include "vdiff/net.hpp"

#include <cmath>
#include <stdexcept>

namespace vdiff {

using ops::add;
using ops::concat_channels;
using ops::conv2d;
using ops::silu;

InjectionMode parse_injection_mode(const std::string& name) {
  if (name == "concat") return InjectionMode::Concat;
  if (name == "add-dec") return InjectionMode::AddToDec;
  if (name == "add-encdec") return InjectionMode::AddToEncDec;
  if (name == "add-encdec-spade") return InjectionMode::AddToEncDecSpade;
  throw std::invalid_argument("unknown injection mode '" + name +
                              "' (want concat | add-dec | add-encdec | add-encdec-spade)");
}

std::string injection_mode_name(InjectionMode mode) {
  switch (mode) {
    case InjectionMode::Concat: return "concat";
    case InjectionMode::AddToDec: return "add-dec";
    case InjectionMode::AddToEncDec: return "add-encdec";
    case InjectionMode::AddToEncDecSpade: return "add-encdec-spade";
  }
  throw std::logic_error("bad injection mode value");
}

bool UNetConfig::attention_at(long level) const {
  for (long a : attention_levels)
    if (a == level) return true;
  return false;
}

void UNetConfig::validate() const {
  auto bad = [](const std::string& what) {
    throw std::invalid_argument("bad unet config: " + what);
  };
  if (in_channels < 1) bad("in_channels");
  if (base_channels < 2 || base_channels % 2 != 0) bad("base_channels must be even >= 2");
  if (channel_multipliers.empty()) bad("channel_multipliers empty");
  for (long m : channel_multipliers)
    if (m < 1) bad("channel multiplier < 1");
  for (long a : attention_levels)
    if (a < 0 || a >= levels()) bad("attention level out of range");
  if (head_channels < 1) bad("head_channels");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) bad("temporal_kernel must be odd");
  if (num_frames < 1) bad("num_frames");
  if (cond_vocab_size < 1 || cond_embed_dim < 1) bad("condition embedding");
  if (norm_groups < 1) bad("norm_groups");
  for (long j = 0; j < levels(); ++j) {
    long c = channels_at(j);
    long g = std::min(norm_groups, c);
    if (c % g != 0 || (2 * c) % std::min(norm_groups, 2 * c) != 0)
      bad("channels at level " + std::to_string(j) + " not divisible by norm groups");
    if ((attention_at(j) || j == levels() - 1) && c % head_channels != 0)
      bad("channels at level " + std::to_string(j) + " not divisible by head_channels");
  }
}

UNetConfig UNetConfig::from_config(Config& cfg) {
  UNetConfig c;
  c.in_channels = cfg.get_long("in_channels", c.in_channels);
  c.base_channels = cfg.get_long("base_channels", c.base_channels);
  c.channel_multipliers = cfg.get_long_list("channel_multipliers", c.channel_multipliers);
  c.attention_levels = cfg.get_long_list("attention_levels", c.attention_levels);
  c.head_channels = cfg.get_long("head_channels", c.head_channels);
  c.temporal_kernel = cfg.get_long("temporal_kernel", c.temporal_kernel);
  c.num_frames = cfg.get_long("num_frames", c.num_frames);
  c.cond_vocab_size = cfg.get_long("cond_vocab_size", c.cond_vocab_size);
  c.cond_embed_dim = cfg.get_long("cond_embed_dim", c.cond_embed_dim);
  c.norm_groups = cfg.get_long("norm_groups", c.norm_groups);
  c.injection_mode =
      parse_injection_mode(cfg.get_string("injection_mode", injection_mode_name(c.injection_mode)));
  c.validate();
  return c;
}

Tensor make_cond_sequence(const Tensor& z_c, long n) {
  if (z_c.ndim() != 3) shape_error("make_cond_sequence", shape_str(z_c.shape()));
  if (n < 1) throw std::invalid_argument("make_cond_sequence: n must be >= 1");
  Shape s = {n, z_c.dim(0), z_c.dim(1), z_c.dim(2)};
  Tensor out = make_tensor(s, z_c.dtype());
  long per = z_c.numel();
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < per; ++j) out.set_value(i * per + j, z_c.value_at(j));
  return out;
}

Tensor make_interp_cond_sequence(const Tensor& z_first, const Tensor& z_last, long n) {
  if (z_first.ndim() != 3 || !z_first.same_shape(z_last))
    shape_error("make_interp_cond_sequence",
                shape_str(z_first.shape()) + " vs " + shape_str(z_last.shape()));
  if (n < 2) throw std::invalid_argument("make_interp_cond_sequence: n must be >= 2");
  Shape s = {n, z_first.dim(0), z_first.dim(1), z_first.dim(2)};
  Tensor out = make_tensor(s, z_first.dtype());
  long per = z_first.numel();
  for (long i = 0; i < n; ++i) {
    double w = static_cast<double>(i) / static_cast<double>(n - 1);
    for (long j = 0; j < per; ++j)
      out.set_value(i * per + j, (1.0 - w) * z_first.value_at(j) + w * z_last.value_at(j));
  }
  return out;
}

Tensor spade_inject(const Tensor& h, const Tensor& f_a, long groups, const Tensor& gamma_w,
                    const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b) {
  if (h.ndim() != 4 || f_a.ndim() != 4 || h.dim(0) != f_a.dim(0) || h.dim(2) != f_a.dim(2) ||
      h.dim(3) != f_a.dim(3))
    shape_error("spade_inject", shape_str(h.shape()) + " vs " + shape_str(f_a.shape()));
  Tensor hbar = ops::group_norm(h, groups);
  Tensor gamma = conv2d(f_a, gamma_w, gamma_b, 1, 1);
  Tensor beta = conv2d(f_a, beta_w, beta_b, 1, 1);
  return add(ops::mul(ops::scalar_add(gamma, 1.0), hbar), beta);
}

// ---- parameter construction -------------------------------------------------

Tensor UNet3D::add_param(const std::string& name, const Shape& shape, double stddev,
                         bool temporal, Rng& rng) {
  Tensor t = stddev == 0.0 ? Tensor::zeros(shape) : Tensor::randn(shape, rng, stddev);
  t.set_requires_grad(true);
  params_.push_back({name, t, temporal});
  return t;
}

Tensor UNet3D::add_const_param(const std::string& name, const Shape& shape, double value,
                               bool temporal) {
  Tensor t = Tensor::full(shape, value);
  t.set_requires_grad(true);
  params_.push_back({name, t, temporal});
  return t;
}

Tensor UNet3D::copy_param(const std::string& name, const Tensor& src) {
  Tensor t = src.clone();
  t.set_requires_grad(true);
  params_.push_back({name, t, false});
  return t;
}

UNet3D::Conv UNet3D::make_conv(const std::string& name, long cin, long cout, long k,
                               long stride, long pad, bool zero, bool temporal, Rng& rng) {
  Conv c;
  double std = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  c.w = add_param(name + ".w", {cout, cin, k, k}, std, temporal, rng);
  c.b = add_param(name + ".b", {cout}, 0.0, temporal, rng);
  c.stride = stride;
  c.pad = pad;
  return c;
}

UNet3D::Lin UNet3D::make_lin(const std::string& name, long in, long out, bool zero,
                             bool temporal, Rng& rng) {
  Lin l;
  double std = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  l.w = add_param(name + ".w", {out, in}, std, temporal, rng);
  l.b = add_param(name + ".b", {out}, 0.0, temporal, rng);
  return l;
}

UNet3D::Affine UNet3D::make_affine(const std::string& name, long channels, bool temporal) {
  Affine a;
  a.scale = add_const_param(name + ".scale", {channels}, 1.0, temporal);
  a.bias = add_const_param(name + ".bias", {channels}, 0.0, temporal);
  return a;
}

UNet3D::Attn UNet3D::make_attn(const std::string& name, long channels, bool temporal,
                               Rng& rng) {
  Attn at;
  at.heads = channels / cfg_.head_channels;
  at.groups = groups_for(channels);
  at.gn = make_affine(name + ".norm", channels, temporal);
  at.q = make_conv(name + ".q", channels, channels, 1, 1, 0, false, temporal, rng);
  at.k = make_conv(name + ".k", channels, channels, 1, 1, 0, false, temporal, rng);
  at.v = make_conv(name + ".v", channels, channels, 1, 1, 0, false, temporal, rng);
  // temporal attention starts as the identity: zero output projection + skip
  at.o = make_conv(name + ".o", channels, channels, 1, 1, 0, temporal, temporal, rng);
  return at;
}

UNet3D::TConv UNet3D::make_tconv(const std::string& name, long channels, Rng& rng) {
  TConv tc;
  tc.w = add_param(name + ".w", {channels, channels, cfg_.temporal_kernel}, 0.0, true, rng);
  tc.b = add_param(name + ".b", {channels}, 0.0, true, rng);
  return tc;
}

UNet3D::ResBlock UNet3D::make_res(const std::string& name, long cin, long cout, long appear_ch,
                                  Rng& rng) {
  ResBlock rb;
  rb.cin = cin;
  rb.cout = cout;
  rb.groups_in = groups_for(cin);
  rb.groups_out = groups_for(cout);
  if (appear_ch > 0) {
    Spade sp;
    sp.gamma_w = add_param(name + ".spade.gamma.w", {cin, appear_ch, 3, 3}, 0.0, false, rng);
    sp.gamma_b = add_param(name + ".spade.gamma.b", {cin}, 0.0, false, rng);
    sp.beta_w = add_param(name + ".spade.beta.w", {cin, appear_ch, 3, 3}, 0.0, false, rng);
    sp.beta_b = add_param(name + ".spade.beta.b", {cin}, 0.0, false, rng);
    rb.spade = sp;
  } else {
    rb.gn1 = make_affine(name + ".norm1", cin, false);
  }
  rb.c1 = make_conv(name + ".conv1", cin, cout, 3, 1, 1, false, false, rng);
  rb.temb = make_lin(name + ".temb", temb_dim_, cout, false, false, rng);
  rb.gn2 = make_affine(name + ".norm2", cout, false);
  rb.c2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1, false, false, rng);
  if (cin != cout) rb.skip = make_conv(name + ".skip", cin, cout, 1, 1, 0, false, false, rng);
  return rb;
}

UNet3D::Conv UNet3D::copy_conv(const std::string& name, const Conv& src) {
  Conv c;
  c.w = copy_param(name + ".w", src.w);
  c.b = copy_param(name + ".b", src.b);
  c.stride = src.stride;
  c.pad = src.pad;
  return c;
}

UNet3D::Affine UNet3D::copy_affine(const std::string& name, const Affine& src) {
  Affine a;
  a.scale = copy_param(name + ".scale", src.scale);
  a.bias = copy_param(name + ".bias", src.bias);
  return a;
}

UNet3D::Attn UNet3D::copy_attn(const std::string& name, const Attn& src) {
  Attn at;
  at.heads = src.heads;
  at.groups = src.groups;
  at.gn = copy_affine(name + ".norm", src.gn);
  at.q = copy_conv(name + ".q", src.q);
  at.k = copy_conv(name + ".k", src.k);
  at.v = copy_conv(name + ".v", src.v);
  at.o = copy_conv(name + ".o", src.o);
  return at;
}

UNet3D::ResBlock UNet3D::copy_res(const std::string& name, const ResBlock& src) {
  ResBlock rb;
  rb.cin = src.cin;
  rb.cout = src.cout;
  rb.groups_in = src.groups_in;
  rb.groups_out = src.groups_out;
  // a spade-modulated source block has no plain norm to copy; start from the
  // identity affine, which matches the source block's init-time behavior
  if (src.spade) {
    rb.gn1.scale = add_const_param(name + ".norm1.scale", {src.cin}, 1.0, false);
    rb.gn1.bias = add_const_param(name + ".norm1.bias", {src.cin}, 0.0, false);
  } else {
    rb.gn1 = copy_affine(name + ".norm1", src.gn1);
  }
  rb.c1 = copy_conv(name + ".conv1", src.c1);
  rb.temb.w = copy_param(name + ".temb.w", src.temb.w);
  rb.temb.b = copy_param(name + ".temb.b", src.temb.b);
  rb.gn2 = copy_affine(name + ".norm2", src.gn2);
  rb.c2 = copy_conv(name + ".conv2", src.c2);
  if (src.skip) rb.skip = copy_conv(name + ".skip", *src.skip);
  return rb;
}

long UNet3D::groups_for(long channels) const { return std::min(cfg_.norm_groups, channels); }

UNet3D::UNet3D(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  temb_dim_ = 4 * cfg_.base_channels;
  sin_dim_ = cfg_.base_channels;
  const long L = cfg_.levels();
  const bool spade = cfg_.injection_mode == InjectionMode::AddToEncDecSpade;
  // spade mode keeps the additive encoder/decoder adapters and layers the
  // normalization modulation on top, so at zero init it coincides with
  // add-encdec instead of replacing it
  const bool add_enc = cfg_.injection_mode == InjectionMode::AddToEncDec || spade;
  const bool add_dec = cfg_.injection_mode == InjectionMode::AddToDec ||
                       cfg_.injection_mode == InjectionMode::AddToEncDec || spade;

  cond_table_ =
      add_param("cond_table", {cfg_.cond_vocab_size + 1, cfg_.cond_embed_dim}, 0.1, false, rng);
  cond_proj_ = make_lin("cond_proj", cfg_.cond_embed_dim, temb_dim_, false, false, rng);
  temb_mlp1_ = make_lin("temb.mlp1", sin_dim_, temb_dim_, false, false, rng);
  temb_mlp2_ = make_lin("temb.mlp2", temb_dim_, temb_dim_, false, false, rng);

  long stem_in = cfg_.in_channels *
                 (cfg_.injection_mode == InjectionMode::Concat ? 2 : 1);
  stem_ = make_conv("stem", stem_in, cfg_.channels_at(0), 3, 1, 1, false, false, rng);

  for (long j = 0; j < L; ++j) {
    std::string base = "enc" + std::to_string(j);
    long hch = j == 0 ? cfg_.channels_at(0) : cfg_.channels_at(j - 1);
    long cj = cfg_.channels_at(j);
    Level lv;
    lv.res = make_res(base + ".res", hch, cj, spade ? cj : 0, rng);
    lv.tconv = make_tconv(base + ".tconv", cj, rng);
    lv.has_attn = cfg_.attention_at(j);
    if (lv.has_attn) {
      lv.sa = make_attn(base + ".sa", cj, false, rng);
      lv.ta = make_attn(base + ".ta", cj, true, rng);
    }
    if (add_enc) lv.inject = make_conv(base + ".inject", cj, hch, 1, 1, 0, true, false, rng);
    enc_.push_back(std::move(lv));
    if (j < L - 1)
      down_.push_back(make_conv("down" + std::to_string(j), cj, cj, 3, 2, 1, false, false, rng));
  }

  long cl = cfg_.channels_at(L - 1);
  mid_a_.res = make_res("mid.res1", cl, cl, 0, rng);
  mid_a_.tconv = make_tconv("mid.tconv1", cl, rng);
  mid_a_.has_attn = true;
  mid_a_.sa = make_attn("mid.sa", cl, false, rng);
  mid_a_.ta = make_attn("mid.ta", cl, true, rng);
  mid_res2_ = make_res("mid.res2", cl, cl, 0, rng);
  mid_tconv2_ = make_tconv("mid.tconv2", cl, rng);

  dec_.resize(static_cast<size_t>(L));
  up_.resize(static_cast<size_t>(L - 1));
  for (long j = L - 1; j >= 0; --j) {
    std::string base = "dec" + std::to_string(j);
    long cj = cfg_.channels_at(j);
    long appear_ch = j == L - 1 ? cl : cj;
    Level lv;
    lv.res = make_res(base + ".res", 2 * cj, cj, spade ? appear_ch : 0, rng);
    lv.tconv = make_tconv(base + ".tconv", cj, rng);
    lv.has_attn = cfg_.attention_at(j);
    if (lv.has_attn) {
      lv.sa = make_attn(base + ".sa", cj, false, rng);
      lv.ta = make_attn(base + ".ta", cj, true, rng);
    }
    if (add_dec) lv.inject = make_conv(base + ".inject", appear_ch, cj, 1, 1, 0, true, false, rng);
    dec_[static_cast<size_t>(j)] = std::move(lv);
    if (j > 0)
      up_[static_cast<size_t>(j - 1)] = make_conv("up" + std::to_string(j), cj,
                                                  cfg_.channels_at(j - 1), 3, 1, 1, false,
                                                  false, rng);
  }

  out_norm_ = make_affine("out.norm", cfg_.channels_at(0), false);
  out_conv_ = make_conv("out.conv", cfg_.channels_at(0), cfg_.in_channels, 3, 1, 1, false,
                        false, rng);

  if (cfg_.injection_mode != InjectionMode::Concat) {
    has_appearance_ = true;
    appear_stem_ = copy_conv("appear.stem", stem_);
    for (long j = 0; j < L; ++j) {
      std::string base = "appear.enc" + std::to_string(j);
      AppearLevel al;
      al.res = copy_res(base + ".res", enc_[static_cast<size_t>(j)].res);
      al.has_attn = enc_[static_cast<size_t>(j)].has_attn;
      if (al.has_attn) al.sa = copy_attn(base + ".sa", enc_[static_cast<size_t>(j)].sa);
      appear_enc_.push_back(std::move(al));
      if (j < L - 1)
        appear_down_.push_back(
            copy_conv("appear.down" + std::to_string(j), down_[static_cast<size_t>(j)]));
    }
    appear_mid_res1_ = copy_res("appear.mid.res1", mid_a_.res);
    appear_mid_sa_ = copy_attn("appear.mid.sa", mid_a_.sa);
    appear_mid_res2_ = copy_res("appear.mid.res2", mid_res2_);
  }
}

Param* UNet3D::find_param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

long UNet3D::param_count() const {
  long n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

// ---- forward ----------------------------------------------------------------

Tensor UNet3D::time_cond_rows(const std::vector<long>& ts,
                              const std::vector<long>& cond_ids) const {
  long b = static_cast<long>(ts.size());
  if (cond_ids.size() != ts.size())
    throw std::invalid_argument("time_cond_rows: ts / cond_ids size mismatch");
  for (long id : cond_ids)
    if (id < 0 || id > cfg_.cond_vocab_size)
      throw std::invalid_argument("cond id " + std::to_string(id) + " out of range");
  long half = sin_dim_ / 2;
  std::vector<double> feat(static_cast<size_t>(b * sin_dim_));
  for (long i = 0; i < b; ++i) {
    double t = static_cast<double>(ts[static_cast<size_t>(i)]);
    for (long k = 0; k < half; ++k) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                             static_cast<double>(half));
      feat[static_cast<size_t>(i * sin_dim_ + k)] = std::sin(t * freq);
      feat[static_cast<size_t>(i * sin_dim_ + half + k)] = std::cos(t * freq);
    }
  }
  Tensor s = Tensor::from_values({b, sin_dim_}, feat, cond_table_.dtype());
  Tensor h = ops::linear(s, temb_mlp1_.w, temb_mlp1_.b);
  h = ops::linear(silu(h), temb_mlp2_.w, temb_mlp2_.b);
  Tensor c = ops::embedding_lookup(cond_table_, cond_ids);
  c = ops::linear(c, cond_proj_.w, cond_proj_.b);
  return add(h, c);
}

Tensor UNet3D::affine_norm(const Affine& a, const Tensor& x, long groups) const {
  Tensor h = ops::group_norm(x, groups);
  h = ops::scale_channels(h, a.scale);
  return ops::add_bias_channels(h, a.bias);
}

Tensor UNet3D::res_forward(const ResBlock& rb, const Tensor& x, const Tensor& temb_rows,
                           const Tensor* f_a) const {
  Tensor h;
  if (rb.spade) {
    if (f_a == nullptr) throw std::logic_error("spade res block needs an appearance feature");
    h = spade_inject(x, *f_a, rb.groups_in, rb.spade->gamma_w, rb.spade->gamma_b,
                     rb.spade->beta_w, rb.spade->beta_b);
  } else {
    h = affine_norm(rb.gn1, x, rb.groups_in);
  }
  h = conv2d(silu(h), rb.c1.w, rb.c1.b, 1, 1);
  Tensor tp = ops::linear(silu(temb_rows), rb.temb.w, rb.temb.b);
  h = ops::add_bias_spatial(h, tp);
  h = affine_norm(rb.gn2, h, rb.groups_out);
  h = conv2d(silu(h), rb.c2.w, rb.c2.b, 1, 1);
  Tensor sk = rb.skip ? conv2d(x, rb.skip->w, rb.skip->b, 1, 0) : x;
  return add(sk, h);
}

Tensor UNet3D::attn_forward(const Attn& at, const Tensor& x) const {
  long r = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  long d = c / at.heads;
  Tensor h = affine_norm(at.gn, x, at.groups);
  auto heads_first = [&](const Tensor& t) {
    return ops::permute(ops::reshape(t, {r, at.heads, d, hh * ww}), {0, 1, 3, 2});
  };
  Tensor q = heads_first(conv2d(h, at.q.w, at.q.b, 1, 0));
  Tensor k = heads_first(conv2d(h, at.k.w, at.k.b, 1, 0));
  Tensor v = heads_first(conv2d(h, at.v.w, at.v.b, 1, 0));
  Tensor o = ops::attention(q, k, v);
  o = ops::reshape(ops::permute(o, {0, 1, 3, 2}), {r, c, hh, ww});
  o = conv2d(o, at.o.w, at.o.b, 1, 0);
  return add(x, o);
}

Tensor UNet3D::temporal_attn_forward(const Attn& at, const Tensor& x, long batch) const {
  long r = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  long n = r / batch;
  long d = c / at.heads;
  Tensor h = affine_norm(at.gn, x, at.groups);
  auto frames_last = [&](const Tensor& t) {
    Tensor u = ops::reshape(t, {batch, n, at.heads, d, hh, ww});
    u = ops::permute(u, {0, 4, 5, 2, 1, 3});  // [B,H,W,heads,N,d]
    return ops::reshape(u, {batch * hh * ww, at.heads, n, d});
  };
  Tensor q = frames_last(conv2d(h, at.q.w, at.q.b, 1, 0));
  Tensor k = frames_last(conv2d(h, at.k.w, at.k.b, 1, 0));
  Tensor v = frames_last(conv2d(h, at.v.w, at.v.b, 1, 0));
  Tensor o = ops::attention(q, k, v);
  o = ops::reshape(o, {batch, hh, ww, at.heads, n, d});
  o = ops::permute(o, {0, 4, 3, 5, 1, 2});  // [B,N,heads,d,H,W]
  o = ops::reshape(o, {r, c, hh, ww});
  o = conv2d(o, at.o.w, at.o.b, 1, 0);
  return add(x, o);
}

Tensor UNet3D::tconv_forward(const TConv& tc, const Tensor& x, long batch) const {
  long r = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  long n = r / batch;
  Tensor h = ops::reshape(x, {batch, n, c, hh, ww});
  h = ops::permute(h, {0, 2, 1, 3, 4});  // [B,C,N,H,W]
  h = ops::conv1d_temporal(h, tc.w, tc.b);
  h = ops::permute(h, {0, 2, 1, 3, 4});
  h = ops::reshape(h, {r, c, hh, ww});
  return add(x, h);
}

UNet3D::AppearFeatures UNet3D::appearance_forward(const Tensor& cond_rows,
                                                  const Tensor& temb_rows) const {
  ++appearance_evals_;
  AppearFeatures af;
  Tensor h = conv2d(cond_rows, appear_stem_.w, appear_stem_.b, 1, 1);
  const long L = cfg_.levels();
  for (long j = 0; j < L; ++j) {
    const AppearLevel& al = appear_enc_[static_cast<size_t>(j)];
    h = res_forward(al.res, h, temb_rows, nullptr);
    if (al.has_attn) h = attn_forward(al.sa, h);
    af.level.push_back(h);
    if (j < L - 1) {
      const Conv& dn = appear_down_[static_cast<size_t>(j)];
      h = conv2d(h, dn.w, dn.b, dn.stride, dn.pad);
    }
  }
  h = res_forward(appear_mid_res1_, h, temb_rows, nullptr);
  h = attn_forward(appear_mid_sa_, h);
  h = res_forward(appear_mid_res2_, h, temb_rows, nullptr);
  af.middle = h;
  return af;
}

Tensor UNet3D::core_forward(const Tensor& x, long batch, const Tensor& temb_rows,
                            const Tensor& cond_rows, bool temporal) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
    shape_error("unet forward", shape_str(x.shape()));
  if (!cond_rows.defined() || !cond_rows.same_shape(x))
    shape_error("unet forward cond", cond_rows.defined() ? shape_str(cond_rows.shape())
                                                         : std::string("(undefined)"));
  const long L = cfg_.levels();
  const InjectionMode mode = cfg_.injection_mode;
  const bool spade = mode == InjectionMode::AddToEncDecSpade;

  AppearFeatures af;
  Tensor h;
  if (mode == InjectionMode::Concat) {
    h = conv2d(concat_channels(x, cond_rows), stem_.w, stem_.b, 1, 1);
  } else {
    af = appearance_forward(cond_rows, temb_rows);
    h = conv2d(x, stem_.w, stem_.b, 1, 1);
  }

  std::vector<Tensor> skips;
  for (long j = 0; j < L; ++j) {
    const Level& lv = enc_[static_cast<size_t>(j)];
    const Tensor* fa = spade ? &af.level[static_cast<size_t>(j)] : nullptr;
    if (lv.inject) {
      Tensor inj = conv2d(af.level[static_cast<size_t>(j)], lv.inject->w, lv.inject->b, 1, 0);
      h = add(h, inj);
    }
    h = res_forward(lv.res, h, temb_rows, fa);
    if (temporal) h = tconv_forward(lv.tconv, h, batch);
    if (lv.has_attn) {
      h = attn_forward(lv.sa, h);
      if (temporal) h = temporal_attn_forward(lv.ta, h, batch);
    }
    skips.push_back(h);
    if (j < L - 1) {
      const Conv& dn = down_[static_cast<size_t>(j)];
      h = conv2d(h, dn.w, dn.b, dn.stride, dn.pad);
    }
  }

  h = res_forward(mid_a_.res, h, temb_rows, nullptr);
  if (temporal) h = tconv_forward(mid_a_.tconv, h, batch);
  h = attn_forward(mid_a_.sa, h);
  if (temporal) h = temporal_attn_forward(mid_a_.ta, h, batch);
  h = res_forward(mid_res2_, h, temb_rows, nullptr);
  if (temporal) h = tconv_forward(mid_tconv2_, h, batch);

  for (long j = L - 1; j >= 0; --j) {
    const Level& lv = dec_[static_cast<size_t>(j)];
    const Tensor* f = nullptr;
    if (has_appearance_)
      f = j == L - 1 ? &af.middle : &af.level[static_cast<size_t>(j)];
    if (lv.inject) h = add(h, conv2d(*f, lv.inject->w, lv.inject->b, 1, 0));
    h = concat_channels(h, skips[static_cast<size_t>(j)]);
    const Tensor* fa = spade ? f : nullptr;
    h = res_forward(lv.res, h, temb_rows, fa);
    if (temporal) h = tconv_forward(lv.tconv, h, batch);
    if (lv.has_attn) {
      h = attn_forward(lv.sa, h);
      if (temporal) h = temporal_attn_forward(lv.ta, h, batch);
    }
    if (j > 0) {
      const Conv& up = up_[static_cast<size_t>(j - 1)];
      h = conv2d(ops::nearest_upsample(h, 2), up.w, up.b, 1, 1);
    }
  }

  h = affine_norm(out_norm_, h, groups_for(cfg_.channels_at(0)));
  return conv2d(silu(h), out_conv_.w, out_conv_.b, 1, 1);
}

Tensor UNet3D::forward(const Tensor& z_t, long t, const Tensor& z_c, long cond_id) const {
  if (z_t.ndim() != 4) shape_error("unet forward", shape_str(z_t.shape()));
  return forward_with_cond_seq(z_t, t, make_cond_sequence(z_c, z_t.dim(0)), cond_id);
}

Tensor UNet3D::forward_with_cond_seq(const Tensor& z_t, long t, const Tensor& cond_seq,
                                     long cond_id) const {
  if (z_t.ndim() != 4) shape_error("unet forward", shape_str(z_t.shape()));
  long n = z_t.dim(0);
  Tensor rows = ops::repeat_rows(time_cond_rows({t}, {cond_id}), n);
  return core_forward(z_t, 1, rows, cond_seq, true);
}

Tensor UNet3D::forward_batch(const Tensor& z_t, const std::vector<long>& ts,
                             const Tensor& cond_seqs, const std::vector<long>& cond_ids) const {
  if (z_t.ndim() != 5) shape_error("unet forward_batch", shape_str(z_t.shape()));
  if (!cond_seqs.same_shape(z_t))
    shape_error("unet forward_batch cond", shape_str(cond_seqs.shape()));
  long b = z_t.dim(0), n = z_t.dim(1);
  if (static_cast<long>(ts.size()) != b)
    throw std::invalid_argument("forward_batch: one t per sample required");
  Shape flat = {b * n, z_t.dim(2), z_t.dim(3), z_t.dim(4)};
  Tensor rows = ops::repeat_rows(time_cond_rows(ts, cond_ids), n);
  Tensor out = core_forward(ops::reshape(z_t, flat), b, rows, ops::reshape(cond_seqs, flat), true);
  return ops::reshape(out, z_t.shape());
}

namespace {
Tensor take_frame(const Tensor& x, long i) {
  Shape s = x.shape();
  long per = x.numel() / s[0];
  s[0] = 1;
  Tensor out = make_tensor(s, x.dtype());
  for (long j = 0; j < per; ++j) out.set_value(j, x.value_at(i * per + j));
  return out;
}
}  // namespace

Tensor UNet3D::forward_2d_reference(const Tensor& z_t, long t, const Tensor& z_c,
                                    long cond_id) const {
  if (z_t.ndim() != 4) shape_error("unet forward_2d_reference", shape_str(z_t.shape()));
  long n = z_t.dim(0);
  Tensor cond_seq = make_cond_sequence(z_c, n);
  Tensor rows = time_cond_rows({t}, {cond_id});
  Tensor out = make_tensor(z_t.shape(), z_t.dtype());
  long per = z_t.numel() / n;
  for (long i = 0; i < n; ++i) {
    Tensor yi = core_forward(take_frame(z_t, i), 1, rows, take_frame(cond_seq, i), false);
    for (long j = 0; j < per; ++j) out.set_value(i * per + j, yi.value_at(j));
  }
  return out;
}

}  // namespace vdiff
