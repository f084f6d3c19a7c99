#include "dgseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dgseg/rng.hpp"

namespace dgseg {

using nlohmann::json;

void ModelConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("model: depth must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("model: base_channels must be >= 1");
  if (in_channels != 3) throw std::invalid_argument("model: in_channels is fixed at 3");
  if (n_categories < 1) throw std::invalid_argument("model: n_categories must be >= 1");
  const int div = 1 << depth;
  if (patch_size.nx % div || patch_size.ny % div || patch_size.nz % div)
    throw std::invalid_argument("model: patch_size must be divisible by 2^depth");
  if (patch_size.nx < div || patch_size.ny < div || patch_size.nz < div)
    throw std::invalid_argument("model: patch_size too small for depth");
}

PromptChannels encode_prompts(const PromptSet& p, Shape3 patch_shape, const Spacing& spacing) {
  PromptChannels out;
  out.shape = patch_shape;
  out.point_channel.assign(std::size_t(patch_shape.voxels()), 0.0);
  out.box_channel.assign(std::size_t(patch_shape.voxels()), 0.0);

  constexpr double kSigmaMm = 2.0;
  for (const auto& pt : p.points) {
    if (!in_bounds(patch_shape, pt))
      throw std::invalid_argument("encode_prompts: point outside patch");
    for (int z = 0; z < patch_shape.nz; ++z)
      for (int y = 0; y < patch_shape.ny; ++y)
        for (int x = 0; x < patch_shape.nx; ++x) {
          const double dx = (x - pt.x) * spacing[0] / kSigmaMm;
          const double dy = (y - pt.y) * spacing[1] / kSigmaMm;
          const double dz = (z - pt.z) * spacing[2] / kSigmaMm;
          out.point_channel[std::size_t(flat_index(patch_shape, x, y, z))] +=
              std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
        }
  }
  for (auto& v : out.point_channel) v = std::min(v, 1.0);

  for (const auto& b : p.boxes) {
    if (b.empty() || b.lo.x < 0 || b.lo.y < 0 || b.lo.z < 0 || b.hi.x > patch_shape.nx ||
        b.hi.y > patch_shape.ny || b.hi.z > patch_shape.nz)
      throw std::invalid_argument("encode_prompts: box outside patch");
    for (int z = b.lo.z; z < b.hi.z; ++z)
      for (int y = b.lo.y; y < b.hi.y; ++y)
        for (int x = b.lo.x; x < b.hi.x; ++x)
          out.box_channel[std::size_t(flat_index(patch_shape, x, y, z))] = 1.0;
  }
  return out;
}

namespace {

void ensure(Tensor& t, int c, int d, int h, int w) {
  if (t.c != c || t.d != d || t.h != h || t.w != w) t = Tensor(c, d, h, w);
}

void init_conv(Rng& rng, int cin, int cout, int taps, ParamTensor& w, ParamTensor& b) {
  w.resize(std::size_t(cout) * cin * taps);
  b.resize(std::size_t(cout));
  const double sd = std::sqrt(2.0 / double(cin * taps));
  for (auto& x : w.w) x = rng.normal(0.0, sd);
}

}  // namespace

UNet3D UNet3D::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  UNet3D m;
  m.cfg_ = cfg;
  m.enc_a_.resize(std::size_t(cfg.depth));
  m.enc_b_.resize(std::size_t(cfg.depth));
  m.dec_a_.resize(std::size_t(cfg.depth));
  m.dec_b_.resize(std::size_t(cfg.depth));

  int layer = 0;
  auto make = [&](Conv& c, int cin, int cout, int taps) {
    c.cin = cin;
    c.cout = cout;
    Rng rng(derive_seed(seed, hash_string("layer"), std::uint64_t(layer++)));
    init_conv(rng, cin, cout, taps, c.w, c.b);
  };

  for (int level = 1; level <= cfg.depth; ++level) {
    const int cin = level == 1 ? cfg.in_channels : cfg.level_channels(level - 1);
    const int ch = cfg.level_channels(level);
    make(m.enc_a_[std::size_t(level - 1)], cin, ch, 27);
    make(m.enc_b_[std::size_t(level - 1)], ch, ch, 27);
  }
  const int cb = cfg.bottleneck_channels();
  make(m.bott_a_, cfg.level_channels(cfg.depth), cb, 27);
  make(m.bott_b_, cb, cb, 27);
  for (int j = 0; j < cfg.depth; ++j) {
    const int level = cfg.depth - j;
    const int up_ch = level == cfg.depth ? cb : cfg.level_channels(level + 1);
    const int skip_ch = cfg.level_channels(level);
    make(m.dec_a_[std::size_t(j)], up_ch + skip_ch, skip_ch, 27);
    make(m.dec_b_[std::size_t(j)], skip_ch, skip_ch, 27);
  }
  make(m.head_, cfg.level_channels(1), 1, 1);

  m.embedding_.resize(std::size_t(cfg.n_categories) * cb);
  Rng erng(derive_seed(seed, hash_string("embedding")));
  for (auto& x : m.embedding_.w) x = erng.normal(0.0, 0.1);

  m.trainable_.assign(std::size_t(cfg.n_blocks()), true);
  return m;
}

std::vector<std::string> UNet3D::block_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (int i = 1; i <= cfg.depth; ++i) names.push_back("encoder_" + std::to_string(i));
  names.push_back("bottleneck");
  for (int i = cfg.depth; i >= 1; --i) names.push_back("decoder_" + std::to_string(i));
  names.push_back("head");
  return names;
}

void UNet3D::for_each_param(const std::function<void(ParamTensor&, int)>& fn) {
  const int d = cfg_.depth;
  for (int i = 0; i < d; ++i) {
    fn(enc_a_[std::size_t(i)].w, i);
    fn(enc_a_[std::size_t(i)].b, i);
    fn(enc_b_[std::size_t(i)].w, i);
    fn(enc_b_[std::size_t(i)].b, i);
  }
  fn(bott_a_.w, d);
  fn(bott_a_.b, d);
  fn(bott_b_.w, d);
  fn(bott_b_.b, d);
  fn(embedding_, d);
  for (int j = 0; j < d; ++j) {
    fn(dec_a_[std::size_t(j)].w, d + 1 + j);
    fn(dec_a_[std::size_t(j)].b, d + 1 + j);
    fn(dec_b_[std::size_t(j)].w, d + 1 + j);
    fn(dec_b_[std::size_t(j)].b, d + 1 + j);
  }
  fn(head_.w, 2 * d + 1);
  fn(head_.b, 2 * d + 1);
}

void UNet3D::for_each_param(const std::function<void(const ParamTensor&, int)>& fn) const {
  const_cast<UNet3D*>(this)->for_each_param(
      [&fn](ParamTensor& p, int b) { fn(p, b); });
}

std::int64_t UNet3D::set_trainable_blocks(int k) {
  const int nb = cfg_.n_blocks();
  if (k < 1 || k > nb)
    throw std::invalid_argument("set_trainable_blocks: k must be in [1, " +
                                std::to_string(nb) + "]");
  for (int i = 0; i < nb; ++i) trainable_[std::size_t(i)] = i >= nb - k;
  return trainable_parameter_count();
}

std::int64_t UNet3D::trainable_parameter_count() const {
  std::int64_t n = 0;
  for_each_param([&](const ParamTensor& p, int b) {
    if (trainable_[std::size_t(b)]) n += std::int64_t(p.w.size());
  });
  return n;
}

void UNet3D::zero_grads() {
  for_each_param([](ParamTensor& p, int) { p.zero_grad(); });
}

std::vector<double> UNet3D::flat_parameters() const {
  std::vector<double> flat;
  for_each_param([&](const ParamTensor& p, int) {
    flat.insert(flat.end(), p.w.begin(), p.w.end());
  });
  return flat;
}

void UNet3D::load_flat_parameters(const std::vector<double>& flat) {
  std::size_t pos = 0;
  for_each_param([&](ParamTensor& p, int) {
    if (pos + p.w.size() > flat.size())
      throw std::invalid_argument("load_flat_parameters: size mismatch");
    std::copy(flat.begin() + std::ptrdiff_t(pos),
              flat.begin() + std::ptrdiff_t(pos + p.w.size()), p.w.begin());
    pos += p.w.size();
  });
  if (pos != flat.size())
    throw std::invalid_argument("load_flat_parameters: size mismatch");
}

const Tensor& UNet3D::encode_level_out(int level, Trace& tr) const {
  return tr.enc_b[std::size_t(level - 1)].out;
}

void UNet3D::run_conv_block(const Conv& conv, const Tensor& in, ConvTrace& ct) const {
  ensure(ct.in, in.c, in.d, in.h, in.w);
  ct.in.v = in.v;
  ensure(ct.pre, conv.cout, in.d, in.h, in.w);
  conv3_forward(in, conv.w, conv.b, conv.cout, ct.pre);
  ensure(ct.out, conv.cout, in.d, in.h, in.w);
  silu_forward(ct.pre, ct.out);
}

void UNet3D::encode_level(int level, const Tensor& x, Trace& tr) const {
  run_conv_block(enc_a_[std::size_t(level - 1)], x, tr.enc_a[std::size_t(level - 1)]);
  run_conv_block(enc_b_[std::size_t(level - 1)], tr.enc_a[std::size_t(level - 1)].out,
                 tr.enc_b[std::size_t(level - 1)]);
}

void UNet3D::pool_after(int level, Trace& tr) const {
  const Tensor& src = tr.enc_b[std::size_t(level - 1)].out;
  Tensor& dst = tr.pooled[std::size_t(level - 1)];
  ensure(dst, src.c, src.d / 2, src.h / 2, src.w / 2);
  avgpool2_forward(src, dst);
}

void UNet3D::prepare_trace(Trace& tr) const {
  const std::size_t d = std::size_t(cfg_.depth);
  tr.enc_a.resize(d);
  tr.enc_b.resize(d);
  tr.pooled.resize(d);
  tr.up.resize(d);
  tr.cat.resize(d);
  tr.dec_a.resize(d);
  tr.dec_b.resize(d);
  tr.mix_scale.assign(d, {});
}

void UNet3D::decode_from_bottleneck(std::optional<int> category_id, Trace& tr) const {
  run_conv_block(bott_a_, tr.pooled[std::size_t(cfg_.depth - 1)], tr.bott_a);
  run_conv_block(bott_b_, tr.bott_a.out, tr.bott_b);

  const Tensor& bo = tr.bott_b.out;
  ensure(tr.bott_embedded, bo.c, bo.d, bo.h, bo.w);
  tr.bott_embedded.v = bo.v;
  if (category_id) {
    if (*category_id < 0 || *category_id >= cfg_.n_categories)
      throw std::invalid_argument("forward: category_id out of range");
    const double* e = embedding_.w.data() + std::size_t(*category_id) * bo.c;
    for (int c = 0; c < bo.c; ++c) {
      double* ch = tr.bott_embedded.channel(c);
      for (std::size_t i = 0; i < tr.bott_embedded.spatial(); ++i) ch[i] += e[c];
    }
  }

  const Tensor* cur = &tr.bott_embedded;
  for (int j = 0; j < cfg_.depth; ++j) {
    const int level = cfg_.depth - j;
    Tensor& up = tr.up[std::size_t(j)];
    ensure(up, cur->c, cur->d * 2, cur->h * 2, cur->w * 2);
    upsample2_forward(*cur, up);
    const Tensor& skip = tr.enc_b[std::size_t(level - 1)].out;
    Tensor& cat = tr.cat[std::size_t(j)];
    ensure(cat, up.c + skip.c, up.d, up.h, up.w);
    concat_channels(up, skip, cat);
    run_conv_block(dec_a_[std::size_t(j)], cat, tr.dec_a[std::size_t(j)]);
    run_conv_block(dec_b_[std::size_t(j)], tr.dec_a[std::size_t(j)].out, tr.dec_b[std::size_t(j)]);
    cur = &tr.dec_b[std::size_t(j)].out;
  }

  ensure(tr.head_in, cur->c, cur->d, cur->h, cur->w);
  tr.head_in.v = cur->v;
  ensure(tr.logits, 1, cur->d, cur->h, cur->w);
  conv1_forward(tr.head_in, head_.w, head_.b, 1, tr.logits);
}

const Tensor& UNet3D::forward(const Tensor& input, std::optional<int> category_id,
                              Trace& tr) const {
  if (input.c != cfg_.in_channels)
    throw std::invalid_argument("forward: expected " + std::to_string(cfg_.in_channels) +
                                " input channels");
  const int div = 1 << cfg_.depth;
  if (input.d % div || input.h % div || input.w % div)
    throw std::invalid_argument("forward: spatial dims must be divisible by 2^depth");

  prepare_trace(tr);
  const Tensor* x = &input;
  for (int level = 1; level <= cfg_.depth; ++level) {
    encode_level(level, *x, tr);
    pool_after(level, tr);
    x = &tr.pooled[std::size_t(level - 1)];
  }
  decode_from_bottleneck(category_id, tr);
  return tr.logits;
}

namespace {

// y = scale * (x - mu) + mu_mix per channel; stats detached. Returns scales.
std::vector<double> apply_stat_mix(Tensor& x, const std::vector<double>& mu_own,
                                   const std::vector<double>& sd_own,
                                   const std::vector<double>& mu_other,
                                   const std::vector<double>& sd_other, double lambda) {
  std::vector<double> scales(std::size_t(x.c));
  for (int c = 0; c < x.c; ++c) {
    const double mu_mix = lambda * mu_own[std::size_t(c)] + (1 - lambda) * mu_other[std::size_t(c)];
    const double sd_mix = lambda * sd_own[std::size_t(c)] + (1 - lambda) * sd_other[std::size_t(c)];
    const double scale = sd_mix / sd_own[std::size_t(c)];
    scales[std::size_t(c)] = scale;
    double* ch = x.channel(c);
    const double mu = mu_own[std::size_t(c)];
    for (std::size_t i = 0; i < x.spatial(); ++i) ch[i] = scale * (ch[i] - mu) + mu_mix;
  }
  return scales;
}

void channel_stats(const Tensor& x, std::vector<double>& mu, std::vector<double>& sd) {
  mu.assign(std::size_t(x.c), 0.0);
  sd.assign(std::size_t(x.c), 0.0);
  const double n = double(x.spatial());
  for (int c = 0; c < x.c; ++c) {
    const double* ch = x.channel(c);
    double s = 0;
    for (std::size_t i = 0; i < x.spatial(); ++i) s += ch[i];
    mu[std::size_t(c)] = s / n;
    double ss = 0;
    for (std::size_t i = 0; i < x.spatial(); ++i) {
      const double dxv = ch[i] - mu[std::size_t(c)];
      ss += dxv * dxv;
    }
    sd[std::size_t(c)] = std::sqrt(ss / n + 1e-8);
  }
}

}  // namespace

void UNet3D::forward_pair_mixstyle(const Tensor& in_a, const Tensor& in_b,
                                   std::optional<int> cat_a, std::optional<int> cat_b,
                                   const MixStylePlan& plan, Trace& tr_a, Trace& tr_b) const {
  prepare_trace(tr_a);
  prepare_trace(tr_b);
  const Tensor* xa = &in_a;
  const Tensor* xb = &in_b;
  const int mixed_levels = std::min(2, cfg_.depth);

  for (int level = 1; level <= cfg_.depth; ++level) {
    encode_level(level, *xa, tr_a);
    encode_level(level, *xb, tr_b);
    if (plan.active && level <= mixed_levels) {
      Tensor& fa = tr_a.enc_b[std::size_t(level - 1)].out;
      Tensor& fb = tr_b.enc_b[std::size_t(level - 1)].out;
      std::vector<double> mu_a, sd_a, mu_b, sd_b;
      channel_stats(fa, mu_a, sd_a);
      channel_stats(fb, mu_b, sd_b);
      tr_a.mix_scale[std::size_t(level - 1)] =
          apply_stat_mix(fa, mu_a, sd_a, mu_b, sd_b, plan.lambda_a);
      tr_b.mix_scale[std::size_t(level - 1)] =
          apply_stat_mix(fb, mu_b, sd_b, mu_a, sd_a, plan.lambda_b);
    }
    pool_after(level, tr_a);
    pool_after(level, tr_b);
    xa = &tr_a.pooled[std::size_t(level - 1)];
    xb = &tr_b.pooled[std::size_t(level - 1)];
  }
  decode_from_bottleneck(cat_a, tr_a);
  decode_from_bottleneck(cat_b, tr_b);
}

void UNet3D::backward(const Trace& tr, std::optional<int> category_id, const Tensor& dlogits) {
  const int d = cfg_.depth;
  const int nb = cfg_.n_blocks();
  int min_trainable = nb;  // lowest block index that still needs gradients
  for (int i = 0; i < nb; ++i)
    if (trainable_[std::size_t(i)]) {
      min_trainable = i;
      break;
    }
  if (min_trainable == nb) return;  // fully frozen

  auto conv_bwd = [](const Conv& conv, const ConvTrace& ct, const Tensor& gout, Tensor& gin,
                     bool want_params, bool want_input, Conv& acc) {
    // silu backward first
    Tensor gpre(ct.pre.c, ct.pre.d, ct.pre.h, ct.pre.w);
    silu_backward(ct.pre, gout, gpre);
    if (want_input) {
      gin = Tensor(ct.in.c, ct.in.d, ct.in.h, ct.in.w);
    }
    static ParamTensor discard_w, discard_b;
    ParamTensor& wacc = want_params ? acc.w : discard_w;
    ParamTensor& bacc = want_params ? acc.b : discard_b;
    if (!want_params) {
      discard_w.g.assign(conv.w.w.size(), 0.0);
      discard_b.g.assign(conv.b.w.size(), 0.0);
    }
    if (want_input) {
      conv3_backward(ct.in, conv.w, conv.cout, gpre, gin, wacc, bacc);
    } else {
      Tensor dummy(ct.in.c, ct.in.d, ct.in.h, ct.in.w);
      conv3_backward(ct.in, conv.w, conv.cout, gpre, dummy, wacc, bacc);
    }
  };

  // head
  const int head_block = 2 * d + 1;
  Tensor g_head_in(tr.head_in.c, tr.head_in.d, tr.head_in.h, tr.head_in.w);
  {
    const bool want_params = trainable_[std::size_t(head_block)];
    static ParamTensor discard_w, discard_b;
    ParamTensor& wacc = want_params ? head_.w : discard_w;
    ParamTensor& bacc = want_params ? head_.b : discard_b;
    if (!want_params) {
      discard_w.g.assign(head_.w.w.size(), 0.0);
      discard_b.g.assign(head_.b.w.size(), 0.0);
    }
    conv1_backward(tr.head_in, head_.w, 1, dlogits, g_head_in, wacc, bacc);
  }
  if (min_trainable >= head_block) return;

  // decoders, shallowest (j = depth-1, level 1) first in backward order
  std::vector<Tensor> g_skip(static_cast<std::size_t>(d));
  Tensor g_cur = std::move(g_head_in);
  for (int j = d - 1; j >= 0; --j) {
    const int level = d - j;
    const int block = d + 1 + j;
    const bool want_params = trainable_[std::size_t(block)];
    const bool deeper_needed = min_trainable < block;

    Tensor g_a_out;
    conv_bwd(dec_b_[std::size_t(j)], tr.dec_b[std::size_t(j)], g_cur, g_a_out, want_params,
             true, dec_b_[std::size_t(j)]);
    Tensor g_cat;
    conv_bwd(dec_a_[std::size_t(j)], tr.dec_a[std::size_t(j)], g_a_out, g_cat, want_params,
             deeper_needed, dec_a_[std::size_t(j)]);
    if (!deeper_needed) return;

    const Tensor& up = tr.up[std::size_t(j)];
    Tensor g_up(up.c, up.d, up.h, up.w);
    const Tensor& skip = tr.enc_b[std::size_t(level - 1)].out;
    g_skip[std::size_t(level - 1)] = Tensor(skip.c, skip.d, skip.h, skip.w);
    split_channels(g_cat, g_up, g_skip[std::size_t(level - 1)]);

    Tensor g_prev(up.c, up.d / 2, up.h / 2, up.w / 2);
    upsample2_backward(g_up, g_prev);
    g_cur = std::move(g_prev);
  }

  // category embedding (bottleneck block)
  const int bott_block = d;
  if (category_id && trainable_[std::size_t(bott_block)]) {
    double* eg = embedding_.g.data() + std::size_t(*category_id) * tr.bott_embedded.c;
    for (int c = 0; c < tr.bott_embedded.c; ++c) {
      const double* gch = g_cur.channel(c);
      double s = 0;
      for (std::size_t i = 0; i < g_cur.spatial(); ++i) s += gch[i];
      eg[c] += s;
    }
  }

  // bottleneck convs
  {
    const bool want_params = trainable_[std::size_t(bott_block)];
    const bool deeper_needed = min_trainable < bott_block;
    Tensor g_a_out;
    conv_bwd(bott_b_, tr.bott_b, g_cur, g_a_out, want_params, true, bott_b_);
    Tensor g_pooled;
    conv_bwd(bott_a_, tr.bott_a, g_a_out, g_pooled, want_params, deeper_needed, bott_a_);
    if (!deeper_needed) return;
    g_cur = std::move(g_pooled);
  }

  // encoder levels, deepest first
  for (int level = d; level >= 1; --level) {
    const int block = level - 1;
    const bool want_params = trainable_[std::size_t(block)];
    const bool deeper_needed = min_trainable < block;

    // gradient into enc out: pooled consumer + skip consumer
    const Tensor& out = tr.enc_b[std::size_t(level - 1)].out;
    Tensor g_out(out.c, out.d, out.h, out.w);
    avgpool2_backward(g_cur, g_out);
    const Tensor& gs = g_skip[std::size_t(level - 1)];
    for (std::size_t i = 0; i < g_out.v.size(); ++i) g_out.v[i] += gs.v[i];

    // training-time feature-stat mixing is y = a*x + const per channel
    const auto& scales = tr.mix_scale[std::size_t(level - 1)];
    if (!scales.empty()) {
      for (int c = 0; c < g_out.c; ++c) {
        double* gch = g_out.channel(c);
        for (std::size_t i = 0; i < g_out.spatial(); ++i) gch[i] *= scales[std::size_t(c)];
      }
    }

    Tensor g_a_out;
    conv_bwd(enc_b_[std::size_t(level - 1)], tr.enc_b[std::size_t(level - 1)], g_out, g_a_out,
             want_params, true, enc_b_[std::size_t(level - 1)]);
    Tensor g_in;
    conv_bwd(enc_a_[std::size_t(level - 1)], tr.enc_a[std::size_t(level - 1)], g_a_out, g_in,
             want_params, level > 1 && deeper_needed, enc_a_[std::size_t(level - 1)]);
    if (!deeper_needed) return;
    g_cur = std::move(g_in);
  }
}

void ema_update(UNet3D& teacher, const UNet3D& student, double momentum) {
  if (!(teacher.config() == student.config()))
    throw std::invalid_argument("ema_update: architecture mismatch");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("ema_update: momentum must be in [0,1)");

  std::vector<const ParamTensor*> sp;
  student.for_each_param([&](const ParamTensor& p, int) { sp.push_back(&p); });
  std::size_t idx = 0;
  teacher.for_each_param([&](ParamTensor& t, int) {
    const ParamTensor& s = *sp[idx++];
    for (std::size_t i = 0; i < t.w.size(); ++i)
      t.w[i] = momentum * t.w[i] + (1.0 - momentum) * s.w[i];
  });
}

void AdamOptimizer::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void AdamOptimizer::step(UNet3D& model) {
  std::vector<ParamTensor*> params;
  std::vector<int> blocks;
  model.for_each_param([&](ParamTensor& p, int b) {
    params.push_back(&p);
    blocks.push_back(b);
  });
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->w.size(), 0.0);
      v_[i].assign(params[i]->w.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!model.block_trainable(blocks[i])) continue;
    ParamTensor& p = *params[i];
    for (std::size_t j = 0; j < p.w.size(); ++j) {
      const double g = p.g[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mh = m_[i][j] / bc1;
      const double vh = v_[i][j] / bc2;
      p.w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'D', 'G', 'S', 'E', 'G', 'C', 'K', 'P'};
}

void save_checkpoint(const UNet3D& model, const CheckpointMeta& meta, const std::string& path) {
  const ModelConfig& c = model.config();
  json j{{"config",
          {{"depth", c.depth},
           {"base_channels", c.base_channels},
           {"in_channels", c.in_channels},
           {"n_categories", c.n_categories},
           {"patch_size", {c.patch_size.nx, c.patch_size.ny, c.patch_size.nz}}}},
         {"blocks", UNet3D::block_names(c)},
         {"meta",
          {{"kind", meta.kind}, {"seed", meta.seed}, {"step", meta.step}, {"note", meta.note}}}};
  const std::vector<double> flat = model.flat_parameters();
  j["n_params"] = flat.size();
  const std::string hdr = j.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCkptMagic, 8);
  const std::uint64_t len = hdr.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(hdr.data(), std::streamsize(hdr.size()));
  f.write(reinterpret_cast<const char*>(flat.data()), std::streamsize(flat.size() * 8));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

UNet3D load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string hdr(len, '\0');
  f.read(hdr.data(), std::streamsize(len));
  if (!f) throw std::runtime_error("checkpoint truncated: " + path);
  json j = json::parse(hdr);

  ModelConfig cfg;
  cfg.depth = j["config"]["depth"].get<int>();
  cfg.base_channels = j["config"]["base_channels"].get<int>();
  cfg.in_channels = j["config"]["in_channels"].get<int>();
  cfg.n_categories = j["config"]["n_categories"].get<int>();
  cfg.patch_size = {j["config"]["patch_size"][0].get<int>(),
                    j["config"]["patch_size"][1].get<int>(),
                    j["config"]["patch_size"][2].get<int>()};

  UNet3D model = UNet3D::init(cfg, 0);
  std::vector<double> flat(j["n_params"].get<std::size_t>());
  f.read(reinterpret_cast<char*>(flat.data()), std::streamsize(flat.size() * 8));
  if (!f) throw std::runtime_error("checkpoint weights truncated: " + path);
  model.load_flat_parameters(flat);

  if (meta) {
    meta->kind = j["meta"]["kind"].get<std::string>();
    meta->seed = j["meta"]["seed"].get<std::uint64_t>();
    meta->step = j["meta"]["step"].get<std::int64_t>();
    meta->note = j["meta"]["note"].get<std::string>();
  }
  return model;
}

std::uint64_t checkpoint_hash(const UNet3D& model) {
  const std::vector<double> flat = model.flat_parameters();
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(flat.data());
  for (std::size_t i = 0; i < flat.size() * 8; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// sliding-window inference
// ---------------------------------------------------------------------------

namespace {

std::vector<int> window_starts(int dim, int patch) {
  if (dim <= patch) return {0};
  std::vector<int> starts;
  const int stride = std::max(1, patch / 2);
  for (int s = 0; s + patch < dim; s += stride) starts.push_back(s);
  starts.push_back(dim - patch);
  return starts;
}

std::vector<double> window_weights(const Shape3& p) {
  std::vector<double> w(std::size_t(p.voxels()));
  const double cx = (p.nx - 1) / 2.0, cy = (p.ny - 1) / 2.0, cz = (p.nz - 1) / 2.0;
  const double sx = std::max(1.0, p.nx / 8.0), sy = std::max(1.0, p.ny / 8.0),
               sz = std::max(1.0, p.nz / 8.0);
  for (int z = 0; z < p.nz; ++z)
    for (int y = 0; y < p.ny; ++y)
      for (int x = 0; x < p.nx; ++x) {
        const double dx = (x - cx) / sx, dy = (y - cy) / sy, dz = (z - cz) / sz;
        w[std::size_t(flat_index(p, x, y, z))] = std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
      }
  return w;
}

}  // namespace

SegMask predict_mask(const UNet3D& model, const Volume& v, const PromptSet& prompts,
                     double threshold) {
  const Shape3 patch = model.config().patch_size;
  const Shape3 grid = v.shape;

  // pad (at the far end) when the volume is smaller than one patch
  const Shape3 padded{std::max(grid.nx, patch.nx), std::max(grid.ny, patch.ny),
                      std::max(grid.nz, patch.nz)};
  const bool needs_pad = !(padded == grid);
  const Volume* vol = &v;
  Volume padded_vol;
  if (needs_pad) {
    padded_vol = make_volume(padded, v.spacing, v.case_id);
    for (int z = 0; z < grid.nz; ++z)
      for (int y = 0; y < grid.ny; ++y)
        for (int x = 0; x < grid.nx; ++x) padded_vol.at(x, y, z) = v.at(x, y, z);
    vol = &padded_vol;
  }

  const auto xs = window_starts(padded.nx, patch.nx);
  const auto ys = window_starts(padded.ny, patch.ny);
  const auto zs = window_starts(padded.nz, patch.nz);
  const auto wmap = window_weights(patch);

  std::vector<double> acc(std::size_t(padded.voxels()), 0.0);
  std::vector<double> wsum(std::size_t(padded.voxels()), 0.0);

  Trace tr;
  Tensor input(model.config().in_channels, patch.nz, patch.ny, patch.nx);
  for (int z0 : zs)
    for (int y0 : ys)
      for (int x0 : xs) {
        // crop prompts to this window
        PromptSet wp;
        wp.category_id = prompts.category_id;
        for (const auto& pt : prompts.points) {
          const Index3 rel{pt.x - x0, pt.y - y0, pt.z - z0};
          if (in_bounds(patch, rel)) wp.points.push_back(rel);
        }
        for (const auto& b : prompts.boxes) {
          Box3 rb{{std::max(b.lo.x - x0, 0), std::max(b.lo.y - y0, 0), std::max(b.lo.z - z0, 0)},
                  {std::min(b.hi.x - x0, patch.nx), std::min(b.hi.y - y0, patch.ny),
                   std::min(b.hi.z - z0, patch.nz)}};
          if (!rb.empty()) wp.boxes.push_back(rb);
        }
        const PromptChannels pc = encode_prompts(wp, patch, v.spacing);

        for (int z = 0; z < patch.nz; ++z)
          for (int y = 0; y < patch.ny; ++y)
            for (int x = 0; x < patch.nx; ++x) {
              const std::size_t pi = std::size_t(flat_index(patch, x, y, z));
              const std::size_t ti =
                  std::size_t((std::size_t(z) * patch.ny + y) * patch.nx + x);
              input.v[ti] = double(vol->at(x0 + x, y0 + y, z0 + z));
              input.v[input.spatial() + ti] = pc.point_channel[pi];
              input.v[2 * input.spatial() + ti] = pc.box_channel[pi];
            }

        const Tensor& logits = model.forward(input, wp.category_id, tr);
        for (int z = 0; z < patch.nz; ++z)
          for (int y = 0; y < patch.ny; ++y)
            for (int x = 0; x < patch.nx; ++x) {
              const std::size_t pi = std::size_t(flat_index(patch, x, y, z));
              const std::size_t ti =
                  std::size_t((std::size_t(z) * patch.ny + y) * patch.nx + x);
              const std::size_t gi =
                  std::size_t(flat_index(padded, x0 + x, y0 + y, z0 + z));
              acc[gi] += wmap[pi] * sigmoid(logits.v[ti]);
              wsum[gi] += wmap[pi];
            }
      }

  SegMask out = make_mask(grid, v.spacing, v.case_id);
  for (int z = 0; z < grid.nz; ++z)
    for (int y = 0; y < grid.ny; ++y)
      for (int x = 0; x < grid.nx; ++x) {
        const std::size_t gi = std::size_t(flat_index(padded, x, y, z));
        const double p = acc[gi] / wsum[gi];
        out.at(x, y, z) = p > threshold ? 1 : 0;
      }
  return out;
}

}  // namespace dgseg
