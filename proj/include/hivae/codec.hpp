#pragma once

// Frame autoencoder: non-overlapping (temporal_factor x s x s) pixel patches
// mapped linearly to latent_channels, and back. Latents are standardized by a
// global scalar mean/std measured on the training set.

#include <functional>
#include <vector>

#include "hivae/optim.hpp"
#include "hivae/types.hpp"

namespace hivae::codec {

using ag::Var;

struct CodecConfig {
  int spatial_factor = 8;
  int temporal_factor = 1;
  int latent_channels = 16;
  int video_channels = 3;

  int patch_dim() const { return video_channels * temporal_factor * spatial_factor * spatial_factor; }
};

inline void validate(const CodecConfig& cfg) {
  const int s = cfg.spatial_factor;
  if (s < 1 || (s & (s - 1)) != 0) throw ConfigError("codec spatial_factor must be a power of two");
  if (cfg.temporal_factor < 1) throw ConfigError("codec temporal_factor must be >= 1");
  if (cfg.latent_channels < 1) throw ConfigError("codec latent_channels must be >= 1");
  if (cfg.video_channels != 1 && cfg.video_channels != 3) throw ConfigError("codec video_channels must be 1 or 3");
}

// Latent [c, f, h, w] shape for a clip [C, F, H, W].
inline Shape latent_shape(const CodecConfig& cfg, const Shape& clip) {
  validate(cfg);
  if (clip.size() != 4) throw ConfigError("clip must be [C,F,H,W], got " + shape_str(clip));
  const int C = clip[0], F = clip[1], H = clip[2], W = clip[3];
  if (C != cfg.video_channels) throw ConfigError("clip has " + std::to_string(C) + " channels, codec expects " + std::to_string(cfg.video_channels));
  if (F % cfg.temporal_factor || H % cfg.spatial_factor || W % cfg.spatial_factor)
    throw ConfigError("clip " + shape_str(clip) + " not divisible by factors (t=" + std::to_string(cfg.temporal_factor) +
                      ", s=" + std::to_string(cfg.spatial_factor) + ")");
  return {cfg.latent_channels, F / cfg.temporal_factor, H / cfg.spatial_factor, W / cfg.spatial_factor};
}

// For every (latent position, patch element) pair, the flat pixel index in
// [C, F, H, W]. Rows ordered (f, h, w); columns (C, tf, s, s).
inline std::vector<std::int32_t> patch_index(const CodecConfig& cfg, const Shape& clip) {
  const Shape ls = latent_shape(cfg, clip);
  const int C = clip[0], F = clip[1], H = clip[2], W = clip[3];
  const int tf = cfg.temporal_factor, s = cfg.spatial_factor;
  std::vector<std::int32_t> idx;
  idx.reserve(numel(clip));
  for (int f = 0; f < ls[1]; ++f)
    for (int h = 0; h < ls[2]; ++h)
      for (int w = 0; w < ls[3]; ++w)
        for (int c = 0; c < C; ++c)
          for (int dt = 0; dt < tf; ++dt)
            for (int dy = 0; dy < s; ++dy)
              for (int dx = 0; dx < s; ++dx)
                idx.push_back(static_cast<std::int32_t>(((static_cast<long>(c) * F + f * tf + dt) * H + h * s + dy) * W + w * s + dx));
  return idx;
}

class FrameCodec {
 public:
  FrameCodec(nn::ParamStore& ps, CodecConfig cfg, Rng& rng) : cfg_(cfg) {
    validate(cfg_);
    enc_ = nn::Linear(ps, "codec.enc", cfg_.patch_dim(), cfg_.latent_channels, rng);
    dec_ = nn::Linear(ps, "codec.dec", cfg_.latent_channels, cfg_.patch_dim(), rng);
    // [mean, std] of raw latents; not trained by gradient.
    norm_ = ps.add("codec.norm", Array({2}, Buffer{0.0, 1.0}));
  }

  const CodecConfig& config() const { return cfg_; }
  double latent_mean() const { return norm_.value()[0]; }
  double latent_std() const { return norm_.value()[1]; }
  void set_norm(double mean, double stddev) { norm_.mutable_value() = {mean, stddev}; }
  std::vector<Var> trainable() const { return {enc_.w, enc_.b, dec_.w, dec_.b}; }

  // Unnormalized latent [c, f, h, w] for one clip [C, F, H, W].
  Var encode_raw(const Var& clip) const {
    const Shape ls = latent_shape(cfg_, clip.shape());
    const int n = ls[1] * ls[2] * ls[3];
    Var patches = ag::gather(clip, patch_index(cfg_, clip.shape()), {n, cfg_.patch_dim()});
    Var tokens = enc_(patches);  // [f*h*w, c]
    return ag::permute(ag::reshape(tokens, {ls[1], ls[2], ls[3], ls[0]}), {3, 0, 1, 2});
  }

  // Inverse of encode_raw back to pixel space, unclamped.
  Var decode_raw(const Var& latent, const Shape& clip_shape) const {
    const Shape ls = latent_shape(cfg_, clip_shape);
    if (latent.shape() != ls)
      throw ConfigError("latent " + shape_str(latent.shape()) + " does not match codec shape " + shape_str(ls));
    const int n = ls[1] * ls[2] * ls[3];
    Var tokens = ag::reshape(ag::permute(latent, {1, 2, 3, 0}), {n, ls[0]});
    Var patches = dec_(tokens);  // [n, patch_dim]
    // Scatter patches back to pixel order: invert the patch index map.
    const auto fwd = patch_index(cfg_, clip_shape);
    std::vector<std::int32_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<std::int32_t>(i);
    return ag::gather(patches, std::move(inv), clip_shape);
  }

  // Standardized latent [c, f, h, w] for one clip.
  Array encode_clip(const Array& clip) const {
    ag::NoGradGuard ng;
    Array z = encode_raw(Var::constant(clip)).array();
    const double m = latent_mean(), s = latent_std();
    for (double& v : z.data) v = (v - m) / s;
    return z;
  }

  Array decode_clip(const Array& z, const Shape& clip_shape) const {
    ag::NoGradGuard ng;
    Array raw = z;
    const double m = latent_mean(), s = latent_std();
    for (double& v : raw.data) v = v * s + m;
    Array x = decode_raw(Var::constant(raw), clip_shape).array();
    for (double& v : x.data) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    return x;
  }

  // Video [B, C, F, H, W] -> Latent [B, c, f, h, w].
  Latent encode_frames(const Video& x) const {
    if (x.data.rank() != 5) throw ConfigError("encode_frames: video must be [B,C,F,H,W]");
    Shape clip(x.data.shape.begin() + 1, x.data.shape.end());
    Shape ls = latent_shape(cfg_, clip);
    std::vector<Array> zs;
    for (int b = 0; b < x.batch(); ++b) zs.push_back(encode_clip(x.clip(b)));
    Shape bs{x.batch()};
    bs.insert(bs.end(), ls.begin(), ls.end());
    Latent out{Array(bs)};
    std::size_t off = 0;
    for (auto& z : zs) {
      std::copy(z.data.begin(), z.data.end(), out.data.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += z.size();
    }
    return out;
  }

  // Latent [B, c, f, h, w] -> Video [B, C, F, H, W], clamped to [0, 1].
  Video decode_frames(const Latent& z, double fps = 8.0) const {
    if (z.data.rank() != 5) throw ConfigError("decode_frames: latent must be [B,c,f,h,w]");
    if (z.channels() != cfg_.latent_channels)
      throw ConfigError("decode_frames: latent has " + std::to_string(z.channels()) + " channels, codec expects " +
                        std::to_string(cfg_.latent_channels));
    const Shape clip{cfg_.video_channels, z.frames() * cfg_.temporal_factor, z.height() * cfg_.spatial_factor,
                     z.width() * cfg_.spatial_factor};
    const std::size_t per = z.data.size() / static_cast<std::size_t>(z.batch());
    std::vector<Array> clips;
    for (int b = 0; b < z.batch(); ++b) {
      Array zb(Shape(z.data.shape.begin() + 1, z.data.shape.end()));
      std::copy_n(z.data.data.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(b)), per, zb.data.begin());
      clips.push_back(decode_clip(zb, clip));
    }
    return Video::from_clips(clips, fps);
  }

 private:
  CodecConfig cfg_;
  nn::Linear enc_, dec_;
  Var norm_;
};

struct PretrainResult {
  std::vector<double> losses;
  double latent_mean = 0.0;
  double latent_std = 1.0;
};

// Stage 0: full-batch pixel MSE reconstruction with Adam, then latent
// standardization statistics. on_step(step, loss) is called every step.
inline PretrainResult pretrain_codec(FrameCodec& codec, const std::vector<Array>& clips, long steps, double lr = 1e-4,
                                     const std::function<void(long, double)>& on_step = {}) {
  if (steps < 1) throw ConfigError("pretrain_codec: steps must be >= 1");
  if (clips.empty()) throw ConfigError("pretrain_codec: empty dataset");
  optim::AdamW opt(codec.trainable(), 0.9, 0.99, 1e-8, 0.0);
  PretrainResult res;
  for (long step = 0; step < steps; ++step) {
    for (auto& p : opt.params()) p.zero_grad();
    double total = 0.0;
    for (const auto& c : clips) {
      Var x = Var::constant(c);
      Var loss = ag::scale(ag::mse(codec.decode_raw(codec.encode_raw(x), c.shape), x), 1.0 / static_cast<double>(clips.size()));
      ag::backward(loss);
      total += loss.item();
    }
    if (!std::isfinite(total)) throw DivergenceError("codec pretraining loss is not finite", step);
    res.losses.push_back(total);
    if (on_step) on_step(step, total);
    opt.step(lr);
  }
  // Global scalar standardization over all training latents.
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  {
    ag::NoGradGuard ng;
    for (const auto& c : clips) {
      Array z = codec.encode_raw(Var::constant(c)).array();
      for (double v : z.data) {
        s += v;
        s2 += v * v;
      }
      n += z.size();
    }
  }
  res.latent_mean = s / static_cast<double>(n);
  res.latent_std = std::sqrt(std::max(1e-12, s2 / static_cast<double>(n) - res.latent_mean * res.latent_mean));
  codec.set_norm(res.latent_mean, res.latent_std);
  return res;
}

}  // namespace hivae::codec
