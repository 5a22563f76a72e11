#pragma once

#include <memory>

#include "hivae/codec.hpp"
#include "hivae/flow.hpp"
#include "hivae/spectral.hpp"

namespace hivae {

enum class StageTag { None = -1, Codec = 0, Global = 1, Full = 2 };

inline const char* stage_name(StageTag s) {
  switch (s) {
    case StageTag::None: return "none";
    case StageTag::Codec: return "stage0_codec";
    case StageTag::Global: return "stage1_global";
    case StageTag::Full: return "stage2_full";
  }
  return "?";
}

struct ModelConfig {
  codec::CodecConfig codec;
  spectral::Cutoffs cutoffs;
  spectral::MaskKind mask_kind = spectral::MaskKind::BrickWall;
  motion::GlobalMotionConfig global;
  motion::DetailedMotionConfig detail;
  flow::DecoderConfig decoder;
  // clip geometry [C, F, H, W] the model is built for
  int frames = 8;
  int height = 64;
  int width = 64;

  Shape clip_shape() const { return {codec.video_channels, frames, height, width}; }
};

// Named latent sizes. Tokens/channels follow the small / normal / large
// variants; time extents follow the configured frame count.
inline void apply_size(ModelConfig& cfg, const std::string& size) {
  const int f = cfg.frames / cfg.codec.temporal_factor;
  cfg.global.f_g = f / 2;
  cfg.detail.f_d = f;
  cfg.global.n_g = 8;
  cfg.detail.n_d = 16;
  if (size == "S") {
    cfg.global.c_g = 4;
    cfg.detail.c_d = 8;
  } else if (size == "normal") {
    cfg.global.c_g = 8;
    cfg.detail.c_d = 16;
  } else if (size == "L") {
    cfg.global.c_g = 8;
    cfg.detail.c_d = 32;
  } else {
    throw ConfigError("unknown model size '" + size + "' (S, normal, L)");
  }
}

// Codec latent, both band halves and the content latent for one clip.
struct PreparedClip {
  Array clip;     // [C, F, H, W]
  Array z;        // [c, f, h, w]
  Array z_low;
  Array z_high;
  Array content;  // [c, h, w], frame 0 of z
};

class HiVae {
 public:
  explicit HiVae(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    Rng rng(seed);
    Shape ls = codec::latent_shape(cfg_.codec, cfg_.clip_shape());
    motion::validate(cfg_.global, ls[1]);
    motion::validate(cfg_.detail, ls[1]);
    codec_ = std::make_unique<codec::FrameCodec>(params_, cfg_.codec, rng);
    genc_ = std::make_unique<motion::GlobalEncoder>(params_, cfg_.global, cfg_.codec.latent_channels, rng);
    denc_ = std::make_unique<motion::DetailedEncoder>(params_, cfg_.detail, cfg_.codec.latent_channels, rng);
    dec_ = std::make_unique<flow::FlowDecoder>(params_, cfg_.decoder, cfg_.codec.latent_channels, cfg_.global, cfg_.detail, rng);
    mask_ = spectral::make_lowpass_mask({ls[0], ls[1], ls[2], ls[3]}, cfg_.cutoffs, cfg_.mask_kind);
  }

  HiVae(const HiVae&) = delete;
  HiVae& operator=(const HiVae&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  codec::FrameCodec& codec() { return *codec_; }
  const codec::FrameCodec& codec() const { return *codec_; }
  const motion::GlobalEncoder& global_encoder() const { return *genc_; }
  const motion::DetailedEncoder& detailed_encoder() const { return *denc_; }
  const flow::FlowDecoder& decoder() const { return *dec_; }
  const spectral::FilterMask& mask() const { return mask_; }
  Shape latent_shape() const { return codec::latent_shape(cfg_.codec, cfg_.clip_shape()); }

  StageTag stage() const { return stage_; }
  void set_stage(StageTag s) { stage_ = s; }

  PreparedClip prepare(const Array& clip) const {
    if (clip.shape != cfg_.clip_shape())
      throw ConfigError("clip " + shape_str(clip.shape) + " does not match model geometry " + shape_str(cfg_.clip_shape()));
    PreparedClip p;
    p.clip = clip;
    p.z = codec_->encode_clip(clip);
    auto bands = spectral::split_bands(p.z, mask_);
    p.z_low = std::move(bands.low);
    p.z_high = std::move(bands.high);
    p.content = frame_of(p.z, 0);
    return p;
  }

  // Deterministic (posterior mean) motion latents unless stochastic.
  motion::MotionLatent encode_motion(const PreparedClip& p, Rng& rng, bool stochastic = false) const {
    ag::NoGradGuard ng;
    auto g = genc_->forward(p.z_low, std::nullopt, rng, stochastic);
    auto d = denc_->forward(p.z_high, rng, stochastic);
    return {g.u.array(), g.mu.array(), g.logvar.array(), d.u.array(), d.mu.array(), d.logvar.array()};
  }

  Array decode_latent(const motion::MotionLatent& m, const Array& content, Rng& rng, const flow::SampleOptions& opt) const {
    return flow::ode_sample(*dec_, m.u_g, m.u_d, content, latent_shape(), rng, opt);
  }

  // Pixel-space reconstruction of a clip [C, F, H, W].
  Array reconstruct(const Array& clip, Rng& rng, const flow::SampleOptions& opt) const {
    PreparedClip p = prepare(clip);
    auto m = encode_motion(p, rng, false);
    return codec_->decode_clip(decode_latent(m, p.content, rng, opt), clip.shape);
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  std::unique_ptr<codec::FrameCodec> codec_;
  std::unique_ptr<motion::GlobalEncoder> genc_;
  std::unique_ptr<motion::DetailedEncoder> denc_;
  std::unique_ptr<flow::FlowDecoder> dec_;
  spectral::FilterMask mask_;
  StageTag stage_ = StageTag::None;
};

}  // namespace hivae
