#pragma once

// Run configuration: every knob of a run in one JSON document. Values come
// from the built-in desk preset, then an optional config file, then
// `key.path=value` overrides. Unknown keys are errors at every layer.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hivae/dataio.hpp"
#include "hivae/generator.hpp"
#include "hivae/training.hpp"

namespace hivae {

using json = nlohmann::json;

namespace codec {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecConfig, spatial_factor, temporal_factor, latent_channels, video_channels)
}
namespace spectral {
NLOHMANN_JSON_SERIALIZE_ENUM(MaskKind, {{MaskKind::BrickWall, "brickwall"}, {MaskKind::Gaussian, "gaussian"}})
}
namespace motion {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GlobalMotionConfig, f_g, n_g, c_g, layers, heads, width, mask_lo, mask_hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DetailedMotionConfig, f_d, n_d, c_d, layers, heads, width)
}
namespace flow {
NLOHMANN_JSON_SERIALIZE_ENUM(DecoderConfig::Prediction, {{DecoderConfig::Prediction::Velocity, "velocity"},
                                                         {DecoderConfig::Prediction::Sample, "sample"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecoderConfig, layers, heads, width, patch, mlp_ratio, cfg_drop_prob,
                                                cfg_weight, train_steps_T, infer_steps, zero_init, prediction, t_floor)
}
namespace training {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, beta1, beta2, warmup_steps, lambda_kl, weight_decay,
                                                grad_clip, detail_drop_prob, batch_size, codec_steps, codec_lr,
                                                stage1_steps, stage2_steps, seed)
}
namespace dataio {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpriteSpec, channels, frames, height, width, drift_x, drift_y, sprite_count,
                                                osc_freq, osc_amp, sprite_sigma, texture_freq, seed)
}
namespace gen {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenConfig, layers, width, heads, mlp_ratio, class_embed_dim, class_tokens,
                                                num_classes, cfg_drop, cfg_weight, train_steps_T, infer_steps, zero_init)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenTrainConfig, steps, lr, warmup_steps, weight_decay, grad_clip, batch_size)
}

struct SpectralSection {
  double cutoff_f = 0.25, cutoff_h = 0.25, cutoff_w = 0.25;
  spectral::MaskKind kind = spectral::MaskKind::BrickWall;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpectralSection, cutoff_f, cutoff_h, cutoff_w, kind)

struct DataSection {
  int frames = 8;
  int height = 64;
  int width = 64;
  std::vector<std::string> clips;  // container files; empty = built-in fixture set
  int gen_clips_per_class = 4;     // synthetic clips per class for generator training
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataSection, frames, height, width, clips, gen_clips_per_class)

struct RunConfig {
  std::string size = "normal";
  std::uint64_t seed = 0;
  codec::CodecConfig codec;
  SpectralSection spectral;
  motion::GlobalMotionConfig global;
  motion::DetailedMotionConfig detail;
  flow::DecoderConfig decoder;
  training::TrainConfig train;
  gen::GenConfig gen;
  gen::GenTrainConfig gen_train;
  DataSection data;

  ModelConfig model() const {
    ModelConfig m;
    m.codec = codec;
    m.cutoffs = {spectral.cutoff_f, spectral.cutoff_h, spectral.cutoff_w};
    m.mask_kind = spectral.kind;
    m.global = global;
    m.detail = detail;
    m.decoder = decoder;
    m.frames = data.frames;
    m.height = data.height;
    m.width = data.width;
    return m;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, size, seed, codec, spectral, global, detail, decoder, train,
                                                gen, gen_train, data)

// Desk preset for a named latent size: small encoders and decoder, learning
// rates raised for minutes-scale overfitting runs.
inline RunConfig desk_preset(const std::string& size = "normal") {
  RunConfig c;
  c.size = size;
  ModelConfig m = c.model();
  apply_size(m, size);
  c.global = m.global;
  c.detail = m.detail;
  c.global.layers = 2;
  c.detail.layers = 2;
  c.decoder.layers = 3;
  c.train.lr = 1e-3;
  c.train.warmup_steps = 50;
  c.train.codec_lr = 3e-3;
  c.train.codec_steps = 1500;
  c.train.stage1_steps = 400;
  c.train.stage2_steps = 800;
  return c;
}

namespace detail {

// Every key of `patch` must exist in `base` (objects recursively).
inline void check_known(const json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.is_object() || !base.contains(it.key())) throw ConfigError("unknown config key '" + p + "'");
    if (base.at(it.key()).is_object()) check_known(base.at(it.key()), it.value(), p);
  }
}

// Parse an override value: JSON literal if it parses, otherwise a string.
inline json parse_value(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::exception&) {
    return json(s);
  }
}

}  // namespace detail

namespace detail {

// Converts and rejects values the typed config cannot represent exactly
// (unknown enum names, fractional integers, wrong types).
inline RunConfig typed(const json& j) {
  RunConfig out;
  try {
    out = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  const json back = out;
  for (const auto& d : json::diff(back, j))
    throw ConfigError("invalid config value at '" + d.at("path").get<std::string>() + "'");
  return out;
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  const std::string size = j.value("size", std::string("normal"));
  json base = desk_preset(size);
  detail::check_known(base, j, "");
  base.merge_patch(j);
  return detail::typed(base);
}

// Re-derives latent token/channel counts and time extents from cfg.size.
inline void resize(RunConfig& cfg) {
  ModelConfig m = cfg.model();
  apply_size(m, cfg.size);
  cfg.global.f_g = m.global.f_g;
  cfg.global.n_g = m.global.n_g;
  cfg.global.c_g = m.global.c_g;
  cfg.detail.f_d = m.detail.f_d;
  cfg.detail.n_d = m.detail.n_d;
  cfg.detail.c_d = m.detail.c_d;
}

// Applies "a.b.c=value" overrides on top of a config.
inline RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& sets) {
  json j = cfg;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not key=value");
    const std::string key = s.substr(0, eq);
    std::string path = "/" + key;
    std::replace(path.begin(), path.end(), '.', '/');
    const json::json_pointer ptr(path);
    if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
    if (j.at(ptr).is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
    j[ptr] = detail::parse_value(s.substr(eq + 1));
  }
  RunConfig out = detail::typed(j);
  if (out.size != cfg.size) resize(out);
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// Validates cross-field consistency by building the model geometry.
inline void validate(const RunConfig& c) {
  ModelConfig m = c.model();
  const Shape ls = codec::latent_shape(m.codec, m.clip_shape());
  spectral::validate_cutoffs(m.cutoffs);
  motion::validate(m.global, ls[1]);
  motion::validate(m.detail, ls[1]);
  flow::validate(m.decoder);
  training::validate(c.train);
  gen::validate(c.gen);
  if (c.train.warmup_steps > std::max(c.train.stage1_steps, c.train.stage2_steps))
    throw ConfigError("train.warmup_steps exceeds the stage step counts");
}

}  // namespace hivae
