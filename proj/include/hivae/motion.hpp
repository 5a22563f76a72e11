#pragma once

// Hierarchical motion encoders.
//
// Global: learnable queries [f_g * n_g, width] cross-attend over every
// (frame, spatial position) token of the low-passed latent, with spatial
// positions optionally zeroed by a mask shared across frames and channels.
// Detailed: per frame, the high-passed spatial tokens are joined by n_d
// learnable slot tokens and run through self-attention; the slot outputs
// become that frame's detailed motion.
// Both end in a linear head producing (mu, logvar); logvar is clamped to
// [-30, 20].

#include <optional>

#include "hivae/nn.hpp"

namespace hivae::motion {

using ag::Var;

struct GlobalMotionConfig {
  int f_g = 4;
  int n_g = 8;
  int c_g = 8;
  int layers = 4;
  int heads = 4;
  int width = 64;
  double mask_lo = 0.30;
  double mask_hi = 0.50;
};

struct DetailedMotionConfig {
  int f_d = 8;
  int n_d = 16;
  int c_d = 16;
  int layers = 4;
  int heads = 4;
  int width = 64;
};

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

inline void validate(const GlobalMotionConfig& c, int frames) {
  if (c.f_g * 2 != frames) throw ConfigError("global f_g must be half the frame count (" + std::to_string(frames) + ")");
  if (c.n_g < 1 || c.c_g < 1 || c.layers < 0 || c.heads < 1 || c.width < 1 || c.width % c.heads)
    throw ConfigError("global motion config has non-positive or inconsistent sizes");
  if (!(c.mask_lo >= 0.0 && c.mask_lo <= c.mask_hi && c.mask_hi < 1.0))
    throw ConfigError("global mask ratio range must satisfy 0 <= lo <= hi < 1");
}

inline void validate(const DetailedMotionConfig& c, int frames) {
  if (c.f_d != frames) throw ConfigError("detail f_d must equal the frame count (" + std::to_string(frames) + ")");
  if (c.n_d < 1 || c.c_d < 1 || c.layers < 0 || c.heads < 1 || c.width < 1 || c.width % c.heads)
    throw ConfigError("detail motion config has non-positive or inconsistent sizes");
}

// Binary keep-mask over h*w flattened positions: 1 = kept, 0 = masked.
struct SpatialMask {
  std::vector<double> keep;
  double ratio = 0.0;

  int masked_count() const {
    return static_cast<int>(std::count(keep.begin(), keep.end(), 0.0));
  }
};

inline SpatialMask sample_spatial_mask(int hw, Rng& rng, double lo = 0.30, double hi = 0.50) {
  if (hw < 1) throw ConfigError("sample_spatial_mask: hw must be >= 1");
  SpatialMask m{std::vector<double>(static_cast<std::size_t>(hw), 1.0), rng.uniform(lo, hi)};
  const long count = std::clamp(std::lround(m.ratio * hw), 0L, static_cast<long>(hw));
  std::vector<int> order(static_cast<std::size_t>(hw));
  std::iota(order.begin(), order.end(), 0);
  // partial Fisher-Yates: the first `count` entries are a uniform sample without replacement
  for (long i = 0; i < count; ++i) {
    const int j = static_cast<int>(i) + rng.randint(hw - static_cast<int>(i));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    m.keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0.0;
  }
  return m;
}

// softmax(q kv^T / sqrt(d)) kv with identity projections and a single head.
inline Var cross_attention(const Var& q, const Var& kv) { return ag::attention(q, kv, kv, 1, 1); }

// mu + exp(logvar / 2) * eta when stochastic; mu itself otherwise.
inline Var reparameterize(const Var& mu, const Var& logvar, Rng& rng, bool stochastic) {
  if (!stochastic) return mu;
  Var eta = Var::constant(rng.normal_array(mu.shape()));
  return ag::add(mu, ag::mul(ag::exp(ag::scale(logvar, 0.5)), eta));
}

inline Array reparameterize(const Array& mu, const Array& logvar, Rng& rng, bool stochastic) {
  if (mu.shape != logvar.shape) throw ConfigError("reparameterize: shape mismatch");
  if (!stochastic) return mu;
  Array out(mu.shape);
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + std::exp(0.5 * logvar[i]) * rng.normal();
  return out;
}

struct MotionOut {
  Var u, mu, logvar;  // each [frames, tokens, channels]
};

struct MotionLatent {
  Array u_g, mu_g, logvar_g;  // [f_g, n_g, c_g]
  Array u_d, mu_d, logvar_d;  // [f_d, n_d, c_d]

  bool finite() const {
    for (const Array* a : {&u_g, &mu_g, &logvar_g, &u_d, &mu_d, &logvar_d})
      if (!a->all_finite()) return false;
    return true;
  }
};

namespace detail {

// Split [n, 2c] head output into clamped (mu, logvar) reshaped to `shape`.
inline std::pair<Var, Var> split_head(const Var& out, const Shape& shape) {
  const int n = out.dim(0), two_c = out.dim(1), c = two_c / 2;
  std::vector<std::int32_t> mu_idx, lv_idx;
  mu_idx.reserve(static_cast<std::size_t>(n * c));
  lv_idx.reserve(static_cast<std::size_t>(n * c));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      mu_idx.push_back(i * two_c + j);
      lv_idx.push_back(i * two_c + c + j);
    }
  Var mu = ag::gather(out, std::move(mu_idx), shape);
  Var lv = ag::clamp(ag::gather(out, std::move(lv_idx), shape), kLogvarMin, kLogvarMax);
  return {mu, lv};
}

// [c, f, h, w] -> [f * h * w, c] token rows ordered (frame, position).
inline Array frame_tokens(const Array& z) { return permute(z, {1, 2, 3, 0}).reshaped({z.dim(1) * z.dim(2) * z.dim(3), z.dim(0)}); }

}  // namespace detail

struct CrossBlock {
  nn::LayerNorm ln_q, ln_kv, ln_mlp;
  nn::Attention attn;
  nn::Mlp mlp;
};

class GlobalEncoder {
 public:
  GlobalEncoder(nn::ParamStore& ps, GlobalMotionConfig cfg, int latent_channels, Rng& rng,
                const std::string& prefix = "global")
      : cfg_(cfg) {
    const int w = cfg_.width;
    in_ = nn::Linear(ps, prefix + ".in", latent_channels, w, rng);
    queries_ = ps.add(prefix + ".queries", rng.normal_array({cfg_.f_g * cfg_.n_g, w}, 1.0));
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = prefix + ".blk" + std::to_string(l);
      blocks_.push_back({nn::LayerNorm(ps, p + ".ln_q", w), nn::LayerNorm(ps, p + ".ln_kv", w),
                         nn::LayerNorm(ps, p + ".ln_mlp", w), nn::Attention(ps, p + ".attn", w, cfg_.heads, rng),
                         nn::Mlp(ps, p + ".mlp", w, 2 * w, rng)});
    }
    head_ln_ = nn::LayerNorm(ps, prefix + ".head_ln", w);
    head_ = nn::Linear(ps, prefix + ".head", w, 2 * cfg_.c_g, rng);
  }

  const GlobalMotionConfig& config() const { return cfg_; }
  Var& queries() { return queries_; }

  // z_low [c, f, h, w]; mask over h*w or none.
  MotionOut forward(const Array& z_low, const std::optional<SpatialMask>& mask, Rng& rng, bool stochastic) const {
    if (z_low.rank() != 4) throw ConfigError("global encoder expects [c,f,h,w]");
    validate(cfg_, z_low.dim(1));
    const int f = z_low.dim(1), hw = z_low.dim(2) * z_low.dim(3);
    Array tokens = detail::frame_tokens(z_low);
    if (mask) {
      if (static_cast<int>(mask->keep.size()) != hw) throw ConfigError("spatial mask length does not match h*w");
      const int c = z_low.dim(0);
      for (int t = 0; t < f; ++t)
        for (int s = 0; s < hw; ++s)
          for (int k = 0; k < c; ++k) tokens[(static_cast<std::size_t>(t) * hw + s) * c + k] *= mask->keep[static_cast<std::size_t>(s)];
    }
    // temporal position code, shared by all spatial positions of a frame
    const Array pe_t = nn::sinusoidal_table(f, cfg_.width);
    Array pe({f * hw, cfg_.width});
    for (int t = 0; t < f; ++t)
      for (int s = 0; s < hw; ++s)
        std::copy_n(pe_t.data.begin() + static_cast<std::ptrdiff_t>(t) * cfg_.width, cfg_.width,
                    pe.data.begin() + (static_cast<std::ptrdiff_t>(t) * hw + s) * cfg_.width);
    Var kv = ag::add(in_(Var::constant(std::move(tokens))), Var::constant(std::move(pe)));
    Var q = queries_;
    for (const auto& b : blocks_) {
      q = ag::add(q, b.attn(b.ln_q(q), b.ln_kv(kv), 1));
      q = ag::add(q, b.mlp(b.ln_mlp(q)));
    }
    auto [mu, lv] = detail::split_head(head_(head_ln_(q)), {cfg_.f_g, cfg_.n_g, cfg_.c_g});
    return {reparameterize(mu, lv, rng, stochastic), mu, lv};
  }

 private:
  GlobalMotionConfig cfg_;
  nn::Linear in_;
  Var queries_;
  std::vector<CrossBlock> blocks_;
  nn::LayerNorm head_ln_;
  nn::Linear head_;
};

struct SelfBlock {
  nn::LayerNorm ln1, ln2;
  nn::Attention attn;
  nn::Mlp mlp;
};

class DetailedEncoder {
 public:
  DetailedEncoder(nn::ParamStore& ps, DetailedMotionConfig cfg, int latent_channels, Rng& rng,
                  const std::string& prefix = "detail")
      : cfg_(cfg) {
    const int w = cfg_.width;
    in_ = nn::Linear(ps, prefix + ".in", latent_channels, w, rng);
    slots_ = ps.add(prefix + ".slots", rng.normal_array({cfg_.n_d, w}, 1.0));
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = prefix + ".blk" + std::to_string(l);
      blocks_.push_back({nn::LayerNorm(ps, p + ".ln1", w), nn::LayerNorm(ps, p + ".ln2", w),
                         nn::Attention(ps, p + ".attn", w, cfg_.heads, rng), nn::Mlp(ps, p + ".mlp", w, 2 * w, rng)});
    }
    head_ln_ = nn::LayerNorm(ps, prefix + ".head_ln", w);
    head_ = nn::Linear(ps, prefix + ".head", w, 2 * cfg_.c_d, rng);
  }

  const DetailedMotionConfig& config() const { return cfg_; }

  // Input token rows [f*hw, c] plus their positional codes [f*hw, width];
  // split out so callers can permute tokens together with their codes.
  MotionOut forward_tokens(const Array& tokens, const Array& pos, int frames, Rng& rng, bool stochastic) const {
    const int w = cfg_.width;
    const int hw = tokens.dim(0) / frames;
    const int seq = hw + cfg_.n_d;
    Var x = ag::add(in_(Var::constant(tokens)), Var::constant(pos));
    // slot tokens carry a positional code continuing after the spatial indices
    const Array table = nn::sinusoidal_table(hw + cfg_.n_d, w);
    Array slot_pe({cfg_.n_d, w});
    std::copy(table.data.begin() + static_cast<std::ptrdiff_t>(hw) * w, table.data.end(), slot_pe.data.begin());
    Var slots = ag::add(slots_, Var::constant(std::move(slot_pe)));
    // per-frame sequence [hw spatial tokens | n_d slots]
    Var joined = ag::concat0({x, slots});
    std::vector<std::int32_t> idx;
    idx.reserve(static_cast<std::size_t>(frames) * seq * w);
    for (int t = 0; t < frames; ++t) {
      for (int s = 0; s < hw; ++s)
        for (int k = 0; k < w; ++k) idx.push_back((t * hw + s) * w + k);
      for (int j = 0; j < cfg_.n_d; ++j)
        for (int k = 0; k < w; ++k) idx.push_back((frames * hw + j) * w + k);
    }
    Var h = ag::gather(joined, std::move(idx), {frames * seq, w});
    for (const auto& b : blocks_) {
      Var n1 = b.ln1(h);
      h = ag::add(h, b.attn(n1, n1, frames));
      h = ag::add(h, b.mlp(b.ln2(h)));
    }
    std::vector<std::int32_t> slot_idx;
    slot_idx.reserve(static_cast<std::size_t>(frames) * cfg_.n_d * w);
    for (int t = 0; t < frames; ++t)
      for (int j = 0; j < cfg_.n_d; ++j)
        for (int k = 0; k < w; ++k) slot_idx.push_back((t * seq + hw + j) * w + k);
    Var out = ag::gather(h, std::move(slot_idx), {frames * cfg_.n_d, w});
    auto [mu, lv] = detail::split_head(head_(head_ln_(out)), {cfg_.f_d, cfg_.n_d, cfg_.c_d});
    return {reparameterize(mu, lv, rng, stochastic), mu, lv};
  }

  // Spatial positional codes for f frames of hw tokens.
  Array positions(int frames, int hw) const {
    const Array table = nn::sinusoidal_table(hw, cfg_.width);
    return nn::repeat_rows(table, frames);
  }

  MotionOut forward(const Array& z_high, Rng& rng, bool stochastic) const {
    if (z_high.rank() != 4) throw ConfigError("detailed encoder expects [c,f,h,w]");
    validate(cfg_, z_high.dim(1));
    const int f = z_high.dim(1), hw = z_high.dim(2) * z_high.dim(3);
    return forward_tokens(detail::frame_tokens(z_high), positions(f, hw), f, rng, stochastic);
  }

 private:
  DetailedMotionConfig cfg_;
  nn::Linear in_;
  Var slots_;
  std::vector<SelfBlock> blocks_;
  nn::LayerNorm head_ln_;
  nn::Linear head_;
};

}  // namespace hivae::motion
