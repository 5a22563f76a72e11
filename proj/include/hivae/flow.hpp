#pragma once

// Flow-matching conditional decoder.
//
// Sign convention: the interpolant is z_t = (1 - t) z + t eps, so t = 0 is data
// and t = 1 is noise. The regression target is v = z - eps, which equals
// -d z_t / dt. Sampling integrates from t = 1 to t = 0 with z <- z + dt * v.

#include <array>
#include <functional>
#include <numeric>
#include <optional>

#include "hivae/motion.hpp"

namespace hivae::flow {

using ag::Var;

struct DecoderConfig {
  int layers = 6;  // groups of (global block, detailed block, temporal align block)
  int heads = 4;
  int width = 64;
  int patch = 2;
  int mlp_ratio = 2;
  double cfg_drop_prob = 0.10;
  double cfg_weight = 5.0;
  int train_steps_T = 1000;
  int infer_steps = 20;
  // Zero-init the adaptive gates and output head. Off only for gradient checks.
  bool zero_init = true;
  // Output parametrization. Sample: the head predicts the clean latent z_hat and
  // the returned velocity is (z_hat - z_t) / max(t, t_floor).
  enum class Prediction { Velocity, Sample } prediction = Prediction::Sample;
  double t_floor = 0.05;
};

inline void validate(const DecoderConfig& c) {
  if (c.layers < 0 || c.heads < 1 || c.width < 1 || c.width % c.heads || c.patch < 1 || c.mlp_ratio < 1)
    throw ConfigError("decoder config has non-positive or inconsistent sizes");
  if (c.infer_steps < 1) throw ConfigError("decoder infer_steps must be >= 1");
  if (c.cfg_weight < 0.0) throw ConfigError("decoder cfg_weight must be >= 0");
  if (c.cfg_drop_prob < 0.0 || c.cfg_drop_prob > 1.0) throw ConfigError("decoder cfg_drop_prob must be in [0,1]");
  if (!(c.t_floor > 0.0 && c.t_floor <= 1.0)) throw ConfigError("decoder t_floor must be in (0,1]");
}

inline DecoderConfig::Prediction parse_prediction(const std::string& s) {
  if (s == "velocity") return DecoderConfig::Prediction::Velocity;
  if (s == "sample") return DecoderConfig::Prediction::Sample;
  throw ConfigError("unknown decoder prediction '" + s + "' (velocity, sample)");
}

inline const char* prediction_name(DecoderConfig::Prediction p) {
  return p == DecoderConfig::Prediction::Velocity ? "velocity" : "sample";
}

// (1 - t) z + t eps
inline Array noise_interp(const Array& z, const Array& eps, double t) {
  if (z.shape != eps.shape) throw ConfigError("noise_interp: shape mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("noise_interp: t must lie in [0,1]");
  Array out(z.shape);
  if (t == 0.0) return z;
  if (t == 1.0) return eps;
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (1.0 - t) * z[i] + t * eps[i];
  return out;
}

// z - eps
inline Array velocity_target(const Array& z, const Array& eps) {
  if (z.shape != eps.shape) throw ConfigError("velocity_target: shape mismatch");
  Array out(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - eps[i];
  return out;
}

// v_uncond + w (v_cond - v_uncond), exact at w = 0 and w = 1.
inline Array cfg_velocity(const Array& v_cond, const Array& v_uncond, double w) {
  if (v_cond.shape != v_uncond.shape) throw ConfigError("cfg_velocity: shape mismatch");
  if (w == 1.0) return v_cond;
  Array out(v_cond.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + w * (v_cond[i] - v_uncond[i]);
  return out;
}

enum class DecodeMode { Full, GlobalOnly, DetailedOnly };

inline DecodeMode parse_mode(const std::string& s) {
  if (s == "full") return DecodeMode::Full;
  if (s == "global_only") return DecodeMode::GlobalOnly;
  if (s == "detailed_only") return DecodeMode::DetailedOnly;
  throw ConfigError("unknown decode mode '" + s + "' (full, global_only, detailed_only)");
}

inline const char* mode_name(DecodeMode m) {
  switch (m) {
    case DecodeMode::Full: return "full";
    case DecodeMode::GlobalOnly: return "global_only";
    case DecodeMode::DetailedOnly: return "detailed_only";
  }
  return "?";
}

// adaLN-modulated transformer block. Queries come from the frame tokens; keys
// and values optionally include extra (motion) tokens that are discarded after
// attention.
struct AdaBlock {
  nn::Linear ada;  // width -> 6 * width: shift1, scale1, gate1, shift2, scale2, gate2
  nn::Attention attn;
  nn::Mlp mlp;
  int width = 0;

  AdaBlock() = default;
  AdaBlock(nn::ParamStore& ps, const std::string& name, int w, int heads, int mlp_ratio, bool zero_init, Rng& rng)
      : width(w) {
    ada = nn::Linear(ps, name + ".ada", w, 6 * w, rng, zero_init ? nn::Init::Zero : nn::Init::Normal02);
    attn = nn::Attention(ps, name + ".attn", w, heads, rng);
    mlp = nn::Mlp(ps, name + ".mlp", w, mlp_ratio * w, rng);
    if (!zero_init) {
      // give the modulation a non-trivial starting point
      auto& b = ps.get(name + ".ada.b").mutable_value();
      for (double& v : b) v = 0.1 * rng.normal();
    }
  }

  std::array<Var, 6> modulation(const Var& cond) const {
    Var m = ada(cond);  // [1, 6w]
    std::array<Var, 6> out;
    for (int i = 0; i < 6; ++i) {
      std::vector<std::int32_t> idx(static_cast<std::size_t>(width));
      std::iota(idx.begin(), idx.end(), i * width);
      out[static_cast<std::size_t>(i)] = ag::gather(m, std::move(idx), {width});
    }
    return out;
  }

  // x: [groups * L, w] frame tokens. extra: optional normalized motion tokens
  // [E, w] and an index map building per-group key/value rows from
  // concat(modulated x, extra).
  Var forward(const Var& x, const Var& cond, int groups, const Var& extra = Var(),
              const std::vector<std::int32_t>* kv_index = nullptr, int kv_rows = 0) const {
    auto [sh1, sc1, g1, sh2, sc2, g2] = modulation(cond);
    Var h = ag::modulate(ag::layer_norm(x), sh1, sc1);
    Var kv = h;
    if (extra.defined()) {
      Var joined = ag::concat0({h, ag::modulate(ag::layer_norm(extra), sh1, sc1)});
      kv = ag::gather(joined, *kv_index, {kv_rows, width});
    }
    Var a = attn(h, kv, groups);
    Var y = ag::add(x, ag::mul_rowvec(a, g1));
    Var m = mlp(ag::modulate(ag::layer_norm(y), sh2, sc2));
    return ag::add(y, ag::mul_rowvec(m, g2));
  }
};

struct DecoderGroup {
  AdaBlock global_blk, detail_blk, tab;
};

class FlowDecoder {
 public:
  FlowDecoder(nn::ParamStore& ps, DecoderConfig cfg, int latent_channels, const motion::GlobalMotionConfig& gcfg,
              const motion::DetailedMotionConfig& dcfg, Rng& rng, const std::string& prefix = "decoder")
      : cfg_(cfg), c_(latent_channels), gcfg_(gcfg), dcfg_(dcfg) {
    validate(cfg_);
    const int w = cfg_.width, p = cfg_.patch;
    in_ = nn::Linear(ps, prefix + ".in", 2 * c_ * p * p, w, rng);
    t1_ = nn::Linear(ps, prefix + ".t1", w, w, rng);
    t2_ = nn::Linear(ps, prefix + ".t2", w, w, rng);
    g_in_ = nn::Linear(ps, prefix + ".g_in", gcfg_.c_g, w, rng);
    d_in_ = nn::Linear(ps, prefix + ".d_in", dcfg_.c_d, w, rng);
    null_g_ = ps.add(prefix + ".null_g", rng.normal_array({gcfg_.f_g, gcfg_.n_g, gcfg_.c_g}, 0.5));
    null_d_ = ps.add(prefix + ".null_d", rng.normal_array({dcfg_.f_d, dcfg_.n_d, dcfg_.c_d}, 0.5));
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = prefix + ".grp" + std::to_string(l);
      groups_.push_back({AdaBlock(ps, b + ".global", w, cfg_.heads, cfg_.mlp_ratio, cfg_.zero_init, rng),
                         AdaBlock(ps, b + ".detail", w, cfg_.heads, cfg_.mlp_ratio, cfg_.zero_init, rng),
                         AdaBlock(ps, b + ".tab", w, cfg_.heads, cfg_.mlp_ratio, cfg_.zero_init, rng)});
    }
    out_ada_ = nn::Linear(ps, prefix + ".out_ada", w, 2 * w, rng, cfg_.zero_init ? nn::Init::Zero : nn::Init::Normal02);
    out_ = nn::Linear(ps, prefix + ".out", w, p * p * c_, rng, cfg_.zero_init ? nn::Init::Zero : nn::Init::Xavier);
  }

  const DecoderConfig& config() const { return cfg_; }
  const Var& null_g() const { return null_g_; }
  const Var& null_d() const { return null_d_; }

  // interp: [c, f, h, w]; content: [c, h, w]; u_g: [f_g, n_g, c_g]; u_d: [f_d, n_d, c_d].
  // Returns predicted velocity [c, f, h, w].
  Var forward(const Array& interp, const Array* content, const Var& u_g, const Var& u_d, double t) const {
    if (!content) throw PreconditionError("decoder_forward: content latent is required");
    if (interp.rank() != 4 || interp.dim(0) != c_) throw ConfigError("decoder: interpolant must be [c,f,h,w] with c=" + std::to_string(c_));
    const int f = interp.dim(1), h = interp.dim(2), w = interp.dim(3), p = cfg_.patch;
    if (content->shape != Shape{c_, h, w}) throw ConfigError("decoder: content latent must be [c,h,w]");
    if (h % p || w % p) throw ConfigError("decoder: latent spatial size not divisible by patch");
    if (u_g.shape() != Shape{gcfg_.f_g, gcfg_.n_g, gcfg_.c_g}) throw ConfigError("decoder: u_g shape " + shape_str(u_g.shape()));
    if (u_d.shape() != Shape{dcfg_.f_d, dcfg_.n_d, dcfg_.c_d} || dcfg_.f_d != f) throw ConfigError("decoder: u_d shape " + shape_str(u_d.shape()));
    const int hp = h / p, wp = w / p, L = hp * wp, W = cfg_.width;

    // channel-concatenate [interp ; repeated content], then patchify -> [f*L, 2c*p*p]
    const int cc = 2 * c_, pd = cc * p * p;
    Array tokens({f * L, pd});
    for (int t_ = 0; t_ < f; ++t_)
      for (int y = 0; y < hp; ++y)
        for (int x = 0; x < wp; ++x) {
          double* row = tokens.data.data() + (static_cast<std::size_t>(t_) * L + y * wp + x) * pd;
          for (int k = 0; k < cc; ++k)
            for (int dy = 0; dy < p; ++dy)
              for (int dx = 0; dx < p; ++dx) {
                const int yy = y * p + dy, xx = x * p + dx;
                const double v = k < c_ ? interp[((static_cast<std::size_t>(k) * f + t_) * h + yy) * w + xx]
                                        : (*content)[(static_cast<std::size_t>(k - c_) * h + yy) * w + xx];
                *row++ = v;
              }
        }
    // fixed position codes: spatial index plus frame index
    const Array pe_s = nn::sinusoidal_table(L, W);
    const Array pe_t = nn::sinusoidal_table(f, W);
    Array pe({f * L, W});
    for (int t_ = 0; t_ < f; ++t_)
      for (int s = 0; s < L; ++s)
        for (int k = 0; k < W; ++k)
          pe[(static_cast<std::size_t>(t_) * L + s) * W + k] = pe_s[static_cast<std::size_t>(s) * W + k] + pe_t[static_cast<std::size_t>(t_) * W + k];
    Var x = ag::add(in_(Var::constant(std::move(tokens))), Var::constant(std::move(pe)));

    // time conditioning on the nominal training-step scale
    Array te = nn::sinusoidal_embedding(t * cfg_.train_steps_T, W).reshaped({1, W});
    Var cond = ag::silu(t2_(ag::silu(t1_(Var::constant(std::move(te))))));

    // motion tokens with index codes
    const int mg = gcfg_.f_g * gcfg_.n_g, md = dcfg_.n_d;
    Var g_tok = ag::add(g_in_(ag::reshape(u_g, {mg, gcfg_.c_g})), Var::constant(nn::sinusoidal_table(mg, W)));
    Var d_tok = ag::add(d_in_(ag::reshape(u_d, {f * md, dcfg_.c_d})),
                        Var::constant(nn::repeat_rows(nn::sinusoidal_table(md, W), f)));

    // key/value row maps: per frame [L frame tokens | motion tokens]
    std::vector<std::int32_t> g_idx, d_idx;
    g_idx.reserve(static_cast<std::size_t>(f) * (L + mg) * W);
    d_idx.reserve(static_cast<std::size_t>(f) * (L + md) * W);
    const int base = f * L;
    for (int t_ = 0; t_ < f; ++t_) {
      for (int s = 0; s < L; ++s)
        for (int k = 0; k < W; ++k) {
          g_idx.push_back((t_ * L + s) * W + k);
          d_idx.push_back((t_ * L + s) * W + k);
        }
      for (int j = 0; j < mg; ++j)
        for (int k = 0; k < W; ++k) g_idx.push_back((base + j) * W + k);
      for (int j = 0; j < md; ++j)
        for (int k = 0; k < W; ++k) d_idx.push_back((base + t_ * md + j) * W + k);
    }
    const auto to_time_major = permute_index({f, L, W}, {1, 0, 2});
    const auto to_frame_major = permute_index({L, f, W}, {1, 0, 2});

    for (const auto& g : groups_) {
      x = g.global_blk.forward(x, cond, f, g_tok, &g_idx, f * (L + mg));
      x = g.detail_blk.forward(x, cond, f, d_tok, &d_idx, f * (L + md));
      x = temporal_align(g.tab, x, cond, f, L, to_time_major, to_frame_major);
    }

    // final modulation and unpatchify
    Var om = out_ada_(cond);
    std::vector<std::int32_t> i0(static_cast<std::size_t>(W)), i1(static_cast<std::size_t>(W));
    std::iota(i0.begin(), i0.end(), 0);
    std::iota(i1.begin(), i1.end(), W);
    Var shift = ag::gather(om, std::move(i0), {W});
    Var scl = ag::gather(om, std::move(i1), {W});
    Var y = out_(ag::modulate(ag::layer_norm(x), shift, scl));  // [f*L, p*p*c]
    std::vector<std::int32_t> un(static_cast<std::size_t>(c_) * f * h * w);
    for (int k = 0; k < c_; ++k)
      for (int t_ = 0; t_ < f; ++t_)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const int tok = t_ * L + (yy / p) * wp + xx / p;
            const int col = (k * p + yy % p) * p + xx % p;
            un[((static_cast<std::size_t>(k) * f + t_) * h + yy) * w + xx] = tok * (p * p * c_) + col;
          }
    Var head = ag::gather(y, std::move(un), {c_, f, h, w});
    if (cfg_.prediction == DecoderConfig::Prediction::Velocity) return head;
    return ag::scale(ag::sub(head, Var::constant(interp)), 1.0 / std::max(t, cfg_.t_floor));
  }

  // Temporal align block on frame-major tokens [f*L, W]: attention along the
  // frame axis independently for every spatial index.
  static Var temporal_align(const AdaBlock& blk, const Var& x, const Var& cond, int f, int L,
                            const std::vector<std::int32_t>& to_time_major,
                            const std::vector<std::int32_t>& to_frame_major) {
    const int W = blk.width;
    Var tm = ag::gather(x, to_time_major, {L * f, W});
    tm = blk.forward(tm, cond, L);
    return ag::gather(tm, to_frame_major, {f * L, W});
  }

  // Standalone TAB on tokens [F, L, d] (used for oracle tests).
  Var temporal_align_tokens(int group, const Var& tokens, const Var& cond) const {
    const int f = tokens.dim(0), L = tokens.dim(1), W = tokens.dim(2);
    Var flat = ag::reshape(tokens, {f * L, W});
    Var out = temporal_align(groups_.at(static_cast<std::size_t>(group)).tab, flat, cond, f, L,
                             permute_index({f, L, W}, {1, 0, 2}), permute_index({L, f, W}, {1, 0, 2}));
    return ag::reshape(out, {f, L, W});
  }

  // Velocity for the given mode; excluded streams use their null tokens.
  Array velocity(const Array& z_t, const Array& content, const Array* u_g, const Array* u_d, double t) const {
    ag::NoGradGuard ng;
    Var g = u_g ? Var::constant(*u_g) : null_g_;
    Var d = u_d ? Var::constant(*u_d) : null_d_;
    return forward(z_t, &content, g, d, t).array();
  }

 private:
  DecoderConfig cfg_;
  int c_;
  motion::GlobalMotionConfig gcfg_;
  motion::DetailedMotionConfig dcfg_;
  nn::Linear in_, t1_, t2_, g_in_, d_in_, out_ada_, out_;
  Var null_g_, null_d_;
  std::vector<DecoderGroup> groups_;
};

// Velocity field callback: (z_t, t) -> v.
using VelocityFn = std::function<Array(const Array&, double)>;

// Forward Euler from eps at t = 1 to t = 0 with uniform steps.
inline Array euler_integrate(const VelocityFn& field, Array z, int steps) {
  if (steps < 1) throw ConfigError("ode_sample: steps must be >= 1");
  const double dt = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / steps;
    const Array v = field(z, t);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += dt * v[k];
    if (!z.all_finite()) throw NumericalError("ode_sample: non-finite latent at step " + std::to_string(i));
  }
  return z;
}

struct SampleOptions {
  int steps = 20;
  double guidance = 5.0;
  DecodeMode mode = DecodeMode::Full;
};

// Reconstruct a latent [c, f, h, w] from motion latents and the content latent.
inline Array ode_sample(const FlowDecoder& dec, const Array& u_g, const Array& u_d, const Array& content,
                        const Shape& latent_shape, Rng& rng, const SampleOptions& opt) {
  const Array* g = opt.mode == DecodeMode::DetailedOnly ? nullptr : &u_g;
  const Array* d = opt.mode == DecodeMode::GlobalOnly ? nullptr : &u_d;
  const double w = opt.guidance;
  VelocityFn field = [&](const Array& z, double t) {
    if (w == 0.0) return dec.velocity(z, content, nullptr, nullptr, t);
    Array vc = dec.velocity(z, content, g, d, t);
    if (w == 1.0) return vc;
    return cfg_velocity(vc, dec.velocity(z, content, nullptr, nullptr, t), w);
  };
  return euler_integrate(field, rng.normal_array(latent_shape), opt.steps);
}

}  // namespace hivae::flow
