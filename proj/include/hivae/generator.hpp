#pragma once

// Class-conditional motion generation: (u_g, u_d) are packed into a single
// token grid m [f_d, n_g + n_d, c_m], a rectified-flow transformer learns
// p(m | class), and samples are unpacked and decoded by the Hi-VAE decoder.

#include "hivae/model.hpp"
#include "hivae/optim.hpp"

namespace hivae::gen {

using ag::Var;

// ---------------------------------------------------------------------------
// Packing

struct PackStats {
  double mean_g = 0.0, std_g = 1.0, mean_d = 0.0, std_d = 1.0;
};

// Per-stream projection to c_m = max(c_g, c_d) by a fixed seeded map with
// orthonormal rows, so unpacking through the transpose is exact. Streams are
// standardized by scalar statistics fitted on a training set.
class MotionPacker {
 public:
  MotionPacker(const motion::GlobalMotionConfig& g, const motion::DetailedMotionConfig& d, std::uint64_t seed = 0)
      : g_(g), d_(d), c_m_(std::max(g.c_g, d.c_d)) {
    if (d.f_d != 2 * g.f_g) throw ConfigError("pack_motion: f_d must equal 2 f_g");
    Rng rng(seed);
    p_g_ = orthonormal_rows(g.c_g, c_m_, rng);
    p_d_ = orthonormal_rows(d.c_d, c_m_, rng);
  }

  int frames() const { return d_.f_d; }
  int tokens() const { return g_.n_g + d_.n_d; }
  int channels() const { return c_m_; }
  Shape packed_shape() const { return {frames(), tokens(), c_m_}; }
  bool fitted() const { return fitted_; }
  const PackStats& stats() const { return stats_; }
  void set_stats(const PackStats& s) {
    stats_ = s;
    fitted_ = true;
  }
  const Array& proj_g() const { return p_g_; }
  const Array& proj_d() const { return p_d_; }

  // Fits per-stream mean/std of the projected latents.
  void fit(const std::vector<motion::MotionLatent>& data) {
    if (data.empty()) throw ConfigError("pack_motion: empty fitting set");
    auto moments = [](const std::vector<Array>& xs) {
      double s = 0.0, s2 = 0.0;
      std::size_t n = 0;
      for (const auto& x : xs) {
        for (double v : x.data) {
          s += v;
          s2 += v * v;
        }
        n += x.size();
      }
      const double m = s / static_cast<double>(n);
      return std::pair{m, std::sqrt(std::max(1e-12, s2 / static_cast<double>(n) - m * m))};
    };
    std::vector<Array> pg, pd;
    for (const auto& ml : data) {
      check(ml);
      pg.push_back(project(ml.u_g, p_g_));
      pd.push_back(project(ml.u_d, p_d_));
    }
    auto [mg, sg] = moments(pg);
    auto [md, sd] = moments(pd);
    set_stats({mg, sg, md, sd});
  }

  Array pack(const Array& u_g, const Array& u_d) const {
    if (!fitted_) throw PreconditionError("pack_motion: projection statistics have not been fitted");
    if (u_g.shape != Shape{g_.f_g, g_.n_g, g_.c_g} || u_d.shape != Shape{d_.f_d, d_.n_d, d_.c_d})
      throw ConfigError("pack_motion: latent shapes " + shape_str(u_g.shape) + ", " + shape_str(u_d.shape) +
                        " do not match the packer configuration");
    const Array pg = project(u_g, p_g_), pd = project(u_d, p_d_);
    const int f = frames(), n = tokens(), c = c_m_;
    Array m({f, n, c});
    for (int t = 0; t < f; ++t) {
      for (int j = 0; j < g_.n_g; ++j)
        for (int k = 0; k < c; ++k)
          m[(static_cast<std::size_t>(t) * n + j) * c + k] =
              (pg[(static_cast<std::size_t>(t / 2) * g_.n_g + j) * c + k] - stats_.mean_g) / stats_.std_g;
      for (int j = 0; j < d_.n_d; ++j)
        for (int k = 0; k < c; ++k)
          m[(static_cast<std::size_t>(t) * n + g_.n_g + j) * c + k] =
              (pd[(static_cast<std::size_t>(t) * d_.n_d + j) * c + k] - stats_.mean_d) / stats_.std_d;
    }
    return m;
  }

  // Inverse of pack. The two time copies of each global frame are averaged.
  std::pair<Array, Array> unpack(const Array& m) const {
    if (!fitted_) throw PreconditionError("unpack_motion: projection statistics have not been fitted");
    if (m.shape != packed_shape()) throw ConfigError("unpack_motion: expected " + shape_str(packed_shape()) + ", got " + shape_str(m.shape));
    const int n = tokens(), c = c_m_;
    Array pg({g_.f_g, g_.n_g, c}), pd({d_.f_d, d_.n_d, c});
    for (int t = 0; t < d_.f_d; ++t) {
      for (int j = 0; j < g_.n_g; ++j)
        for (int k = 0; k < c; ++k)
          pg[(static_cast<std::size_t>(t / 2) * g_.n_g + j) * c + k] +=
              0.5 * (m[(static_cast<std::size_t>(t) * n + j) * c + k] * stats_.std_g + stats_.mean_g);
      for (int j = 0; j < d_.n_d; ++j)
        for (int k = 0; k < c; ++k)
          pd[(static_cast<std::size_t>(t) * d_.n_d + j) * c + k] =
              m[(static_cast<std::size_t>(t) * n + g_.n_g + j) * c + k] * stats_.std_d + stats_.mean_d;
    }
    return {back_project(pg, p_g_), back_project(pd, p_d_)};
  }

 private:
  // [rows, cols] with orthonormal rows (rows <= cols) via Gram-Schmidt on a Gaussian draw.
  static Array orthonormal_rows(int rows, int cols, Rng& rng) {
    Array a = rng.normal_array({rows, cols});
    for (int r = 0; r < rows; ++r) {
      double* row = a.data.data() + static_cast<std::size_t>(r) * cols;
      for (int pass = 0; pass < 2; ++pass)
        for (int q = 0; q < r; ++q) {
          const double* prev = a.data.data() + static_cast<std::size_t>(q) * cols;
          double dot = 0.0;
          for (int k = 0; k < cols; ++k) dot += row[k] * prev[k];
          for (int k = 0; k < cols; ++k) row[k] -= dot * prev[k];
        }
      double nrm = 0.0;
      for (int k = 0; k < cols; ++k) nrm += row[k] * row[k];
      nrm = std::sqrt(nrm);
      for (int k = 0; k < cols; ++k) row[k] /= nrm;
    }
    return a;
  }

  // [.., c_in] x [c_in, c_m] -> [.., c_m]
  static Array project(const Array& u, const Array& p) {
    const int ci = p.dim(0), co = p.dim(1);
    const std::size_t rows = u.size() / static_cast<std::size_t>(ci);
    Shape s = u.shape;
    s.back() = co;
    Array out(s);
    for (std::size_t r = 0; r < rows; ++r)
      for (int i = 0; i < ci; ++i) {
        const double v = u[r * ci + i];
        for (int o = 0; o < co; ++o) out[r * co + o] += v * p[static_cast<std::size_t>(i) * co + o];
      }
    return out;
  }

  // [.., c_m] x [c_in, c_m]^T -> [.., c_in]
  static Array back_project(const Array& x, const Array& p) {
    const int ci = p.dim(0), co = p.dim(1);
    const std::size_t rows = x.size() / static_cast<std::size_t>(co);
    Shape s = x.shape;
    s.back() = ci;
    Array out(s);
    for (std::size_t r = 0; r < rows; ++r)
      for (int i = 0; i < ci; ++i) {
        double acc = 0.0;
        for (int o = 0; o < co; ++o) acc += x[r * co + o] * p[static_cast<std::size_t>(i) * co + o];
        out[r * ci + i] = acc;
      }
    return out;
  }

  void check(const motion::MotionLatent& ml) const {
    if (ml.u_g.shape != Shape{g_.f_g, g_.n_g, g_.c_g} || ml.u_d.shape != Shape{d_.f_d, d_.n_d, d_.c_d})
      throw ConfigError("pack_motion: motion latent does not match the packer configuration");
  }

  motion::GlobalMotionConfig g_;
  motion::DetailedMotionConfig d_;
  int c_m_;
  Array p_g_, p_d_;
  PackStats stats_;
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Generator network

struct GenConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 2;
  int class_embed_dim = 128;
  int class_tokens = 4;  // class embedding is projected to this many key/value tokens
  int num_classes = 2;
  double cfg_drop = 0.20;
  double cfg_weight = 5.0;
  int train_steps_T = 1000;
  int infer_steps = 20;
  bool zero_init = true;
};

inline void validate(const GenConfig& c) {
  if (c.layers < 0 || c.width < 1 || c.heads < 1 || c.width % c.heads || c.mlp_ratio < 1 || c.class_embed_dim < 1 ||
      c.class_tokens < 1 || c.num_classes < 1)
    throw ConfigError("generator config has non-positive or inconsistent sizes");
  if (c.cfg_drop < 0.0 || c.cfg_drop > 1.0) throw ConfigError("gen.cfg_drop must be in [0,1]");
  if (c.cfg_weight < 0.0) throw ConfigError("gen.cfg_weight must be >= 0");
  if (c.infer_steps < 1) throw ConfigError("gen.infer_steps must be >= 1");
}

struct GenLayer {
  flow::AdaBlock spatial;   // attention among the tokens of one frame
  nn::LayerNorm ln_x;
  nn::Attention cross;      // queries: motion tokens, keys/values: class tokens
  flow::AdaBlock temporal;  // attention along time for each token index
};

class MotionGenerator {
 public:
  // Parameters live under "gen." in `ps`.
  MotionGenerator(nn::ParamStore& ps, GenConfig cfg, Shape packed_shape, Rng& rng)
      : cfg_(cfg), shape_(std::move(packed_shape)) {
    validate(cfg_);
    if (shape_.size() != 3) throw ConfigError("generator: packed shape must be [f, n, c_m]");
    const int w = cfg_.width, c = shape_[2];
    in_ = nn::Linear(ps, "gen.in", c, w, rng);
    t1_ = nn::Linear(ps, "gen.t1", w, w, rng);
    t2_ = nn::Linear(ps, "gen.t2", w, w, rng);
    // rows 0..num_classes-1 are classes, the last row is the learned null class
    class_table_ = ps.add("gen.class_embed", rng.normal_array({cfg_.num_classes + 1, cfg_.class_embed_dim}, 1.0));
    class_proj_ = nn::Linear(ps, "gen.class_proj", cfg_.class_embed_dim, cfg_.class_tokens * w, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = "gen.blk" + std::to_string(l);
      GenLayer L;
      L.spatial = flow::AdaBlock(ps, b + ".spatial", w, cfg_.heads, cfg_.mlp_ratio, cfg_.zero_init, rng);
      L.ln_x = nn::LayerNorm(ps, b + ".ln_x", w);
      L.cross = nn::Attention(ps, b + ".cross", w, cfg_.heads, rng, cfg_.zero_init ? nn::Init::Zero : nn::Init::Xavier);
      L.temporal = flow::AdaBlock(ps, b + ".temporal", w, cfg_.heads, cfg_.mlp_ratio, cfg_.zero_init, rng);
      layers_.push_back(std::move(L));
    }
    out_ada_ = nn::Linear(ps, "gen.out_ada", w, 2 * w, rng, cfg_.zero_init ? nn::Init::Zero : nn::Init::Normal02);
    out_ = nn::Linear(ps, "gen.out", w, c, rng, cfg_.zero_init ? nn::Init::Zero : nn::Init::Xavier);
  }

  const GenConfig& config() const { return cfg_; }
  const Shape& packed_shape() const { return shape_; }
  int null_class() const { return cfg_.num_classes; }

  // Predicted velocity for m_t [f, n, c_m] at time t; class_id == null_class() is unconditional.
  Var forward(const Array& m_t, int class_id, double t) const {
    if (m_t.shape != shape_) throw ConfigError("generator: expected " + shape_str(shape_) + ", got " + shape_str(m_t.shape));
    if (class_id < 0 || class_id > cfg_.num_classes)
      throw ConfigError("generator: class id " + std::to_string(class_id) + " outside [0, " + std::to_string(cfg_.num_classes) + ")");
    const int f = shape_[0], n = shape_[1], c = shape_[2], W = cfg_.width, K = cfg_.class_tokens;
    Array pe({f * n, W});
    const Array pe_n = nn::sinusoidal_table(n, W), pe_f = nn::sinusoidal_table(f, W);
    for (int a = 0; a < f; ++a)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < W; ++k)
          pe[(static_cast<std::size_t>(a) * n + j) * W + k] = pe_n[static_cast<std::size_t>(j) * W + k] + pe_f[static_cast<std::size_t>(a) * W + k];
    Var x = ag::add(in_(Var::constant(m_t.reshaped({f * n, c}))), Var::constant(std::move(pe)));
    Array te = nn::sinusoidal_embedding(t * cfg_.train_steps_T, W).reshaped({1, W});
    Var cond = ag::silu(t2_(ag::silu(t1_(Var::constant(std::move(te))))));

    std::vector<std::int32_t> row(static_cast<std::size_t>(cfg_.class_embed_dim));
    std::iota(row.begin(), row.end(), class_id * cfg_.class_embed_dim);
    Var emb = ag::gather(class_table_, std::move(row), {1, cfg_.class_embed_dim});
    Var ctok = ag::reshape(class_proj_(emb), {K, W});

    const auto to_time_major = permute_index({f, n, W}, {1, 0, 2});
    const auto to_frame_major = permute_index({n, f, W}, {1, 0, 2});
    for (const auto& L : layers_) {
      x = L.spatial.forward(x, cond, f);
      x = ag::add(x, L.cross(L.ln_x(x), ctok, 1));
      x = flow::FlowDecoder::temporal_align(L.temporal, x, cond, f, n, to_time_major, to_frame_major);
    }
    Var om = out_ada_(cond);
    std::vector<std::int32_t> i0(static_cast<std::size_t>(W)), i1(static_cast<std::size_t>(W));
    std::iota(i0.begin(), i0.end(), 0);
    std::iota(i1.begin(), i1.end(), W);
    Var y = out_(ag::modulate(ag::layer_norm(x), ag::gather(om, std::move(i0), {W}), ag::gather(om, std::move(i1), {W})));
    return ag::reshape(y, shape_);
  }

  Array velocity(const Array& m_t, int class_id, double t) const {
    ag::NoGradGuard ng;
    return forward(m_t, class_id, t).array();
  }

 private:
  GenConfig cfg_;
  Shape shape_;
  nn::Linear in_, t1_, t2_, class_proj_, out_ada_, out_;
  Var class_table_;
  std::vector<GenLayer> layers_;
};

// ---------------------------------------------------------------------------
// Training and sampling

struct GenSample {
  Array m;  // packed motion [f, n, c_m]
  int class_id = 0;
};

struct GenTrainConfig {
  long steps = 300;
  double lr = 1e-3;
  long warmup_steps = 20;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  int batch_size = 4;
};

// Rectified-flow training on packed motion. Returns the per-step mean loss.
inline std::vector<double> gen_train(nn::ParamStore& ps, const MotionGenerator& model, const std::vector<GenSample>& data,
                                     const GenTrainConfig& tc, Rng& rng,
                                     const std::function<void(long, double)>& on_step = {}) {
  if (data.empty()) throw ConfigError("gen_train: empty dataset");
  if (tc.steps < 1) throw ConfigError("gen_train: steps must be >= 1");
  auto params = ps.with_prefix("gen.");
  optim::AdamW opt(params, 0.9, 0.99, 1e-8, tc.weight_decay);
  optim::WarmupCosine sched{tc.lr, std::min(tc.warmup_steps, tc.steps), tc.steps};
  const int n = static_cast<int>(data.size());
  const int bs = std::min(tc.batch_size, n);
  std::vector<double> losses;
  for (long step = 0; step < tc.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    double total = 0.0;
    for (int b = 0; b < bs; ++b) {
      const auto& s = data[static_cast<std::size_t>(rng.randint(n))];
      const int cls = rng.uniform() < model.config().cfg_drop ? model.null_class() : s.class_id;
      const double t = rng.uniform();
      Array eps = rng.normal_array(s.m.shape);
      Var v = model.forward(flow::noise_interp(s.m, eps, t), cls, t);
      Var loss = ag::scale(ag::mse(v, Var::constant(flow::velocity_target(s.m, eps))), 1.0 / bs);
      ag::backward(loss);
      total += loss.item();
    }
    if (!std::isfinite(total)) throw DivergenceError("generator loss is not finite", step);
    optim::clip_grad_norm(params, tc.grad_clip);
    opt.step(sched(step));
    losses.push_back(total);
    if (on_step) on_step(step, total);
  }
  for (auto& p : params) p.zero_grad();
  return losses;
}

// Euler sampling from noise with classifier-free guidance. w = 0 queries only
// the unconditional branch.
inline Array gen_sample(const MotionGenerator& model, int class_id, Rng& rng, int steps, double w) {
  if (class_id < 0 || class_id >= model.config().num_classes)
    throw ConfigError("gen_sample: class id " + std::to_string(class_id) + " outside [0, " +
                      std::to_string(model.config().num_classes) + ")");
  flow::VelocityFn field = [&](const Array& m, double t) {
    if (w == 0.0) return model.velocity(m, model.null_class(), t);
    Array vc = model.velocity(m, class_id, t);
    if (w == 1.0) return vc;
    return flow::cfg_velocity(vc, model.velocity(m, model.null_class(), t), w);
  };
  return flow::euler_integrate(field, rng.normal_array(model.packed_shape()), steps);
}

// Unconditional sampling (null class throughout).
inline Array gen_sample_unconditional(const MotionGenerator& model, Rng& rng, int steps) {
  flow::VelocityFn field = [&](const Array& m, double t) { return model.velocity(m, model.null_class(), t); };
  return flow::euler_integrate(field, rng.normal_array(model.packed_shape()), steps);
}

// Sampled motion unpacked and decoded through the Hi-VAE decoder and codec.
struct Generated {
  motion::MotionLatent motion;
  Array latent;  // [c, f, h, w]
  Array video;   // [C, F, H, W]
};

inline Generated generate_video(const HiVae& vae, const MotionGenerator& model, const MotionPacker& packer, int class_id,
                                const Array& content, Rng& rng, int gen_steps, double gen_w,
                                const flow::SampleOptions& dec_opt) {
  Array m = gen_sample(model, class_id, rng, gen_steps, gen_w);
  auto [u_g, u_d] = packer.unpack(m);
  Generated g;
  g.motion.u_g = u_g;
  g.motion.mu_g = u_g;
  g.motion.logvar_g = Array(u_g.shape);
  g.motion.u_d = u_d;
  g.motion.mu_d = u_d;
  g.motion.logvar_d = Array(u_d.shape);
  g.latent = vae.decode_latent(g.motion, content, rng, dec_opt);
  g.video = vae.codec().decode_clip(g.latent, vae.config().clip_shape());
  return g;
}

}  // namespace hivae::gen
