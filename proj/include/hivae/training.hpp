#pragma once

// Two-stage training of the motion encoders and the flow decoder.
//
// stage 1: global encoder + decoder on low-passed targets (z_low), detailed
//          stream replaced by its null tokens.
// stage 2: global encoder frozen; detailed encoder + decoder on full-band z.
// joint:   both encoders + decoder on z from the start (single-stage ablation).
//
// Detail dropout (stage 2 and joint): with probability detail_drop_prob the
// detailed stream is replaced by its null tokens and the target becomes z_low,
// so the global-only decode stays a low-frequency reconstruction.
//
// Per-sample loss: mse(v_hat, target - eps) + lambda_kl * kl, with kl summed
// over the active streams.

#include <chrono>
#include <functional>

#include "hivae/model.hpp"

namespace hivae::training {

using ag::Var;

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  long warmup_steps = 200;
  double lambda_kl = 0.001;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  // Stage 2 / joint: probability of replacing u_d alone by its null tokens,
  // with the low band z_low as the target.
  double detail_drop_prob = 0.1;
  int batch_size = 4;
  long codec_steps = 2000;
  double codec_lr = 1e-4;
  long stage1_steps = 2000;
  long stage2_steps = 2000;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  if (c.lambda_kl < 0.0) throw ConfigError("train.lambda_kl must be >= 0");
  if (c.lr <= 0.0 || c.codec_lr <= 0.0) throw ConfigError("learning rates must be positive");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.detail_drop_prob < 0.0 || c.detail_drop_prob > 1.0) throw ConfigError("train.detail_drop_prob must be in [0,1]");
}

enum class Phase { Global, Full, Joint };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Global: return "stage1";
    case Phase::Full: return "stage2";
    case Phase::Joint: return "joint";
  }
  return "?";
}

// 0.5 * mean(mu^2 + exp(logvar) - 1 - logvar)
inline double kl_loss(const Array& mu, const Array& logvar) {
  ag::NoGradGuard ng;
  return ag::kl_standard_normal(Var::constant(mu), Var::constant(logvar)).item();
}

// mean((v_hat - (z - eps))^2)
inline double fm_loss(const Array& v_hat, const Array& z, const Array& eps) {
  if (v_hat.shape != z.shape || z.shape != eps.shape) throw ConfigError("fm_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = v_hat[i] - (z[i] - eps[i]);
    s += r * r;
  }
  return s / static_cast<double>(z.size());
}

struct LogRow {
  long step;
  std::string stage;
  double fm_loss;
  double kl_loss;
  double total;
  double lr;
  double wall_time;
};

using LogFn = std::function<void(const LogRow&)>;

// Moving average over the trailing `window` entries at each position.
inline std::vector<double> smoothed(const std::vector<double>& xs, std::size_t window = 50) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= window) acc -= xs[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

inline std::vector<std::string> trainable_prefixes(Phase p) {
  switch (p) {
    case Phase::Global: return {"global.", "decoder."};
    case Phase::Full: return {"detail.", "decoder."};
    case Phase::Joint: return {"global.", "detail.", "decoder."};
  }
  return {};
}

inline std::vector<Var> collect(const nn::ParamStore& ps, const std::vector<std::string>& prefixes) {
  std::vector<Var> out;
  for (const auto& p : prefixes) {
    auto v = ps.with_prefix(p);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

struct SampleLoss {
  Var total;
  double fm = 0.0;
  double kl = 0.0;
};

// Builds the loss graph for one clip.
inline SampleLoss sample_loss(const HiVae& model, const PreparedClip& p, Phase phase, const TrainConfig& tc, Rng& rng) {
  const auto& gcfg = model.config().global;
  const auto& dec = model.decoder();
  const int hw = p.z.dim(2) * p.z.dim(3);
  auto mask = motion::sample_spatial_mask(hw, rng, gcfg.mask_lo, gcfg.mask_hi);
  auto g = model.global_encoder().forward(p.z_low, mask, rng, true);
  Var kl = ag::kl_standard_normal(g.mu, g.logvar);
  Var u_g = g.u;
  Var u_d = dec.null_d();
  bool low_target = phase == Phase::Global;
  if (phase != Phase::Global) {
    auto d = model.detailed_encoder().forward(p.z_high, rng, true);
    kl = ag::add(kl, ag::kl_standard_normal(d.mu, d.logvar));
    if (rng.uniform() < tc.detail_drop_prob)
      low_target = true;
    else
      u_d = d.u;
  }
  // classifier-free guidance: drop both motion streams together
  if (rng.uniform() < model.config().decoder.cfg_drop_prob) {
    u_g = dec.null_g();
    u_d = dec.null_d();
  }
  const Array& target = low_target ? p.z_low : p.z;
  const double t = rng.uniform();
  Array eps = rng.normal_array(target.shape);
  Array interp = flow::noise_interp(target, eps, t);
  Var v_hat = dec.forward(interp, &p.content, u_g, u_d, t);
  Var fm = ag::mse(v_hat, Var::constant(flow::velocity_target(target, eps)));
  Var total = ag::add(fm, ag::scale(kl, tc.lambda_kl));
  return {total, fm.item(), kl.item()};
}

// Runs `steps` optimizer steps of the given phase. Only parameters of the
// phase's namespaces are updated; everything else is left bitwise untouched.
inline std::vector<LogRow> train_phase(HiVae& model, const std::vector<PreparedClip>& data, Phase phase, long steps,
                                       const TrainConfig& tc, Rng& rng, const LogFn& log = {}) {
  validate(tc);
  if (steps < 1) throw ConfigError("training steps must be >= 1");
  if (data.empty()) throw ConfigError("training set is empty");
  auto params = collect(model.params(), trainable_prefixes(phase));
  optim::AdamW opt(params, tc.beta1, tc.beta2, 1e-8, tc.weight_decay);
  optim::WarmupCosine sched{tc.lr, std::min(tc.warmup_steps, steps), steps};
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<LogRow> rows;
  const int n = static_cast<int>(data.size());
  const int bs = std::min(tc.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (long step = 0; step < steps; ++step) {
    model.params().zero_grad();
    if (bs < n) std::shuffle(order.begin(), order.end(), rng.engine());
    double fm = 0.0, kl = 0.0, total = 0.0;
    for (int b = 0; b < bs; ++b) {
      SampleLoss sl = sample_loss(model, data[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])], phase, tc, rng);
      Var scaled = ag::scale(sl.total, 1.0 / bs);
      ag::backward(scaled);
      fm += sl.fm / bs;
      kl += sl.kl / bs;
      total += scaled.item();
    }
    if (!std::isfinite(total)) throw DivergenceError(std::string(phase_name(phase)) + " loss is not finite", step);
    optim::clip_grad_norm(opt.params(), tc.grad_clip);
    const double lr = sched(step);
    opt.step(lr);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back({step, phase_name(phase), fm, kl, total, lr, wall});
    if (log) log(rows.back());
  }
  // parameters outside the phase accumulated gradients too; drop them
  model.params().zero_grad();
  return rows;
}

inline std::vector<PreparedClip> prepare_all(const HiVae& model, const std::vector<Array>& clips) {
  std::vector<PreparedClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(model.prepare(c));
  return out;
}

// Stage 0: pretrain the frame codec.
inline codec::PretrainResult train_stage0(HiVae& model, const std::vector<Array>& clips, const TrainConfig& tc,
                                          const std::function<void(long, double)>& on_step = {}) {
  auto r = codec::pretrain_codec(model.codec(), clips, tc.codec_steps, tc.codec_lr, on_step);
  model.set_stage(StageTag::Codec);
  return r;
}

inline std::vector<LogRow> train_stage1(HiVae& model, const std::vector<Array>& clips, const TrainConfig& tc, Rng& rng,
                                        const LogFn& log = {}) {
  if (model.stage() < StageTag::Codec) throw PreconditionError("stage 1 requires a trained stage-0 codec");
  auto data = prepare_all(model, clips);
  auto rows = train_phase(model, data, Phase::Global, tc.stage1_steps, tc, rng, log);
  model.set_stage(StageTag::Global);
  return rows;
}

inline std::vector<LogRow> train_stage2(HiVae& model, const std::vector<Array>& clips, const TrainConfig& tc, Rng& rng,
                                        const LogFn& log = {}) {
  if (model.stage() < StageTag::Global) throw PreconditionError("stage 2 requires a stage-1 checkpoint");
  auto data = prepare_all(model, clips);
  auto rows = train_phase(model, data, Phase::Full, tc.stage2_steps, tc, rng, log);
  model.set_stage(StageTag::Full);
  return rows;
}

// Single-stage ablation: both encoders and the decoder trained jointly on z.
inline std::vector<LogRow> train_joint(HiVae& model, const std::vector<Array>& clips, long steps, const TrainConfig& tc,
                                       Rng& rng, const LogFn& log = {}) {
  if (model.stage() < StageTag::Codec) throw PreconditionError("joint training requires a trained stage-0 codec");
  auto data = prepare_all(model, clips);
  auto rows = train_phase(model, data, Phase::Joint, steps, tc, rng, log);
  model.set_stage(StageTag::Full);
  return rows;
}

}  // namespace hivae::training
