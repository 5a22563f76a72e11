#pragma once

// Reconstruction metrics, compression-rate accounting, spectral energy
// analysis and the analytic transformer cost counter.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "hivae/spectral.hpp"

namespace hivae::eval {

// 10 log10(peak^2 / mse); identical inputs give +inf.
inline double psnr(const Array& x, const Array& y, double peak = 1.0) {
  if (x.shape != y.shape) throw ConfigError("psnr: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  if (x.size() == 0) throw ConfigError("psnr: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  const double mse = s / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const int r = size / 2;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable weighted mean of img [h, w]; the window is clipped at the borders
// and renormalized over the in-bounds taps.
inline std::vector<double> local_mean(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int r = static_cast<int>(g.size()) / 2;
  std::vector<double> tmp(img.size()), out(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= w) continue;
        const double wt = g[static_cast<std::size_t>(k + r)];
        acc += wt * img[static_cast<std::size_t>(y * w + xx)];
        norm += wt;
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc / norm;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= h) continue;
        const double wt = g[static_cast<std::size_t>(k + r)];
        acc += wt * tmp[static_cast<std::size_t>(yy * w + x)];
        norm += wt;
      }
      out[static_cast<std::size_t>(y * w + x)] = acc / norm;
    }
  return out;
}

// Channel-mean grayscale frames of a [.., C, F, H, W] array: one [H*W] plane per (batch, frame).
inline std::vector<std::vector<double>> gray_frames(const Array& x) {
  if (x.rank() < 4) throw ConfigError("ssim: expected [.., C, F, H, W], got " + shape_str(x.shape));
  const int r = x.rank();
  const int c = x.dim(r - 4), f = x.dim(r - 3), h = x.dim(r - 2), w = x.dim(r - 1);
  const std::size_t per = static_cast<std::size_t>(c) * f * h * w;
  const std::size_t batches = x.size() / per;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < batches; ++b)
    for (int t = 0; t < f; ++t) {
      std::vector<double> g(hw, 0.0);
      for (int ci = 0; ci < c; ++ci) {
        const double* src = x.data.data() + b * per + (static_cast<std::size_t>(ci) * f + t) * hw;
        for (std::size_t i = 0; i < hw; ++i) g[i] += src[i] / c;
      }
      out.push_back(std::move(g));
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean local SSIM over all frames of [.., C, F, H, W] inputs.
inline double ssim(const Array& x, const Array& y, const SsimOptions& o = {}) {
  if (x.shape != y.shape) throw ConfigError("ssim: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const auto gx = detail::gray_frames(x), gy = detail::gray_frames(y);
  const auto g = detail::gaussian_window(o.window, o.sigma);
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak), c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t fi = 0; fi < gx.size(); ++fi) {
    const auto& a = gx[fi];
    const auto& b = gy[fi];
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::local_mean(a, h, w, g), mb = detail::local_mean(b, h, w, g);
    const auto maa = detail::local_mean(aa, h, w, g), mbb = detail::local_mean(bb, h, w, g),
               mab = detail::local_mean(ab, h, w, g);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double va = maa[i] - ma[i] * ma[i], vb = mbb[i] - mb[i] * mb[i], cov = mab[i] - ma[i] * mb[i];
      total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

struct CompressionReport {
  std::int64_t latent_dims = 0;
  std::int64_t video_dims = 0;
  double rate_percent = 0.0;

  // Two decimals, truncated toward zero from the exact rational.
  std::string rendered() const {
    const std::int64_t hundredths = latent_dims * 10000 / video_dims;
    const std::int64_t whole = hundredths / 100, frac = hundredths % 100;
    return std::to_string(whole) + "." + (frac < 10 ? "0" : "") + std::to_string(frac);
  }
};

inline CompressionReport compression_rate(std::int64_t latent, std::int64_t c, std::int64_t f, std::int64_t h, std::int64_t w) {
  if (latent <= 0 || c <= 0 || f <= 0 || h <= 0 || w <= 0) throw ConfigError("compression_rate: arguments must be positive");
  CompressionReport r;
  r.latent_dims = latent;
  r.video_dims = c * f * h * w;
  r.rate_percent = 100.0 * static_cast<double>(latent) / static_cast<double>(r.video_dims);
  return r;
}

// Motion latent element count f_g n_g c_g + f_d n_d c_d.
inline std::int64_t motion_latent_dims(int f_g, int n_g, int c_g, int f_d, int n_d, int c_d) {
  return static_cast<std::int64_t>(f_g) * n_g * c_g + static_cast<std::int64_t>(f_d) * n_d * c_d;
}

// Fraction of 3D-spectrum energy outside the low band of `cut`, computed per
// channel over (F, H, W) for a [.., C, F, H, W] video.
inline double spectral_energy_ratio(const Array& x, spectral::Cutoffs cut = {}, spectral::MaskKind kind = spectral::MaskKind::BrickWall) {
  if (x.rank() < 4) throw ConfigError("spectral_energy_ratio: expected [.., C, F, H, W], got " + shape_str(x.shape));
  const int r = x.rank();
  auto mask = spectral::make_lowpass_mask({x.dim(r - 4), x.dim(r - 3), x.dim(r - 2), x.dim(r - 1)}, cut, kind);
  return spectral::high_band_energy_fraction(x, mask);
}

struct DitConfig {
  int layers = 8;
  int heads = 8;
  int width = 512;
  int ffn = 2048;
};

struct CostReport {
  double flops = 0.0;
  double param_elements = 0.0;
  double activation_elements = 0.0;
  double memory_elements() const { return param_elements + activation_elements; }
};

// Per layer: attention 4 L d^2 + 2 L^2 d, feed-forward 2 * L d d_ff * 2.
// Parameters: 4 d^2 + 2 d d_ff per layer. Activations saved for backward:
// q, k, v, attention output, two residual streams (6 L d), the per-head score
// matrices (heads L^2) and the hidden feed-forward layer (L d_ff). Batch 1.
inline CostReport flops_and_memory(std::int64_t tokens, const DitConfig& c = {}) {
  if (tokens < 0 || c.layers < 0 || c.width < 1 || c.heads < 1 || c.ffn < 1) throw ConfigError("flops_and_memory: bad arguments");
  const double L = static_cast<double>(tokens), d = c.width, ff = c.ffn, nl = c.layers;
  CostReport r;
  r.flops = nl * (4 * L * d * d + 2 * L * L * d + 4 * L * d * ff);
  r.param_elements = nl * (4 * d * d + 2 * d * ff);
  r.activation_elements = nl * (6 * L * d + c.heads * L * L + L * ff);
  return r;
}

}  // namespace hivae::eval
