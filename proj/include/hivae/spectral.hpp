#pragma once

// Spatio-temporal band splitting of latents.
//
// The transform runs over the trailing three axes (frames, height, width) of
// an array; every leading axis (batch, channel) is treated independently.
// Both FFT directions are orthonormal, so Parseval holds without rescaling.

#include <array>
#include <complex>
#include <numbers>
#include <vector>

#include "hivae/tensor.hpp"

namespace hivae::spectral {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place transform of one strided line of length n.
inline void transform_line(cplx* base, std::size_t stride, int n, bool inverse, std::vector<cplx>& scratch) {
  if (n == 1) return;
  scratch.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scratch[static_cast<std::size_t>(i)] = base[static_cast<std::size_t>(i) * stride];
  const double sign = inverse ? 1.0 : -1.0;
  if (is_pow2(n)) {
    // iterative radix-2 Cooley-Tukey
    for (int i = 1, j = 0; i < n; ++i) {
      int bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(scratch[static_cast<std::size_t>(i)], scratch[static_cast<std::size_t>(j)]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      const double ang = sign * 2.0 * std::numbers::pi / len;
      const cplx wl(std::cos(ang), std::sin(ang));
      for (int i = 0; i < n; i += len) {
        cplx w(1.0, 0.0);
        for (int k = 0; k < len / 2; ++k) {
          cplx u = scratch[static_cast<std::size_t>(i + k)];
          cplx v = scratch[static_cast<std::size_t>(i + k + len / 2)] * w;
          scratch[static_cast<std::size_t>(i + k)] = u + v;
          scratch[static_cast<std::size_t>(i + k + len / 2)] = u - v;
          w *= wl;
        }
      }
    }
  } else {
    std::vector<cplx> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      cplx acc(0.0, 0.0);
      for (int j = 0; j < n; ++j) {
        const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n;
        acc += scratch[static_cast<std::size_t>(j)] * cplx(std::cos(ang), std::sin(ang));
      }
      out[static_cast<std::size_t>(k)] = acc;
    }
    scratch = std::move(out);
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) base[static_cast<std::size_t>(i) * stride] = scratch[static_cast<std::size_t>(i)] * norm;
}

inline void transform_axis(std::vector<cplx>& data, const Shape& shape, int axis, bool inverse) {
  const auto st = strides_of(shape);
  const int n = shape[static_cast<std::size_t>(axis)];
  const std::size_t stride = st[static_cast<std::size_t>(axis)];
  const std::size_t outer = data.size() / (static_cast<std::size_t>(n) * stride);
  std::vector<cplx> scratch;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < stride; ++i)
      transform_line(data.data() + o * n * stride + i, stride, n, inverse, scratch);
}

}  // namespace detail

// Orthonormal DFT over the last three axes.
inline std::vector<cplx> fft3(const Array& x) {
  if (x.rank() < 3) throw ConfigError("fft3: need rank >= 3, got " + shape_str(x.shape));
  std::vector<cplx> data(x.data.begin(), x.data.end());
  for (int a = x.rank() - 3; a < x.rank(); ++a) detail::transform_axis(data, x.shape, a, false);
  return data;
}

inline std::vector<cplx> ifft3(std::vector<cplx> data, const Shape& shape) {
  for (int a = static_cast<int>(shape.size()) - 3; a < static_cast<int>(shape.size()); ++a)
    detail::transform_axis(data, shape, a, true);
  return data;
}

// Signed frequency index of bin k in an n-point DFT, in (-n/2, n/2].
inline int signed_bin(int k, int n) { return k <= n / 2 ? k : k - n; }

// |signed bin| / n, in cycles per sample: 0 at DC, 0.5 at Nyquist.
inline double normalized_freq(int k, int n) { return std::abs(signed_bin(k, n)) / static_cast<double>(n); }

enum class MaskKind { BrickWall, Gaussian };

struct Cutoffs {
  double f = 0.25, h = 0.25, w = 0.25;
};

struct FilterMask {
  Array p;  // [c, f, h, w], entries in [0, 1]
  Cutoffs cutoffs;
  MaskKind kind = MaskKind::BrickWall;

  FilterMask complement() const {
    FilterMask m = *this;
    for (double& v : m.p.data) v = 1.0 - v;
    return m;
  }
};

inline void validate_cutoffs(const Cutoffs& c) {
  for (double v : {c.f, c.h, c.w})
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("spectral cutoff must lie in (0, 1], got " + std::to_string(v));
}

// Separable low-pass mask, identical across the channel axis. Brick-wall keeps
// a bin iff its normalized frequency is <= the cutoff on every axis; Gaussian
// weights each axis by exp(-0.5 (nu/cutoff)^2).
inline FilterMask make_lowpass_mask(const std::array<int, 4>& shape, Cutoffs cut, MaskKind kind = MaskKind::BrickWall) {
  validate_cutoffs(cut);
  const auto [c, f, h, w] = shape;
  if (c < 1 || f < 1 || h < 1 || w < 1) throw ConfigError("make_lowpass_mask: non-positive dimension");
  auto axis_weight = [kind](int k, int n, double cutoff) {
    const double nu = normalized_freq(k, n);
    if (kind == MaskKind::BrickWall) return nu <= cutoff + 1e-12 ? 1.0 : 0.0;
    return std::exp(-0.5 * (nu / cutoff) * (nu / cutoff));
  };
  FilterMask m{Array({c, f, h, w}), cut, kind};
  std::size_t i = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int fi = 0; fi < f; ++fi)
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi)
          m.p[i++] = axis_weight(fi, f, cut.f) * axis_weight(hi, h, cut.h) * axis_weight(wi, w, cut.w);
  return m;
}

struct BandPair {
  Array low;
  Array high;
};

namespace detail {

// Mask weight for flat index i of an array whose trailing dims match the mask.
inline double mask_at(const Array& p, std::size_t i) { return p[i % p.size()]; }

inline void check_mask(const Array& x, const Array& p) {
  const int r = x.rank();
  if (r < 4 || p.rank() != 4 || !std::equal(p.shape.begin(), p.shape.end(), x.shape.end() - 4))
    throw ConfigError("mask shape " + shape_str(p.shape) + " does not match latent " + shape_str(x.shape));
}

inline Array real_part_checked(const std::vector<cplx>& d, const Shape& shape, double scale) {
  Array out(shape);
  const double tol = 1e-6 * std::max(1.0, scale);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (std::abs(d[i].imag()) > tol)
      throw NumericalError("band split left an imaginary residue of " + std::to_string(std::abs(d[i].imag())));
    out[i] = d[i].real();
  }
  return out;
}

}  // namespace detail

// z_low = IFFT(FFT(z) * P), z_high = IFFT(FFT(z) * (1 - P)).
// z is [.., c, f, h, w]; P broadcasts over any leading axes.
inline BandPair split_bands(const Array& z, const FilterMask& mask) {
  detail::check_mask(z, mask.p);
  const auto spec = fft3(z);
  std::vector<cplx> lo(spec.size()), hi(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double w = detail::mask_at(mask.p, i);
    lo[i] = spec[i] * w;
    hi[i] = spec[i] * (1.0 - w);
  }
  double scale = 0.0;
  for (double v : z.data) scale = std::max(scale, std::abs(v));
  return {detail::real_part_checked(ifft3(std::move(lo), z.shape), z.shape, scale),
          detail::real_part_checked(ifft3(std::move(hi), z.shape), z.shape, scale)};
}

inline Array lowpass(const Array& z, const FilterMask& mask) { return split_bands(z, mask).low; }

// Fraction of spectral energy weighted by (1 - P). For brick-wall masks this
// equals ||z_high||^2 / ||z||^2. Zero input maps to 0.
inline double high_band_energy_fraction(const Array& z, const FilterMask& mask) {
  detail::check_mask(z, mask.p);
  const auto spec = fft3(z);
  double total = 0.0, high = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double e = std::norm(spec[i]);
    total += e;
    high += e * (1.0 - detail::mask_at(mask.p, i));
  }
  return total > 0.0 ? high / total : 0.0;
}

}  // namespace hivae::spectral
