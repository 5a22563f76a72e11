#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"

using namespace hivae;
using namespace hivae::eval;

namespace {

// Direct SSIM: Gaussian window clipped at the borders and renormalized.
double ssim_oracle(const Array& x, const Array& y) {
  const int h = x.dim(-2), w = x.dim(-1), c = x.dim(0), f = x.dim(1);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int t = 0; t < f; ++t) {
    auto gray = [&](const Array& a, int yy, int xx) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += a[((static_cast<std::size_t>(k) * f + t) * h + yy) * w + xx];
      return s / c;
    };
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        double ws = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int yy = py + dy, xx = px + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
            const double a = gray(x, yy, xx), b = gray(y, yy, xx);
            ws += g, mx += g * a, my += g * b, sxx += g * a * a, syy += g * b * b, sxy += g * a * b;
          }
        mx /= ws, my /= ws;
        const double vx = sxx / ws - mx * mx, vy = syy / ws - my * my, cxy = sxy / ws - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  }
  return total / (f * h * w);
}

Array checkerboard(int c, int f, int h, int w) {
  Array a({c, f, h, w});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int x = static_cast<int>(i % static_cast<std::size_t>(w)), y = static_cast<int>(i / static_cast<std::size_t>(w) % static_cast<std::size_t>(h));
    a[i] = ((x / 2 + y / 2) % 2) ? 0.9 : 0.1;
  }
  return a;
}

}  // namespace

TEST(Psnr, Oracles) {
  Rng rng(1);
  Array x = rng.normal_array({2, 3, 8, 8});
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  Array y = x;
  for (double& v : y.data) v += 0.1;
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-9);
  Array z = rng.normal_array(x.shape);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - z[i]) * (x[i] - z[i]);
  mse /= static_cast<double>(x.size());
  EXPECT_NEAR(psnr(x, z), 10.0 * std::log10(1.0 / mse), 1e-6);
  EXPECT_NEAR(psnr(x, z, 2.0), 10.0 * std::log10(4.0 / mse), 1e-6);
}

TEST(Ssim, IdenticalSymmetricAndInverted) {
  Rng rng(2);
  Array a({3, 2, 16, 16}), b({3, 2, 16, 16});
  for (double& v : a.data) v = rng.uniform();
  for (double& v : b.data) v = rng.uniform();
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  Array cb = checkerboard(3, 2, 16, 16), inv = cb;
  for (double& v : inv.data) v = 1.0 - v;
  EXPECT_LT(ssim(cb, inv), 0.5);
}

TEST(Ssim, MatchesBruteForceOracle) {
  Rng rng(3);
  Array a({3, 2, 8, 8}), b({3, 2, 8, 8});
  for (double& v : a.data) v = rng.uniform();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(a[i] + 0.2 * rng.normal(), 0.0, 1.0);
  EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-6);
  EXPECT_GE(ssim(a, b), -1.0);
  EXPECT_LE(ssim(a, b), 1.0);
}

TEST(CompressionRate, ReferenceCells) {
  EXPECT_EQ(compression_rate(16 * 4 * 32 * 32, 3, 16, 256, 256).rendered(), "2.08");
  EXPECT_EQ(compression_rate(motion_latent_dims(8, 8, 8, 16, 16, 16), 3, 16, 256, 256).rendered(), "0.14");
  EXPECT_EQ(compression_rate(motion_latent_dims(8, 8, 4, 16, 16, 8), 3, 16, 256, 256).rendered(), "0.07");
  EXPECT_EQ(compression_rate(motion_latent_dims(8, 8, 8, 16, 16, 32), 3, 16, 256, 256).rendered(), "0.27");
  EXPECT_EQ(motion_latent_dims(8, 8, 8, 16, 16, 16), 4608);
  EXPECT_EQ(motion_latent_dims(8, 8, 4, 16, 16, 8), 2304);
  EXPECT_EQ(motion_latent_dims(8, 8, 8, 16, 16, 32), 8704);
}

TEST(CompressionRate, FieldsAreConsistent) {
  auto r = compression_rate(4608, 3, 16, 256, 256);
  EXPECT_EQ(r.video_dims, 3145728);
  EXPECT_DOUBLE_EQ(r.rate_percent, 100.0 * 4608 / 3145728);
  EXPECT_GT(r.rate_percent, 0.0);
  EXPECT_EQ(compression_rate(1, 1, 1, 1, 1).rendered(), "100.00");
  EXPECT_THROW(compression_rate(0, 3, 16, 256, 256), ConfigError);
}

TEST(SpectralRatio, ConstantSinusoidAndComplement) {
  EXPECT_EQ(spectral_energy_ratio(Array({3, 8, 16, 16}, 0.4)), 0.0);
  Array s({1, 8, 16, 16});
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::cos(2.0 * std::numbers::pi * 7 * static_cast<double>(i % 16) / 16);
  EXPECT_NEAR(spectral_energy_ratio(s), 1.0, 1e-12);
  Rng rng(4);
  Array x = rng.normal_array({2, 8, 8, 8});
  auto m = spectral::make_lowpass_mask({2, 8, 8, 8}, {});
  const double hi = spectral::high_band_energy_fraction(x, m), lo = spectral::high_band_energy_fraction(x, m.complement());
  EXPECT_NEAR(hi + lo, 1.0, 1e-4);
  EXPECT_NEAR(spectral_energy_ratio(x), hi, 1e-12);
}

TEST(SpectralRatio, LowPassingLowersRatio) {
  Rng rng(5);
  Array x = rng.normal_array({3, 8, 16, 16});
  Array low = spectral::lowpass(x, spectral::make_lowpass_mask({3, 8, 16, 16}, {0.4, 0.4, 0.4}));
  EXPECT_LT(spectral_energy_ratio(low), spectral_energy_ratio(x));
}

TEST(Flops, ClosedFormAndDirection) {
  DitConfig c;
  auto small = flops_and_memory(4608, c), big = flops_and_memory(65536, c);
  EXPECT_LT(small.flops, big.flops);
  EXPECT_LT(small.activation_elements, big.activation_elements);
  EXPECT_GT(flops_and_memory(2000, c).flops, 2.0 * flops_and_memory(1000, c).flops);
  DitConfig zero = c;
  zero.layers = 0;
  EXPECT_EQ(flops_and_memory(4608, zero).flops, 0.0);
  const double L = 100, d = 512, ff = 2048;
  EXPECT_DOUBLE_EQ(flops_and_memory(100, c).flops, 8 * (4 * L * d * d + 2 * L * L * d + 4 * L * d * ff));
  EXPECT_DOUBLE_EQ(flops_and_memory(100, c).param_elements, 8 * (4 * d * d + 2 * d * ff));
}
