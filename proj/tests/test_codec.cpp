#include <gtest/gtest.h>

#include "support.hpp"

using namespace hivae;

namespace {

codec::CodecConfig cfg(int s, int tf, int c = 16) {
  codec::CodecConfig k;
  k.spatial_factor = s;
  k.temporal_factor = tf;
  k.latent_channels = c;
  return k;
}

}  // namespace

TEST(CodecShape, ReferenceGeometry) {
  nn::ParamStore ps;
  Rng rng(0);
  codec::FrameCodec c(ps, cfg(8, 4), rng);
  Video x{Array({1, 3, 16, 256, 256}, 0.5)};
  Latent z = c.encode_frames(x);
  EXPECT_EQ(z.data.shape, (Shape{1, 16, 4, 32, 32}));
  EXPECT_EQ(c.decode_frames(z).data.shape, x.data.shape);
}

TEST(CodecShape, DeskGeometry) {
  EXPECT_EQ(codec::latent_shape(cfg(8, 1), {3, 8, 64, 64}), (Shape{16, 8, 8, 8}));
}

TEST(CodecShape, IndivisibleIsConfigError) {
  EXPECT_THROW(codec::latent_shape(cfg(8, 4), {3, 16, 250, 256}), ConfigError);
  EXPECT_THROW(codec::latent_shape(cfg(8, 4), {3, 15, 256, 256}), ConfigError);
}

TEST(Codec, DecodeOfZeroLatentIsFiniteAndClamped) {
  nn::ParamStore ps;
  Rng rng(1);
  codec::FrameCodec c(ps, cfg(8, 1), rng);
  Video v = c.decode_frames(Latent{Array({1, 16, 2, 4, 4})});
  EXPECT_EQ(v.data.shape, (Shape{1, 3, 2, 32, 32}));
  for (double x : v.data.data) {
    EXPECT_TRUE(std::isfinite(x));
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(Codec, DecodeRejectsWrongChannels) {
  nn::ParamStore ps;
  Rng rng(1);
  codec::FrameCodec c(ps, cfg(8, 1), rng);
  EXPECT_THROW(c.decode_frames(Latent{Array({1, 8, 2, 4, 4})}), ConfigError);
}

TEST(Codec, EncodeIsDeterministicAndBitwiseRepeatable) {
  nn::ParamStore ps;
  Rng rng(2);
  codec::FrameCodec c(ps, cfg(4, 2, 8), rng);
  Array clip = Rng(3).normal_array({3, 4, 16, 16});
  EXPECT_EQ(c.encode_clip(clip), c.encode_clip(clip));
}

TEST(Codec, RawDecodeInvertsPatchLayout) {
  // With identity-like weights the patch scatter must return pixels to their places.
  nn::ParamStore ps;
  Rng rng(4);
  auto k = cfg(2, 1, 12);
  codec::FrameCodec c(ps, k, rng);
  auto& we = ps.get("codec.enc.w").mutable_value();
  auto& wd = ps.get("codec.dec.w").mutable_value();
  std::fill(we.begin(), we.end(), 0.0);
  std::fill(wd.begin(), wd.end(), 0.0);
  for (int i = 0; i < 12; ++i) {
    we[static_cast<std::size_t>(i) * 12 + i] = 1.0;
    wd[static_cast<std::size_t>(i) * 12 + i] = 1.0;
  }
  Array clip = Rng(5).normal_array({3, 2, 4, 4});
  ag::Var x = ag::Var::constant(clip);
  Array back = c.decode_raw(c.encode_raw(x), clip.shape).array();
  EXPECT_LT(max_abs_diff(back, clip), 1e-12);
}

TEST(Codec, GradientCheckOnMicroLatent) {
  // 2x2x2 micro latent: clip [3, 2, 4, 4] with 2x2 patches.
  nn::ParamStore ps;
  Rng rng(6);
  codec::FrameCodec c(ps, cfg(2, 1, 4), rng);
  Array clip = Rng(7).normal_array({3, 2, 4, 4});
  auto loss = [&] {
    ag::Var x = ag::Var::constant(clip);
    return ag::mse(c.decode_raw(c.encode_raw(x), clip.shape), x);
  };
  auto r = oracle::grad_check(ps, loss, "codec.", 1e-4);
  EXPECT_EQ(r.within_tol, r.checked) << "worst " << r.worst << " at " << r.worst_name;
}

TEST(Codec, PretrainStepsMustBePositive) {
  nn::ParamStore ps;
  Rng rng(8);
  codec::FrameCodec c(ps, cfg(8, 1), rng);
  EXPECT_THROW(codec::pretrain_codec(c, dataio::fixture_clips(), 0), ConfigError);
}

TEST(Codec, DefaultLearningRate) {
  EXPECT_EQ(training::TrainConfig{}.codec_lr, 1e-4);
}

TEST(Codec, OverfitFixturesAbove30dB) {
  nn::ParamStore ps;
  Rng rng(9);
  codec::FrameCodec c(ps, cfg(8, 1), rng);
  const auto clips = dataio::fixture_clips();
  auto res = codec::pretrain_codec(c, clips, 1500, 3e-3);
  const auto sm = training::smoothed(res.losses);
  EXPECT_LT(sm.back(), sm.front());
  EXPECT_GT(res.latent_std, 0.0);
  for (const auto& x : clips) {
    Array z = c.encode_clip(x);
    EXPECT_GT(eval::psnr(x, c.decode_clip(z, x.shape)), 30.0);
  }
  // standardized latents have zero mean and unit spread over the training set
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& x : clips)
    for (double v : c.encode_clip(x).data) s += v, s2 += v * v, ++n;
  EXPECT_NEAR(s / static_cast<double>(n), 0.0, 1e-9);
  EXPECT_NEAR(s2 / static_cast<double>(n), 1.0, 1e-9);
}
