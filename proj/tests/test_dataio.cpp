#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace hivae;
using namespace hivae::dataio;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hivae_dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Array frame(const Array& clip, int t) {
  const int C = clip.dim(0), F = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  Array out({C, H, W});
  for (int c = 0; c < C; ++c)
    std::copy_n(clip.data.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(c) * F + t) * H * W), H * W,
                out.data.begin() + static_cast<std::ptrdiff_t>(c) * H * W);
  return out;
}

}  // namespace

TEST(Synth, RangeShapeAndSeed) {
  auto s = fixture_spec(Fixture::Mixed);
  Array a = synth_clip(s);
  EXPECT_EQ(a.shape, (Shape{3, 8, 64, 64}));
  for (double v : a.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a, synth_clip(s));
  s.seed += 1;
  EXPECT_NE(a, synth_clip(s));
}

TEST(Synth, StaticClipHasIdenticalFrames) {
  Array a = synth_clip(fixture_spec(Fixture::Static));
  for (int t = 1; t < a.dim(1); ++t) EXPECT_EQ(frame(a, t), frame(a, 0));
}

TEST(Synth, IntegerDriftIsExactRoll) {
  auto s = fixture_spec(Fixture::Drift);
  s.drift_x = 2.0;
  Array a = synth_clip(s);
  const int H = a.dim(2), W = a.dim(3);
  for (int t = 1; t < a.dim(1); ++t) {
    Array f0 = frame(a, 0), ft = frame(a, t);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int src = ((x - 2 * t) % W + W) % W;
          ASSERT_NEAR(ft[(static_cast<std::size_t>(c) * H + y) * W + x], f0[(static_cast<std::size_t>(c) * H + y) * W + src], 1e-12);
        }
  }
}

TEST(Synth, FasterOscillationRaisesHighBandEnergy) {
  auto ratio = [](double freq) {
    auto s = fixture_spec(Fixture::Oscillation);
    s.frames = 16;
    s.osc_freq = freq;
    return eval::spectral_energy_ratio(synth_clip(s));
  };
  const double still = ratio(0.0), slow = ratio(0.0625), fast = ratio(0.375);
  EXPECT_LT(still, fast);
  EXPECT_LT(slow, fast);
}

TEST(Synth, InvalidSpecIsConfigError) {
  SpriteSpec s;
  s.osc_freq = 0.6;
  EXPECT_THROW(synth_clip(s), ConfigError);
  s = {};
  s.frames = 0;
  EXPECT_THROW(synth_clip(s), ConfigError);
}

TEST(Tiles, SplitJoinIdentity) {
  Rng rng(1);
  Array clip = rng.normal_array({3, 2, 512, 512});
  TileLayout lay;
  auto tiles = tile_split(clip, 256, 256, &lay);
  EXPECT_EQ(tiles.size(), 4u);
  EXPECT_EQ(lay.rows, 2);
  EXPECT_EQ(lay.cols, 2);
  EXPECT_EQ(tiles[0].shape, (Shape{3, 2, 256, 256}));
  EXPECT_EQ(tiles[1][0], clip[256]);
  EXPECT_EQ(tile_join(tiles, lay), clip);
}

TEST(Tiles, IndivisibleIsConfigError) {
  EXPECT_THROW(tile_split(Array({3, 2, 300, 256}), 256, 256), ConfigError);
  TileLayout lay{2, 2, 4, 4};
  EXPECT_THROW(tile_join({Array({3, 1, 4, 4})}, lay), ConfigError);
}

TEST(VideoFile, ContainerRoundTrip) {
  auto dir = temp_dir("video");
  Video v = Video::from_clips(fixture_clips(), 12.0);
  write_video(dir / "v.hvc", v);
  Video r = read_video(dir / "v.hvc");
  EXPECT_EQ(r.fps, 12.0);
  EXPECT_EQ(r.data.shape, v.data.shape);
  EXPECT_LT(max_abs_diff(r.data, v.data), 1e-6);
  EXPECT_EQ(r.clip(2).shape, (Shape{3, 8, 64, 64}));
}

TEST(VideoFile, SingleClipGetsBatchAxis) {
  auto dir = temp_dir("single");
  container::File f;
  f.add(container::Entry::from_array("video", Array({3, 2, 4, 4}, 0.5)));
  container::write(dir / "c.hvc", f);
  EXPECT_EQ(read_video(dir / "c.hvc").data.shape, (Shape{1, 3, 2, 4, 4}));
  EXPECT_THROW(read_video(dir / "missing.hvc"), FormatError);
}

TEST(Pnm, RoundTripAndFrameDirectory) {
  auto dir = temp_dir("pnm");
  Array clip = synth_clip(fixture_spec(Fixture::Drift));
  for (int t = 0; t < 3; ++t) write_pnm(dir / ("f" + std::to_string(t) + ".ppm"), frame(clip, t));
  Array one = read_pnm(dir / "f1.ppm");
  EXPECT_EQ(one.shape, (Shape{3, 64, 64}));
  EXPECT_LE(max_abs_diff(one, frame(clip, 1)), 0.5 / 255.0 + 1e-12);
  Array back = read_frame_dir(dir);
  EXPECT_EQ(back.shape, (Shape{3, 3, 64, 64}));
  EXPECT_EQ(frame(back, 2), read_pnm(dir / "f2.ppm"));
}

TEST(Pnm, MalformedFilesAreFormatErrors) {
  auto dir = temp_dir("bad");
  std::ofstream(dir / "a.ppm") << "P3\n2 2\n255\n";
  EXPECT_THROW(read_pnm(dir / "a.ppm"), FormatError);
  std::ofstream(dir / "b.ppm", std::ios::binary) << "P6\n2 2\n255\nabc";
  EXPECT_THROW(read_pnm(dir / "b.ppm"), FormatError);
  auto empty = temp_dir("empty");
  EXPECT_THROW(read_frame_dir(empty), FormatError);
}
