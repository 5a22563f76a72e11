#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "hivae/container.hpp"
#include "hivae/types.hpp"

namespace hivae::dataio {

// Synthetic scene: a smooth textured background translating at a constant
// drift (global motion) with soft sprites oscillating about their anchors
// (detailed motion). Boundaries are periodic.
struct SpriteSpec {
  int channels = 3;
  int frames = 8;
  int height = 64;
  int width = 64;
  double drift_x = 0.0;  // px / frame
  double drift_y = 0.0;
  int sprite_count = 2;
  double osc_freq = 0.0;  // cycles / frame, < 0.5
  double osc_amp = 0.0;   // px
  double sprite_sigma = 4.0;
  double texture_freq = 1.0;  // cycles per frame width
  std::uint64_t seed = 0;
};

inline void validate(const SpriteSpec& s) {
  if (s.channels != 1 && s.channels != 3) throw ConfigError("sprite spec: channels must be 1 or 3");
  if (s.frames < 2 || s.height < 1 || s.width < 1) throw ConfigError("sprite spec: bad geometry");
  if (std::abs(s.drift_x) > s.width / 4.0 || std::abs(s.drift_y) > s.height / 4.0)
    throw ConfigError("sprite spec: drift exceeds a quarter frame per step");
  if (s.osc_freq < 0.0 || s.osc_freq >= 0.5) throw ConfigError("sprite spec: oscillation frequency must be in [0, 0.5)");
  if (s.texture_freq < 0.0 || s.texture_freq >= std::min(s.width, s.height) / 2.0)
    throw ConfigError("sprite spec: texture frequency at or above Nyquist");
  if (s.sprite_count < 0 || s.sprite_sigma <= 0.0) throw ConfigError("sprite spec: bad sprite parameters");
}

namespace detail {

inline double wrap(double v, double period) {
  double r = std::fmod(v, period);
  return r < 0.0 ? r + period : r;
}

// Signed periodic difference in [-period/2, period/2).
inline double wrap_signed(double v, double period) { return wrap(v + period / 2.0, period) - period / 2.0; }

}  // namespace detail

// Clip [C, F, H, W] in [0, 1].
inline Array synth_clip(const SpriteSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const int C = spec.channels, F = spec.frames, H = spec.height, W = spec.width;
  struct Wave {
    double kx, ky, phase[3];
  };
  std::vector<Wave> waves(2);
  for (auto& wv : waves) {
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    wv.kx = 2.0 * std::numbers::pi * spec.texture_freq * std::cos(ang) / W;
    wv.ky = 2.0 * std::numbers::pi * spec.texture_freq * std::sin(ang) / H;
    for (double& p : wv.phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  struct Sprite {
    double cx, cy, dir, phase, color[3];
  };
  std::vector<Sprite> sprites(static_cast<std::size_t>(spec.sprite_count));
  for (auto& s : sprites) {
    s.cx = rng.uniform(0.0, W);
    s.cy = rng.uniform(0.0, H);
    s.dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (double& c : s.color) c = rng.uniform(0.15, 0.85);
  }
  Array out({C, F, H, W});
  for (int t = 0; t < F; ++t) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // Background-frame coordinates; integer drift keeps these exact integers.
        const double u = detail::wrap(x - spec.drift_x * t, W);
        const double v = detail::wrap(y - spec.drift_y * t, H);
        double px[3];
        for (int c = 0; c < C; ++c) {
          double b = 0.5;
          for (const auto& wv : waves) b += 0.1 * std::sin(wv.kx * u + wv.ky * v + wv.phase[c]);
          px[c] = b;
        }
        for (const auto& s : sprites) {
          const double off = spec.osc_amp * std::sin(2.0 * std::numbers::pi * spec.osc_freq * t + s.phase);
          const double dx = detail::wrap_signed(u - s.cx - off * std::cos(s.dir), W);
          const double dy = detail::wrap_signed(v - s.cy - off * std::sin(s.dir), H);
          const double a = 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * spec.sprite_sigma * spec.sprite_sigma));
          for (int c = 0; c < C; ++c) px[c] = px[c] * (1.0 - a) + s.color[c] * a;
        }
        for (int c = 0; c < C; ++c)
          out[((static_cast<std::size_t>(c) * F + t) * H + y) * W + x] = std::clamp(px[c], 0.0, 1.0);
      }
  }
  return out;
}

inline Video synth_video(const SpriteSpec& spec, double fps = 8.0) { return Video::from_clips({synth_clip(spec)}, fps); }

// The four canonical 64x64x8 clips: static, pure drift, pure oscillation, mixed.
enum class Fixture { Static, Drift, Oscillation, Mixed };

inline const char* fixture_name(Fixture f) {
  switch (f) {
    case Fixture::Static: return "static";
    case Fixture::Drift: return "drift";
    case Fixture::Oscillation: return "oscillation";
    case Fixture::Mixed: return "mixed";
  }
  return "?";
}

inline SpriteSpec fixture_spec(Fixture f) {
  SpriteSpec s;
  s.seed = 100 + static_cast<std::uint64_t>(f);
  switch (f) {
    case Fixture::Static:
      break;
    case Fixture::Drift:
      s.drift_x = 1.0;
      s.drift_y = 0.0;
      break;
    case Fixture::Oscillation:
      s.osc_freq = 0.375;
      s.osc_amp = 3.0;
      break;
    case Fixture::Mixed:
      s.drift_x = 1.0;
      s.drift_y = 1.0;
      s.osc_freq = 0.375;
      s.osc_amp = 3.0;
      break;
  }
  return s;
}

inline std::vector<Array> fixture_clips() {
  std::vector<Array> out;
  for (auto f : {Fixture::Static, Fixture::Drift, Fixture::Oscillation, Fixture::Mixed})
    out.push_back(synth_clip(fixture_spec(f)));
  return out;
}

// ---------------------------------------------------------------------------
// Tiling

struct TileLayout {
  int rows = 1, cols = 1;
  int tile_h = 0, tile_w = 0;
};

// Non-overlapping spatial tiles of a clip [C, F, H, W], row-major order.
inline std::vector<Array> tile_split(const Array& clip, int tile_h, int tile_w, TileLayout* layout = nullptr) {
  if (clip.rank() != 4) throw ConfigError("tile_split: clip must be [C,F,H,W]");
  const int C = clip.dim(0), F = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  if (tile_h < 1 || tile_w < 1 || H % tile_h || W % tile_w)
    throw ConfigError("tile_split: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by tile " +
                      std::to_string(tile_h) + "x" + std::to_string(tile_w));
  TileLayout lay{H / tile_h, W / tile_w, tile_h, tile_w};
  std::vector<Array> tiles;
  for (int r = 0; r < lay.rows; ++r)
    for (int q = 0; q < lay.cols; ++q) {
      Array t({C, F, tile_h, tile_w});
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f)
          for (int y = 0; y < tile_h; ++y)
            std::copy_n(clip.data.begin() + static_cast<std::ptrdiff_t>(((static_cast<std::size_t>(c) * F + f) * H + r * tile_h + y) * W + q * tile_w),
                        tile_w, t.data.begin() + static_cast<std::ptrdiff_t>(((static_cast<std::size_t>(c) * F + f) * tile_h + y) * tile_w));
      tiles.push_back(std::move(t));
    }
  if (layout) *layout = lay;
  return tiles;
}

inline Array tile_join(const std::vector<Array>& tiles, const TileLayout& lay) {
  if (tiles.size() != static_cast<std::size_t>(lay.rows * lay.cols)) throw ConfigError("tile_join: tile count does not match layout");
  const int C = tiles[0].dim(0), F = tiles[0].dim(1);
  const int H = lay.rows * lay.tile_h, W = lay.cols * lay.tile_w;
  Array out({C, F, H, W});
  for (int r = 0; r < lay.rows; ++r)
    for (int q = 0; q < lay.cols; ++q) {
      const Array& t = tiles[static_cast<std::size_t>(r * lay.cols + q)];
      if (t.shape != Shape{C, F, lay.tile_h, lay.tile_w}) throw ConfigError("tile_join: tile shape mismatch");
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f)
          for (int y = 0; y < lay.tile_h; ++y)
            std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(((static_cast<std::size_t>(c) * F + f) * lay.tile_h + y) * lay.tile_w),
                        lay.tile_w,
                        out.data.begin() + static_cast<std::ptrdiff_t>(((static_cast<std::size_t>(c) * F + f) * H + r * lay.tile_h + y) * W + q * lay.tile_w));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Video files

inline void write_video(const std::filesystem::path& path, const Video& v, container::json meta = container::json::object()) {
  container::File f;
  meta["fps"] = v.fps;
  meta["kind"] = "video";
  f.meta = std::move(meta);
  f.add(container::Entry::from_array("video", v.data));
  container::write(path, f);
}

inline Video read_video(const std::filesystem::path& path) {
  auto f = container::read(path);
  Video v{f.at("video").to_array(), f.meta.value("fps", 8.0)};
  if (f.at("video").dtype == container::DType::UInt8)
    for (double& x : v.data.data) x /= 255.0;
  if (v.data.rank() == 4) v.data = v.data.reshaped([&] { Shape s{1}; s.insert(s.end(), v.data.shape.begin(), v.data.shape.end()); return s; }());
  validate_video(v);
  return v;
}

// Binary PPM (P6) / PGM (P5) frames with maxval 255.
inline Array read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open frame '" + path.string() + "'");
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") throw FormatError("'" + path.string() + "' is not a binary PPM/PGM");
  auto next_int = [&] {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string line;
      std::getline(is, line);
      is >> std::ws;
    }
    int v = 0;
    if (!(is >> v)) throw FormatError("'" + path.string() + "': bad header");
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw FormatError("'" + path.string() + "': only maxval 255 supported");
  is.get();
  const int c = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * c);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw FormatError("'" + path.string() + "': truncated pixel data, expected " + std::to_string(buf.size()) + " bytes");
  Array img({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        img[(static_cast<std::size_t>(k) * h + y) * w + x] = buf[(static_cast<std::size_t>(y) * w + x) * c + k] / 255.0;
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const Array& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write '" + path.string() + "'");
  os << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        os.put(static_cast<char>(std::lround(std::clamp(img[(static_cast<std::size_t>(k) * h + y) * w + x], 0.0, 1.0) * 255.0)));
}

// Directory of per-frame .ppm/.pgm files (sorted by name) -> clip [C, F, H, W].
inline Array read_frame_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (ext == ".ppm" || ext == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw FormatError("'" + dir.string() + "' holds fewer than 2 frames");
  std::vector<Array> frames;
  for (const auto& f : files) frames.push_back(read_pnm(f));
  const int c = frames[0].dim(0), h = frames[0].dim(1), w = frames[0].dim(2);
  const int F = static_cast<int>(frames.size());
  Array clip({c, F, h, w});
  for (int t = 0; t < F; ++t) {
    if (frames[static_cast<std::size_t>(t)].shape != frames[0].shape) throw FormatError("frames in '" + dir.string() + "' differ in size");
    for (int k = 0; k < c; ++k)
      std::copy_n(frames[static_cast<std::size_t>(t)].data.begin() + static_cast<std::ptrdiff_t>(k) * h * w, h * w,
                  clip.data.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(k) * F + t) * h * w));
  }
  return clip;
}

}  // namespace hivae::dataio
