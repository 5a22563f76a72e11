#pragma once

#include "hivae/tensor.hpp"

namespace hivae {

// Pixel-space clip batch [B, C, F, H, W], values in [0, 1].
struct Video {
  Array data;
  double fps = 8.0;

  int batch() const { return data.dim(0); }
  int channels() const { return data.dim(1); }
  int frames() const { return data.dim(2); }
  int height() const { return data.dim(3); }
  int width() const { return data.dim(4); }

  // Single clip [C, F, H, W] of the batch.
  Array clip(int b) const {
    const std::size_t n = data.size() / static_cast<std::size_t>(batch());
    Array out(Shape(data.shape.begin() + 1, data.shape.end()));
    std::copy_n(data.data.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(b)), n, out.data.begin());
    return out;
  }

  static Video from_clips(const std::vector<Array>& clips, double fps = 8.0) {
    if (clips.empty()) throw ConfigError("Video::from_clips: no clips");
    Shape s{static_cast<int>(clips.size())};
    s.insert(s.end(), clips[0].shape.begin(), clips[0].shape.end());
    Video v{Array(s), fps};
    std::size_t off = 0;
    for (const auto& c : clips) {
      if (c.shape != clips[0].shape) throw ConfigError("Video::from_clips: clip shapes differ");
      std::copy(c.data.begin(), c.data.end(), v.data.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += c.size();
    }
    return v;
  }
};

inline void validate_video(const Video& v) {
  if (v.data.rank() != 5) throw ConfigError("video must be rank 5 [B,C,F,H,W], got " + shape_str(v.data.shape));
  if (v.channels() != 1 && v.channels() != 3) throw ConfigError("video channels must be 1 or 3");
  if (v.frames() < 2) throw ConfigError("video needs at least 2 frames");
}

// Latent batch [B, c, f, h, w].
struct Latent {
  Array data;

  int batch() const { return data.dim(0); }
  int channels() const { return data.dim(1); }
  int frames() const { return data.dim(2); }
  int height() const { return data.dim(3); }
  int width() const { return data.dim(4); }
};

// Slice [C, F, H, W] -> frame t as [C, H, W].
inline Array frame_of(const Array& clip, int t) {
  const int c = clip.dim(0), f = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
  Array out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    std::copy_n(clip.data.begin() + ((static_cast<std::ptrdiff_t>(ci) * f + t) * h * w), h * w,
                out.data.begin() + static_cast<std::ptrdiff_t>(ci) * h * w);
  return out;
}

}  // namespace hivae
