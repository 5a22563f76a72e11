#pragma once

// Glue shared by the command line tool and the acceptance suite: data
// loading, report rows and the two-class generator dataset.

#include <cstdlib>

#include "hivae/checkpoint.hpp"
#include "hivae/dataio.hpp"
#include "hivae/evalkit.hpp"

namespace hivae::pipeline {

// Artifact directory: $HIVAE_CACHE, else ./.hivae_cache.
inline std::filesystem::path cache_dir() {
  const char* env = std::getenv("HIVAE_CACHE");
  std::filesystem::path p = env && *env ? std::filesystem::path(env) : std::filesystem::path(".hivae_cache");
  std::filesystem::create_directories(p);
  return p;
}

// Training clips: the built-in fixture set rendered at the configured
// geometry, or every clip of the listed containers.
inline std::vector<Array> load_clips(const RunConfig& cfg) {
  if (cfg.data.clips.empty()) {
    std::vector<Array> out;
    for (auto f : {dataio::Fixture::Static, dataio::Fixture::Drift, dataio::Fixture::Oscillation, dataio::Fixture::Mixed}) {
      auto s = dataio::fixture_spec(f);
      s.channels = cfg.codec.video_channels;
      s.frames = cfg.data.frames;
      s.height = cfg.data.height;
      s.width = cfg.data.width;
      out.push_back(dataio::synth_clip(s));
    }
    return out;
  }
  std::vector<Array> out;
  for (const auto& path : cfg.data.clips) {
    Video v = dataio::read_video(path);
    for (int b = 0; b < v.batch(); ++b) out.push_back(v.clip(b));
  }
  return out;
}

// Motion latent element counts at the reference geometry 3x16x256x256
// (f_g = 8, f_d = 16) for a named size.
inline std::int64_t reference_latent_dims(const std::string& size) {
  ModelConfig m;
  m.frames = 16;
  apply_size(m, size);
  return eval::motion_latent_dims(m.global.f_g, m.global.n_g, m.global.c_g, m.detail.f_d, m.detail.n_d, m.detail.c_d);
}

inline eval::CompressionReport reference_rate(const std::string& size) {
  return eval::compression_rate(reference_latent_dims(size), 3, 16, 256, 256);
}

// Rate of a configured model at its own clip geometry.
inline eval::CompressionReport local_rate(const RunConfig& c) {
  const auto& g = c.global;
  const auto& d = c.detail;
  return eval::compression_rate(eval::motion_latent_dims(g.f_g, g.n_g, g.c_g, d.f_d, d.n_d, d.c_d), c.codec.video_channels,
                                c.data.frames, c.data.height, c.data.width);
}

struct ReportRow {
  std::string name;
  std::string size;
  eval::CompressionReport reference;
  eval::CompressionReport local;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline const char* report_csv_header() { return "name,size,ref_latent_dims,ref_video_dims,ref_rate_percent,local_latent_dims,local_video_dims,local_rate_percent,psnr_db,ssim"; }

inline std::string report_csv_line(const ReportRow& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.name << ',' << r.size << ',' << r.reference.latent_dims << ',' << r.reference.video_dims << ','
     << r.reference.rendered() << ',' << r.local.latent_dims << ',' << r.local.video_dims << ',' << r.local.rendered() << ','
     << r.psnr << ',' << r.ssim;
  return os.str();
}

inline std::string report_markdown(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os.precision(4);
  os << "| model | size | Comp. Rate (3x16x256x256) | Comp. Rate (local clip) | PSNR (dB) | SSIM |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.name << " | " << r.size << " | " << r.reference.rendered() << "% | " << r.local.rendered() << "% | "
       << r.psnr << " | " << r.ssim << " |\n";
  os << "\nRates count the motion latents (u_g, u_d) only; the content latent is excluded. "
        "Rendered values are truncated to two decimals.\n";
  return os.str();
}

// Mean PSNR / SSIM of 20-step reconstructions over clips.
inline std::pair<double, double> reconstruction_quality(const HiVae& m, const std::vector<Array>& clips, const flow::SampleOptions& opt,
                                                        std::uint64_t seed) {
  Rng rng(seed);
  double p = 0.0, s = 0.0;
  for (const auto& c : clips) {
    Array x = m.reconstruct(c, rng, opt);
    p += eval::psnr(c, x);
    s += eval::ssim(c, x);
  }
  return {p / static_cast<double>(clips.size()), s / static_cast<double>(clips.size())};
}

// Two-class synthetic motion set: class 0 drifts (global motion), class 1
// oscillates in place (detailed motion). Seeds differ per clip.
inline std::vector<std::pair<Array, int>> generator_clips(int per_class, const RunConfig& cfg) {
  std::vector<std::pair<Array, int>> out;
  for (int cls = 0; cls < 2; ++cls)
    for (int i = 0; i < per_class; ++i) {
      dataio::SpriteSpec s;
      s.channels = cfg.codec.video_channels;
      s.frames = cfg.data.frames;
      s.height = cfg.data.height;
      s.width = cfg.data.width;
      s.seed = 1000 + static_cast<std::uint64_t>(cls * 100 + i);
      if (cls == 0) {
        s.drift_x = 1.0 + (i % 2);
        s.drift_y = static_cast<double>(i / 2 % 2);
      } else {
        s.osc_freq = 0.375;
        s.osc_amp = 3.0;
      }
      out.emplace_back(dataio::synth_clip(s), cls);
    }
  return out;
}

}  // namespace hivae::pipeline
