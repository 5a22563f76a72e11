// hivae: command line entry point for data synthesis, staged training,
// reconstruction, decode ablations, motion generation, reports and cost tables.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

#include "hivae/hivae.hpp"

namespace fs = std::filesystem;
using namespace hivae;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "JSON run config (desk preset if omitted)")->check(CLI::ExistingFile);
  sub->add_option("--set", o.sets, "Config override key.path=value (repeatable)");
  sub->add_option("--seed", o.seed, "Seed (overrides config seed)");
}

RunConfig resolve(const CommonOpts& o, std::optional<RunConfig> base = std::nullopt) {
  RunConfig c = base ? *base : (o.config.empty() ? desk_preset() : load_config(o.config));
  c = apply_overrides(c, o.sets);
  if (o.seed) c.seed = *o.seed;
  validate(c);
  return c;
}

fs::path default_out(const std::string& out, const std::string& name) {
  return out.empty() ? pipeline::cache_dir() / name : fs::path(out);
}

// Append-only CSV: step, stage, fm_loss, kl_loss, total, lr, wall_time.
class CsvLog {
 public:
  explicit CsvLog(const std::string& path) {
    if (path.empty()) return;
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    os_.open(path, std::ios::app);
    if (!os_) throw ConfigError("cannot open log '" + path + "'");
    if (fresh) os_ << "step,stage,fm_loss,kl_loss,total,lr,wall_time\n";
    os_ << std::setprecision(10);
  }
  void row(const training::LogRow& r) {
    if (os_.is_open()) os_ << r.step << ',' << r.stage << ',' << r.fm_loss << ',' << r.kl_loss << ',' << r.total << ',' << r.lr << ',' << r.wall_time << '\n';
  }

 private:
  std::ofstream os_;
};

void progress(const training::LogRow& r, long total) {
  if (r.step % 50 == 0 || r.step + 1 == total)
    std::cerr << r.stage << " step " << r.step << "/" << total << "  fm " << r.fm_loss << "  kl " << r.kl_loss << "  lr "
              << r.lr << "\n";
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& fixture, const std::string& out) {
  dataio::SpriteSpec spec;
  if (!spec_path.empty()) {
    std::ifstream is(spec_path);
    json j;
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("spec '" + spec_path + "' is not valid JSON: " + e.what());
    }
    detail::check_known(json(dataio::SpriteSpec{}), j, "");
    spec = j.get<dataio::SpriteSpec>();
  } else if (!fixture.empty()) {
    bool found = false;
    for (auto f : {dataio::Fixture::Static, dataio::Fixture::Drift, dataio::Fixture::Oscillation, dataio::Fixture::Mixed})
      if (fixture == dataio::fixture_name(f)) {
        spec = dataio::fixture_spec(f);
        found = true;
      }
    if (!found) throw ConfigError("unknown fixture '" + fixture + "' (static, drift, oscillation, mixed)");
  } else {
    throw ConfigError("data synth needs --spec or --fixture");
  }
  json meta;
  meta["spec"] = spec;
  dataio::write_video(out, dataio::synth_video(spec), meta);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train(int stage, const CommonOpts& co, const std::string& init, std::optional<long> steps, const std::string& out_arg,
              const std::string& log_path, const std::vector<std::string>& data) {
  std::optional<ckpt::Checkpoint> prev;
  if (stage > 0) {
    if (init.empty())
      throw PreconditionError("stage " + std::to_string(stage) + " needs the stage-" + std::to_string(stage - 1) +
                              " checkpoint: pass --init <checkpoint>");
    prev = ckpt::load(init);
    if (static_cast<int>(prev->stage) < stage - 1)
      throw PreconditionError("stage " + std::to_string(stage) + " needs a stage-" + std::to_string(stage - 1) + " checkpoint, '" +
                              init + "' is " + stage_name(prev->stage));
  }
  RunConfig cfg = resolve(co, prev ? std::optional<RunConfig>(prev->config) : std::nullopt);
  if (!data.empty()) cfg.data.clips = data;
  if (steps) {
    if (stage == 0) cfg.train.codec_steps = *steps;
    if (stage == 1) cfg.train.stage1_steps = *steps;
    if (stage == 2) cfg.train.stage2_steps = *steps;
    cfg.train.warmup_steps = std::min(cfg.train.warmup_steps, *steps);
  }
  const auto clips = pipeline::load_clips(cfg);
  CsvLog log(log_path);
  std::unique_ptr<HiVae> model;
  Rng rng(cfg.seed);
  if (stage == 0) {
    model = std::make_unique<HiVae>(cfg.model(), cfg.seed);
    auto r = training::train_stage0(*model, clips, cfg.train, [&](long s, double loss) {
      log.row({s, "stage0", loss, 0.0, loss, cfg.train.codec_lr, 0.0});
      if (s % 100 == 0) std::cerr << "stage0 step " << s << "/" << cfg.train.codec_steps << "  mse " << loss << "\n";
    });
    std::cout << "stage0 final mse " << r.losses.back() << "  latent mean " << r.latent_mean << "  std " << r.latent_std << "\n";
  } else {
    prev->config = cfg;
    model = ckpt::restore_model(*prev);
    rng = co.seed ? Rng(*co.seed + static_cast<std::uint64_t>(stage)) : ckpt::restore_rng(*prev);
    const long total = stage == 1 ? cfg.train.stage1_steps : cfg.train.stage2_steps;
    auto cb = [&](const training::LogRow& r) {
      log.row(r);
      progress(r, total);
    };
    const auto before = model->params().hash("global.");
    auto rows = stage == 1 ? training::train_stage1(*model, clips, cfg.train, rng, cb)
                           : training::train_stage2(*model, clips, cfg.train, rng, cb);
    std::vector<double> totals;
    for (const auto& r : rows) totals.push_back(r.total);
    std::cout << "stage" << stage << " smoothed loss " << training::smoothed(totals).front() << " -> "
              << training::smoothed(totals).back() << "\n";
    if (stage == 2) std::cout << "global encoder unchanged: " << (before == model->params().hash("global.") ? "yes" : "no") << "\n";
  }
  const fs::path out = default_out(out_arg, "stage" + std::to_string(stage) + ".ckpt");
  ckpt::save(out, model->params(), cfg, model->stage(), rng);
  std::cout << "wrote " << out.string() << "  params hash " << std::hex << ckpt::params_hash(ckpt::load(out)) << std::dec << "\n";
  return 0;
}

struct DecodeOpts {
  std::optional<int> steps;
  std::optional<double> cfg_weight;
  std::uint64_t seed = 0;
};

flow::SampleOptions sample_options(const RunConfig& cfg, const DecodeOpts& d, flow::DecodeMode mode) {
  return {d.steps.value_or(cfg.decoder.infer_steps), d.cfg_weight.value_or(cfg.decoder.cfg_weight), mode};
}

struct ClipMetrics {
  double psnr = 0, ssim = 0, ratio = 0;
};

// Reconstructs every clip of a video and returns the reconstruction plus mean metrics.
std::pair<Video, ClipMetrics> reconstruct_video(const HiVae& m, const Video& v, const flow::SampleOptions& opt, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Array> outs;
  ClipMetrics cm;
  const auto cut = m.config().cutoffs;
  const double sf = m.config().codec.spatial_factor;
  const spectral::Cutoffs pix{cut.f, cut.h / sf, cut.w / sf};
  for (int b = 0; b < v.batch(); ++b) {
    Array c = v.clip(b);
    Array x = m.reconstruct(c, rng, opt);
    cm.psnr += eval::psnr(c, x) / v.batch();
    cm.ssim += eval::ssim(c, x) / v.batch();
    cm.ratio += eval::spectral_energy_ratio(x, pix) / v.batch();
    outs.push_back(std::move(x));
  }
  return {Video::from_clips(outs, v.fps), cm};
}

int cmd_reconstruct(const std::string& ck, const std::string& input, const std::string& mode, const DecodeOpts& d,
                    const std::string& out_arg) {
  auto c = ckpt::load(ck);
  auto m = ckpt::restore_model(c);
  Video v = dataio::read_video(input);
  auto opt = sample_options(c.config, d, flow::parse_mode(mode));
  auto [rec, met] = reconstruct_video(*m, v, opt, d.seed);
  const fs::path out = default_out(out_arg, "reconstruction.hvae");
  json meta{{"mode", mode}, {"steps", opt.steps}, {"cfg_weight", opt.guidance}, {"source", input}};
  dataio::write_video(out, rec, meta);
  json side{{"psnr", met.psnr}, {"ssim", met.ssim}, {"spectral_ratio", met.ratio}, {"mode", mode}, {"steps", opt.steps},
            {"cfg_weight", opt.guidance}};
  std::ofstream(out.string() + ".json") << side.dump(2) << "\n";
  std::cout << side.dump() << "\n";
  return 0;
}

int cmd_ablate(const std::string& ck, const std::string& input, const DecodeOpts& d, const std::string& out_dir_arg) {
  auto c = ckpt::load(ck);
  auto m = ckpt::restore_model(c);
  Video v = dataio::read_video(input);
  const fs::path dir = out_dir_arg.empty() ? pipeline::cache_dir() / "ablate" : fs::path(out_dir_arg);
  fs::create_directories(dir);
  std::ofstream csv(dir / "ablation.csv");
  csv << "mode,psnr_db,ssim,spectral_ratio\n";
  std::cout << "mode,psnr_db,ssim,spectral_ratio\n";
  for (auto mode : {flow::DecodeMode::Full, flow::DecodeMode::GlobalOnly, flow::DecodeMode::DetailedOnly}) {
    auto [rec, met] = reconstruct_video(*m, v, sample_options(c.config, d, mode), d.seed);
    dataio::write_video(dir / (std::string(flow::mode_name(mode)) + ".hvae"), rec, json{{"mode", flow::mode_name(mode)}});
    std::ostringstream line;
    line << flow::mode_name(mode) << ',' << met.psnr << ',' << met.ssim << ',' << met.ratio;
    csv << line.str() << "\n";
    std::cout << line.str() << "\n";
  }
  return 0;
}

// Generator checkpoints hold gen.* parameters, per-class content latents
// ("content.<class>") and the packing statistics.
int cmd_generate_train(const std::string& ck, std::optional<long> steps, std::uint64_t seed, const std::string& out_arg,
                       const std::string& log_path) {
  auto c = ckpt::load(ck);
  auto vae = ckpt::restore_model(c);
  if (vae->stage() != StageTag::Full) throw PreconditionError("generator training needs a stage-2 Hi-VAE checkpoint");
  RunConfig cfg = c.config;
  if (steps) cfg.gen_train.steps = *steps;
  cfg.gen.num_classes = 2;
  const auto data = pipeline::generator_clips(cfg.data.gen_clips_per_class, cfg);
  Rng rng(seed);
  std::vector<motion::MotionLatent> lat;
  for (const auto& [clip, cls] : data) lat.push_back(vae->encode_motion(vae->prepare(clip), rng));
  gen::MotionPacker packer(cfg.global, cfg.detail, cfg.seed);
  packer.fit(lat);
  std::vector<gen::GenSample> set;
  for (std::size_t i = 0; i < data.size(); ++i) set.push_back({packer.pack(lat[i].u_g, lat[i].u_d), data[i].second});
  nn::ParamStore gps;
  Rng init(cfg.seed + 17);
  gen::MotionGenerator model(gps, cfg.gen, packer.packed_shape(), init);
  for (int cls = 0; cls < 2; ++cls)
    for (const auto& [clip, k] : data)
      if (k == cls) {
        gps.add("content." + std::to_string(cls), vae->prepare(clip).content);
        break;
      }
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    log << "step,loss\n";
  }
  auto losses = gen::gen_train(gps, model, set, cfg.gen_train, rng, [&](long s, double l) {
    if (log.is_open()) log << s << ',' << l << '\n';
    if (s % 50 == 0) std::cerr << "gen step " << s << "/" << cfg.gen_train.steps << "  loss " << l << "\n";
  });
  std::cout << "generator smoothed loss " << training::smoothed(losses).front() << " -> " << training::smoothed(losses).back() << "\n";
  const fs::path out = default_out(out_arg, "generator.ckpt");
  const auto& st = packer.stats();
  json extra{{"pack", {{"mean_g", st.mean_g}, {"std_g", st.std_g}, {"mean_d", st.mean_d}, {"std_d", st.std_d}}},
             {"vae_hash", vae->params().hash()}};
  ckpt::save(out, gps, cfg, StageTag::Full, rng, extra);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_generate(const std::string& ck, const std::string& gen_ck, int cls, std::uint64_t seed, const DecodeOpts& d,
                 const std::string& out_arg) {
  if (gen_ck.empty()) throw PreconditionError("generate needs --gen <generator checkpoint> (create one with --train)");
  auto c = ckpt::load(ck);
  auto vae = ckpt::restore_model(c);
  auto g = ckpt::load(gen_ck);
  const json& pk = g.meta.at("extra").at("pack");
  gen::MotionPacker packer(g.config.global, g.config.detail, g.config.seed);
  packer.set_stats({pk.at("mean_g"), pk.at("std_g"), pk.at("mean_d"), pk.at("std_d")});
  nn::ParamStore gps;
  Rng init(g.config.seed + 17);
  gen::MotionGenerator model(gps, g.config.gen, packer.packed_shape(), init);
  std::map<std::string, Array> gen_params;
  for (const auto& [name, a] : g.params)
    if (name.starts_with("gen.")) gen_params.emplace(name, a);
  gps.load_values(gen_params, true);
  const auto it = g.params.find("content." + std::to_string(cls));
  if (it == g.params.end()) throw ConfigError("generator checkpoint has no content latent for class " + std::to_string(cls));
  Rng rng(seed);
  const int steps = d.steps.value_or(g.config.gen.infer_steps);
  const double w = d.cfg_weight.value_or(g.config.gen.cfg_weight);
  auto out_v = gen::generate_video(*vae, model, packer, cls, it->second, rng, steps, w,
                                   {c.config.decoder.infer_steps, c.config.decoder.cfg_weight, flow::DecodeMode::Full});
  const fs::path out = default_out(out_arg, "generated_class" + std::to_string(cls) + ".hvae");
  dataio::write_video(out, Video::from_clips({out_v.video}), json{{"class", cls}, {"seed", seed}});
  std::cout << "wrote " << out.string() << "  finite " << (out_v.video.all_finite() ? "yes" : "no") << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& cks, const DecodeOpts& d, const std::string& out_dir_arg) {
  if (cks.empty()) throw ConfigError("report needs at least one --ckpt");
  const fs::path dir = out_dir_arg.empty() ? pipeline::cache_dir() / "report" : fs::path(out_dir_arg);
  fs::create_directories(dir);
  std::vector<pipeline::ReportRow> rows;
  for (const auto& path : cks) {
    auto c = ckpt::load(path);
    auto m = ckpt::restore_model(c);
    pipeline::ReportRow r{fs::path(path).stem().string(), c.config.size, pipeline::reference_rate(c.config.size),
                          pipeline::local_rate(c.config)};
    if (m->stage() >= StageTag::Global) {
      auto [p, s] = pipeline::reconstruction_quality(*m, pipeline::load_clips(c.config),
                                                     sample_options(c.config, d, flow::DecodeMode::Full), d.seed);
      r.psnr = p;
      r.ssim = s;
    } else {
      r.psnr = std::numeric_limits<double>::quiet_NaN();
      r.ssim = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(r);
  }
  std::ofstream csv(dir / "report.csv");
  csv << pipeline::report_csv_header() << "\n";
  for (const auto& r : rows) csv << pipeline::report_csv_line(r) << "\n";
  const std::string md = pipeline::report_markdown(rows);
  std::ofstream(dir / "report.md") << md;
  std::vector<double> xs, ys;
  std::vector<int> grp;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (std::isfinite(rows[i].psnr)) {
      xs.push_back(rows[i].reference.rate_percent);
      ys.push_back(rows[i].psnr);
      grp.push_back(static_cast<int>(i));
    }
  if (!xs.empty()) raster::scatter(xs, ys, grp).write_ppm(dir / "rate_vs_psnr.ppm");
  std::cout << md;
  std::cout << "wrote " << (dir / "report.csv").string() << "\n";
  return 0;
}

int cmd_flops(const std::vector<std::int64_t>& tokens, const eval::DitConfig& dit) {
  std::cout << "tokens,flops,param_elements,activation_elements,memory_elements\n";
  for (auto L : tokens) {
    auto r = eval::flops_and_memory(L, dit);
    std::cout << L << ',' << std::setprecision(6) << r.flops << ',' << r.param_elements << ',' << r.activation_elements << ','
              << r.memory_elements() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hivae: hierarchical video autoencoder (spectral motion split, flow-matching decoder)"};
  app.require_subcommand(1);

  // data synth
  auto* data = app.add_subcommand("data", "Dataset utilities");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "Render a synthetic sprite clip to a container file");
  std::string spec_path, fixture, synth_out;
  synth->add_option("--spec", spec_path, "Sprite spec JSON")->check(CLI::ExistingFile);
  synth->add_option("--fixture", fixture, "Canonical fixture: static, drift, oscillation, mixed");
  synth->add_option("--out", synth_out, "Output container")->required();

  // train
  auto* train = app.add_subcommand("train", "Run one training stage (0 codec, 1 global, 2 detailed)");
  CommonOpts tco;
  int stage = 0;
  std::string init, train_out, log_path;
  std::optional<long> train_steps;
  std::vector<std::string> train_data;
  train->add_option("--stage", stage, "Stage: 0, 1 or 2")->required()->check(CLI::IsMember({0, 1, 2}));
  add_common(train, tco);
  train->add_option("--init", init, "Checkpoint of the previous stage")->check(CLI::ExistingFile);
  train->add_option("--steps", train_steps, "Optimizer steps for this stage")->check(CLI::PositiveNumber);
  train->add_option("--data", train_data, "Training clip containers (default: fixture set)")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output checkpoint (default: $HIVAE_CACHE/stage<N>.ckpt)");
  train->add_option("--log", log_path, "Append training rows to this CSV");

  // shared decode options
  DecodeOpts dopt;
  std::string ck, input, out, mode = "full";
  auto add_decode = [&](CLI::App* sub) {
    sub->add_option("--steps", dopt.steps, "Euler steps (default: decoder.infer_steps)")->check(CLI::PositiveNumber);
    sub->add_option("--cfg-weight", dopt.cfg_weight, "Guidance weight (default: decoder.cfg_weight)")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", dopt.seed, "Sampling seed");
  };

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct a video and write metrics");
  recon->add_option("--ckpt", ck, "Hi-VAE checkpoint")->required()->check(CLI::ExistingFile);
  recon->add_option("--input", input, "Input video container")->required()->check(CLI::ExistingFile);
  recon->add_option("--mode", mode, "full, global_only or detailed_only")
      ->check(CLI::IsMember({"full", "global_only", "detailed_only"}));
  recon->add_option("--out", out, "Output container; metrics go to <out>.json");
  add_decode(recon);

  auto* ablate = app.add_subcommand("ablate", "Decode with full / global-only / detailed-only motion");
  std::string out_dir;
  ablate->add_option("--ckpt", ck, "Hi-VAE checkpoint")->required()->check(CLI::ExistingFile);
  ablate->add_option("--input", input, "Input video container")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out-dir", out_dir, "Output directory");
  add_decode(ablate);

  auto* generate = app.add_subcommand("generate", "Train the motion generator (--train) or sample a class-conditional video");
  std::string gen_ck;
  int cls = 0;
  bool gen_train = false;
  std::optional<long> gen_steps;
  std::uint64_t gen_seed = 0;
  generate->add_option("--ckpt", ck, "Stage-2 Hi-VAE checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_flag("--train", gen_train, "Train a generator on the two-class synthetic motion set");
  generate->add_option("--gen", gen_ck, "Generator checkpoint (sampling)")->check(CLI::ExistingFile);
  generate->add_option("--class", cls, "Class id")->check(CLI::NonNegativeNumber);
  generate->add_option("--seed", gen_seed, "Seed");
  generate->add_option("--steps", gen_steps, "Training steps (--train) or Euler steps (sampling)")->check(CLI::PositiveNumber);
  generate->add_option("--cfg-weight", dopt.cfg_weight, "Generator guidance weight (sampling)")->check(CLI::NonNegativeNumber);
  generate->add_option("--out", out, "Output checkpoint (--train) or video container");
  generate->add_option("--log", log_path, "Generator loss CSV (--train)");

  auto* report = app.add_subcommand("report", "Comp. rate / PSNR / SSIM table, CSV and rate-vs-PSNR scatter");
  std::vector<std::string> cks;
  report->add_option("--ckpt", cks, "Checkpoints (repeatable)")->required()->check(CLI::ExistingFile);
  report->add_option("--out-dir", out_dir, "Output directory");
  add_decode(report);

  auto* flops = app.add_subcommand("flops", "Analytic FLOP and memory counts of the reference transformer");
  std::vector<std::int64_t> tokens{4608, 65536};
  eval::DitConfig dit;
  flops->add_option("--tokens", tokens, "Token counts")->capture_default_str();
  flops->add_option("--layers", dit.layers, "Layers")->capture_default_str();
  flops->add_option("--heads", dit.heads, "Attention heads")->capture_default_str();
  flops->add_option("--width", dit.width, "Hidden width")->capture_default_str();
  flops->add_option("--ffn", dit.ffn, "Feed-forward width")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(spec_path, fixture, synth_out);
    if (train->parsed()) return cmd_train(stage, tco, init, train_steps, train_out, log_path, train_data);
    if (recon->parsed()) return cmd_reconstruct(ck, input, mode, dopt, out);
    if (ablate->parsed()) return cmd_ablate(ck, input, dopt, out_dir);
    if (generate->parsed()) {
      if (gen_train) return cmd_generate_train(ck, gen_steps, gen_seed, out, log_path);
      if (gen_steps) dopt.steps = static_cast<int>(*gen_steps);
      return cmd_generate(ck, gen_ck, cls, gen_seed, dopt, out);
    }
    if (report->parsed()) return cmd_report(cks, dopt, out_dir);
    if (flops->parsed()) return cmd_flops(tokens, dit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
