#pragma once

// Checkpoints in the HVAE container format. Tensors are the model parameters
// (float32). meta holds the full run config, the stage tag, the rng state and
// free-form extras, so a checkpoint alone suffices to rebuild the model.

#include "hivae/config.hpp"
#include "hivae/container.hpp"

namespace hivae::ckpt {

struct Checkpoint {
  RunConfig config;
  StageTag stage = StageTag::None;
  std::string rng_state;
  std::map<std::string, Array> params;
  json meta;  // full meta block, including "extra"
};

// Writes every parameter of `ps` whose name starts with one of `prefixes`
// (all parameters if empty).
inline void save(const std::filesystem::path& path, const nn::ParamStore& ps, const RunConfig& cfg, StageTag stage,
                 const Rng& rng, const json& extra = json::object(), const std::vector<std::string>& prefixes = {}) {
  container::File f;
  for (const auto& [name, v] : ps.all()) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || name.starts_with(p);
    if (keep) f.add(container::Entry::from_array(name, v.array()));
  }
  f.meta["kind"] = "checkpoint";
  f.meta["config"] = cfg;
  f.meta["stage"] = static_cast<int>(stage);
  f.meta["stage_name"] = stage_name(stage);
  f.meta["rng_state"] = rng.state();
  f.meta["extra"] = extra;
  container::write(path, f);
}

inline Checkpoint load(const std::filesystem::path& path) {
  container::File f = container::read(path);
  if (f.meta.value("kind", std::string()) != "checkpoint")
    throw FormatError("'" + path.string() + "' is a container but not a checkpoint");
  Checkpoint c;
  c.config = config_from_json(f.meta.at("config"));
  const int s = f.meta.at("stage").get<int>();
  if (s < -1 || s > 2) throw FormatError("'" + path.string() + "': invalid stage tag " + std::to_string(s));
  c.stage = static_cast<StageTag>(s);
  c.rng_state = f.meta.value("rng_state", std::string());
  for (const auto& e : f.tensors) c.params.emplace(e.name, e.to_array());
  c.meta = f.meta;
  return c;
}

// Rebuilds a Hi-VAE from a checkpoint (parameters, stage tag).
inline std::unique_ptr<HiVae> restore_model(const Checkpoint& c) {
  validate(c.config);
  auto m = std::make_unique<HiVae>(c.config.model(), c.config.seed);
  m->params().load_values(c.params, true);
  m->set_stage(c.stage);
  return m;
}

inline Rng restore_rng(const Checkpoint& c) {
  Rng r(c.config.seed);
  if (!c.rng_state.empty()) r.set_state(c.rng_state);
  return r;
}

// Hash of a checkpoint's parameter values as stored.
inline std::uint64_t params_hash(const Checkpoint& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, a] : c.params) {
    h = hash_bytes(name.data(), name.size(), h);
    h = hash_bytes(a.data.data(), a.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace hivae::ckpt
