#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hivae/autograd.hpp"

namespace hivae::nn {

using ag::Var;

// Named parameters. Names are dotted paths; the first component is the
// owning module namespace (codec, global, detail, decoder, gen) and drives
// freezing and checkpoint layout.
class ParamStore {
 public:
  Var& add(const std::string& name, Array init) {
    auto [it, inserted] = params_.emplace(name, Var::parameter(std::move(init)));
    if (!inserted) throw ConfigError("duplicate parameter " + name);
    return it->second;
  }

  Var& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  const Var& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Var>& all() const { return params_; }
  std::map<std::string, Var>& all() { return params_; }

  std::vector<Var> with_prefix(std::string_view prefix) const {
    std::vector<Var> out;
    for (const auto& [name, v] : params_)
      if (name.starts_with(prefix)) out.push_back(v);
    return out;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  std::size_t count(std::string_view prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_)
      if (name.starts_with(prefix)) n += v.size();
    return n;
  }

  // Hash over names and values of every parameter under prefix.
  std::uint64_t hash(std::string_view prefix = "") const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, v] : params_) {
      if (!name.starts_with(prefix)) continue;
      h = hash_bytes(name.data(), name.size(), h);
      h = hash_bytes(v.value().data(), v.value().size() * sizeof(double), h);
    }
    return h;
  }

  // Overwrite values from another store (shapes must agree).
  void load_values(const std::map<std::string, Array>& values, bool strict = true) {
    for (auto& [name, v] : params_) {
      auto it = values.find(name);
      if (it == values.end()) {
        if (strict) throw FormatError("checkpoint is missing parameter " + name);
        continue;
      }
      if (it->second.shape != v.shape())
        throw FormatError("parameter " + name + " shape " + shape_str(it->second.shape) +
                          " does not match model " + shape_str(v.shape()));
      v.mutable_value() = it->second.data;
    }
  }

 private:
  std::map<std::string, Var> params_;
};

enum class Init { Xavier, Zero, Normal02 };

inline Array init_array(const Shape& s, Init kind, Rng& rng) {
  Array a(s);
  switch (kind) {
    case Init::Zero:
      break;
    case Init::Normal02:
      for (double& v : a.data) v = 0.02 * rng.normal();
      break;
    case Init::Xavier: {
      const double fan_in = s.size() >= 2 ? s[s.size() - 2] : s.back();
      const double fan_out = s.back();
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : a.data) v = rng.uniform(-bound, bound);
      break;
    }
  }
  return a;
}

struct Linear {
  Var w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
         Init w_init = Init::Xavier, bool bias = true) {
    w = ps.add(name + ".w", init_array({in, out}, w_init, rng));
    if (bias) b = ps.add(name + ".b", Array({out}));
  }

  Var operator()(const Var& x) const { return ag::linear(x, w, b); }
  int in() const { return w.dim(0); }
  int out() const { return w.dim(1); }
};

// LayerNorm with learnable gain and bias.
struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int width) {
    gamma = ps.add(name + ".g", Array({width}, 1.0));
    beta = ps.add(name + ".b", Array({width}));
  }
  Var operator()(const Var& x) const {
    return ag::add_rowvec(ag::mul_rowvec(ag::layer_norm(x), gamma), beta);
  }
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& name, int width, int hidden, Rng& rng,
      Init out_init = Init::Xavier) {
    fc1 = Linear(ps, name + ".fc1", width, hidden, rng);
    fc2 = Linear(ps, name + ".fc2", hidden, width, rng, out_init);
  }
  Var operator()(const Var& x) const { return fc2(ag::gelu(fc1(x))); }
};

// Multi-head attention with separate query and key/value inputs. Inputs are
// [G*L, width] with G independent groups attending only within themselves.
struct Attention {
  Linear q, k, v, o;
  int heads = 1;

  Attention() = default;
  Attention(ParamStore& ps, const std::string& name, int width, int heads_, Rng& rng,
            Init out_init = Init::Xavier, int kv_width = -1)
      : heads(heads_) {
    if (width % heads_ != 0) throw ConfigError(name + ": width not divisible by heads");
    const int kvw = kv_width < 0 ? width : kv_width;
    q = Linear(ps, name + ".q", width, width, rng);
    k = Linear(ps, name + ".k", kvw, width, rng);
    v = Linear(ps, name + ".v", kvw, width, rng);
    o = Linear(ps, name + ".o", width, width, rng, out_init);
  }

  Var operator()(const Var& xq, const Var& xkv, int groups) const {
    return o(ag::attention(q(xq), k(xkv), v(xkv), groups, heads));
  }
};

// Fixed sinusoidal encoding: row p, column 2i -> sin(p / 10000^(2i/d)), 2i+1 -> cos.
inline Array sinusoidal_table(int positions, int width) {
  Array t({positions, width});
  for (int p = 0; p < positions; ++p)
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      t[static_cast<std::size_t>(p) * width + i] = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return t;
}

// Continuous-valued embedding of a scalar (diffusion time).
inline Array sinusoidal_embedding(double value, int width, double max_period = 10000.0) {
  Array e({width});
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * i / half);
    e[static_cast<std::size_t>(i)] = std::cos(value * freq);
    e[static_cast<std::size_t>(i + half)] = std::sin(value * freq);
  }
  return e;
}

// Tile a [L, d] table into [G*L, d].
inline Array repeat_rows(const Array& table, int groups) {
  Array out({groups * table.dim(0), table.dim(1)});
  for (int g = 0; g < groups; ++g)
    std::copy(table.data.begin(), table.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(g) * static_cast<std::ptrdiff_t>(table.size()));
  return out;
}

}  // namespace hivae::nn
