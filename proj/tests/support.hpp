#pragma once

// Shared oracles for unit and acceptance tests.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "hivae/hivae.hpp"

namespace hivae::oracle {

// Dense softmax(q k^T / sqrt(d)) v with plain loops. q: [Lq, d], k: [Lk, d], v: [Lk, dv].
inline Array dense_attention(const Array& q, const Array& k, const Array& v) {
  const int lq = q.dim(0), lk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  Array out({lq, dv});
  for (int i = 0; i < lq; ++i) {
    std::vector<double> logit(static_cast<std::size_t>(lk));
    double mx = -1e300;
    for (int j = 0; j < lk; ++j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += q[static_cast<std::size_t>(i) * d + c] * k[static_cast<std::size_t>(j) * d + c];
      logit[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logit[static_cast<std::size_t>(j)]);
    }
    double z = 0.0;
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (int j = 0; j < lk; ++j)
      for (int c = 0; c < dv; ++c)
        out[static_cast<std::size_t>(i) * dv + c] += logit[static_cast<std::size_t>(j)] / z * v[static_cast<std::size_t>(j) * dv + c];
  }
  return out;
}

// Plain x W + b. x: [n, k], w: [k, m], b: [m] or empty.
inline Array dense_linear(const Array& x, const Array& w, const Array& b) {
  const int n = x.dim(0), k = x.dim(1), m = w.dim(1);
  Array out({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = b.size() ? b[static_cast<std::size_t>(j)] : 0.0;
      for (int c = 0; c < k; ++c) s += x[static_cast<std::size_t>(i) * k + c] * w[static_cast<std::size_t>(c) * m + j];
      out[static_cast<std::size_t>(i) * m + j] = s;
    }
  return out;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t within_tol = 0;  // relative error <= tol
  double worst = 0.0;          // largest relative error
  std::string worst_name;

  double fraction() const { return checked ? static_cast<double>(within_tol) / static_cast<double>(checked) : 0.0; }
};

// Relative error. Below 1e-6 the comparison becomes absolute: gradients that
// vanish exactly (a key bias under softmax) leave only rounding noise.
inline double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Compares backprop gradients of loss() against central differences for
// every element of every parameter under `prefix`.
inline GradCheckResult grad_check(nn::ParamStore& ps, const std::function<ag::Var()>& loss, const std::string& prefix,
                                  double tol = 1e-4, double h = 1e-4) {
  ps.zero_grad();
  ag::backward(loss());
  GradCheckResult r;
  for (auto& [name, p] : ps.all()) {
    if (!name.starts_with(prefix)) continue;
    const Buffer analytic = p.grad().empty() ? Buffer(p.size(), 0.0) : p.grad();
    auto& val = p.mutable_value();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double keep = val[i];
      double fp, fm;
      {
        ag::NoGradGuard ng;
        val[i] = keep + h;
        fp = loss().item();
        val[i] = keep - h;
        fm = loss().item();
      }
      val[i] = keep;
      const double e = rel_error(analytic[i], (fp - fm) / (2.0 * h));
      ++r.checked;
      if (e <= tol) ++r.within_tol;
      if (e > r.worst) {
        r.worst = e;
        r.worst_name = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  ps.zero_grad();
  return r;
}

// Scalar probe sum(x * r) with a fixed random r, so every output element matters.
inline ag::Var probe(const ag::Var& x, const Array& r) { return ag::sum(ag::mul(x, ag::Var::constant(r))); }

// Micro encoder setup: both encoders at 2 layers, width 8.
struct MicroEncoders {
  nn::ParamStore ps;
  motion::GlobalMotionConfig g;
  motion::DetailedMotionConfig d;
  std::unique_ptr<motion::GlobalEncoder> genc;
  std::unique_ptr<motion::DetailedEncoder> denc;
  Array z;
  Array rg_mu, rg_lv, rd_mu, rd_lv;

  explicit MicroEncoders(std::uint64_t seed = 3) {
    Rng rng(seed);
    g.f_g = 1, g.n_g = 2, g.c_g = 2, g.layers = 2, g.heads = 2, g.width = 8;
    d.f_d = 2, d.n_d = 2, d.c_d = 2, d.layers = 2, d.heads = 2, d.width = 8;
    genc = std::make_unique<motion::GlobalEncoder>(ps, g, 2, rng);
    denc = std::make_unique<motion::DetailedEncoder>(ps, d, 2, rng);
    z = rng.normal_array({2, 2, 2, 2});
    rg_mu = rng.normal_array({g.f_g, g.n_g, g.c_g});
    rg_lv = rng.normal_array({g.f_g, g.n_g, g.c_g});
    rd_mu = rng.normal_array({d.f_d, d.n_d, d.c_d});
    rd_lv = rng.normal_array({d.f_d, d.n_d, d.c_d});
  }

  ag::Var global_loss() const {
    Rng r(0);
    motion::SpatialMask m{{1.0, 0.0, 1.0, 1.0}, 0.25};
    auto o = genc->forward(z, m, r, false);
    return ag::add(probe(o.mu, rg_mu), probe(o.logvar, rg_lv));
  }
  ag::Var detail_loss() const {
    Rng r(0);
    auto o = denc->forward(z, r, false);
    return ag::add(probe(o.mu, rd_mu), probe(o.logvar, rd_lv));
  }
};

// Micro decoder setup: 2 groups, width 16, non-zero initialization.
struct MicroDecoder {
  nn::ParamStore ps;
  motion::GlobalMotionConfig g;
  motion::DetailedMotionConfig d;
  flow::DecoderConfig cfg;
  std::unique_ptr<flow::FlowDecoder> dec;
  Array interp, content, u_g, u_d, r;
  double t = 0.37;

  explicit MicroDecoder(flow::DecoderConfig::Prediction pred = flow::DecoderConfig::Prediction::Sample, std::uint64_t seed = 5) {
    Rng rng(seed);
    g.f_g = 1, g.n_g = 2, g.c_g = 2;
    d.f_d = 2, d.n_d = 2, d.c_d = 2;
    cfg.layers = 2, cfg.heads = 2, cfg.width = 16, cfg.patch = 2, cfg.zero_init = false, cfg.prediction = pred;
    dec = std::make_unique<flow::FlowDecoder>(ps, cfg, 2, g, d, rng);
    interp = rng.normal_array({2, 2, 4, 4});
    content = rng.normal_array({2, 4, 4});
    u_g = rng.normal_array({1, 2, 2});
    u_d = rng.normal_array({2, 2, 2});
    r = rng.normal_array({2, 2, 4, 4});
  }

  ag::Var loss() const { return probe(dec->forward(interp, &content, ag::Var::constant(u_g), ag::Var::constant(u_d), t), r); }
};

// Dense loop oracle of one adaptive block applied along time for every
// spatial index. tok: [F, L, W], cond: [1, W].
inline Array dense_tab(const nn::ParamStore& ps, const std::string& n, const Array& tok, const Array& cond, int heads) {
  const int F = tok.dim(0), L = tok.dim(1), W = tok.dim(2), dh = W / heads;
  auto P = [&](const std::string& k) { return ps.get(n + "." + k).array(); };
  auto lin = [&](const Array& x, const std::string& k) { return dense_linear(x, P(k + ".w"), P(k + ".b")); };
  auto ln = [](Array x) {
    const int m = x.dim(1);
    for (int r = 0; r < x.dim(0); ++r) {
      double mean = 0.0, var = 0.0;
      for (int j = 0; j < m; ++j) mean += x[static_cast<std::size_t>(r) * m + j];
      mean /= m;
      for (int j = 0; j < m; ++j) var += std::pow(x[static_cast<std::size_t>(r) * m + j] - mean, 2);
      var /= m;
      for (int j = 0; j < m; ++j) x[static_cast<std::size_t>(r) * m + j] = (x[static_cast<std::size_t>(r) * m + j] - mean) / std::sqrt(var + 1e-6);
    }
    return x;
  };
  const Array mod = lin(cond, "ada");  // [1, 6W]
  auto part = [&](int i, int j) { return mod[static_cast<std::size_t>(i) * W + j]; };
  auto modulate = [&](Array x, int sh, int sc) {
    for (int r = 0; r < x.dim(0); ++r)
      for (int j = 0; j < W; ++j) {
        double& v = x[static_cast<std::size_t>(r) * W + j];
        v = v * (1.0 + part(sc, j)) + part(sh, j);
      }
    return x;
  };
  Array out(tok.shape);
  for (int l = 0; l < L; ++l) {
    Array x({F, W});
    for (int f = 0; f < F; ++f)
      for (int j = 0; j < W; ++j) x[static_cast<std::size_t>(f) * W + j] = tok[(static_cast<std::size_t>(f) * L + l) * W + j];
    Array h = modulate(ln(x), 0, 1);
    Array q = lin(h, "attn.q"), k = lin(h, "attn.k"), v = lin(h, "attn.v"), a({F, W});
    for (int hd = 0; hd < heads; ++hd) {
      auto cols = [&](const Array& m) {
        Array o({F, dh});
        for (int f = 0; f < F; ++f)
          for (int j = 0; j < dh; ++j) o[static_cast<std::size_t>(f) * dh + j] = m[static_cast<std::size_t>(f) * W + hd * dh + j];
        return o;
      };
      Array r = dense_attention(cols(q), cols(k), cols(v));
      for (int f = 0; f < F; ++f)
        for (int j = 0; j < dh; ++j) a[static_cast<std::size_t>(f) * W + hd * dh + j] = r[static_cast<std::size_t>(f) * dh + j];
    }
    a = lin(a, "attn.o");
    Array y = x;
    for (int f = 0; f < F; ++f)
      for (int j = 0; j < W; ++j) y[static_cast<std::size_t>(f) * W + j] += part(2, j) * a[static_cast<std::size_t>(f) * W + j];
    Array hid = lin(modulate(ln(y), 3, 4), "mlp.fc1");
    for (double& u : hid.data) u = 0.5 * u * (1.0 + std::tanh(0.7978845608028654 * (u + 0.044715 * u * u * u)));
    Array m = lin(hid, "mlp.fc2");
    for (int f = 0; f < F; ++f)
      for (int j = 0; j < W; ++j)
        out[(static_cast<std::size_t>(f) * L + l) * W + j] = y[static_cast<std::size_t>(f) * W + j] + part(5, j) * m[static_cast<std::size_t>(f) * W + j];
  }
  return out;
}

// KL(N(mu, e^lv) || N(0, 1)) by Simpson quadrature of p log(p / q).
inline double kl_quadrature(double mu, double lv) {
  const double sd = std::exp(0.5 * lv);
  const double a = mu - 12.0 * sd, b = mu + 12.0 * sd;
  const int n = 20000;
  const double h = (b - a) / n;
  auto f = [&](double x) {
    const double lp = -0.5 * std::pow((x - mu) / sd, 2) - std::log(sd) - 0.5 * std::log(2 * std::numbers::pi);
    const double lq = -0.5 * x * x - 0.5 * std::log(2 * std::numbers::pi);
    return std::exp(lp) * (lp - lq);
  };
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace hivae::oracle
