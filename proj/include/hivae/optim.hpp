#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "hivae/nn.hpp"

namespace hivae::optim {

using ag::Var;

// Linear warmup to base_lr, then cosine annealing to zero at total_steps.
// lr(0) = base/warmup, lr(warmup) = base.
struct WarmupCosine {
  double base_lr = 1e-4;
  long warmup = 0;
  long total = 1;

  double operator()(long step) const {
    if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long span = std::max<long>(1, total - warmup);
    const double progress = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(span), 0.0, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline double grad_norm(const std::vector<Var>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

// Scales gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Var>& params, double max_norm) {
  const double n = grad_norm(params);
  if (n > max_norm && n > 0.0) {
    const double c = max_norm / n;
    for (auto& p : params)
      if (!p.grad().empty())
        for (double& g : p.mutable_grad()) g *= c;
  }
  return n;
}

// Adam with decoupled weight decay. Only the parameters handed to the
// constructor are ever touched.
class AdamW {
 public:
  AdamW(std::vector<Var> params, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8,
        double weight_decay = 1e-4)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (p.grad().empty()) continue;
      auto& w = p.mutable_value();
      const auto& g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        w[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * w[i]);
      }
    }
  }

  std::vector<Var>& params() { return params_; }
  long steps_taken() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Buffer> m_, v_;
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
};

}  // namespace hivae::optim
