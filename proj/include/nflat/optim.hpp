#pragma once

#include <cmath>
#include <vector>

#include "nflat/params.hpp"

namespace nflat {

/// Linear warmup over the first `warmup` fraction of steps, then linear
/// decay to zero at `total_steps`.
struct WarmupLinearSchedule {
  double base_lr = 1e-3;
  std::size_t total_steps = 1;
  double warmup = 0.1;

  double at(std::size_t step) const {  // step is 1-based
    const double total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
    const double warm = std::ceil(warmup * total);
    const double s = static_cast<double>(step);
    if (warm > 0.0 && s <= warm) return base_lr * s / warm;
    if (total <= warm) return base_lr;
    return base_lr * std::max(0.0, (total - s) / (total - warm));
  }
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(ParamStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : store_(store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [_, t] : store_.items()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  /// Global L2 norm of all present gradients.
  double grad_norm() const {
    double s = 0.0;
    for (const auto& [_, t] : store_.items())
      if (t.has_grad())
        for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
  }

  void step(double lr, double clip = 0.0) {
    ++t_;
    double factor = 1.0;
    if (clip > 0.0) {
      const double norm = grad_norm();
      if (norm > clip) factor = clip / norm;
    }
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& items = store_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
      Tensor& t = items[p].second;
      if (!t.has_grad()) continue;
      auto w = t.mutable_data();
      auto g = t.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * factor;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  ParamStore& store_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace nflat
