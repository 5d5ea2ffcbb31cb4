#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace rast {

/// Adam with decoupled weight decay.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0)
      : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::span<T> params, std::span<const T> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      double p = params[i];
      if (weight_decay_ > 0.0) p -= lr * weight_decay_ * p;
      p -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      params[i] = static_cast<T>(p);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
  std::size_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before scaling.
template <typename T>
double clip_by_global_norm(std::initializer_list<std::span<T>> grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads)
    for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto g : grads)
      for (T& x : g) x = static_cast<T>(x * s);
  }
  return norm;
}

/// Linear warmup over the first warmup_ratio of steps, then linear decay to zero.
class LinearSchedule {
 public:
  LinearSchedule(std::size_t total_steps, double warmup_ratio)
      : total_(std::max<std::size_t>(total_steps, 1)),
        warmup_(static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_)))) {}

  double factor(std::size_t step) const {
    if (step < warmup_) return static_cast<double>(step + 1) / static_cast<double>(warmup_);
    if (total_ <= warmup_) return 1.0;
    const double rest = static_cast<double>(total_ - std::min(step, total_));
    return std::max(rest / static_cast<double>(total_ - warmup_), 0.0);
  }

 private:
  std::size_t total_;
  std::size_t warmup_;
};

}  // namespace rast
