// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "deltakd/errors.hpp"

namespace deltakd {

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;        ///< global L2 clip; <= 0 disables
  std::size_t warmup_steps = 100;  ///< linear warmup, then constant
};

inline double global_norm(auto grad) {
  double acc = 0.0;
  for (auto g : grad) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

/// Adam with bias correction, global-norm clipping and linear warmup.
template <class T>
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, T(0)), v_(n, T(0)) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::size_t steps() const noexcept { return t_; }

  double current_lr() const {
    if (cfg_.warmup_steps == 0) return cfg_.lr;
    const double frac = static_cast<double>(t_ + 1) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr * (frac < 1.0 ? frac : 1.0);
  }

  /// Applies one update. `grad_norm` is the pre-clip global norm of `grad`.
  void step(std::span<T> params, std::span<const T> grad, double grad_norm) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw DomainError("Adam state size mismatch");
    const double lr = current_lr();
    ++t_;
    const double scale = (cfg_.clip_norm > 0.0 && grad_norm > cfg_.clip_norm) ? cfg_.clip_norm / grad_norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    const T s = static_cast<T>(scale);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grad[i] * s;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<T> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace deltakd
