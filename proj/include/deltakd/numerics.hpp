// SPDX-License-Identifier: Apache-2.0
//
// Stable primitives over vocabulary-sized rows. Every distribution is carried
// as a log-probability row and exponentiated only at the edges.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deltakd/errors.hpp"

namespace deltakd {

using TokenId = std::uint32_t;

/// Softmax temperature, strictly positive.
class Temperature {
 public:
  explicit Temperature(double tau = 1.0) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw DomainError("temperature must be a finite value > 0, got " + std::to_string(tau));
    }
  }
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log_sum_exp of an empty vector");
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) throw DomainError("log_sum_exp requires finite inputs");
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

/// log softmax(z / tau).
inline std::vector<double> log_softmax(std::span<const double> logits, Temperature tau = Temperature{}) {
  if (logits.empty()) throw DomainError("log_softmax of an empty row");
  const double inv = 1.0 / tau.value();
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] * inv;
  const double lse = log_sum_exp(out);
  for (double& v : out) v -= lse;
  return out;
}

inline std::vector<double> temp_softmax(std::span<const double> logits, Temperature tau = Temperature{}) {
  auto out = log_softmax(logits, tau);
  for (double& v : out) v = std::exp(v);
  return out;
}

/// D_KL(p || q) in nats, both given as log-probabilities. Zero-mass terms of p
/// contribute nothing.
inline double kl_divergence_log(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) {
    throw DomainError("kl_divergence length mismatch: " + std::to_string(log_p.size()) + " vs " +
                      std::to_string(log_q.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    if (p == 0.0) continue;
    acc += p * (log_p[i] - log_q[i]);
  }
  return acc;
}

/// D_KL(p || q) with p in probability space.
inline double kl_divergence(std::span<const double> p, std::span<const double> log_q) {
  if (p.size() != log_q.size()) {
    throw DomainError("kl_divergence length mismatch: " + std::to_string(p.size()) + " vs " +
                      std::to_string(log_q.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    acc += p[i] * (std::log(p[i]) - log_q[i]);
  }
  return acc;
}

inline double cross_entropy(TokenId target, std::span<const double> log_probs) {
  if (target >= log_probs.size()) {
    throw DomainError("target token " + std::to_string(target) + " outside vocabulary of size " +
                      std::to_string(log_probs.size()));
  }
  return -log_probs[target];
}

inline bool is_prob_row(std::span<const double> p, double tol = 1e-9) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

inline bool is_log_prob_row(std::span<const double> lp, double tol = 1e-9) {
  if (lp.empty()) return false;
  for (double v : lp) {
    if (std::isnan(v) || v > tol) return false;
  }
  return std::abs(log_sum_exp(lp)) <= tol;
}

/// Total variation distance between two probability rows.
inline double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DomainError("total_variation length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

}  // namespace deltakd
