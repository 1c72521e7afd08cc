// SPDX-License-Identifier: Apache-2.0
//
// The loss family over per-position distributions.
//
// Per-position functions return the loss together with its gradient with
// respect to the trainable model's log-probability row, treating each
// coordinate as a free variable. `logits_grad` then maps that gradient
// through log_softmax(z / tau) onto the logits.
//
// Batch-level functions average over masked positions (per token, not per
// sequence).
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deltakd/delta_target.hpp"
#include "deltakd/errors.hpp"
#include "deltakd/numerics.hpp"

namespace deltakd {

/// Weight of the supervised term in [0, 1].
class Lambda {
 public:
  explicit Lambda(double lam = 0.5) : lam_(lam) {
    if (!(lam >= 0.0 && lam <= 1.0)) throw DomainError("lambda must lie in [0, 1], got " + std::to_string(lam));
  }
  double value() const noexcept { return lam_; }

 private:
  double lam_;
};

struct LossBreakdown {
  double sft_term = 0.0;
  double kd_term = 0.0;
  double total = 0.0;
  std::size_t token_count = 0;
};

inline LossBreakdown total_loss(Lambda lam, double sft_term, double kd_term, std::size_t token_count = 0) {
  return {sft_term, kd_term, lam.value() * sft_term + (1.0 - lam.value()) * kd_term, token_count};
}

// ---------------------------------------------------------------------------
// Method selector

struct DistillMethod {
  enum class Kind : std::uint8_t { Sft, Fkl, Rkl, SeqKd, Delta, Variant };
  Kind kind = Kind::Delta;
  VariantId variant = VariantId::V1;  ///< used when kind == Variant

  bool operator==(const DistillMethod&) const = default;

  /// Methods whose distillation stage has a KD term computed from frozen rows.
  bool has_kd_term() const { return kind != Kind::Sft && kind != Kind::SeqKd; }
  bool needs_teacher_raw() const {
    if (kind == Kind::Delta) return true;
    if (kind != Kind::Variant) return false;
    const auto& s = variant_spec(variant);
    return s.kl_student == Role::LargeRaw || s.target_base == Role::LargeRaw || s.shift_minuend == Role::LargeRaw ||
           s.shift_subtrahend == Role::LargeRaw;
  }
  bool needs_teacher_ft() const { return has_kd_term(); }
  bool needs_student_raw() const { return kind == Kind::Delta || kind == Kind::Variant; }

  std::string name() const {
    switch (kind) {
      case Kind::Sft: return "sft";
      case Kind::Fkl: return "fkl";
      case Kind::Rkl: return "rkl";
      case Kind::SeqKd: return "seqkd";
      case Kind::Delta: return "delta";
      case Kind::Variant: return "v" + std::to_string(static_cast<int>(variant));
    }
    return "?";
  }

  static std::optional<DistillMethod> parse(std::string_view s) {
    if (s == "sft") return DistillMethod{Kind::Sft};
    if (s == "fkl") return DistillMethod{Kind::Fkl};
    if (s == "rkl") return DistillMethod{Kind::Rkl};
    if (s == "seqkd") return DistillMethod{Kind::SeqKd};
    if (s == "delta") return DistillMethod{Kind::Delta};
    if (auto v = parse_variant(s)) return DistillMethod{Kind::Variant, *v};
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Per-position objectives

struct PositionLoss {
  double value = 0.0;
  std::vector<double> grad;  ///< d(value)/d(trainable log-prob row)
};

inline PositionLoss sft_position(TokenId target, std::span<const double> logp) {
  PositionLoss out{cross_entropy(target, logp), std::vector<double>(logp.size(), 0.0)};
  out.grad[target] = -1.0;
  return out;
}

/// KL(teacher || student); gradient on the student.
inline PositionLoss fkl_position(std::span<const double> teacher, std::span<const double> student) {
  PositionLoss out{kl_divergence_log(teacher, student), std::vector<double>(student.size())};
  for (std::size_t i = 0; i < student.size(); ++i) out.grad[i] = -std::exp(teacher[i]);
  return out;
}

/// KL(student || teacher); gradient on the student.
inline PositionLoss rkl_position(std::span<const double> teacher, std::span<const double> student) {
  PositionLoss out{kl_divergence_log(student, teacher), std::vector<double>(student.size())};
  for (std::size_t i = 0; i < student.size(); ++i) {
    const double p = std::exp(student[i]);
    out.grad[i] = p == 0.0 ? 0.0 : p * (student[i] - teacher[i] + 1.0);
  }
  return out;
}

/// KL(synthetic target || student) with the target held constant.
inline PositionLoss delta_kd_position(const RoleQuad& quad, Alpha alpha) {
  const auto target = synth_target(quad, alpha);
  return fkl_position(target, quad.student_trainable);
}

/// KL(variant target || variant comparison row). The gradient collects every
/// appearance of the trainable role: comparison row, target base, or either
/// side of the shift.
inline PositionLoss parallel_position(const VariantSpec& spec, const RoleQuad& quad, Alpha alpha,
                                      bool allow_nontunable = false) {
  const auto pt = parallel_target(spec, quad, alpha, allow_nontunable);
  const std::size_t v = pt.target.size();
  PositionLoss out{kl_divergence_log(pt.target, pt.kl_student), std::vector<double>(v, 0.0)};
  const double a = alpha.value();
  for (std::size_t i = 0; i < v; ++i) {
    const double t = std::exp(pt.target[i]);
    // d/du_i of KL(normalize(u) || q) = t_i (log t_i - log q_i - KL).
    const double du = t == 0.0 ? 0.0 : t * (pt.target[i] - pt.kl_student[i] - out.value);
    double g = 0.0;
    if (spec.kl_student == Role::SmallTrainable) g += -t;
    if (spec.target_base == Role::SmallTrainable) g += du;
    if (spec.shift_minuend == Role::SmallTrainable) g += a * du;
    if (spec.shift_subtrahend == Role::SmallTrainable) g -= a * du;
    out.grad[i] = g;
  }
  return out;
}

/// Maps a log-probability gradient onto logits for logp = log_softmax(z / tau):
/// dz_j = (g_j - p_j * sum(g)) / tau.
inline std::vector<double> logits_grad(std::span<const double> grad_logp, std::span<const double> logp,
                                       Temperature tau) {
  double sum = 0.0;
  for (double g : grad_logp) sum += g;
  std::vector<double> dz(logp.size());
  for (std::size_t j = 0; j < logp.size(); ++j) dz[j] = (grad_logp[j] - std::exp(logp[j]) * sum) / tau.value();
  return dz;
}

// ---------------------------------------------------------------------------
// Batch-level losses over flattened positions.

using RowSet = std::vector<std::vector<double>>;

namespace detail {

inline void check_shapes(const RowSet& a, const RowSet& b, const std::vector<bool>& mask) {
  if (a.size() != b.size() || a.size() != mask.size()) {
    throw InputError("row sets and mask must have the same number of positions");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw InputError("row width mismatch at position " + std::to_string(i));
  }
}

template <class F>
double masked_mean(std::size_t n, const std::vector<bool>& mask, F&& f) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    sum += f(i);
    ++count;
  }
  if (count == 0) throw InputError("loss mask selects no positions");
  return sum / static_cast<double>(count);
}

}  // namespace detail

/// Mean cross-entropy over masked positions. `targets[i]` is the token that
/// position i predicts.
inline double sft_loss(const std::vector<TokenId>& targets, const RowSet& student, const std::vector<bool>& mask) {
  if (targets.size() != student.size() || mask.size() != student.size()) {
    throw InputError("targets, rows and mask must have the same number of positions");
  }
  return detail::masked_mean(student.size(), mask, [&](std::size_t i) { return cross_entropy(targets[i], student[i]); });
}

inline double fkl_loss(const RowSet& teacher, const RowSet& student, const std::vector<bool>& mask) {
  detail::check_shapes(teacher, student, mask);
  return detail::masked_mean(student.size(), mask,
                             [&](std::size_t i) { return kl_divergence_log(teacher[i], student[i]); });
}

inline double rkl_loss(const RowSet& teacher, const RowSet& student, const std::vector<bool>& mask) {
  detail::check_shapes(teacher, student, mask);
  return detail::masked_mean(student.size(), mask,
                             [&](std::size_t i) { return kl_divergence_log(student[i], teacher[i]); });
}

/// Frozen rows of the three fixed models at each position.
struct QuadRows {
  RowSet student_raw;
  RowSet teacher_raw;
  RowSet teacher_ft;

  RoleQuad at(std::size_t i, std::span<const double> trainable) const {
    return {student_raw[i], teacher_raw[i], teacher_ft[i], trainable};
  }
};

inline double delta_kd_loss(const QuadRows& quad, const RowSet& student, Alpha alpha, const std::vector<bool>& mask) {
  detail::check_shapes(quad.teacher_ft, student, mask);
  detail::check_shapes(quad.teacher_raw, student, mask);
  detail::check_shapes(quad.student_raw, student, mask);
  return detail::masked_mean(student.size(), mask, [&](std::size_t i) {
    const auto target = synth_target(quad.at(i, student[i]), alpha);
    return kl_divergence_log(target, student[i]);
  });
}

inline double parallel_loss(VariantId variant, const QuadRows& quad, const RowSet& student, Alpha alpha,
                            const std::vector<bool>& mask, bool allow_nontunable = false) {
  const auto& spec = variant_spec(variant);
  check_strict(spec, allow_nontunable);
  detail::check_shapes(quad.teacher_ft, student, mask);
  detail::check_shapes(quad.teacher_raw, student, mask);
  detail::check_shapes(quad.student_raw, student, mask);
  return detail::masked_mean(student.size(), mask, [&](std::size_t i) {
    const auto pt = parallel_target(spec, quad.at(i, student[i]), alpha, allow_nontunable);
    return kl_divergence_log(pt.target, pt.kl_student);
  });
}

}  // namespace deltakd
