// SPDX-License-Identifier: Apache-2.0
//
// Sequence-level loss callback for the distillation stage. Frozen models are
// represented only by their logits at every position of the sequence, so the
// same callback serves local and remote teachers.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "deltakd/losses.hpp"
#include "deltakd/trainer.hpp"

namespace deltakd {

/// Logits [n x V] of the frozen roles for one sequence. Roles a method does
/// not need stay empty.
struct FrozenLogits {
  std::vector<float> student_raw;
  std::vector<float> teacher_raw;
  std::vector<float> teacher_ft;
};

struct KdOptions {
  DistillMethod method;
  Alpha alpha{1.0};
  Lambda lambda{0.5};
  Temperature tau{};
  bool scale_tau_squared = false;
  bool allow_nontunable = false;

  /// SFT and SeqKD train on the supervised term only.
  double effective_lambda() const { return method.has_kd_term() ? lambda.value() : 1.0; }
};

namespace detail {

inline std::vector<double> frozen_row(const std::vector<float>& logits, std::size_t t, std::size_t vocab,
                                      Temperature tau, const char* role) {
  if (logits.size() < (t + 1) * vocab) throw InputError(std::string("missing frozen logits for ") + role);
  std::vector<double> z(vocab);
  for (std::size_t j = 0; j < vocab; ++j) z[j] = static_cast<double>(logits[t * vocab + j]);
  return log_softmax(z, tau);
}

}  // namespace detail

/// Loss sums of one sequence under `opt`; accumulates the gradient of
/// lam * sft + (1 - lam) * kd into `dlogits`.
template <class T>
SequenceLoss distill_sequence_loss(const KdOptions& opt, const TokenSeq& seq, std::span<const T> logits,
                                   std::size_t vocab, const FrozenLogits& frozen, std::span<T> dlogits) {
  const double lam = opt.effective_lambda();
  SequenceLoss out = sft_sequence_loss<T>(seq, logits, vocab, dlogits, lam);
  if (!opt.method.has_kd_term()) return out;

  const double kd_weight = 1.0 - lam;
  const double tau_factor = opt.scale_tau_squared ? opt.tau.value() * opt.tau.value() : 1.0;
  const auto kind = opt.method.kind;
  const VariantSpec* spec = kind == DistillMethod::Kind::Variant ? &variant_spec(opt.method.variant) : nullptr;
  if (spec) check_strict(*spec, opt.allow_nontunable);

  std::vector<double> z(vocab);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq.scored(t)) continue;
    for (std::size_t j = 0; j < vocab; ++j) z[j] = static_cast<double>(logits[t * vocab + j]);
    const auto student = log_softmax(z, opt.tau);
    const auto ft = detail::frozen_row(frozen.teacher_ft, t, vocab, opt.tau, "teacher_ft");

    PositionLoss pl;
    if (kind == DistillMethod::Kind::Fkl) {
      pl = fkl_position(ft, student);
    } else if (kind == DistillMethod::Kind::Rkl) {
      pl = rkl_position(ft, student);
    } else {
      const auto sraw = detail::frozen_row(frozen.student_raw, t, vocab, opt.tau, "student_raw");
      const auto traw = detail::frozen_row(frozen.teacher_raw, t, vocab, opt.tau, "teacher_raw");
      const RoleQuad quad{sraw, traw, ft, student};
      pl = spec ? parallel_position(*spec, quad, opt.alpha, opt.allow_nontunable)
                : delta_kd_position(quad, opt.alpha);
    }
    out.kd_sum += tau_factor * pl.value;
    if (kd_weight != 0.0) {
      const auto dz = logits_grad(pl.grad, student, opt.tau);
      for (std::size_t j = 0; j < vocab; ++j) dlogits[t * vocab + j] += static_cast<T>(kd_weight * tau_factor * dz[j]);
    }
  }
  return out;
}

/// Adapts distill_sequence_loss to the trainer. `frozen(i)` supplies the
/// frozen logits of batch entry i.
template <LanguageModel M>
SequenceLossFn<M> distill_loss_fn(KdOptions opt, std::function<const FrozenLogits&(std::size_t)> frozen) {
  return [opt, frozen = std::move(frozen)](std::size_t i, const TokenSeq& seq, const typename M::Cache& cache,
                                           std::span<typename M::Scalar> dlogits) {
    const std::size_t vocab = dlogits.size() / seq.size();
    return distill_sequence_loss<typename M::Scalar>(opt, seq, cache.logits, vocab, frozen(i), dlogits);
  };
}

}  // namespace deltakd
