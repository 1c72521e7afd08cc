// SPDX-License-Identifier: Apache-2.0
//
// Model-agnostic gradient accumulation and optimizer steps. A model provides
// forward(tokens) -> Cache with per-position logits, backward(cache,
// dlogits, grad) and params(); NeuralLM and TabularLM both qualify.
#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <sstream>
#include <vector>

#include "deltakd/corpus.hpp"
#include "deltakd/losses.hpp"
#include "deltakd/optimizer.hpp"

namespace deltakd {

template <class M>
concept LanguageModel = requires(M m, const M cm, std::span<const TokenId> toks) {
  typename M::Scalar;
  typename M::Cache;
  { cm.vocab_size() } -> std::convertible_to<std::size_t>;
  { cm.context_limit() } -> std::convertible_to<std::size_t>;
  { cm.forward(toks) } -> std::same_as<typename M::Cache>;
  m.params();
};

/// Loss sums of one sequence. The callback fills `dlogits` with the gradient
/// of lambda * sft_sum + (1 - lambda) * kd_sum with respect to the logits.
struct SequenceLoss {
  double sft_sum = 0.0;
  double kd_sum = 0.0;
  std::size_t count = 0;
};

template <class M>
using SequenceLossFn = std::function<SequenceLoss(std::size_t index, const TokenSeq& seq,
                                                  const typename M::Cache& cache,
                                                  std::span<typename M::Scalar> dlogits)>;

/// Supervised next-token loss over the scored positions of a sequence at
/// temperature `tau`. `lam` weights its gradient; pure SFT passes 1.
template <class T>
SequenceLoss sft_sequence_loss(const TokenSeq& seq, std::span<const T> logits, std::size_t vocab, std::span<T> dlogits,
                               double weight = 1.0, Temperature tau = Temperature{}) {
  SequenceLoss out;
  std::vector<double> row(vocab);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq.scored(t)) continue;
    for (std::size_t j = 0; j < vocab; ++j) row[j] = static_cast<double>(logits[t * vocab + j]);
    const auto lp = log_softmax(row, tau);
    const auto target = seq.tokens[t + 1];
    out.sft_sum += -lp[target];
    ++out.count;
    if (weight != 0.0) {
      for (std::size_t j = 0; j < vocab; ++j) {
        const double g = (std::exp(lp[j]) - (j == target ? 1.0 : 0.0)) / tau.value();
        dlogits[t * vocab + j] += static_cast<T>(weight * g);
      }
    }
  }
  return out;
}

template <LanguageModel M>
SequenceLossFn<M> sft_loss_fn() {
  return [](std::size_t, const TokenSeq& seq, const typename M::Cache& cache,
            std::span<typename M::Scalar> dlogits) {
    const std::size_t vocab = dlogits.size() / seq.size();
    return sft_sequence_loss<typename M::Scalar>(seq, cache.logits, vocab, dlogits);
  };
}

/// Forward + backward over a batch, accumulating the gradient of the
/// per-token mean loss into `grad` (which is overwritten).
template <LanguageModel M>
LossBreakdown compute_gradients(const M& model, std::span<const TokenSeq> batch, const SequenceLossFn<M>& loss_fn,
                                Lambda lam, std::span<typename M::Scalar> grad) {
  using T = typename M::Scalar;
  if (batch.empty()) throw InputError("empty training batch");
  std::size_t total = 0;
  for (const auto& s : batch) total += s.target_count();
  if (total == 0) throw InputError("batch has no supervised positions");
  std::fill(grad.begin(), grad.end(), T(0));
  const double inv = 1.0 / static_cast<double>(total);
  double sft = 0.0, kd = 0.0;
  std::vector<T> dlogits;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& seq = batch[i];
    const auto cache = model.forward(seq.tokens);
    dlogits.assign(seq.size() * model.vocab_size(), T(0));
    const SequenceLoss part = loss_fn(i, seq, cache, dlogits);
    sft += part.sft_sum;
    kd += part.kd_sum;
    for (auto& d : dlogits) d = static_cast<T>(static_cast<double>(d) * inv);
    model.backward(cache, dlogits, grad);
  }
  return total_loss(lam, sft * inv, kd * inv, total);
}

/// Loss only, no gradient.
template <LanguageModel M>
LossBreakdown evaluate_loss(const M& model, std::span<const TokenSeq> batch, const SequenceLossFn<M>& loss_fn,
                            Lambda lam) {
  using T = typename M::Scalar;
  std::size_t total = 0;
  for (const auto& s : batch) total += s.target_count();
  if (total == 0) throw InputError("batch has no supervised positions");
  double sft = 0.0, kd = 0.0;
  std::vector<T> scratch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto cache = model.forward(batch[i].tokens);
    scratch.assign(batch[i].size() * model.vocab_size(), T(0));
    const SequenceLoss part = loss_fn(i, batch[i], cache, scratch);
    sft += part.sft_sum;
    kd += part.kd_sum;
  }
  const double inv = 1.0 / static_cast<double>(total);
  return total_loss(lam, sft * inv, kd * inv, total);
}

struct StepResult {
  LossBreakdown loss;
  double grad_norm = 0.0;
};

template <LanguageModel M>
class Trainer {
 public:
  using T = typename M::Scalar;

  Trainer(M& model, AdamConfig cfg) : model_(model), opt_(model.params().size(), cfg), grad_(model.params().size()) {}

  StepResult train_step(std::span<const TokenSeq> batch, const SequenceLossFn<M>& loss_fn, Lambda lam) {
    StepResult r;
    r.loss = compute_gradients(model_, batch, loss_fn, lam, grad_);
    r.grad_norm = global_norm(std::span<const T>(grad_));
    if (!std::isfinite(r.loss.total) || !std::isfinite(r.grad_norm)) {
      std::ostringstream os;
      os << "non-finite loss at optimizer step " << opt_.steps() << ": sft=" << r.loss.sft_term
         << " kd=" << r.loss.kd_term << " total=" << r.loss.total << " grad_norm=" << r.grad_norm
         << " tokens=" << r.loss.token_count;
      throw TrainingError(os.str());
    }
    opt_.step(model_.params(), grad_, r.grad_norm);
    return r;
  }

  const std::vector<T>& last_gradient() const noexcept { return grad_; }
  Adam<T>& optimizer() noexcept { return opt_; }

 private:
  M& model_;
  Adam<T> opt_;
  std::vector<T> grad_;
};

}  // namespace deltakd
