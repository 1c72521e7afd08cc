// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/random.hpp"
#include "deltakd/trainer.hpp"

namespace deltakd {

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
};

inline constexpr std::size_t kGradCheckMaxParams = 10000;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Checks `analytic` against central differences of `loss` at `sample_count`
/// distinct randomly chosen coordinates of `params` (restored afterwards).
inline GradCheckReport grad_check_fn(std::span<double> params, const std::function<double()>& loss,
                                     std::span<const double> analytic, std::size_t sample_count, double epsilon,
                                     std::uint64_t seed = 0) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DomainError("grad_check epsilon must be > 0");
  if (params.size() > kGradCheckMaxParams) {
    throw DomainError("grad_check limited to " + std::to_string(kGradCheckMaxParams) + " parameters");
  }
  if (analytic.size() != params.size()) throw DomainError("analytic gradient size mismatch");
  std::vector<std::size_t> idx(params.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle_in_place(idx, rng);
  idx.resize(std::min(sample_count, idx.size()));

  GradCheckReport report;
  for (auto i : idx) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = loss();
    params[i] = saved - epsilon;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    GradCheckEntry e{i, analytic[i], numeric, relative_error(analytic[i], numeric)};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.mean_rel_error += e.rel_error;
    report.entries.push_back(e);
  }
  if (!report.entries.empty()) report.mean_rel_error /= static_cast<double>(report.entries.size());
  return report;
}

/// Gradient check of the lambda-mixed batch loss of a double-precision model.
template <LanguageModel M>
  requires std::same_as<typename M::Scalar, double>
GradCheckReport grad_check(M& model, std::span<const TokenSeq> batch, const SequenceLossFn<M>& loss_fn, Lambda lam,
                           std::size_t sample_count, double epsilon, std::uint64_t seed = 0) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DomainError("grad_check epsilon must be > 0");
  if (model.params().size() > kGradCheckMaxParams) {
    throw DomainError("grad_check limited to " + std::to_string(kGradCheckMaxParams) + " parameters");
  }
  std::vector<double> grad(model.params().size());
  compute_gradients(model, batch, loss_fn, lam, grad);
  auto value = [&] { return evaluate_loss(model, batch, loss_fn, lam).total; };
  return grad_check_fn(model.params(), value, grad, sample_count, epsilon, seed);
}

}  // namespace deltakd
