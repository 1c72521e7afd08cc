// SPDX-License-Identifier: Apache-2.0
//
// Bigram model whose parameters are a [vocab x vocab] logit table indexed by
// the current token. Fitting sets the table to add-1 smoothed log count
// ratios; the table is also trainable through the same forward/backward
// contract as the neural model.
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/numerics.hpp"

namespace deltakd {

template <class T>
class TabularLM {
 public:
  using Scalar = T;

  struct Cache {
    std::vector<TokenId> tokens;
    std::vector<T> logits;
    std::size_t length = 0;

    std::span<const T> row(std::size_t t, std::size_t vocab) const {
      return std::span<const T>(logits).subspan(t * vocab, vocab);
    }
  };

  static constexpr std::size_t kContextLimit = 1u << 20;

  explicit TabularLM(std::size_t vocab) : vocab_(vocab), table_(vocab * vocab, T(0)) {
    if (vocab < 2) throw InputError("tabular model needs vocab >= 2");
  }
  TabularLM(std::size_t vocab, std::vector<T> table) : vocab_(vocab), table_(std::move(table)) {
    if (vocab < 2 || table_.size() != vocab * vocab) throw SnapshotError("tabular table size mismatch");
  }

  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t context_limit() const noexcept { return kContextLimit; }
  std::span<T> params() noexcept { return table_; }
  std::span<const T> params() const noexcept { return table_; }

  std::span<const T> logits_for(TokenId context) const {
    return std::span<const T>(table_).subspan(std::size_t(context) * vocab_, vocab_);
  }

  Cache forward(std::span<const TokenId> tokens) const {
    if (tokens.empty()) throw InputError("forward on an empty sequence");
    Cache c;
    c.tokens.assign(tokens.begin(), tokens.end());
    c.length = tokens.size();
    c.logits.reserve(c.length * vocab_);
    for (TokenId t : tokens) {
      if (t >= vocab_) throw InputError("token id " + std::to_string(t) + " outside vocabulary");
      const auto row = logits_for(t);
      c.logits.insert(c.logits.end(), row.begin(), row.end());
    }
    return c;
  }

  void backward(const Cache& c, std::span<const T> dlogits, std::span<T> grad) const {
    if (dlogits.size() != c.length * vocab_ || grad.size() != table_.size()) {
      throw DomainError("tabular backward shape mismatch");
    }
    for (std::size_t t = 0; t < c.length; ++t) {
      T* g = grad.data() + std::size_t(c.tokens[t]) * vocab_;
      for (std::size_t j = 0; j < vocab_; ++j) g[j] += dlogits[t * vocab_ + j];
    }
  }

 private:
  std::size_t vocab_;
  std::vector<T> table_;
};

/// Add-1 smoothed bigram counts over consecutive tokens of every sequence.
/// logits[c][j] = log((count(c, j) + 1) / (count(c) + V)).
template <class T = double>
TabularLM<T> fit_tabular(std::span<const std::vector<TokenId>> sequences, std::size_t vocab) {
  if (sequences.empty()) throw InputError("fit_tabular on an empty corpus");
  std::vector<double> counts(vocab * vocab, 0.0), totals(vocab, 0.0);
  for (const auto& s : sequences) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i] >= vocab || s[i + 1] >= vocab) throw InputError("token outside vocabulary in fit_tabular");
      counts[s[i] * vocab + s[i + 1]] += 1.0;
      totals[s[i]] += 1.0;
    }
  }
  std::vector<T> table(vocab * vocab);
  for (std::size_t c = 0; c < vocab; ++c) {
    const double denom = totals[c] + static_cast<double>(vocab);
    for (std::size_t j = 0; j < vocab; ++j) {
      table[c * vocab + j] = static_cast<T>(std::log((counts[c * vocab + j] + 1.0) / denom));
    }
  }
  return TabularLM<T>(vocab, std::move(table));
}

}  // namespace deltakd
