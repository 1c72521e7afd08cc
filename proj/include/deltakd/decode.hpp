// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "deltakd/corpus.hpp"
#include "deltakd/trainer.hpp"

namespace deltakd {

struct DecodeResult {
  TokenSeq sequence;               ///< prompt followed by generated tokens
  std::vector<TokenId> generated;  ///< generated tokens, EOS excluded
  bool hit_eos = false;
  bool truncated = false;  ///< stopped by max_new or the context limit
};

/// Appends the argmax token (lowest id on ties) until EOS or `max_new`.
/// `logits(tokens)` returns the logits of every position of `tokens`.
template <class LogitsFn>
DecodeResult greedy_decode_with(LogitsFn&& logits, std::size_t vocab, std::size_t context_limit,
                                const TokenSeq& prompt, std::size_t max_new) {
  if (prompt.tokens.empty()) throw InputError("greedy_decode needs a non-empty prompt");
  if (prompt.size() > context_limit) throw InputError("prompt exceeds the context limit");
  DecodeResult out;
  out.sequence = prompt;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (out.sequence.size() >= context_limit) {
      out.truncated = true;
      return out;
    }
    const auto z = logits(std::span<const TokenId>(out.sequence.tokens));
    const auto* row = z.data() + (out.sequence.size() - 1) * vocab;
    TokenId best = 0;
    for (TokenId j = 1; j < vocab; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out.sequence.tokens.push_back(best);
    if (best == Vocab::kEos) {
      out.hit_eos = true;
      return out;
    }
    out.generated.push_back(best);
  }
  out.truncated = true;
  return out;
}

template <LanguageModel M>
DecodeResult greedy_decode(const M& model, const TokenSeq& prompt, std::size_t max_new) {
  return greedy_decode_with([&model](std::span<const TokenId> t) { return model.forward(t).logits; },
                            model.vocab_size(), model.context_limit(), prompt, max_new);
}

}  // namespace deltakd
