// SPDX-License-Identifier: Apache-2.0
//
// Held-out evaluation: greedy decoding scored with ROUGE, plus response
// cross-entropy under teacher forcing.
#pragma once

#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "deltakd/corpus.hpp"
#include "deltakd/decode.hpp"
#include "deltakd/rouge.hpp"
#include "deltakd/trainer.hpp"

namespace deltakd {

struct EvalRecord {
  std::size_t id = 0;  ///< index into the evaluated test set
  std::string prompt;
  std::string candidate;
  std::string reference;
  RougeScores scores;
  bool flagged = false;  ///< decoding failed; scored 0
  std::string note;
};

struct EvalReport {
  std::string label;
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;  ///< unweighted F means
  double heldout_ce = 0.0;                          ///< mean response cross-entropy, nats/token; NaN when unknown
  std::size_t flagged = 0;
  std::vector<EvalRecord> records;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "label = " << label << "\nexamples = " << records.size() << "\nflagged = " << flagged
       << "\nrouge1_f = " << rouge1 << "\nrouge2_f = " << rouge2 << "\nrougeL_f = " << rougeL
       << "\nheldout_ce = " << heldout_ce << "\n\n# id\trouge1_f\trouge2_f\trougeL_f\tflag\tprompt\tcandidate\treference\n";
    for (const auto& r : records) {
      os << r.id << '\t' << r.scores.rouge1.f << '\t' << r.scores.rouge2.f << '\t' << r.scores.rougeL.f << '\t'
         << (r.flagged ? "flagged:" + r.note : std::string("ok")) << '\t' << r.prompt << '\t' << r.candidate << '\t'
         << r.reference << '\n';
    }
    return os.str();
  }

  void write(const std::filesystem::path& path) const { write_text_file(path, to_text()); }
};

/// Text of generated tokens; reserved tokens render as spaces so they act as
/// word boundaries.
inline std::string render_generated(const Vocab& vocab, std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) out += t < Vocab::kReserved ? std::string(" ") : vocab.detokenize(std::span(&t, 1));
  return out;
}

/// Greedy-decodes every prompt through `logits` and scores it against its
/// reference. A failing example scores 0, is flagged, and the run continues.
template <class LogitsFn>
EvalReport evaluate_with(LogitsFn&& logits, std::size_t model_vocab, std::size_t context_limit, const Vocab& vocab,
                         const std::vector<Example>& test_set, std::size_t max_new) {
  if (test_set.empty()) throw InputError("evaluation needs a non-empty test set");
  EvalReport rep;
  rep.heldout_ce = std::numeric_limits<double>::quiet_NaN();
  rep.records.reserve(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    EvalRecord rec;
    rec.id = i;
    rec.prompt = test_set[i].prompt;
    rec.reference = test_set[i].response;
    try {
      const auto prompt = encode_prompt(vocab, rec.prompt);
      const auto res = greedy_decode_with(logits, model_vocab, context_limit, prompt, max_new);
      rec.candidate = render_generated(vocab, res.generated);
      rec.scores = rouge_all(rec.candidate, rec.reference);
    } catch (const std::exception& e) {
      rec.flagged = true;
      rec.note = e.what();
      rec.scores = {};
      ++rep.flagged;
    }
    rep.rouge1 += rec.scores.rouge1.f;
    rep.rouge2 += rec.scores.rouge2.f;
    rep.rougeL += rec.scores.rougeL.f;
    rep.records.push_back(std::move(rec));
  }
  const double n = static_cast<double>(test_set.size());
  rep.rouge1 /= n;
  rep.rouge2 /= n;
  rep.rougeL /= n;
  return rep;
}

/// Mean per-token cross-entropy of the responses (EOS included).
template <LanguageModel M>
double heldout_response_ce(const M& model, const Vocab& vocab, const std::vector<Example>& test_set) {
  if (test_set.empty()) throw InputError("evaluation needs a non-empty test set");
  std::vector<TokenSeq> seqs;
  seqs.reserve(test_set.size());
  for (const auto& e : test_set) seqs.push_back(encode_example(vocab, e));
  return evaluate_loss(model, std::span<const TokenSeq>(seqs), sft_loss_fn<M>(), Lambda{1.0}).sft_term;
}

/// Same quantity through a logits callback (e.g. a remote endpoint).
template <class LogitsFn>
double heldout_response_ce_with(LogitsFn&& logits, std::size_t model_vocab, const Vocab& vocab,
                                const std::vector<Example>& test_set) {
  double sum = 0.0;
  std::size_t n = 0;
  std::vector<double> row(model_vocab);
  for (const auto& e : test_set) {
    const auto seq = encode_example(vocab, e);
    const auto z = logits(std::span<const TokenId>(seq.tokens));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (!seq.scored(t)) continue;
      for (std::size_t j = 0; j < model_vocab; ++j) row[j] = static_cast<double>(z[t * model_vocab + j]);
      sum -= log_softmax(row)[seq.tokens[t + 1]];
      ++n;
    }
  }
  if (n == 0) throw InputError("evaluation needs a non-empty test set");
  return sum / static_cast<double>(n);
}

/// ROUGE and held-out cross-entropy of a local model.
template <LanguageModel M>
EvalReport evaluate_model(const M& model, const Vocab& vocab, const std::vector<Example>& test_set,
                          std::size_t max_new, std::string label = {}) {
  auto rep = evaluate_with([&model](std::span<const TokenId> t) { return model.forward(t).logits; },
                           model.vocab_size(), model.context_limit(), vocab, test_set, max_new);
  rep.heldout_ce = heldout_response_ce(model, vocab, test_set);
  rep.label = std::move(label);
  return rep;
}

}  // namespace deltakd
