// SPDX-License-Identifier: Apache-2.0
//
// ROUGE-1, ROUGE-2 and ROUGE-L with F at beta = 1.
//
// Tokenisation is pinned: lowercase, split on whitespace runs, strip leading
// and trailing ASCII punctuation from each token, drop tokens that become
// empty. No stemming, no stopwords, no sentence splitting.
#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace deltakd {

struct RougePrf {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

struct RougeScores {
  RougePrf rouge1, rouge2, rougeL;
};

inline std::vector<std::string> rouge_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

inline RougePrf prf(double overlap, std::size_t cand, std::size_t ref) {
  RougePrf r;
  if (cand == 0 || ref == 0) return r;
  r.precision = overlap / static_cast<double>(cand);
  r.recall = overlap / static_cast<double>(ref);
  r.f = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// Clipped n-gram overlap.
inline RougePrf rouge_n_tokens(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                               std::size_t n) {
  auto grams = [n](const std::vector<std::string>& t) {
    std::map<std::vector<std::string>, std::size_t> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++m[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
    return m;
  };
  const auto gc = grams(cand), gr = grams(ref);
  std::size_t overlap = 0;
  for (const auto& [g, c] : gc) {
    auto it = gr.find(g);
    if (it != gr.end()) overlap += std::min(c, it->second);
  }
  const std::size_t nc = cand.size() >= n ? cand.size() - n + 1 : 0;
  const std::size_t nr = ref.size() >= n ? ref.size() - n + 1 : 0;
  return prf(static_cast<double>(overlap), nc, nr);
}

inline RougePrf rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
  return rouge_n_tokens(rouge_tokenize(candidate), rouge_tokenize(reference), n);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougePrf rouge_l_tokens(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  return prf(static_cast<double>(lcs_length(cand, ref)), cand.size(), ref.size());
}

inline RougePrf rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l_tokens(rouge_tokenize(candidate), rouge_tokenize(reference));
}

inline RougeScores rouge_all(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokenize(candidate), r = rouge_tokenize(reference);
  return {rouge_n_tokens(c, r, 1), rouge_n_tokens(c, r, 2), rouge_l_tokens(c, r)};
}

}  // namespace deltakd
