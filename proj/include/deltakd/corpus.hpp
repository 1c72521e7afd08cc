// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpora, the tab-separated corpus file format and tokenized
// training sequences.
#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/random.hpp"
#include "deltakd/vocab.hpp"

namespace deltakd {

enum class Split : std::uint8_t { Train, Test };

struct Example {
  std::string prompt;  ///< empty for plain pretraining text
  std::string response;
  Split split = Split::Train;

  bool operator==(const Example&) const = default;
};

/// A tokenized sequence. Layout is BOS prompt SEP response EOS, or
/// BOS response EOS when the prompt is empty. `prompt_len` counts every
/// token before the first supervised one.
struct TokenSeq {
  std::vector<TokenId> tokens;
  std::size_t prompt_len = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  /// Number of supervised next-token targets.
  std::size_t target_count() const noexcept { return tokens.size() - prompt_len; }
  /// True when the logits at position t are scored (they predict tokens[t+1]).
  bool scored(std::size_t t) const noexcept { return t + 1 >= prompt_len && t + 1 < tokens.size(); }
};

inline TokenSeq encode_example(const Vocab& vocab, const Example& ex) {
  TokenSeq seq;
  seq.tokens.push_back(Vocab::kBos);
  if (!ex.prompt.empty()) {
    const auto p = vocab.tokenize(ex.prompt);
    seq.tokens.insert(seq.tokens.end(), p.begin(), p.end());
    seq.tokens.push_back(Vocab::kSep);
  }
  seq.prompt_len = seq.tokens.size();
  const auto r = vocab.tokenize(ex.response);
  seq.tokens.insert(seq.tokens.end(), r.begin(), r.end());
  seq.tokens.push_back(Vocab::kEos);
  return seq;
}

/// Prompt part only (BOS prompt SEP), the decoding input.
inline TokenSeq encode_prompt(const Vocab& vocab, std::string_view prompt) {
  TokenSeq seq;
  seq.tokens.push_back(Vocab::kBos);
  const auto p = vocab.tokenize(prompt);
  seq.tokens.insert(seq.tokens.end(), p.begin(), p.end());
  seq.tokens.push_back(Vocab::kSep);
  seq.prompt_len = seq.tokens.size();
  return seq;
}

// ---------------------------------------------------------------------------
// Generators

struct TaskMix {
  double reverse = 1.0;
  double sort = 1.0;
  double pattern = 1.0;
};

/// Flat description from which a corpus regenerates byte-identically.
struct CorpusManifest {
  std::string generator;  ///< "pretrain" or "sft"
  std::uint64_t seed = 0;
  std::size_t size = 0;       ///< examples requested (train + test for sft)
  std::size_t test_size = 0;  ///< sft only
  TaskMix mix;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  std::uint64_t vocab_hash = 0;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "generator = " << generator << "\nseed = " << seed << "\nsize = " << size << "\ntest_size = " << test_size
       << "\nmix_reverse = " << mix.reverse << "\nmix_sort = " << mix.sort << "\nmix_pattern = " << mix.pattern
       << "\ntrain_count = " << train_count << "\ntest_count = " << test_count << "\nvocab_hash = " << vocab_hash
       << '\n';
    return os.str();
  }

  static CorpusManifest parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const char* k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw InputError(std::string("manifest missing key ") + k);
      return it->second;
    };
    CorpusManifest m;
    try {
      m.generator = get("generator");
      m.seed = std::stoull(get("seed"));
      m.size = std::stoull(get("size"));
      m.test_size = std::stoull(get("test_size"));
      m.mix = {std::stod(get("mix_reverse")), std::stod(get("mix_sort")), std::stod(get("mix_pattern"))};
      m.train_count = std::stoull(get("train_count"));
      m.test_count = std::stoull(get("test_count"));
      m.vocab_hash = std::stoull(get("vocab_hash"));
    } catch (const std::logic_error& e) {
      throw InputError(std::string("malformed manifest value: ") + e.what());
    }
    return m;
  }
};

struct Corpus {
  std::vector<Example> examples;
  CorpusManifest manifest;

  std::vector<Example> split(Split s) const {
    std::vector<Example> out;
    for (const auto& e : examples)
      if (e.split == s) out.push_back(e);
    return out;
  }
};

namespace detail {

inline constexpr std::array<std::string_view, 4> kDeterminers{"the", "a", "one", "every"};
inline constexpr std::array<std::string_view, 8> kAdjectives{"big", "small", "red", "old",
                                                             "quick", "lazy", "happy", "tall"};
inline constexpr std::array<std::string_view, 10> kNouns{"dog", "cat", "bird", "fox", "man",
                                                         "tree", "house", "river", "girl", "boat"};
inline constexpr std::array<std::string_view, 8> kVerbs{"sees", "likes", "finds", "chases",
                                                        "eats", "helps", "hears", "takes"};
inline constexpr std::array<std::string_view, 4> kPrepositions{"near", "under", "over", "with"};
inline constexpr std::string_view kTaskLetters = "abcdefghij";

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[uniform_index(rng, N)];
}

inline std::string noun_phrase(Rng& rng) {
  std::string s(pick(rng, kDeterminers));
  if (uniform_unit(rng) < 0.5) {
    s += ' ';
    s += pick(rng, kAdjectives);
  }
  s += ' ';
  s += pick(rng, kNouns);
  return s;
}

inline std::string letter_list(Rng& rng, std::size_t n, bool sorted) {
  std::string letters;
  for (std::size_t i = 0; i < n; ++i) letters += static_cast<char>('a' + uniform_index(rng, 8));
  if (sorted) std::sort(letters.begin(), letters.end());
  std::string s;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i) s += ' ';
    s += letters[i];
  }
  return s;
}

/// Sentence from a small probabilistic grammar.
inline std::string pretrain_sentence(Rng& rng) {
  const double r = uniform_unit(rng);
  if (r < 0.7) {
    std::string s = noun_phrase(rng);
    s += ' ';
    s += pick(rng, kVerbs);
    s += ' ';
    s += noun_phrase(rng);
    if (uniform_unit(rng) < 0.3) {
      s += ' ';
      s += pick(rng, kPrepositions);
      s += ' ';
      s += noun_phrase(rng);
    }
    return s + ".";
  }
  if (r < 0.85) return "letters: " + letter_list(rng, 3 + uniform_index(rng, 4), false) + ".";
  return "order: " + letter_list(rng, 3 + uniform_index(rng, 4), true) + ".";
}

inline std::string join_letters(const std::string& letters) {
  std::string s;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i) s += ' ';
    s += letters[i];
  }
  return s;
}

/// Distinct letters drawn without replacement from the task alphabet.
inline std::string distinct_letters(Rng& rng, std::size_t n) {
  std::string pool(kTaskLetters);
  shuffle_in_place(pool, rng);
  return pool.substr(0, n);
}

inline Example sft_example(Rng& rng, const TaskMix& mix) {
  const std::array<double, 3> w{mix.reverse, mix.sort, mix.pattern};
  const auto task = weighted_index(rng, w);
  Example ex;
  if (task == 0) {
    const auto letters = distinct_letters(rng, 3 + uniform_index(rng, 4));
    ex.prompt = "rev: " + join_letters(letters);
    ex.response = join_letters(std::string(letters.rbegin(), letters.rend()));
  } else if (task == 1) {
    auto letters = distinct_letters(rng, 3 + uniform_index(rng, 4));
    ex.prompt = "sort: " + join_letters(letters);
    std::sort(letters.begin(), letters.end());
    ex.response = join_letters(letters);
  } else {
    const auto period = distinct_letters(rng, 2 + uniform_index(rng, 2));
    ex.prompt = "cont: " + join_letters(period + period);
    ex.response = join_letters(period);
  }
  return ex;
}

}  // namespace detail

inline Corpus generate_pretrain_corpus(std::uint64_t seed, std::size_t size, const Vocab& vocab = Vocab{}) {
  if (size == 0) throw InputError("pretrain corpus size must be >= 1");
  Rng rng(seed);
  Corpus c;
  c.examples.reserve(size);
  for (std::size_t i = 0; i < size; ++i) c.examples.push_back({"", detail::pretrain_sentence(rng), Split::Train});
  c.manifest = {"pretrain", seed, size, 0, TaskMix{}, size, 0, vocab.fingerprint()};
  return c;
}

/// Instruction corpus. Prompts are unique across the whole corpus, so the
/// train and test splits never share a prompt.
inline Corpus generate_sft_corpus(std::uint64_t seed, std::size_t size, std::size_t test_size,
                                  const TaskMix& mix = TaskMix{}, const Vocab& vocab = Vocab{}) {
  if (!(mix.reverse >= 0 && mix.sort >= 0 && mix.pattern >= 0) || mix.reverse + mix.sort + mix.pattern <= 0) {
    throw InputError("task_mix weights must be >= 0 with a positive sum");
  }
  if (test_size > size) throw InputError("test_size exceeds corpus size");
  Rng rng(seed);
  std::set<std::string> seen;
  std::vector<Example> pool;
  std::size_t attempts = 0;
  while (pool.size() < size) {
    if (++attempts > 100 * size + 1000) throw InputError("task space too small for requested corpus size");
    auto ex = detail::sft_example(rng, mix);
    if (seen.insert(ex.prompt).second) pool.push_back(std::move(ex));
  }
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i].split = i < test_size ? Split::Test : Split::Train;
  Corpus c;
  c.examples = std::move(pool);
  c.manifest = {"sft", seed, size, test_size, mix, size - test_size, test_size, vocab.fingerprint()};
  return c;
}

inline Corpus regenerate(const CorpusManifest& m, const Vocab& vocab = Vocab{}) {
  if (m.vocab_hash != vocab.fingerprint()) throw InputError("manifest vocab hash does not match vocabulary");
  if (m.generator == "pretrain") return generate_pretrain_corpus(m.seed, m.size, vocab);
  if (m.generator == "sft") return generate_sft_corpus(m.seed, m.size, m.test_size, m.mix, vocab);
  throw InputError("unknown corpus generator '" + m.generator + "'");
}

// ---------------------------------------------------------------------------
// File format: one example per line, prompt TAB response, UTF-8.

inline std::string format_examples(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& e : examples) {
    out += e.prompt;
    out += '\t';
    out += e.response;
    out += '\n';
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << text;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_examples(const std::filesystem::path& path, const std::vector<Example>& examples) {
  write_text_file(path, format_examples(examples));
}

/// Parses and validates a corpus file against `vocab`; `context_limit` bounds
/// the encoded length when non-zero.
inline std::vector<Example> parse_examples(const std::string& text, const Vocab& vocab, Split split = Split::Train,
                                           std::size_t context_limit = 0) {
  std::vector<Example> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw InputError("line " + std::to_string(line_no) + ": expected exactly one tab separator");
    }
    Example ex{line.substr(0, tab), line.substr(tab + 1), split};
    if (ex.response.empty()) throw InputError("line " + std::to_string(line_no) + ": empty response");
    try {
      const auto seq = encode_example(vocab, ex);
      if (context_limit && seq.size() > context_limit) {
        throw InputError("encoded length " + std::to_string(seq.size()) + " exceeds context limit");
      }
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<Example> read_examples(const std::filesystem::path& path, const Vocab& vocab,
                                          Split split = Split::Train, std::size_t context_limit = 0) {
  return parse_examples(read_text_file(path), vocab, split, context_limit);
}

}  // namespace deltakd
