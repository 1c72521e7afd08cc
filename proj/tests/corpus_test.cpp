// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <set>

#include "deltakd/corpus.hpp"
#include "deltakd/numerics.hpp"

using namespace deltakd;

TEST(Vocab, DefaultSizeAndReservedIds) {
  const Vocab v;
  EXPECT_EQ(v.size(), 64u);
  EXPECT_LT(Vocab::kSep, v.size());
  for (char c : v.inventory()) EXPECT_GE(v.tokenize(std::string(1, c))[0], Vocab::kReserved);
}

TEST(Vocab, TokenizeRoundTrip) {
  const Vocab v;
  EXPECT_TRUE(v.tokenize("").empty());
  const std::string s = "rev: a b c -> (x) 42!";
  EXPECT_EQ(v.detokenize(v.tokenize(s)), s);
}

TEST(Vocab, RejectsReservedGlyphsAndUnknownCharacters) {
  const Vocab v;
  try {
    v.tokenize("ab\tc");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos);
  }
  EXPECT_THROW(v.tokenize("line\n"), InputError);
  EXPECT_THROW(v.tokenize("Upper"), InputError);
  EXPECT_THROW(v.tokenize("caf\xc3\xa9"), InputError);
}

TEST(Vocab, FingerprintDependsOnInventory) {
  EXPECT_EQ(Vocab{}.fingerprint(), Vocab{}.fingerprint());
  EXPECT_NE(Vocab{}.fingerprint(), Vocab{"abc"}.fingerprint());
}

TEST(Encoding, LayoutAndMask) {
  const Vocab v;
  const auto seq = encode_example(v, {"ab", "c", Split::Train});
  ASSERT_EQ(seq.size(), 6u);  // BOS a b SEP c EOS
  EXPECT_EQ(seq.tokens[0], Vocab::kBos);
  EXPECT_EQ(seq.tokens[3], Vocab::kSep);
  EXPECT_EQ(seq.tokens[5], Vocab::kEos);
  EXPECT_EQ(seq.prompt_len, 4u);
  EXPECT_EQ(seq.target_count(), 2u);  // response + EOS
  EXPECT_FALSE(seq.scored(2));
  EXPECT_TRUE(seq.scored(3));
  EXPECT_TRUE(seq.scored(4));
  EXPECT_FALSE(seq.scored(5));

  const auto plain = encode_example(v, {"", "xy", Split::Train});
  EXPECT_EQ(plain.prompt_len, 1u);
  EXPECT_EQ(plain.target_count(), 3u);
}

TEST(PretrainCorpus, DeterministicAndInInventory) {
  const Vocab v;
  const auto a = generate_pretrain_corpus(5, 300);
  const auto b = generate_pretrain_corpus(5, 300);
  EXPECT_EQ(format_examples(a.examples), format_examples(b.examples));
  EXPECT_NE(format_examples(a.examples), format_examples(generate_pretrain_corpus(6, 300).examples));
  for (const auto& e : a.examples)
    for (char c : e.response) ASSERT_TRUE(v.contains(c)) << c;
  EXPECT_THROW(generate_pretrain_corpus(1, 0), InputError);
}

TEST(PretrainCorpus, UnigramDistributionIsStable) {
  // Two independent samples of >= 1e5 characters.
  auto unigram = [](std::uint64_t seed) {
    const Vocab v;
    std::vector<double> counts(v.size(), 0.0);
    double total = 0;
    const auto c = generate_pretrain_corpus(seed, 4000);
    for (const auto& e : c.examples) {
      for (auto t : v.tokenize(e.response)) {
        counts[t] += 1;
        total += 1;
      }
    }
    EXPECT_GE(total, 1e5);
    for (auto& x : counts) x /= total;
    return counts;
  };
  EXPECT_LT(total_variation(unigram(100), unigram(200)), 0.02);
}

TEST(SftCorpus, TaskDefinitions) {
  const auto c = generate_sft_corpus(3, 600, 100);
  int rev = 0, sort = 0, cont = 0;
  for (const auto& e : c.examples) {
    ASSERT_FALSE(e.prompt.empty());
    ASSERT_FALSE(e.response.empty());
    if (e.prompt.rfind("rev: ", 0) == 0) {
      std::string letters = e.prompt.substr(5);
      EXPECT_EQ(std::string(letters.rbegin(), letters.rend()), e.response);
      ++rev;
    } else if (e.prompt.rfind("sort: ", 0) == 0) {
      std::string letters = e.prompt.substr(6);
      std::string sorted;
      for (char ch : letters)
        if (ch != ' ') sorted += ch;
      std::sort(sorted.begin(), sorted.end());
      std::string resp;
      for (char ch : e.response)
        if (ch != ' ') resp += ch;
      EXPECT_EQ(resp, sorted);
      ++sort;
    } else {
      ASSERT_EQ(e.prompt.rfind("cont: ", 0), 0u);
      const std::string body = e.prompt.substr(6);
      EXPECT_EQ(body, e.response + " " + e.response);
      ++cont;
    }
  }
  EXPECT_GT(rev, 0);
  EXPECT_GT(sort, 0);
  EXPECT_GT(cont, 0);
}

TEST(SftCorpus, KnownExamplesAndMixSelection) {
  const auto only_rev = generate_sft_corpus(9, 50, 0, TaskMix{1, 0, 0});
  for (const auto& e : only_rev.examples) EXPECT_EQ(e.prompt.rfind("rev: ", 0), 0u);
  EXPECT_THROW(generate_sft_corpus(9, 5, 0, TaskMix{0, 0, 0}), InputError);
  EXPECT_THROW(generate_sft_corpus(9, 5, 0, TaskMix{-1, 1, 1}), InputError);
}

TEST(SftCorpus, SplitsAreDisjoint) {
  const auto c = generate_sft_corpus(4, 2000, 300);
  std::set<std::string> train;
  for (const auto& e : c.split(Split::Train)) train.insert(e.prompt);
  const auto test = c.split(Split::Test);
  EXPECT_EQ(test.size(), 300u);
  EXPECT_EQ(train.size(), 1700u);
  for (const auto& e : test) EXPECT_EQ(train.count(e.prompt), 0u);
}

TEST(Manifest, RegenerationIsByteIdentical) {
  for (const auto& c : {generate_pretrain_corpus(17, 500), generate_sft_corpus(18, 400, 50, TaskMix{1, 2, 0.5})}) {
    const auto parsed = CorpusManifest::parse(c.manifest.to_text());
    EXPECT_EQ(parsed.to_text(), c.manifest.to_text());
    const auto again = regenerate(parsed);
    EXPECT_EQ(format_examples(again.examples), format_examples(c.examples));
    EXPECT_EQ(again.examples, c.examples);
  }
}

TEST(CorpusFile, ParseValidatesAndRoundTrips) {
  const Vocab v;
  const auto c = generate_sft_corpus(2, 100, 0);
  const auto text = format_examples(c.examples);
  const auto parsed = parse_examples(text, v);
  EXPECT_EQ(format_examples(parsed), text);
  for (const auto& e : parsed) EXPECT_EQ(v.detokenize(v.tokenize(e.prompt)), e.prompt);
  EXPECT_THROW(parse_examples("no tab here\n", v), InputError);
  EXPECT_THROW(parse_examples("a\tb\tc\n", v), InputError);
  EXPECT_THROW(parse_examples("a\tB\n", v), InputError);
  EXPECT_THROW(parse_examples("abcdef\tghi\n", v, Split::Train, 8), InputError);
  EXPECT_TRUE(parse_examples("", v).empty());
}
