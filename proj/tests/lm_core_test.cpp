// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "deltakd/corpus.hpp"
#include "deltakd/decode.hpp"
#include "deltakd/gradcheck.hpp"
#include "deltakd/neural_lm.hpp"
#include "deltakd/snapshot.hpp"
#include "deltakd/tabular_lm.hpp"
#include "deltakd/trainer.hpp"

using namespace deltakd;

namespace {

std::vector<TokenSeq> small_sft_batch(std::size_t n, std::uint64_t seed, std::size_t context = 64) {
  const Vocab v;
  const auto c = generate_sft_corpus(seed, n, 0);
  std::vector<TokenSeq> out;
  for (const auto& e : c.examples) {
    auto s = encode_example(v, e);
    if (s.size() <= context) out.push_back(std::move(s));
  }
  return out;
}

/// Short sequences that fit the tiny model's context of 8.
std::vector<TokenSeq> tiny_batch() {
  const Vocab v;
  return {encode_example(v, {"ab", "ba", Split::Train}), encode_example(v, {"c", "dd", Split::Train}),
          encode_example(v, {"", "xyz", Split::Train})};
}

}  // namespace

TEST(NeuralLM, ParameterCountMatchesLayout) {
  const NeuralLMConfig tiny = NeuralLMConfig::tiny();
  EXPECT_LE(tiny.param_count(), 2000u);
  NeuralLM<double> m(tiny);
  EXPECT_EQ(m.params().size(), tiny.param_count());
  EXPECT_THROW(NeuralLM<double>(NeuralLMConfig{64, 10, 1, 3, 8, 16, 0}), InputError);
}

TEST(NeuralLM, CausalityUnderFutureMutation) {
  NeuralLM<double> m(NeuralLMConfig{64, 16, 2, 4, 32, 32, 3});
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenId> toks(20);
    for (auto& t : toks) t = static_cast<TokenId>(uniform_index(rng, 64));
    const auto base = m.forward(toks);
    const std::size_t cut = uniform_index(rng, 19);
    auto mutated = toks;
    for (std::size_t i = cut + 1; i < mutated.size(); ++i) mutated[i] = static_cast<TokenId>(uniform_index(rng, 64));
    const auto other = m.forward(mutated);
    for (std::size_t t = 0; t <= cut; ++t) {
      for (std::size_t j = 0; j < 64; ++j) ASSERT_EQ(base.logits[t * 64 + j], other.logits[t * 64 + j]);
    }
  }
}

TEST(NeuralLM, DeterministicForward) {
  NeuralLM<float> a(NeuralLMConfig::student(64, 5));
  NeuralLM<float> b(NeuralLMConfig::student(64, 5));
  const std::vector<TokenId> toks{1, 10, 11, 12, 3, 20};
  EXPECT_EQ(a.forward(toks).logits, a.forward(toks).logits);
  EXPECT_EQ(a.forward(toks).logits, b.forward(toks).logits);
}

TEST(NeuralLM, ContextOverflowIsAnInputError) {
  NeuralLM<float> m(NeuralLMConfig::tiny());
  EXPECT_THROW(m.forward(std::vector<TokenId>(9, 5)), InputError);
  EXPECT_THROW(m.forward(std::vector<TokenId>{}), InputError);
  EXPECT_THROW(m.forward(std::vector<TokenId>{64}), InputError);
}

TEST(NeuralLM, FullModelGradientCheck) {
  NeuralLM<double> m(NeuralLMConfig::tiny(64, 21));
  const auto batch = tiny_batch();
  const auto report = grad_check(m, batch, sft_loss_fn<NeuralLM<double>>(), Lambda{1.0}, 40, 1e-5, 7);
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.entries.size(), 40u);
}

TEST(NeuralLM, MultiLayerGradientCheck) {
  NeuralLM<double> m(NeuralLMConfig{16, 8, 2, 2, 8, 12, 4});
  const std::vector<TokenSeq> batch{{{1, 5, 6, 7, 2}, 1}, {{1, 9, 3, 4, 2}, 3}};
  const auto report = grad_check(m, batch, sft_loss_fn<NeuralLM<double>>(), Lambda{1.0}, 200, 1e-5, 3);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(GradCheck, LogisticToy) {
  // One parameter w, logits [w, 0], target token 0.
  std::vector<double> w{0.37};
  auto loss = [&] {
    return sft_position(0, log_softmax(std::vector<double>{w[0], 0.0})).value;
  };
  const auto lp = log_softmax(std::vector<double>{w[0], 0.0});
  const auto dz = logits_grad(sft_position(0, lp).grad, lp, Temperature{});
  const std::vector<double> analytic{dz[0]};
  const auto r = grad_check_fn(w, loss, analytic, 1, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_NEAR(analytic[0], 1.0 / (1.0 + std::exp(-0.37)) - 1.0, 1e-15);
}

TEST(GradCheck, LinearModelSquaredLoss) {
  std::vector<double> w{0.5, -1.25, 2.0};
  const std::vector<double> x{1.5, 0.25, -0.75};
  const double y = 0.3;
  auto pred = [&] { return w[0] * x[0] + w[1] * x[1] + w[2] * x[2]; };
  auto loss = [&] { return 0.5 * (pred() - y) * (pred() - y); };
  std::vector<double> g(3);
  for (int i = 0; i < 3; ++i) g[i] = (pred() - y) * x[i];
  EXPECT_LT(grad_check_fn(w, loss, g, 3, 1e-4).max_rel_error, 1e-8);
}

TEST(GradCheck, RejectsBadEpsilonAndLargeModels) {
  std::vector<double> w{1.0};
  const std::vector<double> g{0.0};
  EXPECT_THROW(grad_check_fn(w, [] { return 0.0; }, g, 1, 0.0), DomainError);
  std::vector<double> big(10001, 0.0);
  const std::vector<double> gb(10001, 0.0);
  EXPECT_THROW(grad_check_fn(big, [] { return 0.0; }, gb, 1, 1e-5), DomainError);
}

TEST(Training, ZeroLearningRateLeavesParametersBitwise) {
  NeuralLM<float> m(NeuralLMConfig{64, 16, 1, 2, 64, 32, 1});
  const std::vector<float> before(m.params().begin(), m.params().end());
  AdamConfig cfg;
  cfg.lr = 0.0;
  Trainer<NeuralLM<float>> tr(m, cfg);
  const auto batch = small_sft_batch(8, 1);
  for (int i = 0; i < 3; ++i) tr.train_step(batch, sft_loss_fn<NeuralLM<float>>(), Lambda{1.0});
  EXPECT_EQ(std::vector<float>(m.params().begin(), m.params().end()), before);
}

TEST(Training, MemorizesTenExamples) {
  NeuralLM<float> m(NeuralLMConfig{64, 32, 1, 2, 64, 64, 2});
  AdamConfig cfg;
  cfg.lr = 1e-2;
  cfg.warmup_steps = 10;
  Trainer<NeuralLM<float>> tr(m, cfg);
  const auto batch = small_sft_batch(10, 2);
  const auto fn = sft_loss_fn<NeuralLM<float>>();
  const double first = tr.train_step(batch, fn, Lambda{1.0}).loss.total;
  double last = first;
  for (int i = 0; i < 99; ++i) last = tr.train_step(batch, fn, Lambda{1.0}).loss.total;
  EXPECT_LT(last, 0.5 * first);
  EXPECT_LT(last, 0.5);
}

TEST(Training, NonFiniteLossIsATrainingError) {
  NeuralLM<float> m(NeuralLMConfig::tiny());
  Trainer<NeuralLM<float>> tr(m, AdamConfig{});
  SequenceLossFn<NeuralLM<float>> bad = [](std::size_t, const TokenSeq& s, const NeuralLM<float>::Cache&,
                                           std::span<float>) {
    return SequenceLoss{std::nan(""), 0.0, s.target_count()};
  };
  EXPECT_THROW(tr.train_step(tiny_batch(), bad, Lambda{1.0}), TrainingError);
}

TEST(Tabular, FitMatchesSmoothedCountsExactly) {
  const std::size_t V = 6;
  const std::vector<std::vector<TokenId>> corpus{{4, 5}};  // "ab"
  const auto m = fit_tabular(std::span(corpus), V);
  const auto cache = m.forward(std::vector<TokenId>{4});
  EXPECT_EQ(cache.logits[5], std::log((1.0 + 1.0) / (1.0 + V)));
  EXPECT_NEAR(std::exp(log_softmax(cache.row(0, V))[5]), 2.0 / 7.0, 1e-15);
  // Context 5 never precedes anything: uniform row.
  const auto row = log_softmax(m.forward(std::vector<TokenId>{5}).row(0, V));
  for (double x : row) EXPECT_NEAR(std::exp(x), 1.0 / V, 1e-15);
  EXPECT_THROW(fit_tabular(std::span<const std::vector<TokenId>>{}, V), InputError);
}

TEST(Tabular, AbabCorpus) {
  const std::size_t V = 8;
  const std::vector<std::vector<TokenId>> corpus{{4, 5, 4, 5}};
  const auto m = fit_tabular(std::span(corpus), V);
  // a -> b twice, b -> a once.
  const auto p_a = log_softmax(m.forward(std::vector<TokenId>{4}).row(0, V));
  EXPECT_NEAR(std::exp(p_a[5]), 3.0 / 10.0, 1e-15);
  const auto p_b = log_softmax(m.forward(std::vector<TokenId>{5}).row(0, V));
  EXPECT_NEAR(std::exp(p_b[4]), 2.0 / 9.0, 1e-15);
}

TEST(Tabular, UniformCorpusApproachesUniformConditionals) {
  const std::size_t V = 6;
  Rng rng(3);
  std::vector<std::vector<TokenId>> corpus(1);
  for (int i = 0; i < 100000; ++i) corpus[0].push_back(static_cast<TokenId>(uniform_index(rng, V)));
  const auto m = fit_tabular(std::span(corpus), V);
  for (TokenId c = 0; c < V; ++c) {
    const auto p = log_softmax(m.logits_for(c));
    for (double x : p) EXPECT_NEAR(std::exp(x), 1.0 / V, 0.05);
  }
}

TEST(Decode, TabularArgmaxChain) {
  const std::size_t V = 8;
  // 4 -> 5 -> 6 -> EOS(2), strongly.
  std::vector<std::vector<TokenId>> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back({4, 5, 6, 2});
  const auto m = fit_tabular(std::span(corpus), V);
  const auto r = greedy_decode(m, TokenSeq{{4}, 1}, 10);
  EXPECT_TRUE(r.hit_eos);
  EXPECT_EQ(r.generated, (std::vector<TokenId>{5, 6}));
  // Chain oracle straight from the table.
  TokenId cur = 4;
  std::vector<TokenId> chain;
  for (int step = 0; step < 10; ++step) {
    const auto row = m.logits_for(cur);
    cur = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (cur == Vocab::kEos) break;
    chain.push_back(cur);
  }
  EXPECT_EQ(r.generated, chain);
}

TEST(Decode, StopsAtEosAndTiesPickLowestId) {
  TabularLM<double> m(6);
  // All-zero table: every row is a tie, so argmax is id 0.
  const auto r = greedy_decode(m, TokenSeq{{4}, 1}, 3);
  EXPECT_EQ(r.generated, (std::vector<TokenId>{0, 0, 0}));
  EXPECT_TRUE(r.truncated);
  m.params()[4 * 6 + Vocab::kEos] = 50.0;
  const auto e = greedy_decode(m, TokenSeq{{4}, 1}, 3);
  EXPECT_TRUE(e.hit_eos);
  EXPECT_TRUE(e.generated.empty());
  EXPECT_EQ(e.sequence.tokens, (std::vector<TokenId>{4, Vocab::kEos}));
}

TEST(Decode, NeuralIsDeterministic) {
  NeuralLM<float> m(NeuralLMConfig::student(64, 8));
  const Vocab v;
  const auto prompt = encode_prompt(v, "rev: a b c");
  const auto a = greedy_decode(m, prompt, 12);
  const auto b = greedy_decode(m, prompt, 12);
  EXPECT_EQ(a.sequence.tokens, b.sequence.tokens);
}

TEST(Snapshot, RoundTripIsBitIdentical) {
  NeuralLM<float> m(NeuralLMConfig::student(64, 4));
  const Vocab v;
  const auto snap = make_snapshot(m, v.fingerprint(), Stage::Ft);
  const auto path = std::filesystem::temp_directory_path() / "deltakd_snapshot_test.bin";
  save_snapshot(path, snap);
  const auto loaded = load_snapshot(path);
  EXPECT_EQ(loaded, snap);
  const auto m2 = neural_from_snapshot(loaded);
  const std::vector<TokenId> toks{1, 20, 21, 3, 30};
  EXPECT_EQ(m.forward(toks).logits, m2.forward(toks).logits);
  std::filesystem::remove(path);

  const auto bytes = snap.encode();
  EXPECT_EQ(bytes.size(), ModelSnapshot::kHeaderSize + 4 * snap.params.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "DKDSNAP");
  EXPECT_EQ(bytes[8], 1);   // version, little-endian
  EXPECT_EQ(bytes[12], 1);  // neural
  EXPECT_EQ(bytes[53], 1);  // stage ft
}

TEST(Snapshot, RejectsCorruption) {
  NeuralLM<float> m(NeuralLMConfig::tiny());
  auto bytes = make_snapshot(m, 7, Stage::Raw).encode();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(ModelSnapshot::decode(bad_magic), SnapshotError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  EXPECT_THROW(ModelSnapshot::decode(truncated), SnapshotError);
  auto wrong_count = bytes;
  wrong_count[54] ^= 1;
  EXPECT_THROW(ModelSnapshot::decode(wrong_count), SnapshotError);
  EXPECT_THROW(ModelSnapshot::decode(bytes).check_vocab(8), SnapshotError);
}

TEST(Snapshot, TabularRoundTrip) {
  const std::vector<std::vector<TokenId>> corpus{{4, 5, 6}};
  const auto m = fit_tabular<float>(std::span(corpus), 8);
  const auto s = make_snapshot(m, 1, Stage::Raw);
  const auto back = tabular_from_snapshot(ModelSnapshot::decode(s.encode()));
  EXPECT_EQ(std::vector<float>(back.params().begin(), back.params().end()),
            std::vector<float>(m.params().begin(), m.params().end()));
}
