// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "deltakd/distill_loss.hpp"
#include "deltakd/gradcheck.hpp"
#include "deltakd/losses.hpp"
#include "deltakd/neural_lm.hpp"
#include "deltakd/tabular_lm.hpp"
#include "test_util.hpp"

using namespace deltakd;
using deltakd::testing::exp_row;
using deltakd::testing::log_row;
using deltakd::testing::random_log_row;
using deltakd::testing::random_quad;

namespace {

constexpr double kLn2 = std::numbers::ln2;

RowSet random_rows(Rng& rng, std::size_t n, std::size_t v) {
  RowSet rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(random_log_row(rng, v));
  return rows;
}

QuadRows random_quad_rows(Rng& rng, std::size_t n, std::size_t v) {
  return {random_rows(rng, n, v), random_rows(rng, n, v), random_rows(rng, n, v)};
}

std::vector<bool> random_mask(Rng& rng, std::size_t n) {
  std::vector<bool> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = uniform_unit(rng) < 0.7;
  m[0] = true;
  return m;
}

std::vector<TokenSeq> tiny_batch() {
  const Vocab v;
  return {encode_example(v, {"ab", "ba", Split::Train}), encode_example(v, {"c", "dd", Split::Train}),
          encode_example(v, {"", "xyz", Split::Train})};
}

std::vector<float> random_logits(Rng& rng, std::size_t n, std::size_t v) {
  std::vector<float> z(n * v);
  for (auto& x : z) x = static_cast<float>(uniform_real(rng, -3.0, 3.0));
  return z;
}

std::vector<FrozenLogits> random_frozen(const std::vector<TokenSeq>& batch, std::size_t v, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FrozenLogits> out;
  for (const auto& s : batch) {
    out.push_back({random_logits(rng, s.size(), v), random_logits(rng, s.size(), v), random_logits(rng, s.size(), v)});
  }
  return out;
}

GradCheckReport model_grad_check(const KdOptions& opt, std::uint64_t seed) {
  NeuralLM<double> m(NeuralLMConfig::tiny(64, seed));
  EXPECT_LE(m.params().size(), 2000u);
  const auto batch = tiny_batch();
  const auto frozen = random_frozen(batch, 64, seed + 100);
  const auto fn = distill_loss_fn<NeuralLM<double>>(opt, [&](std::size_t i) -> const FrozenLogits& { return frozen[i]; });
  return grad_check(m, batch, fn, Lambda{opt.effective_lambda()}, 20, 1e-5, seed);
}

KdOptions kd_only(DistillMethod method, double alpha = 1.0) {
  KdOptions o;
  o.method = method;
  o.alpha = Alpha{alpha};
  o.lambda = Lambda{0.0};
  return o;
}

}  // namespace

TEST(SftLoss, Examples) {
  // Probability one on every target.
  const RowSet certain{{0.0, -INFINITY}, {-INFINITY, 0.0}};
  EXPECT_EQ(sft_loss({0, 1}, certain, {true, true}), 0.0);

  const RowSet uniform(3, std::vector<double>(64, -std::log(64.0)));
  EXPECT_NEAR(sft_loss({5, 9, 63}, uniform, {true, true, true}), std::log(64.0), 1e-12);

  // Per-token CE {ln 2, ln 4}.
  const RowSet two{log_row({0.5, 0.5}), log_row({0.25, 0.75})};
  EXPECT_NEAR(sft_loss({0, 0}, two, {true, true}), 1.5 * kLn2, 1e-15);
}

TEST(SftLoss, PromptPositionsAreExcluded) {
  const RowSet rows{log_row({0.01, 0.99}), log_row({0.5, 0.5})};
  EXPECT_NEAR(sft_loss({0, 0}, rows, {false, true}), kLn2, 1e-15);
  EXPECT_THROW(sft_loss({0, 0}, rows, {false, false}), InputError);
  EXPECT_THROW(sft_loss({0}, rows, {true, true}), InputError);
}

TEST(KlLosses, Examples) {
  const RowSet half{log_row({0.5, 0.5})};
  const RowSet skew{log_row({0.25, 0.75})};
  EXPECT_EQ(fkl_loss(half, half, {true}), 0.0);
  EXPECT_EQ(rkl_loss(skew, skew, {true}), 0.0);
  EXPECT_NEAR(fkl_loss(half, skew, {true}), 0.143841036225890463720, 1e-15);
  // Same value with the roles swapped.
  EXPECT_NEAR(rkl_loss(skew, half, {true}), 0.143841036225890463720, 1e-15);
  // Asymmetry on the same pair.
  EXPECT_NEAR(rkl_loss(half, skew, {true}), 0.130812035941136959129, 1e-15);
  EXPECT_GT(std::abs(fkl_loss(half, skew, {true}) - rkl_loss(half, skew, {true})), 1e-3);
}

TEST(KlLosses, ShapeMismatchIsAnInputError) {
  const RowSet a{log_row({0.5, 0.5})};
  const RowSet b{log_row({0.2, 0.3, 0.5})};
  EXPECT_THROW(fkl_loss(a, b, {true}), InputError);
  EXPECT_THROW(rkl_loss(a, a, {true, true}), InputError);
}

TEST(KlLosses, MaskedPositionContributesNothing) {
  Rng rng(1);
  auto t = random_rows(rng, 4, 16), s = random_rows(rng, 4, 16);
  const std::vector<bool> mask{true, false, true, true};
  const double before = fkl_loss(t, s, mask);
  s[1] = random_log_row(rng, 16, 20.0);
  t[1] = random_log_row(rng, 16, 20.0);
  EXPECT_EQ(fkl_loss(t, s, mask), before);
}

TEST(DeltaKdLoss, AlphaZeroIsForwardKlAgainstFinetunedTeacher) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_quad_rows(rng, 12, 64);
    const auto s = random_rows(rng, 12, 64);
    const auto mask = random_mask(rng, 12);
    EXPECT_NEAR(delta_kd_loss(q, s, Alpha{0.0}, mask), fkl_loss(q.teacher_ft, s, mask), 1e-12);
  }
}

TEST(DeltaKdLoss, EqualRawModelsIsForwardKlForEveryAlpha) {
  Rng rng(3);
  auto q = random_quad_rows(rng, 8, 32);
  q.student_raw = q.teacher_raw;
  const auto s = random_rows(rng, 8, 32);
  const std::vector<bool> mask(8, true);
  for (double a : {0.0, 0.3, 1.0}) {
    EXPECT_NEAR(delta_kd_loss(q, s, Alpha{a}, mask), fkl_loss(q.teacher_ft, s, mask), 1e-12);
  }
}

TEST(DeltaKdLoss, TwoTokenWorkedExample) {
  const QuadRows q{{log_row({0.5, 0.5})}, {log_row({0.9, 0.1})}, {log_row({0.8, 0.2})}};
  const RowSet s{log_row({0.5, 0.5})};
  // Target [4/13, 9/13]; two-term sum evaluated at 30 digits.
  EXPECT_NEAR(delta_kd_loss(q, s, Alpha{1.0}, {true}), 0.0759054108, 1e-10);
}

TEST(ParallelLoss, V1MatchesDeltaAtAlphaOne) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = random_quad_rows(rng, 10, 64);
    const auto s = random_rows(rng, 10, 64);
    const auto mask = random_mask(rng, 10);
    EXPECT_NEAR(parallel_loss(VariantId::V1, q, s, Alpha{1.0}, mask), delta_kd_loss(q, s, Alpha{1.0}, mask), 1e-12);
  }
}

TEST(ParallelLoss, V6WithoutTeacherShift) {
  Rng rng(5);
  auto q = random_quad_rows(rng, 6, 16);
  q.teacher_raw = q.teacher_ft;
  const auto s = random_rows(rng, 6, 16);
  const std::vector<bool> mask(6, true);
  // Target is the trainable row itself, compared against student_raw.
  EXPECT_NEAR(parallel_loss(VariantId::V6, q, s, Alpha{0.6}, mask), fkl_loss(s, q.student_raw, mask), 1e-12);
}

TEST(ParallelLoss, StrictModeRejectsV3) {
  Rng rng(6);
  const auto q = random_quad_rows(rng, 2, 8);
  const auto s = random_rows(rng, 2, 8);
  EXPECT_THROW(parallel_loss(VariantId::V3, q, s, Alpha{0.5}, {true, true}), DomainError);
  EXPECT_GE(parallel_loss(VariantId::V3, q, s, Alpha{0.5}, {true, true}, true), -1e-12);
}

TEST(TotalLoss, Mixing) {
  EXPECT_EQ(total_loss(Lambda{1.0}, 2.0, 1.0).total, 2.0);
  EXPECT_EQ(total_loss(Lambda{0.0}, 2.0, 1.0).total, 1.0);
  EXPECT_EQ(total_loss(Lambda{0.5}, 2.0, 1.0).total, 1.5);
  EXPECT_THROW(Lambda{1.5}, DomainError);
  EXPECT_THROW(Lambda{-0.1}, DomainError);
  EXPECT_THROW(Lambda{std::nan("")}, DomainError);
}

TEST(LossProperties, NonNegativeOnRandomInputs) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t v = 2 + uniform_index(rng, 63);
    const auto q = random_quad_rows(rng, 5, v);
    const auto s = random_rows(rng, 5, v);
    const auto mask = random_mask(rng, 5);
    const Alpha a{uniform_unit(rng)};
    EXPECT_GE(fkl_loss(q.teacher_ft, s, mask), -1e-12);
    EXPECT_GE(rkl_loss(q.teacher_ft, s, mask), -1e-12);
    EXPECT_GE(delta_kd_loss(q, s, a, mask), -1e-12);
    for (auto id : {VariantId::V1, VariantId::V2, VariantId::V4, VariantId::V6}) {
      EXPECT_GE(parallel_loss(id, q, s, a, mask), -1e-12);
    }
  }
}

TEST(LossProperties, MaskLinearity) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10;
    const auto q = random_quad_rows(rng, n, 32);
    const auto s = random_rows(rng, n, 32);
    std::vector<bool> a(n), b(n), both(n, true);
    std::size_t na = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = i % 3 == 0;
      b[i] = !a[i];
      na += a[i];
    }
    const double wa = double(na) / n, wb = 1.0 - wa;
    const Alpha al{0.4};
    EXPECT_NEAR(fkl_loss(q.teacher_ft, s, both), wa * fkl_loss(q.teacher_ft, s, a) + wb * fkl_loss(q.teacher_ft, s, b),
                1e-12);
    EXPECT_NEAR(rkl_loss(q.teacher_ft, s, both), wa * rkl_loss(q.teacher_ft, s, a) + wb * rkl_loss(q.teacher_ft, s, b),
                1e-12);
    EXPECT_NEAR(delta_kd_loss(q, s, al, both), wa * delta_kd_loss(q, s, al, a) + wb * delta_kd_loss(q, s, al, b),
                1e-12);
    std::vector<TokenId> targets(n);
    for (auto& t : targets) t = static_cast<TokenId>(uniform_index(rng, 32));
    EXPECT_NEAR(sft_loss(targets, s, both), wa * sft_loss(targets, s, a) + wb * sft_loss(targets, s, b), 1e-12);
  }
}

TEST(LossProperties, BreakdownTotalIsConsistent) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const double lam = uniform_unit(rng), sft = uniform_real(rng, 0, 5), kd = uniform_real(rng, 0, 5);
    const auto b = total_loss(Lambda{lam}, sft, kd);
    EXPECT_NEAR(b.total, lam * b.sft_term + (1 - lam) * b.kd_term, 1e-12);
  }
}

// Per-position gradients with respect to free log-prob coordinates. Some
// coordinates carry gradients near 1e-9, below what central differences
// resolve relatively, hence the absolute floor.
void expect_close(const GradCheckReport& r, const std::string& what) {
  for (const auto& e : r.entries) {
    EXPECT_LE(std::abs(e.analytic - e.numeric), 1e-6 * std::max(std::abs(e.analytic), std::abs(e.numeric)) + 1e-8)
        << what << " coordinate " << e.index;
  }
}

TEST(PositionGradients, MatchFiniteDifferencesForEveryVariant) {
  Rng rng(10);
  auto q = random_quad(rng, 12);
  const Alpha a{0.6};
  for (const auto& spec : kVariantTable) {
    auto loss = [&] { return parallel_position(spec, q.view(), a, true).value; };
    const auto g = parallel_position(spec, q.view(), a, true).grad;
    expect_close(grad_check_fn(q.theta, loss, g, 12, 1e-5, 1), variant_name(spec.id));
  }
  auto fkl = [&] { return fkl_position(q.t_ft, q.theta).value; };
  expect_close(grad_check_fn(q.theta, fkl, fkl_position(q.t_ft, q.theta).grad, 12, 1e-5), "fkl");
  auto rkl = [&] { return rkl_position(q.t_ft, q.theta).value; };
  expect_close(grad_check_fn(q.theta, rkl, rkl_position(q.t_ft, q.theta).grad, 12, 1e-5), "rkl");
}

TEST(ModelGradients, Sft) {
  KdOptions o;
  o.method = *DistillMethod::parse("sft");
  EXPECT_LT(model_grad_check(o, 1).max_rel_error, 1e-4);
}

TEST(ModelGradients, ForwardKl) { EXPECT_LT(model_grad_check(kd_only({DistillMethod::Kind::Fkl}), 2).max_rel_error, 1e-4); }

TEST(ModelGradients, ReverseKl) { EXPECT_LT(model_grad_check(kd_only({DistillMethod::Kind::Rkl}), 3).max_rel_error, 1e-4); }

TEST(ModelGradients, DeltaKdHalfAlpha) {
  EXPECT_LT(model_grad_check(kd_only({DistillMethod::Kind::Delta}, 0.5), 4).max_rel_error, 1e-4);
}

TEST(ModelGradients, TunableVariants) {
  for (auto id : {VariantId::V1, VariantId::V2, VariantId::V4, VariantId::V6}) {
    const auto r = model_grad_check(kd_only({DistillMethod::Kind::Variant, id}, 0.5), 5 + static_cast<int>(id));
    EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(id);
  }
}

TEST(ModelGradients, MixedLambdaWithTemperatureScaling) {
  KdOptions o = kd_only({DistillMethod::Kind::Delta}, 0.7);
  o.lambda = Lambda{0.3};
  o.tau = Temperature{2.0};
  o.scale_tau_squared = true;
  EXPECT_LT(model_grad_check(o, 20).max_rel_error, 1e-4);
}

TEST(DistillLoss, LambdaOneEqualsSftTrajectory) {
  NeuralLM<double> m(NeuralLMConfig::tiny(64, 3));
  const auto batch = tiny_batch();
  const auto frozen = random_frozen(batch, 64, 9);
  KdOptions d = kd_only({DistillMethod::Kind::Delta});
  d.lambda = Lambda{1.0};
  const auto fn = distill_loss_fn<NeuralLM<double>>(d, [&](std::size_t i) -> const FrozenLogits& { return frozen[i]; });
  std::vector<double> g1(m.params().size()), g2(m.params().size());
  const auto a = compute_gradients(m, batch, fn, Lambda{1.0}, g1);
  const auto b = compute_gradients(m, batch, sft_loss_fn<NeuralLM<double>>(), Lambda{1.0}, g2);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(g1, g2);
}

TEST(DistillLoss, SftMethodReportsZeroKdTerm) {
  NeuralLM<double> m(NeuralLMConfig::tiny(64, 3));
  const auto batch = tiny_batch();
  const std::vector<FrozenLogits> none(batch.size());
  KdOptions o;
  o.method = {DistillMethod::Kind::SeqKd};
  const auto fn = distill_loss_fn<NeuralLM<double>>(o, [&](std::size_t i) -> const FrozenLogits& { return none[i]; });
  const auto r = evaluate_loss(m, batch, fn, Lambda{o.effective_lambda()});
  EXPECT_EQ(r.kd_term, 0.0);
  EXPECT_EQ(r.total, r.sft_term);
}

TEST(DistillLoss, MissingFrozenRowsAreReported) {
  NeuralLM<double> m(NeuralLMConfig::tiny(64, 3));
  const auto batch = tiny_batch();
  const std::vector<FrozenLogits> none(batch.size());
  const auto fn = distill_loss_fn<NeuralLM<double>>(kd_only({DistillMethod::Kind::Fkl}),
                                                    [&](std::size_t i) -> const FrozenLogits& { return none[i]; });
  EXPECT_THROW(evaluate_loss(m, batch, fn, Lambda{0.0}), InputError);
}

TEST(DistillMethodNames, RoundTrip) {
  for (const char* s : {"sft", "fkl", "rkl", "seqkd", "delta", "v1", "v8"}) {
    const auto m = DistillMethod::parse(s);
    ASSERT_TRUE(m.has_value()) << s;
    EXPECT_EQ(m->name(), s);
  }
  EXPECT_FALSE(DistillMethod::parse("skl").has_value());
  EXPECT_FALSE(DistillMethod::parse("v9").has_value());
}

// A full-capacity tabular student trained with forward KL recovers the
// teacher's conditionals; the teacher table is the closed-form answer.
TEST(TabularFixedPoint, ForwardKlRecoversTeacherConditionals) {
  const std::size_t V = 12;
  Rng rng(11);
  std::vector<std::vector<TokenId>> corpus(1);
  for (int i = 0; i < 3000; ++i) corpus[0].push_back(static_cast<TokenId>(uniform_index(rng, V / 2) * 2 % V));
  const auto teacher = fit_tabular<double>(std::span(corpus), V);

  std::vector<TokenSeq> batch;
  std::vector<FrozenLogits> frozen;
  for (TokenId c = 0; c < V; ++c) {
    batch.push_back({{c, 0}, 1});
    const auto row = teacher.logits_for(c);
    FrozenLogits f;
    f.teacher_ft.assign(2 * V, 0.0f);
    for (std::size_t j = 0; j < V; ++j) f.teacher_ft[j] = static_cast<float>(row[j]);
    frozen.push_back(std::move(f));
  }
  TabularLM<double> student(V);
  const auto fn = distill_loss_fn<TabularLM<double>>(kd_only({DistillMethod::Kind::Fkl}),
                                                     [&](std::size_t i) -> const FrozenLogits& { return frozen[i]; });
  std::vector<double> grad(student.params().size());
  // Plain gradient descent; the per-token mean scales each row's gradient by 1/V.
  for (int it = 0; it < 4000; ++it) {
    compute_gradients(student, std::span<const TokenSeq>(batch), fn, Lambda{0.0}, grad);
    for (std::size_t i = 0; i < grad.size(); ++i) student.params()[i] -= 2.0 * V * grad[i];
  }
  double worst = 0.0;
  for (TokenId c = 0; c < V; ++c) {
    std::vector<double> tz(V);
    for (std::size_t j = 0; j < V; ++j) tz[j] = frozen[c].teacher_ft[j];
    const auto p = exp_row(log_softmax(student.logits_for(c)));
    const auto t = exp_row(log_softmax(tz));
    worst = std::max(worst, total_variation(p, t));
  }
  EXPECT_LT(worst, 1e-3);
}
