// SPDX-License-Identifier: Apache-2.0
//
// Four-stage pipeline: teacher pretrain, teacher SFT, student pretrain,
// distillation. Every stage is a pure function of (config, seed, corpus);
// wall-clock timings are the only nondeterministic output.
#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deltakd/config.hpp"
#include "deltakd/corpus.hpp"
#include "deltakd/decode.hpp"
#include "deltakd/distill_loss.hpp"
#include "deltakd/evaluate.hpp"
#include "deltakd/gradcheck.hpp"
#include "deltakd/neural_lm.hpp"
#include "deltakd/snapshot.hpp"
#include "deltakd/teacher_source.hpp"
#include "deltakd/trainer.hpp"

namespace deltakd {

// ---------------------------------------------------------------------------
// Telemetry

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

struct StepRecord {
  std::string stage;
  std::size_t step = 0;  ///< 1-based
  std::string method;
  double lambda = 1.0;
  double alpha = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  double wall_ms = 0.0;

  std::string to_line(bool with_wall = true) const {
    std::string s = "stage=" + stage + " step=" + std::to_string(step) + " method=" + method +
                    " lambda=" + format_number(lambda) + " alpha=" + format_number(alpha) +
                    " sft_term=" + format_number(loss.sft_term) + " kd_term=" + format_number(loss.kd_term) +
                    " total=" + format_number(loss.total) + " gradient_norm=" + format_number(grad_norm);
    if (with_wall) s += " wall_ms=" + format_number(wall_ms);
    return s;
  }
};

struct TrainingLog {
  std::string stage;
  std::vector<StepRecord> steps;

  /// One record per line; `with_wall = false` gives the deterministic part.
  std::string to_text(bool with_wall = true) const {
    std::string out;
    for (const auto& r : steps) out += r.to_line(with_wall) + '\n';
    return out;
  }
  void write(const std::filesystem::path& path) const { write_text_file(path, to_text()); }
};

using Progress = std::function<void(const StepRecord&)>;

// ---------------------------------------------------------------------------
// Seeds and batching

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

/// Epoch-wise shuffled index stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw InputError("cannot sample batches from an empty dataset");
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle_in_place(order_, rng_);
  }

  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == order_.size()) {
        shuffle_in_place(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Stage loop

struct StageSpec {
  std::string stage;
  std::string method = "sft";
  double lambda = 1.0;
  double alpha = 0.0;
  std::size_t steps = 0;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

inline constexpr double kDivergenceGradNorm = 1e6;
inline constexpr std::size_t kDivergencePatience = 10;

/// Builds the loss callback of one batch (fetching frozen logits if needed).
template <LanguageModel M>
using BatchLossFactory = std::function<SequenceLossFn<M>(std::span<const TokenSeq> batch)>;

/// Runs `spec.steps` optimizer steps. Aborts with a stage-tagged
/// TrainingError on a non-finite loss or when the gradient norm exceeds
/// kDivergenceGradNorm for kDivergencePatience consecutive steps.
template <LanguageModel M>
TrainingLog train_stage(M& model, const std::vector<TokenSeq>& data, const StageSpec& spec,
                        const BatchLossFactory<M>& make_loss, const Progress& progress = {}) {
  TrainingLog log;
  log.stage = spec.stage;
  if (spec.steps == 0) return log;
  for (const auto& s : data) {
    if (s.size() > model.context_limit()) {
      throw InputError("stage " + spec.stage + ": sequence of " + std::to_string(s.size()) +
                       " tokens exceeds the context limit");
    }
  }
  Trainer<M> trainer(model, spec.adam);
  BatchSampler sampler(data.size(), spec.seed);
  std::vector<TokenSeq> batch;
  std::size_t over = 0;
  log.steps.reserve(spec.steps);
  for (std::size_t step = 1; step <= spec.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    batch.clear();
    for (auto i : sampler.next(spec.batch_size)) batch.push_back(data[i]);
    StepResult r;
    try {
      const auto fn = make_loss(batch);
      r = trainer.train_step(batch, fn, Lambda{spec.lambda});
    } catch (const TrainingError& e) {
      throw TrainingError("stage " + spec.stage + ": " + e.what());
    } catch (const TransportError& e) {
      throw TransportError("stage " + spec.stage + " step " + std::to_string(step) + ": " + e.what());
    }
    StepRecord rec{spec.stage, step, spec.method, spec.lambda, spec.alpha, r.loss, r.grad_norm,
                   std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
    log.steps.push_back(rec);
    if (progress) progress(rec);
    over = r.grad_norm > kDivergenceGradNorm ? over + 1 : 0;
    if (over >= kDivergencePatience) {
      throw TrainingError("stage " + spec.stage + ": gradient norm above " + format_number(kDivergenceGradNorm) +
                          " for " + std::to_string(kDivergencePatience) + " consecutive steps (step " +
                          std::to_string(step) + ", gradient_norm " + format_number(r.grad_norm) + ")");
    }
  }
  return log;
}

template <LanguageModel M>
BatchLossFactory<M> plain_sft_factory() {
  return [fn = sft_loss_fn<M>()](std::span<const TokenSeq>) { return fn; };
}

inline std::vector<TokenSeq> encode_all(const Vocab& vocab, const std::vector<Example>& examples) {
  std::vector<TokenSeq> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(encode_example(vocab, e));
  return out;
}

// ---------------------------------------------------------------------------
// Data

struct PipelineData {
  std::vector<Example> pretrain;
  std::vector<Example> sft_train;
  std::vector<Example> sft_test;
};

struct GeneratedCorpora {
  Corpus pretrain;
  Corpus sft;
};

inline GeneratedCorpora generate_corpora(const RunConfig& cfg, const Vocab& vocab) {
  return {generate_pretrain_corpus(derive_seed(cfg.seed, "pretrain_corpus"), cfg.pretrain_size, vocab),
          generate_sft_corpus(derive_seed(cfg.seed, "sft_corpus"), cfg.sft_size, cfg.test_size, cfg.task_mix, vocab)};
}

/// Layout read by load_data: pretrain.txt, sft_train.txt, sft_test.txt and
/// a manifest per corpus.
inline void write_corpora(const std::filesystem::path& dir, const GeneratedCorpora& c) {
  write_examples(dir / "pretrain.txt", c.pretrain.examples);
  write_text_file(dir / "pretrain.manifest", c.pretrain.manifest.to_text());
  write_examples(dir / "sft_train.txt", c.sft.split(Split::Train));
  write_examples(dir / "sft_test.txt", c.sft.split(Split::Test));
  write_text_file(dir / "sft.manifest", c.sft.manifest.to_text());
}

inline PipelineData load_data(const std::filesystem::path& dir, const Vocab& vocab, std::size_t context_limit) {
  PipelineData d;
  d.pretrain = read_examples(dir / "pretrain.txt", vocab, Split::Train, context_limit);
  d.sft_train = read_examples(dir / "sft_train.txt", vocab, Split::Train, context_limit);
  d.sft_test = read_examples(dir / "sft_test.txt", vocab, Split::Test, context_limit);
  if (d.pretrain.empty() || d.sft_train.empty() || d.sft_test.empty()) {
    throw InputError("data directory " + dir.string() + " holds an empty corpus file");
  }
  return d;
}

/// Reads `cfg.data_dir` when set; otherwise generates the corpora and, when
/// `save_dir` is non-empty, writes them there.
inline PipelineData prepare_data(const RunConfig& cfg, const Vocab& vocab, const std::filesystem::path& save_dir = {}) {
  if (!cfg.data_dir.empty()) return load_data(cfg.data_dir, vocab, NeuralLMConfig::student().context_limit);
  const auto c = generate_corpora(cfg, vocab);
  if (!save_dir.empty()) write_corpora(save_dir, c);
  return {c.pretrain.examples, c.sft.split(Split::Train), c.sft.split(Split::Test)};
}

// ---------------------------------------------------------------------------
// Stages 1-3

struct BaseModels {
  ModelSnapshot teacher_raw, teacher_ft, student_raw;
  TrainingLog teacher_pretrain, teacher_sft, student_pretrain;
};

inline StageSpec stage_spec(const RunConfig& cfg, std::string stage, std::size_t steps) {
  StageSpec s;
  s.seed = derive_seed(cfg.seed, stage + "_batches");
  s.stage = std::move(stage);
  s.steps = steps;
  s.batch_size = cfg.batch_size;
  s.adam = cfg.adam;
  return s;
}

inline BaseModels train_base_models(const RunConfig& cfg, const PipelineData& data, const Vocab& vocab,
                                    const Progress& progress = {}) {
  using Model = NeuralLM<float>;
  BaseModels out;
  const auto fp = vocab.fingerprint();
  const auto pretrain = encode_all(vocab, data.pretrain);
  const auto sft = encode_all(vocab, data.sft_train);

  Model teacher(NeuralLMConfig::teacher(vocab.size(), derive_seed(cfg.seed, "teacher_init")));
  out.teacher_pretrain = train_stage(teacher, pretrain, stage_spec(cfg, "teacher_pretrain", cfg.teacher_pretrain_steps),
                                     plain_sft_factory<Model>(), progress);
  out.teacher_raw = make_snapshot(teacher, fp, Stage::Raw);
  out.teacher_sft = train_stage(teacher, sft, stage_spec(cfg, "teacher_sft", cfg.teacher_sft_steps),
                                plain_sft_factory<Model>(), progress);
  out.teacher_ft = make_snapshot(teacher, fp, Stage::Ft);

  Model student(NeuralLMConfig::student(vocab.size(), derive_seed(cfg.seed, "student_init")));
  out.student_pretrain = train_stage(student, pretrain, stage_spec(cfg, "student_pretrain", cfg.student_pretrain_steps),
                                     plain_sft_factory<Model>(), progress);
  out.student_raw = make_snapshot(student, fp, Stage::Raw);
  return out;
}

// ---------------------------------------------------------------------------
// SeqKD data

struct SeqKdCorpus {
  std::vector<Example> examples;
  std::size_t flagged = 0;  ///< truncated or stopped at a reserved token
  std::size_t dropped = 0;  ///< produced no response text
  std::vector<std::string> notes;
};

/// Greedy teacher_ft responses as training targets. A response that runs
/// out of budget (or hits a reserved token) is cut there, closed with EOS
/// and flagged; an empty response is dropped and flagged.
inline SeqKdCorpus generate_seqkd_corpus(const LogitFunction& teacher_ft, std::size_t model_vocab,
                                         std::size_t context_limit, const Vocab& vocab,
                                         const std::vector<std::string>& prompts, std::size_t max_new) {
  SeqKdCorpus out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto prompt = encode_prompt(vocab, prompts[i]);
    if (prompt.size() + 1 >= context_limit) throw InputError("seqkd prompt " + std::to_string(i) + " too long");
    const std::size_t budget = std::min(max_new, context_limit - prompt.size() - 1);
    const auto res = greedy_decode_with(teacher_ft, model_vocab, context_limit, prompt, budget);
    std::vector<TokenId> resp;
    bool reserved = false;
    for (auto t : res.generated) {
      if (t < Vocab::kReserved) {
        reserved = true;
        break;
      }
      resp.push_back(t);
    }
    if (reserved || res.truncated) {
      ++out.flagged;
      out.notes.push_back("prompt " + std::to_string(i) + ": " + (reserved ? "reserved token" : "truncated") +
                          " after " + std::to_string(resp.size()) + " tokens");
    }
    if (resp.empty()) {
      ++out.dropped;
      if (!reserved && !res.truncated) {
        ++out.flagged;
        out.notes.push_back("prompt " + std::to_string(i) + ": empty response");
      }
      continue;
    }
    out.examples.push_back({prompts[i], vocab.detokenize(resp), Split::Train});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 4

struct DistillResult {
  ModelSnapshot student;
  TrainingLog log;
  std::optional<SeqKdCorpus> seqkd;
};

/// Trains a copy of `student_raw` with `cfg.kd`. `student_raw_cache`, when
/// given, memoizes the frozen student_raw logits across calls and must wrap
/// the same model.
inline DistillResult distill(const RunConfig& cfg, const ModelSnapshot& student_raw, TeacherSource& teachers,
                             const std::vector<Example>& train, const Vocab& vocab,
                             CachedLogits* student_raw_cache = nullptr, const Progress& progress = {}) {
  using Model = NeuralLM<float>;
  student_raw.check_vocab(vocab.fingerprint());
  if (student_raw.stage != Stage::Raw) throw SnapshotError("distillation must start from a raw student snapshot");
  const auto& method = cfg.kd.method;
  if (method.kind == DistillMethod::Kind::Variant) check_strict(variant_spec(method.variant), cfg.kd.allow_nontunable);

  DistillResult out;
  Model student = neural_from_snapshot<float>(student_raw);
  std::vector<Example> examples = train;
  if (method.kind == DistillMethod::Kind::SeqKd) {
    std::vector<std::string> prompts;
    prompts.reserve(train.size());
    for (const auto& e : train) prompts.push_back(e.prompt);
    auto corpus = generate_seqkd_corpus(teachers.teacher_ft_function(), vocab.size(), student.context_limit(), vocab,
                                        prompts, cfg.decode_max_new);
    if (corpus.examples.empty()) throw TrainingError("stage distill: seqkd teacher produced no usable responses");
    examples = corpus.examples;
    out.seqkd = std::move(corpus);
  }
  const auto data = encode_all(vocab, examples);

  std::unique_ptr<CachedLogits> own_cache;
  if (method.needs_student_raw() && !student_raw_cache) {
    own_cache = std::make_unique<CachedLogits>(logit_function(std::make_shared<const Model>(student)));
    student_raw_cache = own_cache.get();
  }

  StageSpec spec = stage_spec(cfg, "distill", cfg.distill_steps);
  spec.method = method.name();
  spec.lambda = cfg.kd.effective_lambda();
  spec.alpha = cfg.kd.alpha.value();

  std::vector<FrozenLogits> frozen;
  BatchLossFactory<Model> factory;
  if (!method.has_kd_term()) {
    factory = plain_sft_factory<Model>();
  } else {
    auto loss = distill_loss_fn<Model>(cfg.kd, [&frozen](std::size_t i) -> const FrozenLogits& { return frozen[i]; });
    factory = [&, loss](std::span<const TokenSeq> batch) {
      frozen.assign(batch.size(), FrozenLogits{});
      teachers.fetch(batch, method.needs_teacher_raw(), method.needs_teacher_ft(), frozen);
      if (method.needs_student_raw()) {
        for (std::size_t i = 0; i < batch.size(); ++i) frozen[i].student_raw = student_raw_cache->get(batch[i].tokens);
      }
      return loss;
    };
  }
  out.log = train_stage(student, data, spec, factory, progress);
  out.student = make_snapshot(student, vocab.fingerprint(), Stage::Distilled);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Mean per-token KL(teacher_ft || teacher_raw) over response positions.
template <LanguageModel M>
double mean_shift_kl(const M& teacher_ft, const M& teacher_raw, const Vocab& vocab,
                     const std::vector<Example>& test_set) {
  double sum = 0.0;
  std::size_t n = 0;
  const std::size_t v = vocab.size();
  std::vector<double> a(v), b(v);
  for (const auto& e : test_set) {
    const auto seq = encode_example(vocab, e);
    const auto zf = teacher_ft.forward(seq.tokens).logits;
    const auto zr = teacher_raw.forward(seq.tokens).logits;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (!seq.scored(t)) continue;
      for (std::size_t j = 0; j < v; ++j) {
        a[j] = zf[t * v + j];
        b[j] = zr[t * v + j];
      }
      sum += kl_divergence_log(log_softmax(a), log_softmax(b));
      ++n;
    }
  }
  if (n == 0) throw InputError("shift KL needs at least one response position");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Gradient-check harness

enum class GradCheckModel { Tiny, Tabular };

/// Three short sequences that fit the tiny model's context.
inline std::vector<TokenSeq> gradcheck_batch(const Vocab& vocab = Vocab{}) {
  return {encode_example(vocab, {"ab", "ba", Split::Train}), encode_example(vocab, {"c", "dd", Split::Train}),
          encode_example(vocab, {"", "xyz", Split::Train})};
}

/// Checks the batch loss of `opt` (frozen roles filled with random logits)
/// on a double-precision tiny transformer or tabular model.
inline GradCheckReport run_grad_check(GradCheckModel kind, const KdOptions& opt, std::size_t samples, double epsilon,
                                      std::uint64_t seed) {
  const Vocab vocab;
  const auto batch = gradcheck_batch(vocab);
  Rng rng(derive_seed(seed, "gradcheck_frozen"));
  std::vector<FrozenLogits> frozen;
  auto random_rows = [&](std::size_t n) {
    std::vector<float> z(n * vocab.size());
    for (auto& x : z) x = static_cast<float>(uniform_real(rng, -3.0, 3.0));
    return z;
  };
  for (const auto& s : batch) frozen.push_back({random_rows(s.size()), random_rows(s.size()), random_rows(s.size())});
  auto get = [&frozen](std::size_t i) -> const FrozenLogits& { return frozen[i]; };
  const Lambda lam{opt.effective_lambda()};
  if (kind == GradCheckModel::Tiny) {
    NeuralLM<double> m(NeuralLMConfig::tiny(vocab.size(), seed));
    return grad_check(m, batch, distill_loss_fn<NeuralLM<double>>(opt, get), lam, samples, epsilon, seed);
  }
  TabularLM<double> m(vocab.size());
  Rng init(derive_seed(seed, "gradcheck_tabular"));
  for (auto& p : m.params()) p = uniform_real(init, -1.0, 1.0);
  return grad_check(m, batch, distill_loss_fn<TabularLM<double>>(opt, get), lam, samples, epsilon, seed);
}

// ---------------------------------------------------------------------------
// Run directories

/// $DKD_RUN_DIR, or ./runs.
inline std::filesystem::path artifact_root() {
  const char* env = std::getenv("DKD_RUN_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

/// Creates <root>/<UTC timestamp>-seed<seed>, adding a suffix on collision.
inline std::filesystem::path make_run_dir(std::uint64_t seed, const std::filesystem::path& root = artifact_root()) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "-seed" + std::to_string(seed);
  std::filesystem::create_directories(root);
  for (int k = 0;; ++k) {
    auto dir = root / (k == 0 ? base : base + "-" + std::to_string(k));
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& cfg) {
  write_text_file(dir / "config.resolved", format_config(cfg.resolved));
}

// ---------------------------------------------------------------------------
// Pipeline

struct StageArtifacts {
  ModelSnapshot teacher_raw, teacher_ft, student_raw, student_distilled;
  TrainingLog teacher_pretrain_log, teacher_sft_log, student_pretrain_log, distill_log;
  std::filesystem::path run_dir;
  std::optional<EvalReport> evaluation;

  /// Stage tags match pipeline position and all vocab fingerprints agree.
  void validate() const {
    if (teacher_raw.stage != Stage::Raw || teacher_ft.stage != Stage::Ft || student_raw.stage != Stage::Raw ||
        student_distilled.stage != Stage::Distilled) {
      throw SnapshotError("stage tags do not match pipeline positions");
    }
    const auto fp = teacher_raw.vocab_fingerprint;
    if (teacher_ft.vocab_fingerprint != fp || student_raw.vocab_fingerprint != fp ||
        student_distilled.vocab_fingerprint != fp) {
      throw SnapshotError("vocab fingerprints differ between stages");
    }
  }
};

inline std::unique_ptr<TeacherSource> make_teacher_source(const RunConfig& cfg, const BaseModels& base,
                                                          const Vocab& vocab) {
  if (cfg.teacher == "local") {
    return std::make_unique<LocalTeacherSource>(
        logit_function(std::make_shared<const NeuralLM<float>>(neural_from_snapshot<float>(base.teacher_raw))),
        logit_function(std::make_shared<const NeuralLM<float>>(neural_from_snapshot<float>(base.teacher_ft))));
  }
  ClientOptions opt;
  opt.timeout = std::chrono::milliseconds(cfg.teacher_timeout_ms);
  opt.retry_budget = cfg.teacher_retries;
  return std::make_unique<RemoteTeacherSource>(net::Endpoint::parse(cfg.teacher), opt, vocab.size(),
                                               vocab.fingerprint());
}

inline std::vector<Example> eval_subset(const RunConfig& cfg, const std::vector<Example>& test) {
  if (cfg.eval_limit == 0 || cfg.eval_limit >= test.size()) return test;
  return {test.begin(), test.begin() + static_cast<std::ptrdiff_t>(cfg.eval_limit)};
}

inline void save_base_models(const std::filesystem::path& dir, const BaseModels& b) {
  save_snapshot(dir / "snapshots" / "teacher_raw.snap", b.teacher_raw);
  save_snapshot(dir / "snapshots" / "teacher_ft.snap", b.teacher_ft);
  save_snapshot(dir / "snapshots" / "student_raw.snap", b.student_raw);
  b.teacher_pretrain.write(dir / "logs" / "teacher_pretrain.log");
  b.teacher_sft.write(dir / "logs" / "teacher_sft.log");
  b.student_pretrain.write(dir / "logs" / "student_pretrain.log");
}

inline void save_seqkd_notes(const std::filesystem::path& dir, const SeqKdCorpus& c) {
  write_examples(dir / "data" / "seqkd_train.txt", c.examples);
  std::string notes = "examples = " + std::to_string(c.examples.size()) + "\nflagged = " + std::to_string(c.flagged) +
                      "\ndropped = " + std::to_string(c.dropped) + "\n";
  for (const auto& n : c.notes) notes += n + '\n';
  write_text_file(dir / "logs" / "seqkd_generation.log", notes);
}

/// Runs all four stages for `cfg` and writes every artifact into `run_dir`.
inline StageArtifacts run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir,
                                   const Progress& progress = {}, bool evaluate = true) {
  const Vocab vocab;
  write_resolved_config(run_dir, cfg);
  const auto data = prepare_data(cfg, vocab, run_dir / "data");
  auto base = train_base_models(cfg, data, vocab, progress);
  save_base_models(run_dir, base);
  const auto frozen_before = std::array{base.teacher_raw.hash(), base.teacher_ft.hash(), base.student_raw.hash()};

  auto teachers = make_teacher_source(cfg, base, vocab);
  auto result = distill(cfg, base.student_raw, *teachers, data.sft_train, vocab, nullptr, progress);
  const auto frozen_after = std::array{base.teacher_raw.hash(), base.teacher_ft.hash(), base.student_raw.hash()};
  if (frozen_before != frozen_after) throw TrainingError("stage distill: a frozen snapshot changed");

  StageArtifacts art{base.teacher_raw, base.teacher_ft, base.student_raw, result.student,
                     base.teacher_pretrain, base.teacher_sft, base.student_pretrain, result.log, run_dir, std::nullopt};
  art.validate();
  save_snapshot(run_dir / "snapshots" / "student_distilled.snap", art.student_distilled);
  art.distill_log.write(run_dir / "logs" / "distill.log");
  if (result.seqkd) save_seqkd_notes(run_dir, *result.seqkd);
  if (evaluate) {
    const auto model = neural_from_snapshot<float>(art.student_distilled);
    art.evaluation = evaluate_model(model, vocab, eval_subset(cfg, data.sft_test), cfg.decode_max_new,
                                    "student_distilled_" + cfg.kd.method.name());
    art.evaluation->write(run_dir / "eval" / "student_distilled.txt");
  }
  return art;
}

// ---------------------------------------------------------------------------
// Method comparison

struct CompareResult {
  BaseModels base;
  double shift_kl = 0.0;               ///< KL(teacher_ft || teacher_raw) on test responses
  std::vector<EvalReport> references;  ///< teacher_ft, student_raw
  std::vector<EvalReport> methods;     ///< one per distillation method, in order
  std::string table;
  double seconds = 0.0;
};

/// Table with one row per model: ROUGE F means and held-out cross-entropy.
inline std::string format_results_table(const std::vector<EvalReport>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| Method | ROUGE-1 | ROUGE-2 | ROUGE-L | Held-out CE |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.label << " | " << r.rouge1 << " | " << r.rouge2 << " | " << r.rougeL << " | " << r.heldout_ce
       << " |\n";
  }
  return os.str();
}

/// Trains stages 1-3 once, then distills and evaluates each method from the
/// same snapshots so rows differ only in the distillation objective.
inline CompareResult compare_methods(const RunConfig& cfg, const std::vector<DistillMethod>& methods,
                                     const std::filesystem::path& run_dir, const Progress& progress = {}) {
  if (methods.empty()) throw ConfigError("compare needs at least one method");
  const auto t0 = std::chrono::steady_clock::now();
  const Vocab vocab;
  write_resolved_config(run_dir, cfg);
  const auto data = prepare_data(cfg, vocab, run_dir / "data");
  CompareResult out;
  out.base = train_base_models(cfg, data, vocab, progress);
  save_base_models(run_dir, out.base);
  const auto frozen_before = std::array{out.base.teacher_raw.hash(), out.base.teacher_ft.hash(),
                                        out.base.student_raw.hash()};
  const auto test = eval_subset(cfg, data.sft_test);

  const auto teacher_raw = neural_from_snapshot<float>(out.base.teacher_raw);
  const auto teacher_ft = neural_from_snapshot<float>(out.base.teacher_ft);
  const auto student_raw = std::make_shared<const NeuralLM<float>>(neural_from_snapshot<float>(out.base.student_raw));
  out.shift_kl = mean_shift_kl(teacher_ft, teacher_raw, vocab, data.sft_test);
  out.references.push_back(evaluate_model(teacher_ft, vocab, test, cfg.decode_max_new, "teacher_ft"));
  out.references.push_back(evaluate_model(*student_raw, vocab, test, cfg.decode_max_new, "student_raw"));
  for (const auto& r : out.references) r.write(run_dir / "eval" / (r.label + ".txt"));

  auto teachers = make_teacher_source(cfg, out.base, vocab);
  CachedLogits student_raw_cache(logit_function(student_raw));
  for (const auto& m : methods) {
    RunConfig mc = cfg;
    mc.kd.method = m;
    mc.resolved["method"] = m.name();
    auto res = distill(mc, out.base.student_raw, *teachers, data.sft_train, vocab, &student_raw_cache, progress);
    const auto name = m.name();
    save_snapshot(run_dir / "snapshots" / ("student_" + name + ".snap"), res.student);
    res.log.write(run_dir / "logs" / ("distill_" + name + ".log"));
    if (res.seqkd) save_seqkd_notes(run_dir, *res.seqkd);
    const auto model = neural_from_snapshot<float>(res.student);
    out.methods.push_back(evaluate_model(model, vocab, test, cfg.decode_max_new, name));
    out.methods.back().write(run_dir / "eval" / (name + ".txt"));
  }
  const auto frozen_after = std::array{out.base.teacher_raw.hash(), out.base.teacher_ft.hash(),
                                       out.base.student_raw.hash()};
  if (frozen_before != frozen_after) throw TrainingError("stage distill: a frozen snapshot changed");

  std::vector<EvalReport> rows = out.references;
  rows.insert(rows.end(), out.methods.begin(), out.methods.end());
  out.table = format_results_table(rows);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_file(run_dir / "compare.txt", out.table + "\nshift_kl = " + format_number(out.shift_kl) +
                                               "\nseconds = " + format_number(out.seconds) + "\n");
  return out;
}

}  // namespace deltakd
