// SPDX-License-Identifier: Apache-2.0
//
// deltakd command-line tool. Failures print one line
// `error: <kind>: <message>` on stderr and exit non-zero.
#include <CLI11.hpp>

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "deltakd/deltakd.hpp"

namespace fs = std::filesystem;
using namespace deltakd;

namespace {

/// `--foo-bar` flags for every config key, plus `--config FILE`.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
    for (const auto& k : run_config_schema()) {
      std::string flag = "--" + k.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      const bool boolean = k.default_value == "true" || k.default_value == "false";
      CLI::Option* opt = boolean ? app->add_flag(flag + "{true}", values[k.name], k.help)
                                 : app->add_option(flag, values[k.name], k.help + " (default: " +
                                                                             (k.default_value.empty() ? "none" : k.default_value) + ")");
      options[k.name] = opt;
    }
  }

  RunConfig resolve() const {
    ConfigValues file, flags;
    if (!config_file.empty()) file = parse_config_text(read_text_file(config_file), config_file);
    for (const auto& [k, opt] : options)
      if (opt->count() > 0) flags[k] = values.at(k);
    return RunConfig::from(resolve_config(file, flags));
  }
};

Progress progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const StepRecord& r) {
    if (r.step == 1 || r.step % 100 == 0) std::cerr << r.to_line() << '\n';
  };
}

void print_eval(const EvalReport& r) {
  std::cout << "eval label=" << r.label << " examples=" << r.records.size() << " flagged=" << r.flagged
            << " rouge1_f=" << format_number(r.rouge1) << " rouge2_f=" << format_number(r.rouge2)
            << " rougeL_f=" << format_number(r.rougeL) << " heldout_ce=" << format_number(r.heldout_ce) << '\n';
}

ModelSnapshot load_stage(const fs::path& path, Stage expected, const Vocab& vocab) {
  auto s = load_snapshot(path);
  s.check_vocab(vocab.fingerprint());
  if (s.stage != expected) {
    throw SnapshotError(path.string() + " holds a " + stage_name(s.stage) + " snapshot, expected " +
                        stage_name(expected));
  }
  return s;
}

/// Uses <from>/data for the corpora when no data_dir was configured.
void adopt_run_data(RunConfig& cfg, const std::string& from) {
  if (from.empty() || !cfg.data_dir.empty()) return;
  const fs::path d = fs::path(from) / "data";
  if (fs::exists(d / "sft_train.txt")) {
    cfg.data_dir = d.string();
    cfg.resolved["data_dir"] = cfg.data_dir;
  }
}

std::string pick(const std::string& explicit_path, const std::string& from, const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  if (!from.empty()) return (fs::path(from) / "snapshots" / name).string();
  return {};
}

std::vector<DistillMethod> parse_methods(const std::string& list) {
  std::vector<DistillMethod> out;
  std::vector<std::string> bad;
  std::istringstream is(list);
  std::string part;
  while (std::getline(is, part, ',')) {
    if (auto m = DistillMethod::parse(part)) out.push_back(*m);
    else bad.push_back(part);
  }
  if (!bad.empty()) {
    std::string msg = "unknown methods:";
    for (const auto& b : bad) msg += " '" + b + "'";
    throw ConfigError(msg);
  }
  return out;
}

int serve_until_signal(LogitServer& server, const net::Endpoint& where) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by the server threads
  const auto bound = server.start(where);
  std::cout << "listening=" << bound.str() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  std::cout << "stopped signal=" << sig << " requests_served=" << server.requests_served()
            << " errors_sent=" << server.errors_sent() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta-KD desk-scale distillation toolkit"};
  app.require_subcommand(0, 1);
  bool list_variants = false;
  bool quiet = false;
  app.add_flag("--list-variants", list_variants, "print the eight parallel variants and their tunability");
  app.add_flag("-q,--quiet", quiet, "no per-step progress on stderr");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the pretraining and instruction corpora");
  ConfigFlags gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory (default: <run dir>/data)");

  // train
  auto* train = app.add_subcommand("train", "stages 1-3: teacher pretrain, teacher SFT, student pretrain");
  ConfigFlags train_cfg;
  train_cfg.attach(train);

  // distill
  auto* dist = app.add_subcommand("distill", "stage 4: distil a raw student against frozen teachers");
  ConfigFlags dist_cfg;
  dist_cfg.attach(dist);
  std::string dist_from, dist_student, dist_traw, dist_tft;
  dist->add_option("--from", dist_from, "run directory of a previous `train`")->check(CLI::ExistingDirectory);
  dist->add_option("--student-raw", dist_student, "student_raw snapshot");
  dist->add_option("--teacher-raw", dist_traw, "teacher_raw snapshot (local teacher)");
  dist->add_option("--teacher-ft", dist_tft, "teacher_ft snapshot (local teacher)");

  // serve-logits
  auto* serve = app.add_subcommand("serve-logits", "serve frozen teacher logits until SIGINT or SIGTERM");
  std::string serve_from, serve_traw, serve_tft, serve_listen = "127.0.0.1:7070";
  std::size_t serve_workers = 2, serve_max_batch = 64;
  serve->add_option("--from", serve_from, "run directory holding snapshots/")->check(CLI::ExistingDirectory);
  serve->add_option("--teacher-raw", serve_traw, "teacher_raw snapshot");
  serve->add_option("--teacher-ft", serve_tft, "teacher_ft snapshot");
  serve->add_option("--listen", serve_listen, "host:port or unix:/path")->capture_default_str();
  serve->add_option("--workers", serve_workers, "forward-pass worker threads")->capture_default_str();
  serve->add_option("--max-batch", serve_max_batch, "largest accepted batch")->capture_default_str();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "ROUGE and held-out cross-entropy on the test split");
  ConfigFlags eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_model, eval_endpoint, eval_role = "teacher_ft";
  eval->add_option("--model", eval_model, "snapshot to evaluate");
  eval->add_option("--endpoint", eval_endpoint, "logit server to evaluate instead of a snapshot");
  eval->add_option("--role", eval_role, "served role with --endpoint")
      ->check(CLI::IsMember({"teacher_raw", "teacher_ft"}))
      ->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "analytic vs central-difference gradients");
  std::string gc_model = "tiny", gc_loss = "delta";
  double gc_alpha = 0.5, gc_lambda = 0.0, gc_eps = 1e-5, gc_tau = 1.0;
  std::size_t gc_samples = 20;
  std::uint64_t gc_seed = 7;
  bool gc_nontunable = false;
  double gc_max = -1.0;
  gc->add_option("--model", gc_model, "tiny or tabular")->check(CLI::IsMember({"tiny", "tabular"}))->capture_default_str();
  gc->add_option("--loss", gc_loss, "sft fkl rkl delta v1..v8")->capture_default_str();
  gc->add_option("--alpha", gc_alpha)->capture_default_str();
  gc->add_option("--lambda", gc_lambda, "supervised weight; 0 isolates the KD term")->capture_default_str();
  gc->add_option("--tau", gc_tau)->capture_default_str();
  gc->add_option("--samples", gc_samples)->capture_default_str();
  gc->add_option("--epsilon", gc_eps)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_flag("--allow-nontunable", gc_nontunable);
  gc->add_option("--max-error", gc_max, "fail when the max relative error exceeds this");

  // run-pipeline
  auto* pipe = app.add_subcommand("run-pipeline", "all four stages plus evaluation of the distilled student");
  ConfigFlags pipe_cfg;
  pipe_cfg.attach(pipe);

  // compare
  auto* cmp = app.add_subcommand("compare", "distil with several methods from shared stage 1-3 snapshots");
  ConfigFlags cmp_cfg;
  cmp_cfg.attach(cmp);
  std::string cmp_methods = "sft,fkl,rkl,seqkd,delta";
  cmp->add_option("--methods", cmp_methods, "comma-separated methods")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage_error: " << msg << '\n';
    return 2;
  }

  try {
    const Vocab vocab;
    const auto progress = progress_printer(quiet);
    if (list_variants) {
      std::cout << variant_manifest();
      return 0;
    }
    if (gen->parsed()) {
      const auto cfg = gen_cfg.resolve();
      fs::path out = gen_out;
      if (out.empty()) {
        const auto dir = make_run_dir(cfg.seed);
        write_resolved_config(dir, cfg);
        out = dir / "data";
      }
      const auto c = generate_corpora(cfg, vocab);
      write_corpora(out, c);
      std::cout << "data_dir=" << out.string() << " pretrain=" << c.pretrain.examples.size()
                << " sft_train=" << c.sft.manifest.train_count << " sft_test=" << c.sft.manifest.test_count << '\n';
    } else if (train->parsed()) {
      const auto cfg = train_cfg.resolve();
      const auto dir = make_run_dir(cfg.seed);
      write_resolved_config(dir, cfg);
      const auto data = prepare_data(cfg, vocab, dir / "data");
      const auto base = train_base_models(cfg, data, vocab, progress);
      save_base_models(dir, base);
      std::cout << "run_dir=" << dir.string() << '\n';
    } else if (dist->parsed()) {
      auto cfg = dist_cfg.resolve();
      adopt_run_data(cfg, dist_from);
      const auto student_path = pick(dist_student, dist_from, "student_raw.snap");
      if (student_path.empty()) throw ConfigError("distill needs --student-raw or --from");
      BaseModels base;
      base.student_raw = load_stage(student_path, Stage::Raw, vocab);
      if (cfg.teacher == "local") {
        const auto traw = pick(dist_traw, dist_from, "teacher_raw.snap");
        const auto tft = pick(dist_tft, dist_from, "teacher_ft.snap");
        if (traw.empty() || tft.empty()) {
          throw ConfigError("local teachers need --teacher-raw and --teacher-ft, or --from");
        }
        base.teacher_raw = load_stage(traw, Stage::Raw, vocab);
        base.teacher_ft = load_stage(tft, Stage::Ft, vocab);
      }
      const auto dir = make_run_dir(cfg.seed);
      write_resolved_config(dir, cfg);
      const auto data = prepare_data(cfg, vocab, dir / "data");
      auto teachers = make_teacher_source(cfg, base, vocab);
      const auto res = distill(cfg, base.student_raw, *teachers, data.sft_train, vocab, nullptr, progress);
      save_snapshot(dir / "snapshots" / "student_distilled.snap", res.student);
      res.log.write(dir / "logs" / "distill.log");
      if (res.seqkd) save_seqkd_notes(dir, *res.seqkd);
      const auto report = evaluate_model(neural_from_snapshot<float>(res.student), vocab, eval_subset(cfg, data.sft_test),
                                         cfg.decode_max_new, "student_distilled_" + cfg.kd.method.name());
      report.write(dir / "eval" / "student_distilled.txt");
      std::cout << "run_dir=" << dir.string() << '\n';
      print_eval(report);
    } else if (serve->parsed()) {
      ServedModels served;
      served.vocab = vocab.size();
      served.vocab_fingerprint = vocab.fingerprint();
      for (auto [path, stage, slot] : {std::tuple{pick(serve_traw, serve_from, "teacher_raw.snap"), Stage::Raw, &served.teacher_raw},
                                       std::tuple{pick(serve_tft, serve_from, "teacher_ft.snap"), Stage::Ft, &served.teacher_ft}}) {
        if (path.empty()) continue;
        const auto snap = load_stage(path, stage, vocab);
        served.context_limit = snap.config.context_limit;
        *slot = logit_function(std::make_shared<const NeuralLM<float>>(neural_from_snapshot<float>(snap)));
      }
      if (served.role_mask() == 0) throw ConfigError("serve-logits needs --teacher-raw, --teacher-ft or --from");
      LogitServer server(served, ServerOptions{serve_max_batch, serve_workers});
      return serve_until_signal(server, net::Endpoint::parse(serve_listen));
    } else if (eval->parsed()) {
      const auto cfg = eval_cfg.resolve();
      if (eval_model.empty() == eval_endpoint.empty()) throw ConfigError("evaluate needs exactly one of --model, --endpoint");
      const auto dir = make_run_dir(cfg.seed);
      write_resolved_config(dir, cfg);
      const auto data = prepare_data(cfg, vocab, dir / "data");
      const auto test = eval_subset(cfg, data.sft_test);
      EvalReport report;
      if (!eval_model.empty()) {
        auto snap = load_snapshot(eval_model);
        snap.check_vocab(vocab.fingerprint());
        report = evaluate_model(neural_from_snapshot<float>(snap), vocab, test, cfg.decode_max_new,
                                fs::path(eval_model).stem().string());
      } else {
        ClientOptions opt;
        opt.timeout = std::chrono::milliseconds(cfg.teacher_timeout_ms);
        opt.retry_budget = cfg.teacher_retries;
        LogitClient client(net::Endpoint::parse(eval_endpoint), opt);
        const auto info = client.model_info();
        if (info.vocab_fingerprint != vocab.fingerprint()) throw ConfigError("logit server vocab fingerprint differs");
        const auto role = eval_role == "teacher_raw" ? wire::WireRole::TeacherRaw : wire::WireRole::TeacherFt;
        auto fn = [&](std::span<const TokenId> tokens) {
          std::vector<std::uint32_t> ids(tokens.begin(), tokens.end());
          const auto len = static_cast<std::uint16_t>(ids.size());
          const auto resp = client.request_logits(role, 1, len, std::move(ids));
          std::vector<float> z(tokens.size() * resp.vocab);
          for (std::size_t t = 0; t < tokens.size(); ++t)
            for (std::size_t j = 0; j < resp.vocab; ++j) z[t * resp.vocab + j] = resp.value(0, t, j);
          return z;
        };
        report = evaluate_with(fn, info.vocab, info.context_limit, vocab, test, cfg.decode_max_new);
        report.heldout_ce = heldout_response_ce_with(fn, info.vocab, vocab, test);
        report.label = eval_role + "@" + eval_endpoint;
      }
      report.write(dir / "eval" / "report.txt");
      std::cout << "run_dir=" << dir.string() << '\n';
      print_eval(report);
    } else if (gc->parsed()) {
      KdOptions opt;
      const auto m = DistillMethod::parse(gc_loss);
      if (!m || m->kind == DistillMethod::Kind::SeqKd) throw ConfigError("--loss expects sft, fkl, rkl, delta or v1..v8");
      opt.method = *m;
      opt.alpha = Alpha{gc_alpha};
      opt.lambda = Lambda{gc_lambda};
      opt.tau = Temperature{gc_tau};
      opt.allow_nontunable = gc_nontunable;
      const auto kind = gc_model == "tiny" ? GradCheckModel::Tiny : GradCheckModel::Tabular;
      const auto rep = run_grad_check(kind, opt, gc_samples, gc_eps, gc_seed);
      for (const auto& e : rep.entries) {
        std::cout << "param=" << e.index << " analytic=" << format_number(e.analytic)
                  << " numeric=" << format_number(e.numeric) << " rel_error=" << format_number(e.rel_error) << '\n';
      }
      std::cout << "gradcheck model=" << gc_model << " loss=" << m->name() << " samples=" << rep.entries.size()
                << " max_rel_error=" << format_number(rep.max_rel_error)
                << " mean_rel_error=" << format_number(rep.mean_rel_error) << '\n';
      if (gc_max >= 0 && rep.max_rel_error > gc_max) {
        std::cerr << "error: gradcheck_failed: max relative error " << format_number(rep.max_rel_error) << " exceeds "
                  << format_number(gc_max) << '\n';
        return 1;
      }
    } else if (pipe->parsed()) {
      const auto cfg = pipe_cfg.resolve();
      const auto dir = make_run_dir(cfg.seed);
      const auto art = run_pipeline(cfg, dir, progress);
      std::cout << "run_dir=" << dir.string() << '\n';
      if (art.evaluation) print_eval(*art.evaluation);
    } else if (cmp->parsed()) {
      const auto cfg = cmp_cfg.resolve();
      const auto methods = parse_methods(cmp_methods);
      const auto dir = make_run_dir(cfg.seed);
      const auto res = compare_methods(cfg, methods, dir, progress);
      std::cout << "run_dir=" << dir.string() << "\n\n" << res.table << "\nshift_kl=" << format_number(res.shift_kl)
                << " seconds=" << format_number(res.seconds) << '\n';
    } else {
      std::cerr << "error: usage_error: a subcommand is required (see --help)\n";
      return 2;
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << e.kind() << ": " << msg << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io_error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
