// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Files use a flat grammar:
//
//   # comment
//   key = value
//
// Values resolve as command-line flag > config file > built-in default.
// Validation collects every offending key before failing.
#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deltakd/distill_loss.hpp"
#include "deltakd/errors.hpp"
#include "deltakd/socket.hpp"

namespace deltakd {

using ConfigValues = std::map<std::string, std::string>;

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  /// Returns an error text for a bad value.
  std::function<std::optional<std::string>(const std::string&)> check;
};

namespace config_check {

inline std::optional<double> to_double(const std::string& v) {
  if (v.empty()) return std::nullopt;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(d)) return std::nullopt;
  return d;
}

inline std::optional<std::uint64_t> to_uint(const std::string& v) {
  if (v.empty() || v.size() > 19) return std::nullopt;
  for (char c : v)
    if (c < '0' || c > '9') return std::nullopt;
  return std::stoull(v);
}

inline std::optional<bool> to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  return std::nullopt;
}

inline auto real_in(double lo, double hi, bool open_lo = false) {
  return [=](const std::string& v) -> std::optional<std::string> {
    const auto d = to_double(v);
    if (!d || *d > hi || *d < lo || (open_lo && *d == lo)) {
      std::ostringstream os;
      os << "expected a number in " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
      return os.str();
    }
    return std::nullopt;
  };
}

inline auto uint_in(std::uint64_t lo, std::uint64_t hi) {
  return [=](const std::string& v) -> std::optional<std::string> {
    const auto u = to_uint(v);
    if (!u || *u < lo || *u > hi) return "expected an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
    return std::nullopt;
  };
}

inline std::optional<std::string> boolean(const std::string& v) {
  if (!to_bool(v)) return "expected true or false";
  return std::nullopt;
}

inline std::optional<std::string> any(const std::string&) { return std::nullopt; }

inline std::optional<std::string> method(const std::string& v) {
  if (!DistillMethod::parse(v)) return "expected one of sft, fkl, rkl, seqkd, delta, v1..v8";
  return std::nullopt;
}

inline std::optional<std::string> teacher(const std::string& v) {
  if (v == "local") return std::nullopt;
  try {
    net::Endpoint::parse(v);
  } catch (const ConfigError& e) {
    return std::string("expected 'local' or an endpoint (") + e.what() + ")";
  }
  return std::nullopt;
}

inline std::optional<std::string> task_mix(const std::string& v) {
  std::istringstream is(v);
  std::string part;
  double sum = 0;
  int n = 0;
  while (std::getline(is, part, ',')) {
    const auto d = to_double(part);
    if (!d || *d < 0) return "expected three non-negative weights rev,sort,cont";
    sum += *d;
    ++n;
  }
  if (n != 3 || sum <= 0) return "expected three non-negative weights rev,sort,cont with a positive sum";
  return std::nullopt;
}

}  // namespace config_check

/// Every recognised key with its default.
inline const std::vector<ConfigKey>& run_config_schema() {
  using namespace config_check;
  static const std::vector<ConfigKey> schema{
      {"seed", "7", "master seed for data, initialisation and batching", uint_in(0, ~0ULL >> 1)},
      {"method", "delta", "distillation objective: sft fkl rkl seqkd delta v1..v8", method},
      {"alpha", "1.0", "shift intensity in [0, 1]", real_in(0, 1)},
      {"lambda", "0.5", "weight of the supervised term in [0, 1]", real_in(0, 1)},
      {"tau", "1.0", "softmax temperature of the KD term", real_in(0, 100, true)},
      {"tau_squared", "false", "scale the KD term by tau^2", boolean},
      {"allow_nontunable", "false", "run non-tunable variants (diagnostic)", boolean},
      {"batch_size", "32", "sequences per optimizer step", uint_in(1, 4096)},
      {"lr", "0.003", "Adam learning rate", real_in(0, 1)},
      {"warmup_steps", "100", "linear warmup steps", uint_in(0, 1000000)},
      {"clip_norm", "1.0", "global gradient-norm clip; 0 disables", real_in(0, 1e6)},
      {"teacher_pretrain_steps", "3000", "stage 1 steps", uint_in(0, 10000000)},
      {"teacher_sft_steps", "1500", "stage 2 steps", uint_in(0, 10000000)},
      {"student_pretrain_steps", "3000", "stage 3 steps", uint_in(0, 10000000)},
      {"distill_steps", "1500", "stage 4 steps", uint_in(0, 10000000)},
      {"pretrain_size", "50000", "pretraining sentences", uint_in(1, 100000000)},
      {"sft_size", "5000", "instruction examples, test split included", uint_in(2, 10000000)},
      {"test_size", "500", "held-out instruction examples", uint_in(1, 10000000)},
      {"task_mix", "1,1,1", "weights of the rev, sort and cont tasks", task_mix},
      {"data_dir", "", "directory with generated corpora; empty generates into the run directory", any},
      {"teacher", "local", "frozen teacher logits: local, host:port or unix:/path", teacher},
      {"teacher_timeout_ms", "30000", "logit request timeout", uint_in(1, 86400000)},
      {"teacher_retries", "3", "reconnect-and-retry budget", uint_in(0, 1000)},
      {"eval_limit", "500", "test examples scored by ROUGE; 0 means all", uint_in(0, 10000000)},
      {"decode_max_new", "32", "greedy decoding budget in tokens", uint_in(1, 4096)},
  };
  return schema;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : run_config_schema())
    if (k.name == name) return &k;
  return nullptr;
}

/// Parses the `key = value` grammar. Malformed lines and unknown or
/// duplicated keys are all reported together.
inline ConfigValues parse_config_text(const std::string& text, const std::string& source = "config") {
  ConfigValues out;
  std::vector<std::string> problems;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) {
      problems.push_back(where + ": missing key");
    } else if (!find_config_key(key)) {
      problems.push_back(where + ": unknown key '" + key + "'");
    } else if (!out.emplace(key, value).second) {
      problems.push_back(where + ": duplicate key '" + key + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw ConfigError(msg);
  }
  return out;
}

/// Layers defaults, file values and flag values, then validates the result.
inline ConfigValues resolve_config(const ConfigValues& file, const ConfigValues& flags) {
  ConfigValues out;
  for (const auto& k : run_config_schema()) out[k.name] = k.default_value;
  std::vector<std::string> problems;
  for (const auto* layer : {&file, &flags}) {
    for (const auto& [k, v] : *layer) {
      if (!find_config_key(k)) {
        problems.push_back(k + ": unknown key");
        continue;
      }
      out[k] = v;
    }
  }
  for (const auto& k : run_config_schema()) {
    if (auto err = k.check(out[k.name])) problems.push_back(k.name + " = '" + out[k.name] + "': " + *err);
  }
  if (problems.empty()) {
    const auto m = DistillMethod::parse(out["method"]);
    if (m && m->kind == DistillMethod::Kind::Variant && !variant_spec(m->variant).tunable &&
        !config_check::to_bool(out["allow_nontunable"]).value_or(false)) {
      problems.push_back("method = '" + out["method"] + "': non-tunable variant needs allow_nontunable = true");
    }
    if (std::stoull(out["test_size"]) >= std::stoull(out["sft_size"])) {
      problems.push_back("test_size = '" + out["test_size"] + "': must be smaller than sft_size");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw ConfigError(msg);
  }
  return out;
}

/// Serialises resolved values in schema order; parse_config_text reads it back.
inline std::string format_config(const ConfigValues& values) {
  std::ostringstream os;
  for (const auto& k : run_config_schema()) {
    auto it = values.find(k.name);
    os << "# " << k.help << '\n' << k.name << " = " << (it == values.end() ? k.default_value : it->second) << "\n";
  }
  return os.str();
}

/// Typed view of a resolved configuration.
struct RunConfig {
  std::uint64_t seed = 7;
  KdOptions kd;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::size_t teacher_pretrain_steps = 3000;
  std::size_t teacher_sft_steps = 1500;
  std::size_t student_pretrain_steps = 3000;
  std::size_t distill_steps = 1500;
  std::size_t pretrain_size = 50000;
  std::size_t sft_size = 5000;
  std::size_t test_size = 500;
  TaskMix task_mix;
  std::string data_dir;
  std::string teacher = "local";
  std::size_t teacher_timeout_ms = 30000;
  std::size_t teacher_retries = 3;
  std::size_t eval_limit = 500;
  std::size_t decode_max_new = 32;
  ConfigValues resolved;

  static RunConfig from(const ConfigValues& v) {
    using config_check::to_bool;
    using config_check::to_double;
    auto num = [&](const char* k) { return *to_double(v.at(k)); };
    auto count = [&](const char* k) { return static_cast<std::size_t>(std::stoull(v.at(k))); };
    RunConfig c;
    c.resolved = v;
    c.seed = std::stoull(v.at("seed"));
    c.kd.method = *DistillMethod::parse(v.at("method"));
    c.kd.alpha = Alpha{num("alpha")};
    c.kd.lambda = Lambda{num("lambda")};
    c.kd.tau = Temperature{num("tau")};
    c.kd.scale_tau_squared = *to_bool(v.at("tau_squared"));
    c.kd.allow_nontunable = *to_bool(v.at("allow_nontunable"));
    c.batch_size = count("batch_size");
    c.adam.lr = num("lr");
    c.adam.warmup_steps = count("warmup_steps");
    c.adam.clip_norm = num("clip_norm");
    c.teacher_pretrain_steps = count("teacher_pretrain_steps");
    c.teacher_sft_steps = count("teacher_sft_steps");
    c.student_pretrain_steps = count("student_pretrain_steps");
    c.distill_steps = count("distill_steps");
    c.pretrain_size = count("pretrain_size");
    c.sft_size = count("sft_size");
    c.test_size = count("test_size");
    std::istringstream mix(v.at("task_mix"));
    std::string part;
    std::vector<double> w;
    while (std::getline(mix, part, ',')) w.push_back(*to_double(part));
    c.task_mix = {w.at(0), w.at(1), w.at(2)};
    c.data_dir = v.at("data_dir");
    c.teacher = v.at("teacher");
    c.teacher_timeout_ms = count("teacher_timeout_ms");
    c.teacher_retries = count("teacher_retries");
    c.eval_limit = count("eval_limit");
    c.decode_max_new = count("decode_max_new");
    return c;
  }

  /// Defaults with `overrides` applied.
  static RunConfig defaults(const ConfigValues& overrides = {}) { return from(resolve_config({}, overrides)); }
};

}  // namespace deltakd
