// SPDX-License-Identifier: Apache-2.0
//
// Model snapshot file. Byte layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "DKDSNAP\0"
//   8       4     format version (1)
//   12      1     model kind (1 = neural, 2 = tabular)
//   13      4x6   vocab, embed_dim, num_layers, num_heads, context_limit,
//                 feedforward_dim (u32; zero except vocab for tabular)
//   37      8     init seed (u64)
//   45      8     vocab fingerprint (u64)
//   53      1     stage tag (0 = raw, 1 = ft, 2 = distilled)
//   54      8     parameter count (u64)
//   62      4n    parameters, IEEE-754 binary32
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "deltakd/bytes.hpp"
#include "deltakd/errors.hpp"
#include "deltakd/neural_lm.hpp"
#include "deltakd/tabular_lm.hpp"

namespace deltakd {

enum class ModelKind : std::uint8_t { Neural = 1, Tabular = 2 };
enum class Stage : std::uint8_t { Raw = 0, Ft = 1, Distilled = 2 };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Raw: return "raw";
    case Stage::Ft: return "ft";
    case Stage::Distilled: return "distilled";
  }
  return "?";
}

struct ModelSnapshot {
  static constexpr std::array<char, 8> kMagic{'D', 'K', 'D', 'S', 'N', 'A', 'P', '\0'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kHeaderSize = 62;

  ModelKind kind = ModelKind::Neural;
  NeuralLMConfig config;  ///< only `vocab` is meaningful for tabular models
  std::uint64_t vocab_fingerprint = 0;
  Stage stage = Stage::Raw;
  std::vector<float> params;

  bool operator==(const ModelSnapshot&) const = default;

  std::size_t expected_param_count() const {
    return kind == ModelKind::Neural ? config.param_count() : config.vocab * config.vocab;
  }

  std::vector<std::uint8_t> encode() const {
    ByteWriter w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic.data()), kMagic.size()));
    w.u32(kVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    const bool neural = kind == ModelKind::Neural;
    w.u32(static_cast<std::uint32_t>(config.vocab));
    w.u32(neural ? static_cast<std::uint32_t>(config.embed_dim) : 0);
    w.u32(neural ? static_cast<std::uint32_t>(config.num_layers) : 0);
    w.u32(neural ? static_cast<std::uint32_t>(config.num_heads) : 0);
    w.u32(neural ? static_cast<std::uint32_t>(config.context_limit) : 0);
    w.u32(neural ? static_cast<std::uint32_t>(config.feedforward_dim) : 0);
    w.u64(neural ? config.seed : 0);
    w.u64(vocab_fingerprint);
    w.u8(static_cast<std::uint8_t>(stage));
    w.u64(params.size());
    for (float v : params) w.f32(v);
    return w.take();
  }

  static ModelSnapshot decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    std::span<const std::uint8_t> magic;
    if (!r.bytes(kMagic.size(), magic) ||
        !std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic.data()))) {
      throw SnapshotError("bad snapshot magic");
    }
    std::uint32_t version = 0;
    std::uint8_t kind = 0, stage = 0;
    std::uint32_t dims[6];
    std::uint64_t seed = 0, fp = 0, count = 0;
    bool ok = r.u32(version) && r.u8(kind);
    for (auto& d : dims) ok = ok && r.u32(d);
    ok = ok && r.u64(seed) && r.u64(fp) && r.u8(stage) && r.u64(count);
    if (!ok) throw SnapshotError("truncated snapshot header");
    if (version != kVersion) throw SnapshotError("unsupported snapshot version " + std::to_string(version));
    if (kind != 1 && kind != 2) throw SnapshotError("unknown model kind " + std::to_string(kind));
    if (stage > 2) throw SnapshotError("unknown stage tag " + std::to_string(stage));
    ModelSnapshot s;
    s.kind = static_cast<ModelKind>(kind);
    s.config = {dims[0], dims[1], dims[2], dims[3], dims[4], dims[5], seed};
    s.vocab_fingerprint = fp;
    s.stage = static_cast<Stage>(stage);
    if (s.kind == ModelKind::Neural) s.config.validate();
    if (count != s.expected_param_count()) {
      throw SnapshotError("parameter count " + std::to_string(count) + " does not match config (" +
                          std::to_string(s.expected_param_count()) + ")");
    }
    if (r.remaining() != count * 4) throw SnapshotError("parameter blob length mismatch");
    s.params.resize(count);
    for (auto& v : s.params) r.f32(v);
    return s;
  }

  std::uint64_t hash() const {
    const auto b = encode();
    return fnv1a64(b);
  }

  void check_vocab(std::uint64_t expected) const {
    if (vocab_fingerprint != expected) throw SnapshotError("snapshot vocab fingerprint does not match the run vocab");
  }
};

inline void save_snapshot(const std::filesystem::path& path, const ModelSnapshot& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = s.encode();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SnapshotError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ModelSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SnapshotError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return ModelSnapshot::decode(bytes);
}

template <class T>
ModelSnapshot make_snapshot(const NeuralLM<T>& m, std::uint64_t vocab_fp, Stage stage) {
  ModelSnapshot s;
  s.kind = ModelKind::Neural;
  s.config = m.config();
  s.vocab_fingerprint = vocab_fp;
  s.stage = stage;
  s.params.assign(m.params().begin(), m.params().end());
  return s;
}

template <class T>
ModelSnapshot make_snapshot(const TabularLM<T>& m, std::uint64_t vocab_fp, Stage stage) {
  ModelSnapshot s;
  s.kind = ModelKind::Tabular;
  s.config = NeuralLMConfig{};
  s.config.vocab = m.vocab_size();
  s.config.embed_dim = s.config.num_layers = s.config.num_heads = s.config.context_limit = s.config.feedforward_dim = 0;
  s.config.seed = 0;
  s.vocab_fingerprint = vocab_fp;
  s.stage = stage;
  s.params.assign(m.params().begin(), m.params().end());
  return s;
}

template <class T = float>
NeuralLM<T> neural_from_snapshot(const ModelSnapshot& s) {
  if (s.kind != ModelKind::Neural) throw SnapshotError("snapshot does not hold a neural model");
  return NeuralLM<T>(s.config, std::vector<T>(s.params.begin(), s.params.end()));
}

template <class T = float>
TabularLM<T> tabular_from_snapshot(const ModelSnapshot& s) {
  if (s.kind != ModelKind::Tabular) throw SnapshotError("snapshot does not hold a tabular model");
  return TabularLM<T>(s.config.vocab, std::vector<T>(s.params.begin(), s.params.end()));
}

}  // namespace deltakd
