// SPDX-License-Identifier: Apache-2.0
//
// Providers of frozen teacher logits for the distillation stage: in-process
// models or a remote logit server.
#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deltakd/distill_loss.hpp"
#include "deltakd/logit_client.hpp"
#include "deltakd/logit_server.hpp"

namespace deltakd {

class TeacherSource {
 public:
  virtual ~TeacherSource() = default;
  /// Fills the requested teacher roles of out[i] for batch[i].
  virtual void fetch(std::span<const TokenSeq> batch, bool need_raw, bool need_ft, std::span<FrozenLogits> out) = 0;
  /// Logits of teacher_ft for one sequence, used for decoding.
  virtual LogitFunction teacher_ft_function() = 0;
  virtual std::string describe() const = 0;
};

/// Memoized logits of a deterministic model, keyed by token sequence.
class CachedLogits {
 public:
  explicit CachedLogits(LogitFunction fn) : fn_(std::move(fn)) {
    if (!fn_) throw ConfigError("cached logits need a model");
  }

  const std::vector<float>& get(const std::vector<TokenId>& tokens) {
    auto it = cache_.find(tokens);
    if (it == cache_.end()) it = cache_.emplace(tokens, fn_(tokens)).first;
    return it->second;
  }

  const LogitFunction& function() const noexcept { return fn_; }
  std::size_t size() const noexcept { return cache_.size(); }

 private:
  LogitFunction fn_;
  std::map<std::vector<TokenId>, std::vector<float>> cache_;
};

class LocalTeacherSource : public TeacherSource {
 public:
  LocalTeacherSource(LogitFunction teacher_raw, LogitFunction teacher_ft)
      : raw_(std::move(teacher_raw)), ft_(std::move(teacher_ft)) {}

  void fetch(std::span<const TokenSeq> batch, bool need_raw, bool need_ft, std::span<FrozenLogits> out) override {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (need_raw) out[i].teacher_raw = raw_.get(batch[i].tokens);
      if (need_ft) out[i].teacher_ft = ft_.get(batch[i].tokens);
    }
  }

  LogitFunction teacher_ft_function() override { return ft_.function(); }
  std::string describe() const override { return "local"; }

 private:
  CachedLogits raw_, ft_;
};

/// Fetches through a LogitClient: one padded request per role per batch
/// (split only when the batch exceeds the server's max_batch), all roles in
/// flight together.
class RemoteTeacherSource : public TeacherSource {
 public:
  RemoteTeacherSource(const net::Endpoint& where, ClientOptions opt, std::size_t vocab,
                      std::uint64_t vocab_fingerprint)
      : client_(where, opt) {
    info_ = client_.model_info();
    if (info_.vocab != vocab) {
      throw ConfigError("logit server vocab " + std::to_string(info_.vocab) + " differs from run vocab " +
                        std::to_string(vocab));
    }
    if (info_.vocab_fingerprint != vocab_fingerprint) throw ConfigError("logit server vocab fingerprint differs");
    if (info_.max_batch == 0) throw ProtocolError("length: logit server reports max_batch 0");
  }

  void fetch(std::span<const TokenSeq> batch, bool need_raw, bool need_ft, std::span<FrozenLogits> out) override {
    std::vector<wire::WireRole> roles;
    if (need_raw) roles.push_back(wire::WireRole::TeacherRaw);
    if (need_ft) roles.push_back(wire::WireRole::TeacherFt);
    for (auto r : roles) {
      if (!info_.serves(r)) throw ConfigError(std::string("logit server does not serve ") + wire::wire_role_name(static_cast<std::uint8_t>(r)));
    }
    if (roles.empty() || batch.empty()) return;

    struct Chunk {
      std::size_t first, count, seq_len;
    };
    std::vector<Chunk> chunks;
    for (std::size_t b = 0; b < batch.size(); b += info_.max_batch) {
      const std::size_t n = std::min<std::size_t>(info_.max_batch, batch.size() - b);
      std::size_t len = 0;
      for (std::size_t i = b; i < b + n; ++i) len = std::max(len, batch[i].size());
      if (len > info_.context_limit) throw InputError("sequence longer than the served context limit");
      chunks.push_back({b, n, len});
    }
    std::vector<wire::LogitRequest> reqs;
    for (auto role : roles) {
      for (const auto& c : chunks) {
        wire::LogitRequest r{0, static_cast<std::uint8_t>(role), static_cast<std::uint16_t>(c.count),
                             static_cast<std::uint16_t>(c.seq_len), {}};
        r.ids.assign(c.count * c.seq_len, Vocab::kPad);
        for (std::size_t i = 0; i < c.count; ++i) {
          const auto& toks = batch[c.first + i].tokens;
          std::copy(toks.begin(), toks.end(), r.ids.begin() + static_cast<std::ptrdiff_t>(i * c.seq_len));
        }
        reqs.push_back(std::move(r));
      }
    }
    const auto resps = client_.request_many(std::move(reqs));
    const std::size_t v = info_.vocab;
    std::size_t k = 0;
    for (auto role : roles) {
      for (const auto& c : chunks) {
        const auto& resp = resps[k++];
        if (resp.batch != c.count || resp.seq_len != c.seq_len || resp.vocab != v) {
          throw ProtocolError("shape: logit response does not match its request");
        }
        for (std::size_t i = 0; i < c.count; ++i) {
          auto& dst = role == wire::WireRole::TeacherRaw ? out[c.first + i].teacher_raw : out[c.first + i].teacher_ft;
          const std::size_t n = batch[c.first + i].size();
          dst.resize(n * v);
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < v; ++j) dst[t * v + j] = resp.value(i, t, j);
        }
      }
    }
  }

  LogitFunction teacher_ft_function() override {
    if (!info_.serves(wire::WireRole::TeacherFt)) throw ConfigError("logit server does not serve teacher_ft");
    return [this](std::span<const TokenId> tokens) {
      std::vector<std::uint32_t> ids(tokens.begin(), tokens.end());
      const auto len = static_cast<std::uint16_t>(ids.size());
      const auto resp = client_.request_logits(wire::WireRole::TeacherFt, 1, len,
                                               std::move(ids));
      std::vector<float> z(tokens.size() * resp.vocab);
      for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t j = 0; j < resp.vocab; ++j) z[t * resp.vocab + j] = resp.value(0, t, j);
      return z;
    };
  }

  std::string describe() const override { return client_.endpoint().str(); }
  const wire::ModelInfoResponse& info() const noexcept { return info_; }

 private:
  LogitClient client_;
  wire::ModelInfoResponse info_;
};

}  // namespace deltakd
