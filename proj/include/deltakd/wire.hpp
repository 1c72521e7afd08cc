// SPDX-License-Identifier: Apache-2.0
//
// Framed binary protocol for teacher logits.
//
//   offset  size  field
//   0       4     magic "DKD1"
//   4       1     msg_type
//   5       8     request_id  (u64 LE)
//   13      4     payload_len (u32 LE)
//   17      n     payload
//
// Payloads:
//   logit_request        role u8, batch u16, seq_len u16, ids u32[batch*seq_len]
//   logit_response       batch u16, seq_len u16, vocab u32, binary16[batch*seq_len*vocab]
//   error                UTF-8 message
//   model_info_request   (empty)
//   model_info_response  vocab u32, context_limit u32, role_mask u8, max_batch u16,
//                        vocab_fingerprint u64
//
// Every multi-byte field is little-endian.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deltakd/bytes.hpp"
#include "deltakd/errors.hpp"
#include "deltakd/fp16.hpp"

namespace deltakd::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'D', 'K', 'D', '1'};
inline constexpr std::size_t kHeaderSize = 17;
/// Frames larger than this are rejected before any allocation.
inline constexpr std::uint32_t kMaxPayload = 256u << 20;

enum class MsgType : std::uint8_t {
  LogitRequest = 1,
  LogitResponse = 2,
  Error = 3,
  ModelInfoRequest = 4,
  ModelInfoResponse = 5,
};

enum class WireRole : std::uint8_t { TeacherRaw = 1, TeacherFt = 2 };

inline const char* wire_role_name(std::uint8_t r) {
  switch (r) {
    case 1: return "teacher_raw";
    case 2: return "teacher_ft";
    default: return "unknown";
  }
}

struct LogitRequest {
  std::uint64_t request_id = 0;
  std::uint8_t role = 0;  ///< raw byte; the server rejects unknown roles
  std::uint16_t batch = 0;
  std::uint16_t seq_len = 0;
  std::vector<std::uint32_t> ids;  ///< row-major batch x seq_len

  bool operator==(const LogitRequest&) const = default;
};

struct LogitResponse {
  std::uint64_t request_id = 0;
  std::uint16_t batch = 0;
  std::uint16_t seq_len = 0;
  std::uint32_t vocab = 0;
  std::vector<std::uint16_t> halves;  ///< batch x seq_len x vocab

  bool operator==(const LogitResponse&) const = default;

  float value(std::size_t b, std::size_t t, std::size_t j) const {
    return static_cast<float>(fp16_decode(halves[(b * seq_len + t) * vocab + j]));
  }
};

struct ErrorMessage {
  std::uint64_t request_id = 0;
  std::string message;

  bool operator==(const ErrorMessage&) const = default;
};

struct ModelInfoRequest {
  std::uint64_t request_id = 0;

  bool operator==(const ModelInfoRequest&) const = default;
};

struct ModelInfoResponse {
  std::uint64_t request_id = 0;
  std::uint32_t vocab = 0;
  std::uint32_t context_limit = 0;
  std::uint8_t role_mask = 0;  ///< bit (role - 1) set when the role is served
  std::uint16_t max_batch = 0;
  std::uint64_t vocab_fingerprint = 0;

  bool operator==(const ModelInfoResponse&) const = default;

  bool serves(WireRole r) const { return role_mask & (1u << (static_cast<unsigned>(r) - 1)); }
};

using Message = std::variant<LogitRequest, LogitResponse, ErrorMessage, ModelInfoRequest, ModelInfoResponse>;

inline std::uint64_t request_id_of(const Message& m) {
  return std::visit([](const auto& x) { return x.request_id; }, m);
}

inline MsgType type_of(const Message& m) { return static_cast<MsgType>(m.index() + 1); }

/// Builds a response from float logits, FP16-rounded.
inline LogitResponse make_response(std::uint64_t id, std::uint16_t batch, std::uint16_t seq_len, std::uint32_t vocab,
                                   std::span<const float> logits) {
  if (logits.size() != std::size_t(batch) * seq_len * vocab) throw DomainError("logit buffer size mismatch");
  LogitResponse r{id, batch, seq_len, vocab, {}};
  r.halves.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.halves[i] = fp16_encode(logits[i]);
  return r;
}

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t n;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      n = 1;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      n = 2;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      n = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + n >= s.size()) return false;
    for (std::size_t k = 1; k <= n; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    static constexpr std::uint32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[n] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
    i += n + 1;
  }
  return true;
}

inline void header(ByteWriter& w, MsgType t, std::uint64_t id, std::size_t payload) {
  if (payload > kMaxPayload) throw ProtocolError("payload_len: frame payload exceeds " + std::to_string(kMaxPayload));
  w.bytes(kMagic);
  w.u8(static_cast<std::uint8_t>(t));
  w.u64(id);
  w.u32(static_cast<std::uint32_t>(payload));
}

[[noreturn]] inline void fail(const std::string& invariant, const std::string& detail) {
  throw ProtocolError(invariant + ": " + detail);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(const Message& msg) {
  ByteWriter w;
  std::visit(
      [&w](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LogitRequest>) {
          const std::size_t n = std::size_t(m.batch) * m.seq_len;
          if (n == 0) detail::fail("shape", "batch * seq_len must be positive");
          if (m.ids.size() != n) detail::fail("shape", "id count does not match batch * seq_len");
          detail::header(w, MsgType::LogitRequest, m.request_id, 5 + 4 * n);
          w.u8(m.role);
          w.u16(m.batch);
          w.u16(m.seq_len);
          for (auto id : m.ids) w.u32(id);
        } else if constexpr (std::is_same_v<M, LogitResponse>) {
          const std::size_t n = std::size_t(m.batch) * m.seq_len * m.vocab;
          if (n == 0) detail::fail("shape", "batch * seq_len * vocab must be positive");
          if (m.halves.size() != n) detail::fail("shape", "value count does not match batch * seq_len * vocab");
          for (auto h : m.halves) {
            if (!fp16_is_finite(h)) detail::fail("finite", "response carries a non-finite half");
          }
          detail::header(w, MsgType::LogitResponse, m.request_id, 8 + 2 * n);
          w.u16(m.batch);
          w.u16(m.seq_len);
          w.u32(m.vocab);
          for (auto h : m.halves) w.u16(h);
        } else if constexpr (std::is_same_v<M, ErrorMessage>) {
          if (!detail::valid_utf8(m.message)) detail::fail("utf8", "error message is not valid UTF-8");
          detail::header(w, MsgType::Error, m.request_id, m.message.size());
          w.text(m.message);
        } else if constexpr (std::is_same_v<M, ModelInfoRequest>) {
          detail::header(w, MsgType::ModelInfoRequest, m.request_id, 0);
        } else {
          detail::header(w, MsgType::ModelInfoResponse, m.request_id, 19);
          w.u32(m.vocab);
          w.u32(m.context_limit);
          w.u8(m.role_mask);
          w.u16(m.max_batch);
          w.u64(m.vocab_fingerprint);
        }
      },
      msg);
  return w.take();
}

struct FrameHeader {
  MsgType type;
  std::uint64_t request_id;
  std::uint32_t payload_len;
};

/// Validates the 17 header bytes. Does not look at the payload.
inline FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    detail::fail("length", "header needs 17 bytes, have " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kMagic[i]) detail::fail("magic", "expected \"DKD1\"");
  }
  ByteReader r(bytes.subspan(4, kHeaderSize - 4));
  std::uint8_t t = 0;
  FrameHeader h{};
  r.u8(t);
  r.u64(h.request_id);
  r.u32(h.payload_len);
  if (t < 1 || t > 5) detail::fail("msg_type", "unknown message type " + std::to_string(t));
  h.type = static_cast<MsgType>(t);
  if (h.payload_len > kMaxPayload) {
    detail::fail("payload_len", "payload of " + std::to_string(h.payload_len) + " bytes exceeds the cap");
  }
  return h;
}

/// Decodes a payload that belongs to header `h`.
inline Message decode_payload(const FrameHeader& h, std::span<const std::uint8_t> payload) {
  if (payload.size() != h.payload_len) detail::fail("length", "payload size does not match payload_len");
  ByteReader r(payload);
  switch (h.type) {
    case MsgType::LogitRequest: {
      LogitRequest m{h.request_id, 0, 0, 0, {}};
      if (!r.u8(m.role) || !r.u16(m.batch) || !r.u16(m.seq_len)) detail::fail("length", "logit_request too short");
      const std::size_t n = std::size_t(m.batch) * m.seq_len;
      if (n == 0) detail::fail("shape", "batch * seq_len must be positive");
      if (r.remaining() != 4 * n) detail::fail("length", "logit_request ids do not fill payload_len");
      m.ids.resize(n);
      for (auto& id : m.ids) r.u32(id);
      return m;
    }
    case MsgType::LogitResponse: {
      LogitResponse m{h.request_id, 0, 0, 0, {}};
      if (!r.u16(m.batch) || !r.u16(m.seq_len) || !r.u32(m.vocab)) detail::fail("length", "logit_response too short");
      const std::size_t n = std::size_t(m.batch) * m.seq_len * m.vocab;
      if (n == 0) detail::fail("shape", "batch * seq_len * vocab must be positive");
      if (r.remaining() != 2 * n) detail::fail("length", "logit_response values do not fill payload_len");
      m.halves.resize(n);
      for (auto& v : m.halves) {
        r.u16(v);
        if (!fp16_is_finite(v)) detail::fail("finite", "response carries a non-finite half");
      }
      return m;
    }
    case MsgType::Error: {
      std::string text(payload.begin(), payload.end());
      if (!detail::valid_utf8(text)) detail::fail("utf8", "error message is not valid UTF-8");
      return ErrorMessage{h.request_id, std::move(text)};
    }
    case MsgType::ModelInfoRequest:
      if (!payload.empty()) detail::fail("length", "model_info_request carries no payload");
      return ModelInfoRequest{h.request_id};
    case MsgType::ModelInfoResponse: {
      ModelInfoResponse m{h.request_id};
      if (payload.size() != 19) detail::fail("length", "model_info_response payload must be 19 bytes");
      r.u32(m.vocab);
      r.u32(m.context_limit);
      r.u8(m.role_mask);
      r.u16(m.max_batch);
      r.u64(m.vocab_fingerprint);
      return m;
    }
  }
  detail::fail("msg_type", "unreachable");
}

/// Decodes exactly one frame occupying all of `bytes`.
inline Message decode_frame(std::span<const std::uint8_t> bytes) {
  const auto h = decode_header(bytes);
  const std::size_t avail = bytes.size() - kHeaderSize;
  if (avail < h.payload_len) {
    detail::fail("length", "payload_len " + std::to_string(h.payload_len) + " exceeds the " + std::to_string(avail) +
                               " bytes available");
  }
  if (avail > h.payload_len) detail::fail("length", "trailing bytes after the frame");
  return decode_payload(h, bytes.subspan(kHeaderSize));
}

/// Incremental decoder for a byte stream. Incomplete frames stay buffered,
/// so the stream position is recoverable after a short read.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  /// Next complete message, or nullopt when more bytes are needed. A
  /// malformed frame throws ProtocolError; the stream is then unusable.
  std::optional<Message> next() {
    if (buf_.size() - pos_ < kHeaderSize) return std::nullopt;
    const std::span<const std::uint8_t> view(buf_.data() + pos_, buf_.size() - pos_);
    const auto h = decode_header(view);
    if (view.size() - kHeaderSize < h.payload_len) return std::nullopt;
    auto msg = decode_payload(h, view.subspan(kHeaderSize, h.payload_len));
    pos_ += kHeaderSize + h.payload_len;
    if (pos_ > (1u << 16) && pos_ * 2 > buf_.size()) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
    return msg;
  }

  std::size_t buffered() const noexcept { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace deltakd::wire
