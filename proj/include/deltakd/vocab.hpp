// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deltakd/errors.hpp"
#include "deltakd/numerics.hpp"

namespace deltakd {

/// Character-level vocabulary. Ids 0..3 are reserved; every other id maps to
/// exactly one inventory character.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kReserved = 4;

  /// Glyphs used when reserved tokens are rendered as text. Neither may
  /// appear in raw input.
  static constexpr char kSepGlyph = '\t';
  static constexpr char kEosGlyph = '\n';

  static constexpr std::string_view kDefaultInventory =
      " abcdefghijklmnopqrstuvwxyz0123456789.,:;!?'\"-()[]+=*/<>_#@%";

  explicit Vocab(std::string_view inventory = kDefaultInventory) : inventory_(inventory) {
    lookup_.fill(-1);
    for (std::size_t i = 0; i < inventory_.size(); ++i) {
      const auto c = static_cast<unsigned char>(inventory_[i]);
      if (c == static_cast<unsigned char>(kSepGlyph) || c == static_cast<unsigned char>(kEosGlyph)) {
        throw InputError("vocab inventory may not contain reserved glyphs");
      }
      if (lookup_[c] != -1) throw InputError(std::string("duplicate inventory character '") + inventory_[i] + "'");
      lookup_[c] = static_cast<int>(i + kReserved);
    }
  }

  std::size_t size() const noexcept { return inventory_.size() + kReserved; }
  const std::string& inventory() const noexcept { return inventory_; }

  bool contains(char c) const noexcept { return lookup_[static_cast<unsigned char>(c)] >= 0; }

  /// FNV-1a over the size and inventory.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](unsigned char b) {
      h ^= b;
      h *= 1099511628211ULL;
    };
    const auto n = static_cast<std::uint32_t>(size());
    for (int i = 0; i < 4; ++i) mix(static_cast<unsigned char>(n >> (8 * i)));
    for (char c : inventory_) mix(static_cast<unsigned char>(c));
    return h;
  }

  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == kSepGlyph || c == kEosGlyph) {
        throw InputError("reserved glyph at position " + std::to_string(i));
      }
      const int id = lookup_[static_cast<unsigned char>(c)];
      if (id < 0) throw InputError("unknown character at position " + std::to_string(i));
      out.push_back(static_cast<TokenId>(id));
    }
    return out;
  }

  std::string detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
      if (t == kSep) {
        out.push_back(kSepGlyph);
      } else if (t == kEos) {
        out.push_back(kEosGlyph);
      } else if (t >= kReserved && t < size()) {
        out.push_back(inventory_[t - kReserved]);
      } else if (t >= size()) {
        throw InputError("token id " + std::to_string(t) + " outside vocabulary");
      }
    }
    return out;
  }

 private:
  std::string inventory_;
  std::array<int, 256> lookup_{};
};

}  // namespace deltakd
