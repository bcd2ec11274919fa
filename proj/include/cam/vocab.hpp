#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "cam/error.hpp"

namespace cam {

/// Longest label accepted for English text.
inline constexpr int kMaxLabelLength = 32;

/// Character vocabulary shared by recognition and segmentation.
///
/// Class indices 1..68 name characters in both heads. Index 0 is EOS for the
/// recognition head and background for the segmentation head; the two never
/// meet in the same tensor. The decoder additionally embeds a BOS token at
/// index 69 which is never predicted.
class CharVocab {
 public:
  static constexpr int kNumChars = 68;
  static constexpr int kEos = 0;
  static constexpr int kBackground = 0;
  static constexpr int kBos = kNumChars + 1;
  static constexpr int kNumClasses = kNumChars + 1;      // logits / seg channels
  static constexpr int kNumEmbeddings = kNumChars + 2;   // + BOS

  // Digits, lowercase letters, then the 32 ASCII punctuation marks in code
  // point order.
  static constexpr std::string_view kChars =
      "0123456789"
      "abcdefghijklmnopqrstuvwxyz"
      "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  static_assert(kChars.size() == kNumChars);

  CharVocab() {
    index_.fill(-1);
    for (std::size_t i = 0; i < kChars.size(); ++i) {
      index_[static_cast<unsigned char>(kChars[i])] = static_cast<int>(i) + 1;
    }
  }

  int size() const noexcept { return kNumChars; }
  int eos_index() const noexcept { return kEos; }
  int background_index() const noexcept { return kBackground; }

  bool contains(char c) const noexcept { return lookup(c) > 0; }

  /// Class index in 1..68; uppercase letters fold to lowercase.
  int index_of(char c) const {
    int idx = lookup(c);
    if (idx <= 0) {
      throw Error(ErrorKind::UnknownCharacter,
                  std::string("character '") + c + "' (code " +
                      std::to_string(static_cast<int>(static_cast<unsigned char>(c))) +
                      ") is not in the vocabulary");
    }
    return idx;
  }

  char char_of(int index) const {
    if (index < 1 || index > kNumChars) {
      throw Error(ErrorKind::UnknownCharacter, "class index " + std::to_string(index) + " has no character");
    }
    return kChars[static_cast<std::size_t>(index - 1)];
  }

  /// Lowercases and validates a label.
  std::string normalize(std::string_view label) const {
    std::string out;
    out.reserve(label.size());
    for (char c : label) out.push_back(char_of(index_of(c)));
    return out;
  }

  /// Validates and encodes a label (without EOS).
  std::vector<int64_t> encode(std::string_view label) const {
    if (static_cast<int>(label.size()) > kMaxLabelLength) {
      throw Error(ErrorKind::LabelTooLong, "label of length " + std::to_string(label.size()) +
                                               " exceeds " + std::to_string(kMaxLabelLength));
    }
    std::vector<int64_t> out;
    out.reserve(label.size());
    for (char c : label) out.push_back(index_of(c));
    return out;
  }

  std::string decode(const std::vector<int64_t>& tokens) const {
    std::string out;
    for (auto t : tokens) {
      if (t == kEos) break;
      out.push_back(char_of(static_cast<int>(t)));
    }
    return out;
  }

  /// FNV-1a over the ordered character list, as 16 hex digits.
  std::string hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (char c : kChars) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  int lookup(char c) const noexcept {
    auto u = static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(c)));
    return index_[u];
  }

  std::array<int, 256> index_{};
};

inline const CharVocab& default_vocab() {
  static const CharVocab vocab;
  return vocab;
}

}  // namespace cam
