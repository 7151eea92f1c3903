#pragma once

#include <span>
#include <string>
#include <vector>

namespace mtpbias {

// Fixed 64-token vocabulary. Carrier tokens are standalone words. Entities
// are one start piece followed by continuation pieces; the detokenizer joins
// a start piece with the continuations after it, so a whole entity surfaces
// as a single word and any wrong piece corrupts exactly that word.
namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kCarrierFirst = 3;
inline constexpr int kCarrierLast = 39;
inline constexpr int kEntityStartFirst = 40;
inline constexpr int kEntityStartLast = 51;
inline constexpr int kEntityContFirst = 52;
inline constexpr int kEntityContLast = 63;
inline constexpr int kSize = 64;

inline bool is_special(int id) { return id == kPad || id == kBos || id == kEos; }
inline bool is_carrier(int id) { return id >= kCarrierFirst && id <= kCarrierLast; }
inline bool is_entity_start(int id) { return id >= kEntityStartFirst && id <= kEntityStartLast; }
inline bool is_entity_cont(int id) { return id >= kEntityContFirst && id <= kEntityContLast; }
inline bool starts_word(int id) { return is_carrier(id) || is_entity_start(id); }

inline std::string piece(int id) {
  if (is_carrier(id)) return "w" + std::to_string(id);
  if (is_entity_start(id)) return "x" + std::to_string(id);
  if (is_entity_cont(id)) return "q" + std::to_string(id);
  if (id == kPad) return "<pad>";
  if (id == kBos) return "<s>";
  return "</s>";
}

// Token ids to word strings. Specials are dropped; continuation pieces join
// the preceding word (or open one if nothing precedes them).
inline std::vector<std::string> detokenize(std::span<const int> ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (is_special(id)) continue;
    if (starts_word(id) || words.empty())
      words.push_back(piece(id));
    else
      words.back() += piece(id);
  }
  return words;
}

}  // namespace vocab
}  // namespace mtpbias
