#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "epccg/phrase_vocab.hpp"

namespace epccg {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kSepId = 4;
inline constexpr int kMaskId = 5;
inline constexpr int kNumFixedSpecials = 6;

inline constexpr const char* kPad = "[PAD]";
inline constexpr const char* kUnk = "[UNK]";
inline constexpr const char* kSos = "[SOS]";
inline constexpr const char* kEos = "[EOS]";
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kMask = "[MASK]";

// Literal field prefixes used by the prompt layouts; always present in a
// built vocabulary so every layout tokenizes them as single tokens.
const std::vector<std::string>& prompt_phrases();

using TokenSeq = std::vector<int>;

// Token <-> id bijection. Layout: fixed specials, [ASPECT_0..m), prompt
// phrases, corpus phrases, then base graphemes.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const PhraseVocab& phrases, int num_aspect_slots);
  // Rebuilds from an ordered token list (index = id).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // kUnkId when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }
  // Throws RangeError for ids outside [0, size()).
  const std::string& token(int id) const;

  bool is_special(int id) const { return id >= 0 && id < kNumFixedSpecials + num_aspect_slots_; }
  int num_aspect_slots() const { return num_aspect_slots_; }
  // Id of [ASPECT_m]; throws ArgumentError when the slot does not exist.
  int aspect_slot(int m) const;

  bool is_phrase(std::string_view token) const { return phrases_.count(std::string(token)) > 0; }
  int max_phrase_units() const { return max_phrase_units_; }

  void save_json(const std::filesystem::path& path) const;
  static Vocab load_json(const std::filesystem::path& path);

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::unordered_set<std::string> phrases_;
  int num_aspect_slots_ = 0;
  int max_phrase_units_ = 1;
};

std::string aspect_slot_token(int m);

// Greedy left-to-right longest phrase match with grapheme fallback.
// Whitespace separates but emits nothing; unknown graphemes become [UNK].
std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab);

TokenSeq encode(const std::vector<std::string>& tokens, const Vocab& vocab);
inline TokenSeq encode_text(std::string_view text, const Vocab& vocab) { return encode(tokenize(text, vocab), vocab); }

// Concatenates token surfaces. [PAD] renders as nothing; other specials
// render literally unless skip_specials is set.
std::string decode(const TokenSeq& ids, const Vocab& vocab, bool skip_specials = false);

// Human-facing rendering: like decode(..., true) but puts a space between
// adjacent tokens from space-delimited scripts when either is a phrase.
std::string render(const TokenSeq& ids, const Vocab& vocab);

}  // namespace epccg
