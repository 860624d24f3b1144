#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace epccg::text {

// NFC-normalized copy of a UTF-8 string.
std::string nfc(std::string_view s);

// Splits UTF-8 text into extended grapheme clusters.
std::vector<std::string> graphemes(std::string_view s);

// A grapheme sequence annotated with word-break positions. boundary[i]
// says whether a word boundary falls immediately before units[i];
// boundary has units.size() + 1 entries.
struct Segmented {
  std::vector<std::string> units;
  std::vector<bool> boundary;
};

Segmented segment(std::string_view s);

bool is_whitespace(std::string_view grapheme);
bool is_punctuation(std::string_view grapheme);
bool is_alnum(std::string_view grapheme);
bool is_digit(std::string_view grapheme);

// Latin, Greek, Cyrillic letters or ASCII digits: scripts whose words are
// separated by spaces when rendered.
bool is_spaced_script(std::string_view grapheme);

// Sentence punctuation splits phrase candidates. A period or comma between
// two digits is a decimal mark and does not count.
bool is_sentence_break(const std::vector<std::string>& units, std::size_t i);

}  // namespace epccg::text
