#include "epccg/text.hpp"

#include <memory>
#include <stdexcept>

#include <unicode/brkiter.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

namespace epccg::text {
namespace {

UChar32 first_code_point(std::string_view g) {
  if (g.empty()) return U_SENTINEL;
  UChar32 c = 0;
  int32_t i = 0;
  U8_NEXT(reinterpret_cast<const uint8_t*>(g.data()), i,
          static_cast<int32_t>(g.size()), c);
  return c;
}

icu::BreakIterator& character_iterator() {
  thread_local std::unique_ptr<icu::BreakIterator> it = [] {
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> bi(
        icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status)) throw std::runtime_error("ICU character iterator unavailable");
    return bi;
  }();
  return *it;
}

icu::BreakIterator& word_iterator() {
  thread_local std::unique_ptr<icu::BreakIterator> it = [] {
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> bi(
        icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status)) throw std::runtime_error("ICU word iterator unavailable");
    return bi;
  }();
  return *it;
}

// Grapheme split of an ICU string; returns units plus their UTF-16 offsets.
void split_units(const icu::UnicodeString& u, std::vector<std::string>& units,
                 std::vector<int32_t>& offsets) {
  auto& it = character_iterator();
  it.setText(u);
  int32_t start = it.first();
  for (int32_t end = it.next(); end != icu::BreakIterator::DONE;
       start = end, end = it.next()) {
    std::string piece;
    u.tempSubStringBetween(start, end).toUTF8String(piece);
    units.push_back(std::move(piece));
    offsets.push_back(start);
  }
  offsets.push_back(u.length());
}

}  // namespace

std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  const auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  if (norm->isNormalized(u, status) && U_SUCCESS(status)) return std::string(s);
  status = U_ZERO_ERROR;
  icu::UnicodeString out = norm->normalize(u, status);
  if (U_FAILURE(status)) throw std::runtime_error("NFC normalization failed");
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::vector<std::string> graphemes(std::string_view s) {
  std::vector<std::string> units;
  if (s.empty()) return units;
  bool ascii = true;
  for (unsigned char c : s) {
    if (c >= 0x80 || c == '\r') {
      ascii = false;
      break;
    }
  }
  if (ascii) {
    units.reserve(s.size());
    for (char c : s) units.emplace_back(1, c);
    return units;
  }
  const auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  std::vector<int32_t> offsets;
  split_units(u, units, offsets);
  return units;
}

Segmented segment(std::string_view s) {
  Segmented out;
  if (s.empty()) {
    out.boundary.push_back(true);
    return out;
  }
  const auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  std::vector<int32_t> offsets;
  split_units(u, out.units, offsets);

  std::vector<bool> word_break(static_cast<std::size_t>(u.length()) + 1, false);
  auto& wit = word_iterator();
  wit.setText(u);
  for (int32_t b = wit.first(); b != icu::BreakIterator::DONE; b = wit.next()) {
    word_break[static_cast<std::size_t>(b)] = true;
  }
  out.boundary.resize(out.units.size() + 1);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    out.boundary[i] = word_break[static_cast<std::size_t>(offsets[i])];
  }
  return out;
}

bool is_whitespace(std::string_view g) {
  const UChar32 c = first_code_point(g);
  return c >= 0 && u_isUWhiteSpace(c);
}

bool is_punctuation(std::string_view g) {
  const UChar32 c = first_code_point(g);
  return c >= 0 && u_ispunct(c);
}

bool is_alnum(std::string_view g) {
  const UChar32 c = first_code_point(g);
  return c >= 0 && (u_isalpha(c) || u_isdigit(c));
}

bool is_digit(std::string_view g) {
  const UChar32 c = first_code_point(g);
  return c >= 0 && u_isdigit(c);
}

bool is_spaced_script(std::string_view g) {
  const UChar32 c = first_code_point(g);
  if (c < 0) return false;
  if (c < 0x80) return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  if (!u_isalpha(c)) return false;
  UErrorCode status = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(c, &status);
  return U_SUCCESS(status) &&
         (script == USCRIPT_LATIN || script == USCRIPT_GREEK || script == USCRIPT_CYRILLIC);
}

bool is_sentence_break(const std::vector<std::string>& units, std::size_t i) {
  const std::string_view g = units[i];
  if (!is_punctuation(g)) return false;
  if ((g == "." || g == ",") && i > 0 && i + 1 < units.size() &&
      is_digit(units[i - 1]) && is_digit(units[i + 1])) {
    return false;
  }
  // Hyphens, apostrophes and slashes stay inside words and product codes.
  if (g == "-" || g == "'" || g == "/" || g == "_" || g == "#" || g == "%" || g == "&") {
    return false;
  }
  return true;
}

}  // namespace epccg::text
