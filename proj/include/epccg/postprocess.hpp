#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "epccg/corpus.hpp"
#include "epccg/mlm_labeler.hpp"
#include "epccg/tokenizer.hpp"

namespace epccg {

enum class Normalizer { kIdentity, kStripWhitespace, kNumeric };

std::string to_string(Normalizer n);
Normalizer parse_normalizer(const std::string& s);

// A regular expression (ECMAScript grammar) with exactly one capture
// group; the group holds the attribute value. ConfigError otherwise.
class AttributePattern {
 public:
  AttributePattern(std::string attribute, std::string regex, Normalizer normalizer = Normalizer::kIdentity);

  const std::string& attribute() const { return attribute_; }
  const std::string& source() const { return source_; }
  Normalizer normalizer() const { return normalizer_; }
  const std::regex& regex() const { return regex_; }
  std::string normalize(std::string_view value) const;

 private:
  std::string attribute_;
  std::string source_;
  Normalizer normalizer_;
  std::regex regex_;
};

struct Extraction {
  std::string attribute;
  std::string value;  // normalized capture
  std::size_t begin = 0;  // byte span of the capture in the text
  std::size_t end = 0;
};

// Leftmost non-overlapping matches of each pattern, pattern by pattern.
std::vector<Extraction> extract_attributes(std::string_view text, const std::vector<AttributePattern>& patterns);

// sku -> attribute -> canonical value.
using KnowledgeBase = std::map<std::string, std::map<std::string, std::string>>;

// Canonical values from product records. When a pattern exists for an
// attribute and matches the stored value, its capture is used (so
// "5000mAh" is stored as "5000").
KnowledgeBase build_knowledge_base(const Corpus& corpus, const std::vector<AttributePattern>& patterns);

enum class CorrectionAction { kReplaced, kKept, kNotInKb };
std::string to_string(CorrectionAction a);

struct CorrectionEntry {
  std::string attribute;
  std::string found;
  std::string canonical;  // empty when not in the knowledge base
  CorrectionAction action = CorrectionAction::kKept;
};

struct CorrectionReport {
  std::vector<CorrectionEntry> entries;  // text order
  bool sku_missing = false;

  std::size_t replaced() const;
};

struct Correction {
  std::string text;
  CorrectionReport report;
};

// Splices canonical values over wrong captures, right to left. Values are
// compared after the attribute's normalizer ("3.0" matches "3"). When
// captures of different patterns overlap, the earlier pattern wins.
Correction correct(std::string_view text, const std::string& sku_id, const KnowledgeBase& kb,
                   const std::vector<AttributePattern>& patterns);

struct FilterDecision {
  bool keep = false;
  std::string predicted;
  std::vector<int> coverage;
};

FilterDecision filter_by_aspect(std::string_view text, const std::string& desired,
                                const std::vector<SubstituteSet>& sets, const Vocab& vocab);

std::vector<AttributePattern> load_patterns(const std::filesystem::path& path);
void save_patterns(const std::vector<AttributePattern>& patterns, const std::filesystem::path& path);
// Capacity, screen size, camera resolution, weight, clock and storage.
std::vector<AttributePattern> default_patterns();

KnowledgeBase load_knowledge_base(const std::filesystem::path& path);
void save_knowledge_base(const KnowledgeBase& kb, const std::filesystem::path& path);

}  // namespace epccg
