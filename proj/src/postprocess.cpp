#include "epccg/postprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "epccg/error.hpp"
#include "json.hpp"

namespace epccg {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Normalizer n) {
  switch (n) {
    case Normalizer::kIdentity:
      return "identity";
    case Normalizer::kStripWhitespace:
      return "strip_whitespace";
    case Normalizer::kNumeric:
      return "numeric";
  }
  return "identity";
}

Normalizer parse_normalizer(const std::string& s) {
  if (s == "identity") return Normalizer::kIdentity;
  if (s == "strip_whitespace") return Normalizer::kStripWhitespace;
  if (s == "numeric") return Normalizer::kNumeric;
  throw ConfigError("unknown normalizer '" + s + "'");
}

AttributePattern::AttributePattern(std::string attribute, std::string regex, Normalizer normalizer)
    : attribute_(std::move(attribute)), source_(std::move(regex)), normalizer_(normalizer) {
  if (attribute_.empty()) throw ConfigError("attribute pattern needs an attribute name");
  try {
    regex_ = std::regex(source_, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw ConfigError("pattern for " + attribute_ + " does not compile: " + e.what());
  }
  if (regex_.mark_count() != 1) {
    throw ConfigError("pattern for " + attribute_ + " must have exactly one capture group, has " +
                      std::to_string(regex_.mark_count()));
  }
}

namespace {

std::string strip_ws(std::string_view v) {
  std::string out;
  for (char c : v) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

}  // namespace

std::string AttributePattern::normalize(std::string_view value) const {
  switch (normalizer_) {
    case Normalizer::kIdentity:
      return std::string(value);
    case Normalizer::kStripWhitespace:
      return strip_ws(value);
    case Normalizer::kNumeric: {
      std::string s = strip_ws(value);
      std::erase(s, ',');
      std::size_t used = 0;
      try {
        const double d = std::stod(s, &used);
        if (used == s.size() && std::isfinite(d)) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.15g", d);
          return buf;
        }
      } catch (const std::exception&) {
      }
      return s;
    }
  }
  return std::string(value);
}

std::vector<Extraction> extract_attributes(std::string_view text, const std::vector<AttributePattern>& patterns) {
  std::vector<Extraction> out;
  for (const auto& p : patterns) {
    using It = std::string_view::const_iterator;
    for (std::regex_iterator<It> it(text.begin(), text.end(), p.regex()), end; it != end; ++it) {
      const auto& g = (*it)[1];
      if (!g.matched) continue;
      const auto begin = static_cast<std::size_t>(g.first - text.begin());
      const auto stop = static_cast<std::size_t>(g.second - text.begin());
      out.push_back({p.attribute(), p.normalize(std::string_view(text.data() + begin, stop - begin)), begin, stop});
    }
  }
  return out;
}

KnowledgeBase build_knowledge_base(const Corpus& corpus, const std::vector<AttributePattern>& patterns) {
  KnowledgeBase kb;
  for (const auto& p : corpus.products()) {
    auto& entry = kb[p.sku_id];
    for (const auto& [name, value] : p.attributes) {
      if (value.empty()) continue;
      std::string canonical = value;
      for (const auto& pat : patterns) {
        if (pat.attribute() != name) continue;
        std::smatch m;
        if (std::regex_search(value, m, pat.regex()) && m[1].matched && m[1].length() > 0) {
          canonical = m[1].str();
          break;
        }
      }
      entry[name] = canonical;
    }
  }
  return kb;
}

std::string to_string(CorrectionAction a) {
  switch (a) {
    case CorrectionAction::kReplaced:
      return "replaced";
    case CorrectionAction::kKept:
      return "kept";
    case CorrectionAction::kNotInKb:
      return "not_in_kb";
  }
  return "kept";
}

std::size_t CorrectionReport::replaced() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const CorrectionEntry& e) {
    return e.action == CorrectionAction::kReplaced;
  }));
}

Correction correct(std::string_view text, const std::string& sku_id, const KnowledgeBase& kb,
                   const std::vector<AttributePattern>& patterns) {
  Correction out{std::string(text), {}};
  const auto sku = kb.find(sku_id);
  if (sku == kb.end()) {
    out.report.sku_missing = true;
    return out;
  }
  std::vector<Extraction> found;
  for (auto& e : extract_attributes(text, patterns)) {
    const bool overlaps = std::any_of(found.begin(), found.end(),
                                      [&](const Extraction& f) { return e.begin < f.end && f.begin < e.end; });
    if (!overlaps) found.push_back(std::move(e));
  }
  std::sort(found.begin(), found.end(), [](const Extraction& a, const Extraction& b) { return a.begin < b.begin; });

  auto pattern_of = [&](const std::string& attr) -> const AttributePattern& {
    return *std::find_if(patterns.begin(), patterns.end(), [&](const AttributePattern& p) { return p.attribute() == attr; });
  };
  for (const auto& e : found) {
    CorrectionEntry entry{e.attribute, e.value, {}, CorrectionAction::kNotInKb};
    const auto canon = sku->second.find(e.attribute);
    if (canon != sku->second.end()) {
      entry.canonical = canon->second;
      entry.action = pattern_of(e.attribute).normalize(canon->second) == e.value ? CorrectionAction::kKept
                                                                                  : CorrectionAction::kReplaced;
    }
    out.report.entries.push_back(std::move(entry));
  }
  for (std::size_t i = found.size(); i-- > 0;) {
    const auto& entry = out.report.entries[i];
    if (entry.action != CorrectionAction::kReplaced) continue;
    out.text.replace(found[i].begin, found[i].end - found[i].begin, entry.canonical);
  }
  return out;
}

FilterDecision filter_by_aspect(std::string_view text, const std::string& desired,
                                const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  Classification c = classify_text(text, sets, vocab);
  FilterDecision d;
  d.keep = c.label != kUnknownLabel && c.label == desired;
  d.predicted = std::move(c.label);
  d.coverage = std::move(c.coverage);
  return d;
}

std::vector<AttributePattern> load_patterns(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(std::string("patterns: ") + e.what(), 1);
  }
  if (!j.is_array()) throw DataError("patterns file must hold an array");
  std::vector<AttributePattern> out;
  for (const auto& p : j) {
    try {
      out.emplace_back(p.at("attribute").get<std::string>(), p.at("regex").get<std::string>(),
                       parse_normalizer(p.value("normalizer", std::string("identity"))));
    } catch (const json::exception& e) {
      throw DataError(std::string("bad pattern entry: ") + e.what());
    }
  }
  return out;
}

void save_patterns(const std::vector<AttributePattern>& patterns, const std::filesystem::path& path) {
  ordered_json j = ordered_json::array();
  for (const auto& p : patterns) {
    ordered_json e;
    e["attribute"] = p.attribute();
    e["regex"] = p.source();
    e["normalizer"] = to_string(p.normalizer());
    j.push_back(std::move(e));
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<AttributePattern> default_patterns() {
  return {
      {"capacity", R"((\d+)\s*mAh)", Normalizer::kNumeric},
      {"screen_size", R"((\d+(?:\.\d+)?)\s*inch)", Normalizer::kNumeric},
      {"megapixels", R"((\d+)\s*MP\b)", Normalizer::kNumeric},
      {"weight", R"((\d+)\s*g\b)", Normalizer::kNumeric},
      {"clock", R"((\d+(?:\.\d+)?)\s*GHz)", Normalizer::kNumeric},
      {"storage_size", R"((\d+)\s*GB)", Normalizer::kNumeric},
  };
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(std::string("knowledge base: ") + e.what(), 1);
  }
  if (!j.is_object()) throw DataError("knowledge base must be an object");
  KnowledgeBase kb;
  for (const auto& [sku, attrs] : j.items()) {
    if (!attrs.is_object()) throw DataError("knowledge base entry for " + sku + " must be an object");
    for (const auto& [name, value] : attrs.items()) {
      if (!value.is_string() || value.get<std::string>().empty()) {
        throw DataError("knowledge base value " + sku + "/" + name + " must be a non-empty string");
      }
      kb[sku][name] = value.get<std::string>();
    }
  }
  return kb;
}

void save_knowledge_base(const KnowledgeBase& kb, const std::filesystem::path& path) {
  json j = json::object();
  for (const auto& [sku, attrs] : kb) j[sku] = attrs;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace epccg
