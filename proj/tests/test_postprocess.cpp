#include <sstream>

#include "doctest.h"
#include "epccg/error.hpp"
#include "epccg/postprocess.hpp"
#include "test_util.hpp"

using namespace epccg;

namespace {

const std::vector<AttributePattern>& capacity_only() {
  static const std::vector<AttributePattern> p = {{"battery_capacity", R"((\d+)mAh)", Normalizer::kNumeric}};
  return p;
}

Vocab words_vocab(const std::string& text) {
  PhraseVocab pv;
  std::istringstream in(text);
  for (std::string w; in >> w;) {
    if (w.size() >= 2) pv.entries.push_back({w, 1.0, PhraseSource::kSeed});
  }
  for (const auto& g : text::graphemes(text)) {
    if (!text::is_whitespace(g)) pv.base_units.insert(g);
  }
  return Vocab::build(pv, 0);
}

SubstituteSet set(const std::string& name, const std::vector<std::string>& words) {
  SubstituteSet s;
  s.aspect = name;
  for (const auto& w : words) s.words.emplace_back(w, 1);
  return s;
}

}  // namespace

TEST_CASE("pattern validation") {
  CHECK_THROWS_AS(AttributePattern("x", "(unclosed"), ConfigError);
  CHECK_THROWS_AS(AttributePattern("x", R"(\d+mAh)"), ConfigError);
  CHECK_THROWS_AS(AttributePattern("x", R"((\d+)(mAh))"), ConfigError);
  CHECK_NOTHROW(AttributePattern("x", R"((?:about )?(\d+)mAh)"));
  CHECK(parse_normalizer("numeric") == Normalizer::kNumeric);
  CHECK_THROWS_AS(parse_normalizer("upper"), ConfigError);
}

TEST_CASE("normalizers") {
  const AttributePattern num("n", "(x)", Normalizer::kNumeric);
  CHECK(num.normalize("4,000") == "4000");
  CHECK(num.normalize("6.50") == "6.5");
  CHECK(num.normalize("007") == "7");
  const AttributePattern ws("w", "(x)", Normalizer::kStripWhitespace);
  CHECK(ws.normalize(" 6 GB ") == "6GB");
  const AttributePattern id("i", "(x)");
  CHECK(id.normalize(" a ") == " a ");
}

TEST_CASE("extraction examples") {
  const std::string text = "battery 4000mAh";
  const auto e = extract_attributes(text, capacity_only());
  REQUIRE(e.size() == 1);
  CHECK(e[0].attribute == "battery_capacity");
  CHECK(e[0].value == "4000");
  CHECK(text.substr(e[0].begin, e[0].end - e[0].begin) == "4000");

  CHECK(extract_attributes("great screen", capacity_only()).empty());

  const auto two = extract_attributes("4000mAh or 5000mAh", capacity_only());
  REQUIRE(two.size() == 2);
  CHECK(two[0].value == "4000");
  CHECK(two[1].value == "5000");
  CHECK(two[0].end <= two[1].begin);
}

TEST_CASE("correction replaces and keeps") {
  const KnowledgeBase kb = {{"S1", {{"battery_capacity", "5000"}}}};
  const auto fixed = correct("a big 4000mAh cell", "S1", kb, capacity_only());
  CHECK(fixed.text == "a big 5000mAh cell");
  REQUIRE(fixed.report.entries.size() == 1);
  CHECK(fixed.report.entries[0].action == CorrectionAction::kReplaced);
  CHECK(fixed.report.entries[0].found == "4000");
  CHECK(fixed.report.entries[0].canonical == "5000");
  CHECK(fixed.report.replaced() == 1);

  const auto kept = correct("a big 5000mAh cell", "S1", kb, capacity_only());
  CHECK(kept.text == "a big 5000mAh cell");
  REQUIRE(kept.report.entries.size() == 1);
  CHECK(kept.report.entries[0].action == CorrectionAction::kKept);
}

TEST_CASE("two wrong values are both fixed and re-extract to the canonical value") {
  const auto patterns = default_patterns();
  const KnowledgeBase kb = {{"S1", {{"capacity", "5000"}, {"screen_size", "6.7"}}}};
  const std::string text = "a 4000mAh cell and a 6.1inch screen, really 4500mAh";
  const auto fixed = correct(text, "S1", kb, patterns);
  CHECK(fixed.report.replaced() == 3);
  for (const auto& e : extract_attributes(fixed.text, patterns)) {
    REQUIRE(kb.at("S1").count(e.attribute));
    CHECK(e.value == kb.at("S1").at(e.attribute));
  }
  CHECK(fixed.text == "a 5000mAh cell and a 6.7inch screen, really 5000mAh");
  const auto again = correct(fixed.text, "S1", kb, patterns);
  CHECK(again.text == fixed.text);
  CHECK(again.report.replaced() == 0);
}

TEST_CASE("unknown attribute and missing sku") {
  const auto patterns = default_patterns();
  const KnowledgeBase kb = {{"S1", {{"capacity", "5000"}}}};
  const auto r = correct("weighs 200g", "S1", kb, patterns);
  CHECK(r.text == "weighs 200g");
  REQUIRE(r.report.entries.size() == 1);
  CHECK(r.report.entries[0].action == CorrectionAction::kNotInKb);

  const auto missing = correct("a 4000mAh cell", "S9", kb, patterns);
  CHECK(missing.text == "a 4000mAh cell");
  CHECK(missing.report.sku_missing);
  CHECK(missing.report.entries.empty());
}

TEST_CASE("knowledge base from product records") {
  ProductRecord p{"S1", "Phone", "Nova", {{"capacity", "5000mAh"}, {"color", "black"}, {"weight", "185g"}}, "phone", ""};
  const Corpus c({p}, {});
  const auto kb = build_knowledge_base(c, default_patterns());
  CHECK(kb.at("S1").at("capacity") == "5000");
  CHECK(kb.at("S1").at("weight") == "185");
  CHECK(kb.at("S1").at("color") == "black");
}

TEST_CASE("aspect filter decisions") {
  const Vocab v = words_vocab("screen display battery power zoom");
  const std::vector<SubstituteSet> sets = {set("screen", {"screen", "display"}), set("battery", {"battery", "power"})};
  const std::string text = "screen display";
  const auto keep = filter_by_aspect(text, "screen", sets, v);
  CHECK(keep.keep);
  CHECK(keep.predicted == "screen");
  CHECK(keep.coverage == std::vector<int>{2, 0});

  const auto other = filter_by_aspect("battery power screen", "screen", sets, v);
  CHECK_FALSE(other.keep);
  CHECK(other.predicted == "battery");

  const auto none = filter_by_aspect("zoom", "screen", sets, v);
  CHECK_FALSE(none.keep);
  CHECK(none.predicted == kUnknownLabel);
  CHECK(text == "screen display");
}

TEST_CASE("pattern and knowledge base files") {
  TempDir dir("pp");
  save_patterns(default_patterns(), dir / "patterns.json");
  const auto back = load_patterns(dir / "patterns.json");
  REQUIRE(back.size() == default_patterns().size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].attribute() == default_patterns()[i].attribute());
    CHECK(back[i].source() == default_patterns()[i].source());
    CHECK(back[i].normalizer() == default_patterns()[i].normalizer());
  }
  write_file(dir / "bad.json", R"([{"attribute":"x","regex":"\\d+","normalizer":"identity"}])");
  CHECK_THROWS_AS(load_patterns(dir / "bad.json"), ConfigError);

  const KnowledgeBase kb = {{"S1", {{"capacity", "5000"}}}, {"S2", {{"weight", "185"}}}};
  save_knowledge_base(kb, dir / "kb.json");
  CHECK(load_knowledge_base(dir / "kb.json") == kb);
}
