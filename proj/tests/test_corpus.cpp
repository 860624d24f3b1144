#include <algorithm>
#include <set>

#include "doctest.h"
#include "epccg/corpus.hpp"
#include "epccg/error.hpp"
#include "test_util.hpp"

using namespace epccg;

namespace {

ProductRecord product(const std::string& sku) {
  return {sku, "Title " + sku, "Nova", {{"capacity", "4000mAh"}, {"color", "black"}}, "phone", ""};
}

}  // namespace

TEST_CASE("empty file loads as an empty corpus") {
  TempDir dir("corpus");
  write_file(dir / "empty.jsonl", "");
  const Corpus c = load_corpus(dir / "empty.jsonl");
  CHECK(c.products().empty());
  CHECK(c.copies().empty());
}

TEST_CASE("mixed file with two products and two copies") {
  TempDir dir("corpus");
  write_file(dir / "mixed.jsonl",
             R"({"sku_id":"A1","title":"Phone A","brand":"Nova","attributes":{"capacity":"4000mAh","color":"black"},"product_type":"phone","ocr":""})"
             "\n"
             R"({"sku_id":"B2","title":"Phone B","brand":"Orbit","attributes":{},"product_type":"phone","ocr":"new"})"
             "\n"
             R"({"sku_id":"A1","text":"great battery","aspect":null})"
             "\n"
             R"({"sku_id":"B2","text":"sharp screen","aspect":"screen"})"
             "\n");
  const Corpus c = load_corpus(dir / "mixed.jsonl");
  REQUIRE(c.copies().size() == 2);
  REQUIRE(c.products().size() == 2);
  CHECK(c.products()[0].attributes == AttributeList{{"capacity", "4000mAh"}, {"color", "black"}});
  CHECK(c.copies()[1].aspect == std::optional<std::string>("screen"));
  CHECK_FALSE(c.copies()[0].aspect.has_value());
  CHECK(c.product_of(c.copies()[1]).brand == "Orbit");
}

TEST_CASE("dangling sku is an integrity error naming it") {
  TempDir dir("corpus");
  write_file(dir / "bad.jsonl",
             R"({"sku_id":"A1","title":"Phone A","brand":"","attributes":{},"product_type":"","ocr":""})"
             "\n"
             R"({"sku_id":"Z9","text":"hello"})"
             "\n");
  try {
    load_corpus(dir / "bad.jsonl");
    FAIL("expected an integrity error");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find("Z9") != std::string::npos);
  }
}

TEST_CASE("malformed line reports its line number") {
  TempDir dir("corpus");
  write_file(dir / "bad.jsonl",
             R"({"sku_id":"A1","title":"Phone A","brand":"","attributes":{},"product_type":"","ocr":""})"
             "\n{not json\n");
  try {
    load_corpus(dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("record invariants") {
  CHECK_THROWS_AS(Corpus({product("A"), product("A")}, {}), IntegrityError);
  ProductRecord untitled = product("A");
  untitled.title.clear();
  CHECK_THROWS_AS(Corpus({untitled}, {}), IntegrityError);
  CHECK_THROWS_AS(Corpus({product("A")}, {{"A", "", std::nullopt}}), IntegrityError);
}

TEST_CASE("write then load round trips field by field") {
  TempDir dir("corpus");
  ProductRecord p = product("A1");
  p.ocr = "free shipping";
  p.title = "Café Nova 5G";  // non-ASCII survives
  const Corpus c({p, product("B2")}, {{"A1", "long lasting battery", std::nullopt}, {"B2", "vivid screen", "screen"}});
  write_corpus(c, dir.path());
  const Corpus back = load_corpus(dir.path());
  CHECK(back.products() == c.products());
  CHECK(back.copies() == c.copies());
}

TEST_CASE("synthetic corpus is deterministic") {
  const auto spec = default_synth_spec(2, 1, 7);
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.corpus.products() == b.corpus.products());
  CHECK(a.corpus.copies() == b.corpus.copies());
  CHECK(a.gold == b.gold);
  TempDir d1("synth"), d2("synth");
  write_corpus(a.corpus, d1.path());
  write_corpus(b.corpus, d2.path());
  CHECK(read_file(d1 / "copies.jsonl") == read_file(d2 / "copies.jsonl"));
  CHECK(read_file(d1 / "products.jsonl") == read_file(d2 / "products.jsonl"));
}

TEST_CASE("synthetic counts and gold") {
  const auto s = generate_synthetic(default_synth_spec(3, 100, 1));
  CHECK(s.corpus.copies().size() == 300);
  REQUIRE(s.gold.size() == 300);
  std::map<std::string, int> per;
  for (const auto& g : s.gold) ++per[g];
  CHECK(per.size() == 3);
  for (const auto& [name, n] : per) CHECK(n == 100);
}

TEST_CASE("synthetic gold labels are recoverable from keywords") {
  const auto spec = default_synth_spec(8, 40, 3);
  const auto s = generate_synthetic(spec);
  for (std::size_t i = 0; i < s.corpus.copies().size(); ++i) {
    const auto& text = s.corpus.copies()[i].text;
    for (int m = 0; m < spec.num_aspects; ++m) {
      const auto& a = spec.aspects[static_cast<std::size_t>(m)];
      const bool any = std::any_of(a.keywords.begin(), a.keywords.end(),
                                   [&](const std::string& k) { return contains_keyword(text, k); });
      CHECK(any == (a.name == s.gold[i]));
    }
  }
}

TEST_CASE("template attribute slot is substituted") {
  SynthSpec spec;
  spec.num_aspects = 2;
  spec.docs_per_aspect = 3;
  spec.aspects = {{"battery", {"battery"}, {"battery lasts {capacity}"}}, {"screen", {"screen"}, {"big {kw}"}}};
  spec.attribute_pool = {{"phone", {{"capacity", {"4000mAh"}}}}};
  spec.brands = {"Nova"};
  spec.ocr_pool = {""};
  const auto s = generate_synthetic(spec);
  for (std::size_t i = 0; i < s.gold.size(); ++i) {
    if (s.gold[i] == "battery") CHECK(s.corpus.copies()[i].text == "battery lasts 4000mAh");
  }
  SynthSpec broken = spec;
  broken.aspects[1].templates.clear();
  CHECK_THROWS_AS(generate_synthetic(broken), ConfigError);
  SynthSpec single = spec;
  single.num_aspects = 1;
  CHECK_THROWS_AS(generate_synthetic(single), ConfigError);
}

TEST_CASE("split sizes, partition and determinism") {
  std::vector<ProductRecord> products;
  std::vector<CopywritingRecord> copies;
  for (int i = 0; i < 10; ++i) {
    products.push_back(product("P" + std::to_string(i)));
    copies.push_back({"P" + std::to_string(i), "text " + std::to_string(i), std::nullopt});
  }
  const Corpus c(products, copies);
  const auto s = split(c, {0.8, 0.1, 0.1}, 5);
  CHECK(s.train.copies().size() == 8);
  CHECK(s.dev.copies().size() == 1);
  CHECK(s.test.copies().size() == 1);
  std::set<std::size_t> all;
  for (const auto* idx : {&s.train_index, &s.dev_index, &s.test_index}) {
    CHECK(std::is_sorted(idx->begin(), idx->end()));
    for (auto i : *idx) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == 10);
  for (const auto* part : {&s.train, &s.dev, &s.test}) {
    for (const auto& copy : part->copies()) CHECK(part->find_product(copy.sku_id) != nullptr);
  }
  const auto again = split(c, {0.8, 0.1, 0.1}, 5);
  CHECK(again.train_index == s.train_index);
  CHECK(again.test_index == s.test_index);
  CHECK_THROWS_AS(split(c, {1.0, 0.0, 0.0}, 5), ConfigError);
  CHECK_THROWS_AS(split(c, {0.5, 0.2, 0.2}, 5), ConfigError);
}

TEST_CASE("contains_keyword respects word edges") {
  CHECK(contains_keyword("big battery life", "battery"));
  CHECK_FALSE(contains_keyword("batterylife", "battery"));
  CHECK(contains_keyword("battery", "battery"));
  CHECK(contains_keyword("run anything fast", "run anything"));
}
