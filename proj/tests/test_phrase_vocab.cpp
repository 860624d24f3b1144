#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "epccg/error.hpp"
#include "epccg/phrase_vocab.hpp"
#include "test_util.hpp"

using namespace epccg;

namespace {

// Word n-gram counts of space-separated lowercase text, by direct sliding window.
std::map<std::string, long> brute_counts(const std::vector<std::string>& texts, std::size_t max_len) {
  std::map<std::string, long> out;
  for (const auto& t : texts) {
    std::istringstream in(t);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    for (std::size_t i = 0; i < words.size(); ++i) {
      std::string g;
      for (std::size_t j = i; j < words.size(); ++j) {
        g += (j == i ? "" : " ") + words[j];
        if (g.size() > max_len) break;
        if (g.size() >= 2) ++out[g];
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("n-gram counts match a sliding-window counter") {
  const std::vector<std::string> texts = {"fast wireless charging pad", "wireless charging is fast",
                                          "big pad big screen", "screen is big", "wireless pad"};
  const NgramStatistics stats(texts, 16, {});
  const auto expect = brute_counts(texts, 16);
  CHECK(stats.candidates().size() == expect.size());
  for (const auto& [g, n] : expect) {
    INFO(g);
    CHECK(stats.count(g) == n);
  }
}

TEST_CASE("frequent phrase becomes a seed") {
  std::vector<std::string> texts;
  const std::vector<std::string> lead = {"supports", "fast", "new", "quick"};
  for (int i = 0; i < 20; ++i) texts.push_back(lead[i % 4] + " wireless charging at " + std::to_string(i) + " watts");
  SeedConfig cfg;
  cfg.min_count = 5;
  cfg.max_len = 24;
  cfg.stopwords = {"at"};
  const auto seeds = extract_seed_phrases(texts, cfg);
  bool found = false;
  for (const auto& s : seeds) {
    if (s.phrase == "wireless charging") found = true;
    CHECK(s.count >= 5);
  }
  CHECK(found);
}

TEST_CASE("stopword-bounded n-grams are excluded") {
  std::vector<std::string> texts(10, "most of the time");
  SeedConfig cfg;
  cfg.stopwords = {"of", "the"};
  for (const auto& s : extract_seed_phrases(texts, cfg)) {
    CHECK(s.phrase != "of the");
    CHECK(s.phrase.rfind("of", 0) != 0);
    CHECK(s.phrase.rfind("the", 0) != 0);
  }
}

TEST_CASE("seed phrases are sorted and maximal") {
  std::vector<std::string> texts(6, "noise cancelling headphones");
  texts.push_back("noise cancelling");
  SeedConfig cfg;
  cfg.min_count = 5;
  cfg.max_len = 32;
  const auto seeds = extract_seed_phrases(texts, cfg);
  std::map<std::string, long> got;
  for (const auto& s : seeds) got[s.phrase] = s.count;
  // "cancelling headphones" always sits inside the longer phrase at equal count.
  CHECK(got.count("noise cancelling headphones") == 1);
  CHECK(got.count("cancelling headphones") == 0);
  CHECK(got["noise cancelling"] == 7);
  for (std::size_t i = 1; i < seeds.size(); ++i) {
    CHECK((seeds[i - 1].count > seeds[i].count ||
           (seeds[i - 1].count == seeds[i].count && seeds[i - 1].phrase < seeds[i].phrase)));
  }
}

TEST_CASE("raising min_count never adds a seed") {
  const auto s = generate_synthetic(default_synth_spec(3, 30, 2));
  const auto texts = s.corpus.all_texts();
  SeedConfig lo, hi;
  lo.min_count = 3;
  hi.min_count = 9;
  std::set<std::string> low;
  for (const auto& p : extract_seed_phrases(texts, lo)) low.insert(p.phrase);
  const auto high = extract_seed_phrases(texts, hi);
  for (const auto& p : high) {
    // Maximal-match dedup can only remove; a phrase kept at 9 was counted at 3 too.
    CHECK(NgramStatistics(texts, 16, {}).count(p.phrase) >= 9);
  }
  CHECK(high.size() <= low.size());
}

TEST_CASE("pmi by hand") {
  const NgramStatistics stats({"ab ab cd"}, 16, {});
  // units a b a b c d: P(ab)=2/6, P(a)=P(b)=2/6
  const double p_ab = 2.0 / 6.0, p_a = 2.0 / 6.0, p_b = 2.0 / 6.0;
  CHECK(stats.pmi("ab") == doctest::Approx(std::log(p_ab / (p_a * p_b))).epsilon(1e-12));
  CHECK(stats.pmi("ab") == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("fixed left context gives zero score and is dropped") {
  std::vector<std::string> texts;
  const std::vector<std::string> right = {"one", "two", "three", "four", "five", "six"};
  for (const auto& r : right) texts.push_back("only zq " + r);
  for (const auto& r : right) texts.push_back(r + " other words " + r);
  const NgramStatistics stats(texts, 16, {});
  CHECK(stats.left_entropy("zq") == 0.0);
  CHECK(stats.right_entropy("zq") > 0.0);
  MineConfig mc;
  const auto mined = mine_phrases(texts, {}, SeedConfig{}, mc);
  for (const auto& m : mined) {
    CHECK(m.phrase != "zq");
    CHECK(m.score >= mc.threshold);
    CHECK(m.score <= 1.0);
  }
}

TEST_CASE("boundary entropy counts edges as distinct neighbours") {
  const NgramStatistics stats({"ab x", "ab y", "z ab"}, 16, {});
  // left: edge, edge, z -> three distinct neighbours
  CHECK(stats.left_entropy("ab") == doctest::Approx(std::log(3.0)));
  CHECK(stats.left_branching("ab") == 3);
}

TEST_CASE("seeds score exactly one") {
  const std::vector<std::string> texts = {"alpha beta", "gamma"};
  const auto mined = mine_phrases(texts, {{"alpha beta", 1}}, SeedConfig{}, MineConfig{});
  REQUIRE(mined.size() == 1);
  CHECK(mined[0].score == 1.0);
  CHECK(mined[0].source == PhraseSource::kSeed);
}

TEST_CASE("build_vocab rules") {
  const auto empty = build_vocab(std::vector<std::string>{"ab"}, {}, {});
  CHECK(empty.entries.empty());
  CHECK(empty.base_units == std::set<std::string>{"a", "b"});

  const auto both = build_vocab(std::vector<std::string>{"xy z"}, {{"xy", 4}}, {{"xy", 0.7, PhraseSource::kMined}});
  REQUIRE(both.entries.size() == 1);
  CHECK(both.entries[0].score == 1.0);
  CHECK(both.entries[0].source == PhraseSource::kSeed);
  CHECK(both.base_units == std::set<std::string>{"x", "y", "z"});
}

TEST_CASE("vocab phrases are corpus substrings and deterministic") {
  const auto s = generate_synthetic(default_synth_spec(3, 20, 5));
  const auto texts = s.corpus.all_texts();
  SeedConfig sc;
  const auto seeds = extract_seed_phrases(texts, sc);
  const auto mined = mine_phrases(texts, seeds, sc, MineConfig{});
  const auto v = build_vocab(texts, seeds, mined);
  for (const auto& e : v.entries) {
    bool present = false;
    for (const auto& t : texts) present = present || t.find(e.phrase) != std::string::npos;
    CHECK(present);
  }
  const auto again = build_vocab(texts, extract_seed_phrases(texts, sc), mine_phrases(texts, seeds, sc, MineConfig{}));
  CHECK(again.entries == v.entries);
}

TEST_CASE("config invariants") {
  SeedConfig bad;
  bad.min_count = 1;
  CHECK_THROWS_AS(extract_seed_phrases(std::vector<std::string>{"a b"}, bad), ConfigError);
  bad.min_count = 2;
  bad.max_len = 1;
  CHECK_THROWS_AS(extract_seed_phrases(std::vector<std::string>{"a b"}, bad), ConfigError);
}

TEST_CASE("tsv round trip") {
  TempDir dir("phr");
  PhraseVocab v;
  v.entries = {{"wireless charging", 1.0, PhraseSource::kSeed}, {"big screen", 0.625, PhraseSource::kMined}};
  write_phrase_tsv(v, dir / "p.tsv");
  CHECK(read_phrase_tsv(dir / "p.tsv") == v.entries);
  write_file(dir / "bad.tsv", "x\t1\tseed\ny\tnope\tmined\n");
  try {
    read_phrase_tsv(dir / "bad.tsv");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
