#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "epccg/error.hpp"
#include "epccg/eval_metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace epccg;

namespace {

Tokens random_tokens(std::mt19937& gen, int min_len, int max_len, int alphabet) {
  std::uniform_int_distribution<int> len(min_len, max_len), sym(0, alphabet - 1);
  Tokens t(static_cast<std::size_t>(len(gen)));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + sym(gen)));
  return t;
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

}  // namespace

TEST_CASE("bleu identity and disjoint") {
  const Tokens a = {"a", "b", "c", "d", "e"};
  for (int n = 1; n <= 4; ++n) {
    CHECK(bleu_n(a, a, n) == doctest::Approx(1.0));
    CHECK(bleu_n(a, {"x", "y", "z"}, n) == 0.0);
    CHECK(bleu_n({}, a, n) == 0.0);
  }
  CHECK_THROWS_AS(bleu_n(a, a, 0), ArgumentError);
  CHECK_THROWS_AS(bleu_n(a, a, 5), ArgumentError);
}

TEST_CASE("bleu swapped tail against brute force") {
  const Tokens c = {"a", "b", "c", "d"}, r = {"a", "b", "d", "c"};
  CHECK(std::abs(bleu_n(c, r, 2) - oracle::bleu(c, r, 2)) < 1e-12);
  CHECK(bleu_n(c, r, 2) == doctest::Approx(std::sqrt(1.0 / 3.0)));
}

TEST_CASE("bleu and rouge agree with oracles on random pairs") {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 40; ++trial) {
    const Tokens c = random_tokens(gen, 1, 14, 5), r = random_tokens(gen, 1, 14, 5);
    for (int n = 1; n <= 4; ++n) CHECK(std::abs(bleu_n(c, r, n) - oracle::bleu(c, r, n)) < 1e-9);
    for (auto [v, n] : {std::pair{RougeVariant::kRouge1, 1}, std::pair{RougeVariant::kRouge2, 2}}) {
      const auto got = rouge(c, r, v);
      const auto want = oracle::rouge_n(c, r, static_cast<std::size_t>(n));
      CHECK(std::abs(got.precision - want.p) < 1e-9);
      CHECK(std::abs(got.recall - want.r) < 1e-9);
      CHECK(std::abs(got.f1 - want.f) < 1e-9);
    }
    const auto l = rouge(c, r, RougeVariant::kRougeL);
    const auto wl = oracle::rouge_l(c, r);
    CHECK(std::abs(l.precision - wl.p) < 1e-9);
    CHECK(std::abs(l.recall - wl.r) < 1e-9);
    CHECK(std::abs(l.f1 - wl.f) < 1e-9);
  }
}

TEST_CASE("corpus bleu") {
  const Tokens a = {"the", "battery", "lasts", "all", "day"};
  CHECK(corpus_bleu({{a, a}, {a, a}}) == doctest::Approx(100.0));

  const Tokens c = {"the", "battery", "lasts", "day"};
  CHECK(corpus_bleu({{c, a}}) == doctest::Approx(100.0 * bleu_n(c, a, 4)));
  CHECK_THROWS_AS(corpus_bleu(std::vector<std::pair<Tokens, Tokens>>{}), ArgumentError);

  std::mt19937 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<Tokens, Tokens>> pairs;
    for (int i = 0; i < 3; ++i) pairs.emplace_back(random_tokens(gen, 2, 12, 4), random_tokens(gen, 2, 12, 4));
    CHECK(std::abs(corpus_bleu(pairs) - oracle::corpus_bleu(pairs)) < 1e-9);
  }
}

TEST_CASE("corpus bleu sums tallies rather than averaging") {
  const Tokens r1 = {"a", "b", "c", "d"}, r2 = {"e", "f", "g", "h", "i", "j"};
  const std::vector<std::pair<Tokens, Tokens>> pairs = {{r1, r1}, {{"e", "f", "x", "y", "z", "w"}, r2}};
  NgramTally total;
  for (const auto& [c, r] : pairs) total += tally(c, r);
  CHECK(total.matches[0] == 6);
  CHECK(total.totals[0] == 10);
  CHECK(corpus_bleu(total) == doctest::Approx(corpus_bleu(pairs)));
  CHECK(corpus_bleu(pairs) == doctest::Approx(oracle::corpus_bleu(pairs)));
}

TEST_CASE("rouge examples") {
  const Tokens a = {"a", "b", "c"};
  for (auto v : {RougeVariant::kRouge1, RougeVariant::kRouge2, RougeVariant::kRougeL}) {
    CHECK(rouge(a, a, v).f1 == doctest::Approx(1.0));
    const auto z = rouge({}, {}, v);
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f1 == 0.0);
  }
  const auto l = rouge({"a", "c"}, a, RougeVariant::kRougeL);
  CHECK(lcs_length({"a", "c"}, a) == 2);
  CHECK(l.precision == doctest::Approx(1.0));
  CHECK(l.recall == doctest::Approx(2.0 / 3.0));
  CHECK(l.f1 == doctest::Approx(0.8));

  std::mt19937 gen(3);
  const Tokens c = random_tokens(gen, 10, 10, 4), r = random_tokens(gen, 10, 10, 4);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  CHECK(lcs_length(c, r) == oracle::lcs(c, r, 0, 0, memo));
}

TEST_CASE("aspect match rate") {
  const Vocab v = words_vocab("screen display battery power");
  SubstituteSet screen{"screen", {{"screen", 1}, {"display", 1}}};
  SubstituteSet battery{"battery", {{"battery", 1}, {"power", 1}}};
  const std::vector<SubstituteSet> sets = {screen, battery};
  const std::vector<std::string> texts = {"screen display", "battery power", "power", "display"};
  const std::vector<std::string> desired = {"screen", "battery", "battery", "battery"};
  CHECK(aspect_match_rate(texts, desired, sets, v) == doctest::Approx(0.75));
  CHECK_THROWS_AS(aspect_match_rate({}, {}, sets, v), ArgumentError);
  CHECK_THROWS_AS(aspect_match_rate(texts, {"screen"}, sets, v), ArgumentError);
}

TEST_CASE("score report") {
  const Vocab v = words_vocab("screen display battery power");
  const std::vector<SubstituteSet> sets = {{"screen", {{"screen", 1}}}, {"battery", {{"battery", 1}}}};
  const std::vector<std::string> gen = {"screen display", "battery"};
  const std::vector<std::string> ref = {"screen display", "battery power"};
  const auto rep = score(gen, ref, {"screen", "battery"}, sets, v);
  CHECK(rep.pairs == 2);
  REQUIRE(rep.aspect_match.has_value());
  CHECK(*rep.aspect_match == doctest::Approx(1.0));
  CHECK(rep.rouge_l.precision == doctest::Approx(1.0));
  CHECK(rep.corpus_bleu >= 0.0);
  CHECK(rep.corpus_bleu <= 100.0);
  const auto no_sets = score(gen, ref, {}, {}, v);
  CHECK_FALSE(no_sets.aspect_match.has_value());
  CHECK_THROWS_AS(score(gen, {"x"}, {}, {}, v), DataError);

  TempDir dir("eval");
  save_report(rep, dir / "report.json", "abc");
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(j.at("config_hash") == "abc");
  CHECK(j.at("aspect_match").get<double>() == doctest::Approx(1.0));
  CHECK(j.contains("bleu_4"));
  CHECK(j.at("rouge_l").contains("f1"));
}
