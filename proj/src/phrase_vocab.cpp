#include "epccg/phrase_vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "epccg/error.hpp"

namespace epccg {

namespace {

std::string lower_ascii(std::string s) {
  for (auto& ch : s) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return s;
}

std::string join(const std::vector<std::string>& units, std::size_t b, std::size_t e) {
  std::string out;
  for (std::size_t i = b; i < e; ++i) out += units[i];
  return out;
}

bool is_control_space(const std::string& u) { return u == "\t" || u == "\n" || u == "\r\n" || u == "\r"; }

// Sentence spans [first, second) of a segmented text.
std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(const text::Segmented& s) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.units.size(); ++i) {
    if (text::is_sentence_break(s.units, i) || is_control_space(s.units[i])) {
      if (i > start) spans.emplace_back(start, i);
      start = i + 1;
    }
  }
  if (s.units.size() > start) spans.emplace_back(start, s.units.size());
  return spans;
}

bool valid_span(const text::Segmented& s, std::size_t b, std::size_t e) {
  return e - b >= 2 && s.boundary[b] && s.boundary[e] && text::is_alnum(s.units[b]) &&
         text::is_alnum(s.units[e - 1]);
}

std::size_t next_boundary(const text::Segmented& s, std::size_t i) {
  std::size_t k = i + 1;
  while (k < s.units.size() && !s.boundary[k]) ++k;
  return k;
}

std::size_t prev_boundary(const text::Segmented& s, std::size_t j) {
  std::size_t k = j - 1;
  while (k > 0 && !s.boundary[k]) --k;
  return k;
}

double entropy(const std::map<std::string, long>& counts, long edges) {
  double total = static_cast<double>(edges);
  for (const auto& [w, c] : counts) total += static_cast<double>(c);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (const auto& [w, c] : counts) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  // Each edge occurrence is its own neighbour with probability 1/total.
  if (edges > 0) h += static_cast<double>(edges) * (std::log(total) / total);
  return h;
}

}  // namespace

NgramStatistics::NgramStatistics(const std::vector<std::string>& texts, int max_len,
                                 const std::set<std::string>& stopwords)
    : max_len_(max_len) {
  docs_.reserve(texts.size());
  for (const auto& t : texts) docs_.push_back(text::segment(text::nfc(t)));

  const auto maxl = static_cast<std::size_t>(std::max(2, max_len));
  for (std::size_t d = 0; d < docs_.size(); ++d) {
    const auto& s = docs_[d];
    for (const auto& u : s.units) {
      if (!text::is_whitespace(u)) {
        ++unit_counts_[u];
        ++total_units_;
      }
    }
    for (const auto& [sb, se] : sentence_spans(s)) {
      for (std::size_t i = sb; i < se; ++i) {
        if (!s.boundary[i] || !text::is_alnum(s.units[i])) continue;
        const std::size_t first_end = next_boundary(s, i);
        const std::size_t limit = std::min(se, i + maxl);
        for (std::size_t j = i + 2; j <= limit; ++j) {
          if (!valid_span(s, i, j)) continue;
          auto [it, fresh] = candidates_.try_emplace(join(s.units, i, j));
          auto& c = it->second;
          ++c.count;
          if (fresh) {
            c.text = d;
            c.begin = i;
            c.end = j;
            const std::string first = lower_ascii(join(s.units, i, std::min(first_end, j)));
            const std::string last = lower_ascii(join(s.units, prev_boundary(s, j), j));
            c.stopword_bounded = stopwords.count(first) > 0 || stopwords.count(last) > 0;
          }
        }
      }
    }
  }

  // Second pass: neighbouring words of repeated candidates.
  for (const auto& s : docs_) {
    for (const auto& [sb, se] : sentence_spans(s)) {
      for (std::size_t i = sb; i < se; ++i) {
        if (!s.boundary[i] || !text::is_alnum(s.units[i])) continue;
        const std::size_t limit = std::min(se, i + maxl);
        for (std::size_t j = i + 2; j <= limit; ++j) {
          if (!valid_span(s, i, j)) continue;
          auto it = candidates_.find(join(s.units, i, j));
          if (it == candidates_.end() || it->second.count < 2) continue;
          auto& c = it->second;
          std::size_t l = i;
          while (l > sb && text::is_whitespace(s.units[l - 1])) --l;
          if (l == sb) {
            ++c.left_edges;
          } else {
            ++c.left[join(s.units, prev_boundary(s, l), l)];
          }
          std::size_t r = j;
          while (r < se && text::is_whitespace(s.units[r])) ++r;
          if (r >= se) {
            ++c.right_edges;
          } else {
            ++c.right[join(s.units, r, std::min(se, next_boundary(s, r)))];
          }
        }
      }
    }
  }
}

long NgramStatistics::count(std::string_view ngram) const {
  auto it = candidates_.find(std::string(ngram));
  return it == candidates_.end() ? 0 : it->second.count;
}

long NgramStatistics::unit_count(std::string_view unit) const {
  auto it = unit_counts_.find(std::string(unit));
  return it == unit_counts_.end() ? 0 : it->second;
}

double NgramStatistics::pmi(std::string_view ngram) const {
  const long c = count(ngram);
  if (c == 0 || total_units_ == 0) return 0.0;
  const double n = static_cast<double>(total_units_);
  double value = std::log(static_cast<double>(c) / n);
  for (const auto& u : text::graphemes(ngram)) {
    if (text::is_whitespace(u)) continue;
    value -= std::log(static_cast<double>(unit_count(u)) / n);
  }
  return value;
}

double NgramStatistics::left_entropy(std::string_view ngram) const {
  auto it = candidates_.find(std::string(ngram));
  return it == candidates_.end() ? 0.0 : entropy(it->second.left, it->second.left_edges);
}

double NgramStatistics::right_entropy(std::string_view ngram) const {
  auto it = candidates_.find(std::string(ngram));
  return it == candidates_.end() ? 0.0 : entropy(it->second.right, it->second.right_edges);
}

std::size_t NgramStatistics::left_branching(std::string_view ngram) const {
  auto it = candidates_.find(std::string(ngram));
  if (it == candidates_.end()) return 0;
  return it->second.left.size() + static_cast<std::size_t>(it->second.left_edges);
}

std::size_t NgramStatistics::right_branching(std::string_view ngram) const {
  auto it = candidates_.find(std::string(ngram));
  if (it == candidates_.end()) return 0;
  return it->second.right.size() + static_cast<std::size_t>(it->second.right_edges);
}

std::vector<std::string> NgramStatistics::sub_spans(const Candidate& c) const {
  std::vector<std::string> out;
  const auto& s = docs_[c.text];
  for (std::size_t i = c.begin; i < c.end; ++i) {
    for (std::size_t j = i + 2; j <= c.end; ++j) {
      if (i == c.begin && j == c.end) continue;
      if (valid_span(s, i, j)) out.push_back(join(s.units, i, j));
    }
  }
  return out;
}

namespace {

void check(const SeedConfig& config) {
  if (config.min_count < 2) throw ConfigError("seed min_count must be >= 2");
  if (config.max_len < 2) throw ConfigError("seed max_len must be >= 2");
}

}  // namespace

std::vector<SeedPhrase> extract_seed_phrases(const std::vector<std::string>& texts, const SeedConfig& config) {
  check(config);
  NgramStatistics stats(texts, config.max_len, config.stopwords);
  auto qualifies = [&](const NgramStatistics::Candidate& c) {
    return c.count >= config.min_count && !c.stopword_bounded;
  };
  std::set<std::string> dropped;
  for (const auto& [phrase, c] : stats.candidates()) {
    if (!qualifies(c)) continue;
    for (const auto& sub : stats.sub_spans(c)) {
      auto it = stats.candidates().find(sub);
      if (it != stats.candidates().end() && qualifies(it->second) && it->second.count == c.count) {
        dropped.insert(sub);
      }
    }
  }
  std::vector<SeedPhrase> out;
  for (const auto& [phrase, c] : stats.candidates()) {
    if (qualifies(c) && !dropped.count(phrase)) out.push_back({phrase, c.count});
  }
  std::sort(out.begin(), out.end(), [](const SeedPhrase& a, const SeedPhrase& b) {
    return a.count != b.count ? a.count > b.count : a.phrase < b.phrase;
  });
  return out;
}

std::vector<SeedPhrase> extract_seed_phrases(const Corpus& corpus, const SeedConfig& config) {
  if (corpus.empty()) throw DataError("cannot extract phrases from an empty corpus");
  return extract_seed_phrases(corpus.all_texts(), config);
}

std::vector<ScoredPhrase> mine_phrases(const std::vector<std::string>& texts,
                                       const std::vector<SeedPhrase>& seeds, const SeedConfig& seed_config,
                                       const MineConfig& config) {
  check(seed_config);
  NgramStatistics stats(texts, seed_config.max_len, seed_config.stopwords);

  std::vector<std::string> pool;
  for (const auto& [phrase, c] : stats.candidates()) {
    if (c.count >= std::max(2, config.min_count) && !c.stopword_bounded) pool.push_back(phrase);
  }
  std::sort(pool.begin(), pool.end());

  std::vector<double> pmi(pool.size());
  double mean = 0.0;
  std::size_t branching = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pmi[i] = stats.pmi(pool[i]);
    mean += pmi[i];
    branching = std::max({branching, stats.left_branching(pool[i]), stats.right_branching(pool[i])});
  }
  if (!pool.empty()) mean /= static_cast<double>(pool.size());
  double var = 0.0;
  for (double v : pmi) var += (v - mean) * (v - mean);
  const double sd = pool.empty() ? 0.0 : std::sqrt(var / static_cast<double>(pool.size()));
  const double log_branching = branching > 1 ? std::log(static_cast<double>(branching)) : 0.0;

  std::map<std::string, ScoredPhrase> scored;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double z = sd > 0.0 ? (pmi[i] - mean) / sd : 0.0;
    const double h = std::min(stats.left_entropy(pool[i]), stats.right_entropy(pool[i]));
    double q = log_branching > 0.0 ? (1.0 / (1.0 + std::exp(-z))) * h / log_branching : 0.0;
    q = std::clamp(q, 0.0, 1.0);
    if (q >= config.threshold) scored[pool[i]] = {pool[i], q, PhraseSource::kMined};
  }
  for (const auto& s : seeds) scored[s.phrase] = {s.phrase, 1.0, PhraseSource::kSeed};

  std::vector<ScoredPhrase> out;
  out.reserve(scored.size());
  for (auto& [p, s] : scored) out.push_back(std::move(s));
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredPhrase& a, const ScoredPhrase& b) { return a.score > b.score; });
  return out;
}

std::vector<ScoredPhrase> mine_phrases(const Corpus& corpus, const std::vector<SeedPhrase>& seeds,
                                       const SeedConfig& seed_config, const MineConfig& config) {
  return mine_phrases(corpus.all_texts(), seeds, seed_config, config);
}

PhraseVocab build_vocab(const std::vector<std::string>& texts, const std::vector<SeedPhrase>& seeds,
                        const std::vector<ScoredPhrase>& mined) {
  PhraseVocab v;
  for (const auto& t : texts) {
    for (auto& g : text::graphemes(text::nfc(t))) {
      if (!text::is_whitespace(g)) v.base_units.insert(std::move(g));
    }
  }
  std::map<std::string, std::size_t> at;
  auto add = [&](const ScoredPhrase& p) {
    auto it = at.find(p.phrase);
    if (it == at.end()) {
      at.emplace(p.phrase, v.entries.size());
      v.entries.push_back(p);
      return;
    }
    auto& cur = v.entries[it->second];
    if (p.score > cur.score || (p.score == cur.score && p.source == PhraseSource::kSeed)) {
      cur.score = p.score;
      cur.source = p.source;
    }
  };
  for (const auto& s : seeds) add({s.phrase, 1.0, PhraseSource::kSeed});
  for (const auto& m : mined) add(m);
  return v;
}

PhraseVocab build_vocab(const Corpus& corpus, const std::vector<SeedPhrase>& seeds,
                        const std::vector<ScoredPhrase>& mined) {
  return build_vocab(corpus.all_texts(), seeds, mined);
}

void write_phrase_tsv(const PhraseVocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (const auto& e : vocab.entries) {
    out << e.phrase << '\t' << e.score << '\t' << (e.source == PhraseSource::kSeed ? "seed" : "mined") << '\n';
  }
}

std::vector<ScoredPhrase> read_phrase_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ScoredPhrase> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError("expected phrase<TAB>score<TAB>source", lineno);
    ScoredPhrase p;
    p.phrase = line.substr(0, t1);
    try {
      p.score = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw ParseError("bad score", lineno);
    }
    const std::string src = line.substr(t2 + 1);
    if (src == "seed") {
      p.source = PhraseSource::kSeed;
    } else if (src == "mined") {
      p.source = PhraseSource::kMined;
    } else {
      throw ParseError("unknown source \"" + src + "\"", lineno);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::set<std::string> read_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stopword file " + path.string());
  std::set<std::string> out;
  std::string w;
  while (in >> w) {
    if (!w.empty() && w[0] == '#') {
      std::getline(in, w);
      continue;
    }
    out.insert(lower_ascii(w));
  }
  return out;
}

}  // namespace epccg
