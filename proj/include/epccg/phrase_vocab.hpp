#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "epccg/corpus.hpp"
#include "epccg/text.hpp"

namespace epccg {

// Frequent n-gram extraction. Lengths count grapheme clusters; candidates
// start and end on word boundaries, never cross sentence punctuation, and
// neither begin nor end with a stopword.
struct SeedConfig {
  int min_count = 5;
  int max_len = 16;
  std::set<std::string> stopwords;
};

struct MineConfig {
  int min_count = 3;         // occurrences needed to be scored at all
  double threshold = 0.5;    // quality below this is dropped
};

struct SeedPhrase {
  std::string phrase;
  long count = 0;
};

enum class PhraseSource { kSeed, kMined };

struct ScoredPhrase {
  std::string phrase;
  double score = 0.0;
  PhraseSource source = PhraseSource::kMined;

  bool operator==(const ScoredPhrase&) const = default;
};

struct PhraseVocab {
  std::vector<ScoredPhrase> entries;
  std::set<std::string> base_units;  // every grapheme observed in the corpus
};

// Occurrence statistics for every candidate span of a text collection.
class NgramStatistics {
 public:
  NgramStatistics(const std::vector<std::string>& texts, int max_len,
                  const std::set<std::string>& stopwords);

  struct Candidate {
    long count = 0;
    bool stopword_bounded = false;
    std::size_t text = 0, begin = 0, end = 0;  // first occurrence, grapheme offsets
    std::map<std::string, long> left, right;   // neighbouring words
    long left_edges = 0, right_edges = 0;      // occurrences at a sentence edge
  };

  long count(std::string_view ngram) const;
  long unit_count(std::string_view unit) const;
  long total_units() const { return total_units_; }

  // log P(g) - sum_u log P(u), every probability relative to total_units().
  double pmi(std::string_view ngram) const;
  // Boundary entropies; each edge occurrence counts as a distinct neighbour.
  double left_entropy(std::string_view ngram) const;
  double right_entropy(std::string_view ngram) const;
  std::size_t left_branching(std::string_view ngram) const;
  std::size_t right_branching(std::string_view ngram) const;

  const std::unordered_map<std::string, Candidate>& candidates() const { return candidates_; }
  const std::vector<text::Segmented>& segmented() const { return docs_; }

  // Boundary-valid sub-spans of a candidate's first occurrence.
  std::vector<std::string> sub_spans(const Candidate& c) const;

 private:
  int max_len_;
  std::vector<text::Segmented> docs_;
  std::unordered_map<std::string, Candidate> candidates_;
  std::unordered_map<std::string, long> unit_counts_;
  long total_units_ = 0;
};

std::vector<SeedPhrase> extract_seed_phrases(const std::vector<std::string>& texts, const SeedConfig& config);
std::vector<SeedPhrase> extract_seed_phrases(const Corpus& corpus, const SeedConfig& config);

// quality = sigmoid(z(PMI)) * min(H_left, H_right) / log(max branching),
// clipped to [0,1]. Seeds are returned with score 1.
std::vector<ScoredPhrase> mine_phrases(const std::vector<std::string>& texts,
                                       const std::vector<SeedPhrase>& seeds, const SeedConfig& seed_config,
                                       const MineConfig& config);
std::vector<ScoredPhrase> mine_phrases(const Corpus& corpus, const std::vector<SeedPhrase>& seeds,
                                       const SeedConfig& seed_config, const MineConfig& config);

PhraseVocab build_vocab(const std::vector<std::string>& texts, const std::vector<SeedPhrase>& seeds,
                        const std::vector<ScoredPhrase>& mined);
PhraseVocab build_vocab(const Corpus& corpus, const std::vector<SeedPhrase>& seeds,
                        const std::vector<ScoredPhrase>& mined);

// vocab.tsv: phrase<TAB>score<TAB>seed|mined
void write_phrase_tsv(const PhraseVocab& vocab, const std::filesystem::path& path);
std::vector<ScoredPhrase> read_phrase_tsv(const std::filesystem::path& path);

std::set<std::string> read_stopwords(const std::filesystem::path& path);

}  // namespace epccg
