#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "epccg/mlm_labeler.hpp"
#include "epccg/tokenizer.hpp"
#include "json.hpp"

namespace epccg {

using Tokens = std::vector<std::string>;

// Clipped n-gram matches and candidate n-gram totals for orders 1..4.
struct NgramTally {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long candidate_length = 0;
  long reference_length = 0;

  NgramTally& operator+=(const NgramTally& o);
};

NgramTally tally(const Tokens& candidate, const Tokens& reference);

// Sentence BLEU over orders 1..n (n in 1..4). Zero higher-order matches
// are smoothed to 1/(total+1); no unigram match gives 0.
double bleu_n(const Tokens& candidate, const Tokens& reference, int n);

// Corpus BLEU-4 on the 0..100 scale from summed tallies.
double corpus_bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs);
double corpus_bleu(const NgramTally& total);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

enum class RougeVariant { kRouge1, kRouge2, kRougeL };

RougeScore rouge(const Tokens& candidate, const Tokens& reference, RougeVariant variant);
std::size_t lcs_length(const Tokens& a, const Tokens& b);

// Fraction of texts whose predicted aspect equals the desired one.
double aspect_match_rate(const std::vector<std::string>& texts, const std::vector<std::string>& desired,
                         const std::vector<SubstituteSet>& sets, const Vocab& vocab);

struct ScoreReport {
  std::size_t pairs = 0;
  std::array<double, 4> bleu{};  // mean sentence BLEU-1..4
  double corpus_bleu = 0.0;
  RougeScore rouge_1, rouge_2, rouge_l;  // means over pairs
  std::optional<double> aspect_match;
  NgramTally counts;
};

// Scores generated texts against references (same length, tokenized with
// `vocab`). Aspect match is filled when substitute sets are given.
ScoreReport score(const std::vector<std::string>& generated, const std::vector<std::string>& references,
                  const std::vector<std::string>& desired, const std::vector<SubstituteSet>& sets, const Vocab& vocab);

nlohmann::ordered_json to_json(const ScoreReport& r);
void save_report(const ScoreReport& r, const std::filesystem::path& path, const std::string& config_hash = {});

}  // namespace epccg
