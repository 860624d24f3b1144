#include "epccg/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "epccg/error.hpp"

namespace epccg {

using nlohmann::ordered_json;

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

long clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  long m = 0;
  for (const auto& [g, c] : cand) {
    const auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

double combine(const std::array<long, 4>& matches, const std::array<long, 4>& totals, int n, long c, long r) {
  if (c == 0 || matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double p = matches[ku] > 0 ? static_cast<double>(matches[ku]) / static_cast<double>(totals[ku])
                                     : 1.0 / static_cast<double>(totals[ku] + 1);
    log_sum += std::log(p);
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / n);
}

RougeScore prf(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

NgramTally& NgramTally::operator+=(const NgramTally& o) {
  for (std::size_t k = 0; k < 4; ++k) {
    matches[k] += o.matches[k];
    totals[k] += o.totals[k];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

NgramTally tally(const Tokens& candidate, const Tokens& reference) {
  NgramTally t;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto cand = ngrams(candidate, k + 1);
    t.matches[k] = clipped_overlap(cand, ngrams(reference, k + 1));
    t.totals[k] = candidate.size() >= k + 1 ? static_cast<long>(candidate.size() - k) : 0;
  }
  t.candidate_length = static_cast<long>(candidate.size());
  t.reference_length = static_cast<long>(reference.size());
  return t;
}

double bleu_n(const Tokens& candidate, const Tokens& reference, int n) {
  if (n < 1 || n > 4) throw ArgumentError("BLEU order must be in 1..4");
  const NgramTally t = tally(candidate, reference);
  return combine(t.matches, t.totals, n, t.candidate_length, t.reference_length);
}

double corpus_bleu(const NgramTally& total) {
  return 100.0 * combine(total.matches, total.totals, 4, total.candidate_length, total.reference_length);
}

double corpus_bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs) {
  if (pairs.empty()) throw ArgumentError("corpus BLEU needs at least one pair");
  NgramTally total;
  for (const auto& [c, r] : pairs) total += tally(c, r);
  return corpus_bleu(total);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge(const Tokens& candidate, const Tokens& reference, RougeVariant variant) {
  if (variant == RougeVariant::kRougeL) {
    return prf(static_cast<double>(lcs_length(candidate, reference)), static_cast<double>(candidate.size()),
               static_cast<double>(reference.size()));
  }
  const std::size_t n = variant == RougeVariant::kRouge1 ? 1 : 2;
  const auto cand_total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
  const auto ref_total = reference.size() >= n ? reference.size() - n + 1 : 0;
  const long overlap = clipped_overlap(ngrams(candidate, n), ngrams(reference, n));
  return prf(static_cast<double>(overlap), static_cast<double>(cand_total), static_cast<double>(ref_total));
}

double aspect_match_rate(const std::vector<std::string>& texts, const std::vector<std::string>& desired,
                         const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  if (texts.empty()) throw ArgumentError("aspect match rate needs at least one generation");
  if (texts.size() != desired.size()) throw ArgumentError("texts and desired aspects differ in length");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto c = classify_text(texts[i], sets, vocab);
    if (c.label != kUnknownLabel && c.label == desired[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(texts.size());
}

ScoreReport score(const std::vector<std::string>& generated, const std::vector<std::string>& references,
                  const std::vector<std::string>& desired, const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  if (generated.size() != references.size()) {
    throw DataError("generated has " + std::to_string(generated.size()) + " lines but references has " +
                    std::to_string(references.size()));
  }
  if (generated.empty()) throw ArgumentError("nothing to score");
  ScoreReport r;
  r.pairs = generated.size();
  auto add = [](RougeScore& acc, const RougeScore& s) {
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f1 += s.f1;
  };
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const Tokens c = tokenize(generated[i], vocab);
    const Tokens ref = tokenize(references[i], vocab);
    for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] += bleu_n(c, ref, n);
    r.counts += tally(c, ref);
    add(r.rouge_1, rouge(c, ref, RougeVariant::kRouge1));
    add(r.rouge_2, rouge(c, ref, RougeVariant::kRouge2));
    add(r.rouge_l, rouge(c, ref, RougeVariant::kRougeL));
  }
  const double n = static_cast<double>(r.pairs);
  for (auto& b : r.bleu) b /= n;
  for (RougeScore* s : {&r.rouge_1, &r.rouge_2, &r.rouge_l}) {
    s->precision /= n;
    s->recall /= n;
    s->f1 /= n;
  }
  r.corpus_bleu = corpus_bleu(r.counts);
  if (!sets.empty()) r.aspect_match = aspect_match_rate(generated, desired, sets, vocab);
  return r;
}

ordered_json to_json(const ScoreReport& r) {
  auto rj = [](const RougeScore& s) {
    ordered_json j;
    j["precision"] = s.precision;
    j["recall"] = s.recall;
    j["f1"] = s.f1;
    return j;
  };
  ordered_json j;
  j["pairs"] = r.pairs;
  j["bleu_1"] = r.bleu[0];
  j["bleu_2"] = r.bleu[1];
  j["bleu_3"] = r.bleu[2];
  j["bleu_4"] = r.bleu[3];
  j["corpus_bleu"] = r.corpus_bleu;
  j["rouge_1"] = rj(r.rouge_1);
  j["rouge_2"] = rj(r.rouge_2);
  j["rouge_l"] = rj(r.rouge_l);
  j["aspect_match"] = r.aspect_match ? ordered_json(*r.aspect_match) : ordered_json(nullptr);
  ordered_json counts;
  counts["matches"] = r.counts.matches;
  counts["totals"] = r.counts.totals;
  counts["candidate_length"] = r.counts.candidate_length;
  counts["reference_length"] = r.counts.reference_length;
  j["counts"] = std::move(counts);
  return j;
}

void save_report(const ScoreReport& r, const std::filesystem::path& path, const std::string& config_hash) {
  ordered_json j = to_json(r);
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace epccg
