#include "epccg/tokenizer.hpp"

#include <fstream>

#include "epccg/error.hpp"
#include "epccg/text.hpp"
#include "json.hpp"

namespace epccg {

const std::vector<std::string>& prompt_phrases() {
  static const std::vector<std::string> kPhrases = {"aspect:", "product:", "title:", "brand:",
                                                    "attribute:", "type:", "OCR:", "copywriting:"};
  return kPhrases;
}

std::string aspect_slot_token(int m) { return "[ASPECT_" + std::to_string(m) + "]"; }

Vocab Vocab::build(const PhraseVocab& phrases, int num_aspect_slots) {
  if (num_aspect_slots < 0) throw ConfigError("negative aspect slot count");
  Vocab v;
  v.tokens_ = {kPad, kUnk, kSos, kEos, kSep, kMask};
  for (int m = 0; m < num_aspect_slots; ++m) v.tokens_.push_back(aspect_slot_token(m));
  std::unordered_set<std::string> seen(v.tokens_.begin(), v.tokens_.end());
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) v.tokens_.push_back(t);
  };
  for (const auto& p : prompt_phrases()) add(p);
  for (const auto& e : phrases.entries) add(text::nfc(e.phrase));
  for (const auto& u : phrases.base_units) add(u);
  v.index();
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const std::vector<std::string> fixed = {kPad, kUnk, kSos, kEos, kSep, kMask};
  if (tokens.size() < fixed.size()) throw DataError("vocabulary is missing special tokens");
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (tokens[i] != fixed[i]) throw DataError("vocabulary id " + std::to_string(i) + " must be " + fixed[i]);
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index();
  return v;
}

void Vocab::index() {
  ids_.clear();
  phrases_.clear();
  num_aspect_slots_ = 0;
  max_phrase_units_ = 1;
  while (kNumFixedSpecials + num_aspect_slots_ < static_cast<int>(tokens_.size()) &&
         tokens_[static_cast<std::size_t>(kNumFixedSpecials + num_aspect_slots_)] ==
             aspect_slot_token(num_aspect_slots_)) {
    ++num_aspect_slots_;
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
    if (static_cast<int>(i) < kNumFixedSpecials + num_aspect_slots_) continue;
    const auto units = static_cast<int>(text::graphemes(tokens_[i]).size());
    if (units >= 2) {
      phrases_.insert(tokens_[i]);
      max_phrase_units_ = std::max(max_phrase_units_, units);
    }
  }
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::aspect_slot(int m) const {
  if (m < 0 || m >= num_aspect_slots_) {
    throw ArgumentError("aspect index " + std::to_string(m) + " has no reserved token (" +
                        std::to_string(num_aspect_slots_) + " slots)");
  }
  return kNumFixedSpecials + m;
}

void Vocab::save_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json(tokens_).dump(1) << '\n';
}

Vocab Vocab::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_tokens(j.get<std::vector<std::string>>());
}

std::vector<std::string> tokenize(std::string_view input, const Vocab& vocab) {
  const auto units = text::graphemes(text::nfc(input));
  std::vector<std::string> out;
  const std::size_t n = units.size();
  const auto maxl = static_cast<std::size_t>(vocab.max_phrase_units());
  std::size_t i = 0;
  while (i < n) {
    if (text::is_whitespace(units[i])) {
      ++i;
      continue;
    }
    std::size_t best = 0;
    std::string cand = units[i];
    for (std::size_t len = 2; len <= maxl && i + len <= n; ++len) {
      cand += units[i + len - 1];
      if (!text::is_whitespace(units[i + len - 1]) && vocab.is_phrase(cand)) best = len;
    }
    if (best >= 2) {
      std::string tok;
      for (std::size_t k = i; k < i + best; ++k) tok += units[k];
      out.push_back(std::move(tok));
      i += best;
    } else {
      out.push_back(vocab.contains(units[i]) && !vocab.is_special(vocab.id(units[i])) ? units[i]
                                                                                       : std::string(kUnk));
      ++i;
    }
  }
  return out;
}

TokenSeq encode(const std::vector<std::string>& tokens, const Vocab& vocab) {
  TokenSeq ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::string decode(const TokenSeq& ids, const Vocab& vocab, bool skip_specials) {
  std::string out;
  for (int id : ids) {
    const std::string& t = vocab.token(id);
    if (id == kPadId) continue;
    if (skip_specials && vocab.is_special(id)) continue;
    out += t;
  }
  return out;
}

std::string render(const TokenSeq& ids, const Vocab& vocab) {
  std::string out;
  std::string prev;
  bool prev_phrase = false;
  for (int id : ids) {
    const std::string& t = vocab.token(id);
    if (vocab.is_special(id)) continue;
    const bool phrase = vocab.is_phrase(t);
    if (!prev.empty()) {
      const auto last = text::graphemes(prev).back();
      const auto first = text::graphemes(t).front();
      const bool words = (phrase || prev_phrase) && text::is_spaced_script(last) && text::is_spaced_script(first);
      const bool after_punct = (last == "," || last == "." || last == ";" || last == "!" || last == "?") &&
                               text::is_spaced_script(first);
      if (words || after_punct) out += ' ';
    }
    out += t;
    prev = t;
    prev_phrase = phrase;
  }
  return out;
}

}  // namespace epccg
