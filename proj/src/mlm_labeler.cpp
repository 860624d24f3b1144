#include "epccg/mlm_labeler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_set>

#include "epccg/error.hpp"
#include "epccg/text.hpp"

namespace epccg {

using nlohmann::json;
using nlohmann::ordered_json;

void MlmConfig::validate() const {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw ConfigError("mask_prob must be in (0,1)");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
}

json to_json(const MlmConfig& c) {
  return json{{"mask_prob", c.mask_prob}, {"top_k", c.top_k},           {"top_n", c.top_n}, {"epochs", c.epochs},
              {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed}};
}

MlmConfig mlm_config_from_json(const json& j) {
  MlmConfig c;
  c.mask_prob = j.value("mask_prob", c.mask_prob);
  c.top_k = j.value("top_k", c.top_k);
  c.top_n = j.value("top_n", c.top_n);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

int num_masked(double prob, int len) {
  if (len <= 0) return 0;
  const int n = static_cast<int>(std::ceil(prob * len - 1e-9));
  return std::clamp(n, 1, len);
}

TokenSeq mlm_sequence(const TokenSeq& content, int max_positions) {
  TokenSeq out;
  out.reserve(content.size() + 2);
  out.push_back(kSosId);
  const auto keep = std::min<std::size_t>(content.size(), static_cast<std::size_t>(std::max(0, max_positions - 2)));
  out.insert(out.end(), content.begin(), content.begin() + static_cast<std::ptrdiff_t>(keep));
  out.push_back(kEosId);
  return out;
}

namespace {

TrainingExample mask_example(const TokenSeq& seq, double prob, Rng& rng) {
  TrainingExample ex;
  ex.targets = seq;
  ex.ids = seq;
  ex.mask = AttentionMask(static_cast<int>(seq.size()));
  const int content = static_cast<int>(seq.size()) - 2;
  std::vector<int> candidates(static_cast<std::size_t>(content));
  std::iota(candidates.begin(), candidates.end(), 1);
  rng.shuffle(candidates);
  candidates.resize(static_cast<std::size_t>(num_masked(prob, content)));
  std::sort(candidates.begin(), candidates.end());
  for (int p : candidates) ex.ids[static_cast<std::size_t>(p)] = kMaskId;
  ex.positions = std::move(candidates);
  return ex;
}

}  // namespace

PretrainResult pretrain_mlm(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model,
                            const MlmConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (model.vocab_size != static_cast<int>(vocab.size())) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) + " differs from vocabulary size " +
                      std::to_string(vocab.size()));
  }
  std::vector<TokenSeq> seqs;
  for (const auto& c : corpus.copies()) {
    TokenSeq content = encode_text(c.text, vocab);
    if (content.empty()) continue;
    seqs.push_back(mlm_sequence(content, model.max_positions));
  }
  if (seqs.empty()) throw DataError("corpus has no tokenizable copy text for pretraining");

  PretrainResult result{TrainState::fresh(model), {}};
  result.state.metadata = {{"objective", "mlm"}};
  Rng rng(config.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainingExample> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(mask_example(seqs[order[i]], config.mask_prob, rng));
      total += train_step(result.state, batch, config.lr);
      ++batches;
    }
    const double mean = total / batches;
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

bool SubstituteSet::contains(const std::string& token) const {
  return std::any_of(words.begin(), words.end(), [&](const auto& w) { return w.first == token; });
}

SubstituteSet find_substitutes(const ModelParameters<float>& params, const ModelConfig& model, const Corpus& corpus,
                               const Vocab& vocab, const std::string& aspect_name, int k, int top_n) {
  if (k < 1) throw ArgumentError("K must be >= 1");
  if (top_n < 1) throw ArgumentError("top_n must be >= 1");
  const TokenSeq name = encode_text(aspect_name, vocab);
  if (name.empty()) throw ArgumentError("aspect name '" + aspect_name + "' produces no tokens");
  const std::unordered_set<int> own(name.begin(), name.end());
  // Lone graphemes of space-delimited scripts are word fragments, not
  // substitutes. Neither is punctuation.
  std::vector<char> eligible(vocab.size(), 1);
  for (int id = 0; id < static_cast<int>(vocab.size()); ++id) {
    const auto& tok = vocab.token(id);
    const auto units = text::graphemes(tok);
    if (vocab.is_special(id) || id == kUnkId || own.count(id) ||
        std::none_of(units.begin(), units.end(), [](const std::string& g) { return text::is_alnum(g); })) {
      eligible[static_cast<std::size_t>(id)] = 0;
    } else if (!vocab.is_phrase(tok) && units.size() == 1 && text::is_spaced_script(units[0])) {
      eligible[static_cast<std::size_t>(id)] = 0;
    }
  }

  std::map<int, int> pooled;
  for (const auto& copy : corpus.copies()) {
    const TokenSeq toks = encode_text(copy.text, vocab);
    TokenSeq masked;
    std::vector<int> positions;
    for (std::size_t i = 0; i < toks.size();) {
      if (i + name.size() <= toks.size() && std::equal(name.begin(), name.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
        positions.push_back(static_cast<int>(masked.size()) + 1);
        masked.push_back(kMaskId);
        i += name.size();
      } else {
        masked.push_back(toks[i]);
        ++i;
      }
    }
    if (positions.empty()) continue;
    const TokenSeq seq = mlm_sequence(masked, model.max_positions);
    std::erase_if(positions, [&](int p) { return p >= static_cast<int>(seq.size()) - 1; });
    if (positions.empty()) continue;
    const Matrix<float> logits =
        forward_positions<float>(seq, AttentionMask(static_cast<int>(seq.size())), params, model, positions);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      std::vector<int> cand;
      for (int id = 0; id < logits.cols(); ++id) {
        if (eligible[static_cast<std::size_t>(id)]) cand.push_back(id);
      }
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(top_n), cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), [&](int a, int b) {
        if (logits(r, a) != logits(r, b)) return logits(r, a) > logits(r, b);
        return a < b;
      });
      for (std::size_t i = 0; i < n; ++i) ++pooled[cand[i]];
    }
  }
  std::vector<std::pair<int, int>> ranked(pooled.begin(), pooled.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  SubstituteSet out{aspect_name, {}};
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
    out.words.emplace_back(vocab.token(ranked[i].first), ranked[i].second);
  }
  return out;
}

Classification classify_tokens(const std::vector<std::string>& tokens, const std::vector<SubstituteSet>& sets) {
  Classification out{kUnknownLabel, std::vector<int>(sets.size(), 0)};
  std::vector<std::unordered_set<std::string>> lookup;
  for (const auto& s : sets) {
    std::unordered_set<std::string> words;
    for (const auto& w : s.words) words.insert(w.first);
    lookup.push_back(std::move(words));
  }
  for (const auto& t : tokens) {
    for (std::size_t m = 0; m < sets.size(); ++m) out.coverage[m] += lookup[m].count(t) ? 1 : 0;
  }
  int best = 0;
  std::size_t arg = 0, hits = 0;
  for (std::size_t m = 0; m < sets.size(); ++m) {
    if (out.coverage[m] > best) {
      best = out.coverage[m];
      arg = m;
      hits = 1;
    } else if (out.coverage[m] == best && best > 0) {
      ++hits;
    }
  }
  if (best > 0 && hits == 1) out.label = sets[arg].aspect;
  return out;
}

Classification classify_text(std::string_view text, const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  return classify_tokens(tokenize(text, vocab), sets);
}

LabeledCorpus label_corpus(const Corpus& corpus, const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  if (sets.size() < 2) throw ArgumentError("labeling needs at least two substitute sets");
  LabeledCorpus out;
  for (const auto& s : sets) out.aspects.push_back(s.aspect);
  for (const auto& c : corpus.copies()) out.labels.push_back(classify_text(c.text, sets, vocab));
  return out;
}

Corpus apply_labels(const Corpus& corpus, const LabeledCorpus& labels) {
  if (labels.labels.size() != corpus.copies().size()) {
    throw IntegrityError("label count " + std::to_string(labels.labels.size()) + " differs from copy count " +
                         std::to_string(corpus.copies().size()));
  }
  std::vector<CopywritingRecord> copies;
  std::unordered_set<std::string> used;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i].label == kUnknownLabel) continue;
    CopywritingRecord c = corpus.copies()[i];
    c.aspect = labels.labels[i].label;
    used.insert(c.sku_id);
    copies.push_back(std::move(c));
  }
  std::vector<ProductRecord> products;
  for (const auto& p : corpus.products()) {
    if (used.count(p.sku_id)) products.push_back(p);
  }
  return Corpus(std::move(products), std::move(copies));
}

void save_substitutes(const std::vector<SubstituteSet>& sets, const std::filesystem::path& path) {
  ordered_json j = ordered_json::object();
  for (const auto& s : sets) {
    ordered_json words = ordered_json::array();
    for (const auto& [w, f] : s.words) words.push_back({w, f});
    j[s.aspect] = std::move(words);
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<SubstituteSet> load_substitutes(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(std::string("substitutes: ") + e.what(), 1);
  }
  if (!j.is_object()) throw DataError("substitutes file must hold an object");
  std::vector<SubstituteSet> out;
  for (const auto& [aspect, words] : j.items()) {
    SubstituteSet s{aspect, {}};
    try {
      for (const auto& w : words) s.words.emplace_back(w.at(0).get<std::string>(), w.at(1).get<int>());
    } catch (const json::exception& e) {
      throw DataError("bad substitute entry for " + aspect + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_labels(const LabeledCorpus& labels, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    ordered_json cov = ordered_json::object();
    for (std::size_t m = 0; m < labels.aspects.size(); ++m) cov[labels.aspects[m]] = labels.labels[i].coverage[m];
    ordered_json line;
    line["copy_index"] = i;
    line["label"] = labels.labels[i].label;
    line["coverage"] = std::move(cov);
    os << line.dump() << '\n';
  }
}

LabeledCorpus load_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  LabeledCorpus out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      if (j.at("copy_index").get<std::size_t>() != out.labels.size()) throw ParseError("copy_index out of order", n);
      Classification c{j.at("label").get<std::string>(), {}};
      const auto& cov = j.at("coverage");
      if (out.labels.empty()) {
        for (const auto& [k, v] : cov.items()) out.aspects.push_back(k);
      }
      if (cov.size() != out.aspects.size()) throw ParseError("coverage keys differ between lines", n);
      for (const auto& a : out.aspects) c.coverage.push_back(cov.at(a).get<int>());
      out.labels.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

}  // namespace epccg
