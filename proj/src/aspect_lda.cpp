#include "epccg/aspect_lda.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include "epccg/error.hpp"
#include "epccg/text.hpp"

namespace epccg {

using nlohmann::json;

LdaConfig LdaConfig::with_defaults(int num_topics) {
  LdaConfig c;
  c.num_topics = num_topics;
  c.alpha = num_topics > 0 ? 50.0 / num_topics : 0.0;
  return c;
}

void LdaConfig::validate() const {
  if (num_topics < 2) throw ConfigError("LDA needs num_topics >= 2");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("LDA alpha and beta must be positive");
  if (burn_in < 0 || iterations <= burn_in) throw ConfigError("LDA needs iterations > burn_in >= 0");
}

LdaConfig lda_config_from_json(const json& j) {
  LdaConfig c = LdaConfig::with_defaults(j.at("num_topics").get<int>());
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.iterations = j.value("iterations", c.iterations);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const LdaConfig& c) {
  return json{{"num_topics", c.num_topics}, {"alpha", c.alpha},     {"beta", c.beta},
              {"iterations", c.iterations}, {"burn_in", c.burn_in}, {"seed", c.seed}};
}

LdaDocuments LdaDocuments::from_tokens(const std::vector<std::vector<std::string>>& token_lists) {
  std::set<std::string> words;
  for (const auto& doc : token_lists) words.insert(doc.begin(), doc.end());
  LdaDocuments out;
  out.vocab.assign(words.begin(), words.end());
  std::unordered_map<std::string, int> id;
  for (std::size_t i = 0; i < out.vocab.size(); ++i) id[out.vocab[i]] = static_cast<int>(i);
  for (const auto& doc : token_lists) {
    std::vector<int> ids;
    ids.reserve(doc.size());
    for (const auto& w : doc) ids.push_back(id.at(w));
    out.docs.push_back(std::move(ids));
  }
  return out;
}

LdaDocuments prepare_documents(const Corpus& corpus, const Vocab& vocab, const std::set<std::string>& stopwords) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(corpus.copies().size());
  for (const auto& copy : corpus.copies()) {
    std::vector<std::string> kept;
    for (auto& tok : tokenize(copy.text, vocab)) {
      if (tok == kUnk) continue;
      std::string lower = tok;
      for (auto& ch : lower) {
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
      }
      if (stopwords.count(lower)) continue;
      const auto units = text::graphemes(tok);
      if (units.size() == 1 && !vocab.is_phrase(tok) && text::is_spaced_script(units[0])) continue;
      if (text::is_digit(units.front())) continue;
      bool alnum = false;
      for (const auto& g : units) alnum = alnum || text::is_alnum(g);
      if (alnum) kept.push_back(std::move(tok));
    }
    lists.push_back(std::move(kept));
  }
  return LdaDocuments::from_tokens(lists);
}

std::vector<int> LdaModel::top_words(int topic, int n) const {
  std::vector<int> ids(static_cast<std::size_t>(phi.cols()));
  std::iota(ids.begin(), ids.end(), 0);
  const auto row = phi.row(topic);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return row(a) > row(b); });
  ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(std::max(0, n))));
  return ids;
}

// --- sampler ----------------------------------------------------------------------

GibbsSampler::GibbsSampler(const LdaDocuments& documents, const LdaConfig& config)
    : docs_(documents),
      config_(config),
      num_topics_(config.num_topics),
      vocab_size_(static_cast<int>(documents.vocab.size())),
      rng_(config.seed) {
  config_.validate();
  const auto m = static_cast<std::size_t>(num_topics_);
  n_dk_.assign(docs_.docs.size(), std::vector<int>(m, 0));
  n_kw_.assign(m, std::vector<int>(static_cast<std::size_t>(vocab_size_), 0));
  n_k_.assign(m, 0);
  scratch_.resize(m);
  z_.resize(docs_.docs.size());
  for (std::size_t d = 0; d < docs_.docs.size(); ++d) {
    z_[d].resize(docs_.docs[d].size());
    for (std::size_t i = 0; i < docs_.docs[d].size(); ++i) {
      const int k = static_cast<int>(rng_.below(m));
      const int w = docs_.docs[d][i];
      z_[d][i] = k;
      ++n_dk_[d][static_cast<std::size_t>(k)];
      ++n_kw_[static_cast<std::size_t>(k)][static_cast<std::size_t>(w)];
      ++n_k_[static_cast<std::size_t>(k)];
    }
  }
}

void GibbsSampler::weights(std::size_t d, int w, std::vector<double>& out) const {
  const double vbeta = vocab_size_ * config_.beta;
  for (int k = 0; k < num_topics_; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    out[ku] = (n_dk_[d][ku] + config_.alpha) * (n_kw_[ku][static_cast<std::size_t>(w)] + config_.beta) /
              (n_k_[ku] + vbeta);
  }
}

std::vector<double> GibbsSampler::conditional(std::size_t doc, std::size_t pos) const {
  auto& self = const_cast<GibbsSampler&>(*this);
  const int w = docs_.docs[doc][pos];
  const auto k = static_cast<std::size_t>(z_[doc][pos]);
  --self.n_dk_[doc][k];
  --self.n_kw_[k][static_cast<std::size_t>(w)];
  --self.n_k_[k];
  std::vector<double> p(static_cast<std::size_t>(num_topics_));
  weights(doc, w, p);
  ++self.n_dk_[doc][k];
  ++self.n_kw_[k][static_cast<std::size_t>(w)];
  ++self.n_k_[k];
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= total;
  return p;
}

void GibbsSampler::sweep() {
  for (std::size_t d = 0; d < docs_.docs.size(); ++d) {
    auto& nd = n_dk_[d];
    for (std::size_t i = 0; i < docs_.docs[d].size(); ++i) {
      const int w = docs_.docs[d][i];
      const auto wu = static_cast<std::size_t>(w);
      auto k = static_cast<std::size_t>(z_[d][i]);
      --nd[k];
      --n_kw_[k][wu];
      --n_k_[k];
      weights(d, w, scratch_);
      k = rng_.categorical(scratch_);
      z_[d][i] = static_cast<int>(k);
      ++nd[k];
      ++n_kw_[k][wu];
      ++n_k_[k];
    }
  }
}

LdaModel fit_lda(const LdaDocuments& documents, const LdaConfig& config) {
  config.validate();
  std::size_t tokens = 0;
  for (const auto& d : documents.docs) tokens += d.size();
  if (documents.docs.empty() || tokens == 0) throw DataError("LDA needs a non-empty corpus with tokens");

  GibbsSampler sampler(documents, config);
  const auto m = static_cast<Eigen::Index>(config.num_topics);
  const auto v = static_cast<Eigen::Index>(documents.vocab.size());
  const auto n = static_cast<Eigen::Index>(documents.docs.size());
  Eigen::MatrixXd sum_kw = Eigen::MatrixXd::Zero(m, v);
  Eigen::MatrixXd sum_dk = Eigen::MatrixXd::Zero(n, m);
  int samples = 0;
  for (int it = 0; it < config.iterations; ++it) {
    sampler.sweep();
    if (it < config.burn_in) continue;
    ++samples;
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto& row = sampler.topic_word()[static_cast<std::size_t>(k)];
      for (Eigen::Index w = 0; w < v; ++w) sum_kw(k, w) += row[static_cast<std::size_t>(w)];
    }
    for (Eigen::Index d = 0; d < n; ++d) {
      const auto& row = sampler.doc_topic()[static_cast<std::size_t>(d)];
      for (Eigen::Index k = 0; k < m; ++k) sum_dk(d, k) += row[static_cast<std::size_t>(k)];
    }
  }
  sum_kw /= samples;
  sum_dk /= samples;

  LdaModel model;
  model.config = config;
  model.vocab = documents.vocab;
  model.assignments = sampler.assignments();
  model.phi.resize(m, v);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double denom = sum_kw.row(k).sum() + static_cast<double>(v) * config.beta;
    model.phi.row(k) = (sum_kw.row(k).array() + config.beta) / denom;
  }
  model.theta.resize(n, m);
  for (Eigen::Index d = 0; d < n; ++d) {
    const double denom = sum_dk.row(d).sum() + static_cast<double>(m) * config.alpha;
    model.theta.row(d) = (sum_dk.row(d).array() + config.alpha) / denom;
  }
  return model;
}

CoherenceReport coherence(const LdaModel& model, const LdaDocuments& documents, int top_j) {
  if (top_j < 2) throw ArgumentError("coherence needs top_j >= 2");
  // Document sets per word, only for words that are someone's top word.
  std::map<int, std::vector<std::size_t>> postings;
  std::vector<std::vector<int>> tops;
  for (int k = 0; k < model.num_topics(); ++k) {
    tops.push_back(model.top_words(k, top_j));
    for (int w : tops.back()) postings[w];
  }
  for (std::size_t d = 0; d < documents.docs.size(); ++d) {
    std::set<int> seen(documents.docs[d].begin(), documents.docs[d].end());
    for (int w : seen) {
      auto it = postings.find(w);
      if (it != postings.end()) it->second.push_back(d);
    }
  }
  auto co = [&](int a, int b) {
    const auto& pa = postings.at(a);
    const auto& pb = postings.at(b);
    std::size_t i = 0, j = 0, c = 0;
    while (i < pa.size() && j < pb.size()) {
      if (pa[i] < pb[j]) {
        ++i;
      } else if (pb[j] < pa[i]) {
        ++j;
      } else {
        ++c, ++i, ++j;
      }
    }
    return static_cast<double>(c);
  };
  CoherenceReport r;
  for (const auto& words : tops) {
    double c = 0.0;
    for (std::size_t j = 1; j < words.size(); ++j) {
      const double dj = static_cast<double>(postings.at(words[j]).size());
      if (dj == 0.0) throw DataError("top word \"" + model.vocab[static_cast<std::size_t>(words[j])] +
                                     "\" never occurs in the documents");
      for (std::size_t i = 0; i < j; ++i) c += std::log((co(words[i], words[j]) + 1.0) / dj);
    }
    r.per_topic.push_back(c);
  }
  r.mean = r.per_topic.empty() ? 0.0
                               : std::accumulate(r.per_topic.begin(), r.per_topic.end(), 0.0) /
                                     static_cast<double>(r.per_topic.size());
  return r;
}

std::size_t select_best(const std::vector<LdaConfig>& grid, const std::vector<double>& mean_scores) {
  if (grid.empty() || grid.size() != mean_scores.size()) throw ArgumentError("sweep needs one score per config");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (mean_scores[i] > mean_scores[best] ||
        (mean_scores[i] == mean_scores[best] && grid[i].num_topics < grid[best].num_topics)) {
      best = i;
    }
  }
  return best;
}

SweepResult sweep(const LdaDocuments& documents, const std::vector<LdaConfig>& grid, int top_j) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  std::vector<LdaModel> models;
  SweepResult out;
  std::vector<double> means;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    try {
      models.push_back(fit_lda(documents, grid[i]));
    } catch (const ConfigError& e) {
      throw ConfigError("grid entry " + std::to_string(i) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("grid entry " + std::to_string(i) + ": " + e.what());
    }
    out.reports.push_back(coherence(models.back(), documents, top_j));
    means.push_back(out.reports.back().mean);
  }
  out.best_index = select_best(grid, means);
  out.best = std::move(models[out.best_index]);
  return out;
}

// --- aspects ------------------------------------------------------------------------

std::vector<std::string> AspectSet::names() const {
  std::vector<std::string> out;
  for (const auto& a : aspects) out.push_back(a.name);
  return out;
}

int AspectSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < aspects.size(); ++i) {
    if (aspects[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void AspectSet::validate() const {
  std::set<std::string> seen;
  for (const auto& a : aspects) {
    if (a.name.empty()) throw ConfigError("aspect with empty name");
    if (!seen.insert(a.name).second) throw ConfigError("duplicate aspect name " + a.name);
    if (a.keywords.empty()) throw ConfigError("aspect " + a.name + " has no keywords");
  }
}

AspectSet extract_aspects(const LdaModel& model, int top_j) {
  if (top_j < 1) throw ArgumentError("extract_aspects needs top_j >= 1");
  AspectSet out;
  for (int k = 0; k < model.num_topics(); ++k) {
    Aspect a;
    a.name = "topic_" + std::to_string(k);
    a.topic_id = k;
    for (int w : model.top_words(k, top_j)) a.keywords.push_back(model.vocab[static_cast<std::size_t>(w)]);
    out.aspects.push_back(std::move(a));
  }
  return out;
}

RefinementConfig refinement_from_json(const json& j) {
  RefinementConfig edits;
  for (const auto& e : j) {
    const std::string op = e.at("op").get<std::string>();
    if (op == "rename") {
      edits.emplace_back(RenameEdit{e.at("topic_id").get<int>(), e.at("name").get<std::string>()});
    } else if (op == "merge") {
      edits.emplace_back(MergeEdit{e.at("topic_ids").get<std::vector<int>>(), e.at("name").get<std::string>()});
    } else if (op == "drop") {
      edits.emplace_back(DropEdit{e.at("topic_id").get<int>()});
    } else if (op == "add") {
      edits.emplace_back(AddEdit{e.at("name").get<std::string>(), e.at("keywords").get<std::vector<std::string>>()});
    } else if (op == "rename_keyword") {
      edits.emplace_back(RenameByKeywordEdit{e.at("keyword").get<std::string>(), e.at("name").get<std::string>()});
    } else {
      throw ConfigError("unknown refinement op \"" + op + "\"");
    }
  }
  return edits;
}

namespace {

std::size_t find_topic(const AspectSet& set, int topic_id) {
  for (std::size_t i = 0; i < set.aspects.size(); ++i) {
    if (set.aspects[i].topic_id == topic_id) return i;
  }
  throw ConfigError("refinement references unknown topic_id " + std::to_string(topic_id));
}

}  // namespace

AspectSet refine(const AspectSet& aspects, const RefinementConfig& edits) {
  AspectSet out = aspects;
  for (const auto& edit : edits) {
    if (const auto* r = std::get_if<RenameEdit>(&edit)) {
      out.aspects[find_topic(out, r->topic_id)].name = r->name;
    } else if (const auto* m = std::get_if<MergeEdit>(&edit)) {
      if (m->topic_ids.empty()) throw ConfigError("merge needs at least one topic_id");
      std::vector<std::size_t> at;
      for (int id : m->topic_ids) at.push_back(find_topic(out, id));
      std::sort(at.begin(), at.end());
      at.erase(std::unique(at.begin(), at.end()), at.end());
      Aspect merged;
      merged.name = m->name;
      merged.topic_id = out.aspects[at.front()].topic_id;
      for (std::size_t i : at) {
        for (const auto& kw : out.aspects[i].keywords) {
          if (std::find(merged.keywords.begin(), merged.keywords.end(), kw) == merged.keywords.end()) {
            merged.keywords.push_back(kw);
          }
        }
      }
      for (auto it = at.rbegin(); it != at.rend(); ++it) {
        out.aspects.erase(out.aspects.begin() + static_cast<std::ptrdiff_t>(*it));
      }
      out.aspects.insert(out.aspects.begin() + static_cast<std::ptrdiff_t>(at.front()), std::move(merged));
    } else if (const auto* d = std::get_if<DropEdit>(&edit)) {
      out.aspects.erase(out.aspects.begin() + static_cast<std::ptrdiff_t>(find_topic(out, d->topic_id)));
    } else if (const auto* a = std::get_if<AddEdit>(&edit)) {
      out.aspects.push_back({a->name, a->keywords, std::nullopt});
    } else if (const auto* rk = std::get_if<RenameByKeywordEdit>(&edit)) {
      std::size_t best = out.aspects.size();
      std::size_t best_rank = 0;
      for (std::size_t i = 0; i < out.aspects.size(); ++i) {
        const auto& kws = out.aspects[i].keywords;
        const auto pos = static_cast<std::size_t>(std::find(kws.begin(), kws.end(), rk->keyword) - kws.begin());
        if (pos < kws.size() && (best == out.aspects.size() || pos < best_rank)) {
          best = i;
          best_rank = pos;
        }
      }
      if (best == out.aspects.size()) throw ConfigError("no aspect has keyword \"" + rk->keyword + "\"");
      out.aspects[best].name = rk->name;
    }
  }
  if (out.aspects.size() < 2) throw ConfigError("refinement leaves fewer than two aspects");
  out.validate();
  return out;
}

json to_json(const AspectSet& aspects) {
  json arr = json::array();
  for (const auto& a : aspects.aspects) {
    json j{{"name", a.name}, {"keywords", a.keywords}};
    j["topic_id"] = a.topic_id ? json(*a.topic_id) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr;
}

AspectSet aspects_from_json(const json& j) {
  AspectSet out;
  for (const auto& e : j) {
    Aspect a;
    a.name = e.at("name").get<std::string>();
    a.keywords = e.at("keywords").get<std::vector<std::string>>();
    if (e.contains("topic_id") && !e.at("topic_id").is_null()) a.topic_id = e.at("topic_id").get<int>();
    out.aspects.push_back(std::move(a));
  }
  out.validate();
  return out;
}

void save_aspects(const AspectSet& aspects, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(aspects).dump(2) << '\n';
}

AspectSet load_aspects(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return aspects_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace epccg
