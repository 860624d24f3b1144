#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "epccg/corpus.hpp"
#include "epccg/random.hpp"
#include "epccg/tokenizer.hpp"
#include "json.hpp"

namespace epccg {

struct LdaConfig {
  int num_topics = 2;
  double alpha = 25.0;  // 50 / num_topics unless given explicitly
  double beta = 0.01;
  int iterations = 500;
  int burn_in = 100;
  std::uint64_t seed = 1;

  static LdaConfig with_defaults(int num_topics);
  void validate() const;
};

LdaConfig lda_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LdaConfig& c);

// Bag-of-words view of a corpus: word ids into a lexicographically sorted
// vocabulary.
struct LdaDocuments {
  std::vector<std::string> vocab;
  std::vector<std::vector<int>> docs;

  static LdaDocuments from_tokens(const std::vector<std::vector<std::string>>& token_lists);
};

// Tokenizes every copy with the phrase-first tokenizer and drops
// stopwords, [UNK], tokens without any alphanumeric grapheme, tokens
// starting with a digit (measurements such as "4000mAh"), and lone
// fallback graphemes of space-delimited scripts (fragments of words the
// phrase vocabulary does not know).
LdaDocuments prepare_documents(const Corpus& corpus, const Vocab& vocab, const std::set<std::string>& stopwords);

struct LdaModel {
  Eigen::MatrixXd phi;    // topics x vocab
  Eigen::MatrixXd theta;  // docs x topics
  std::vector<std::vector<int>> assignments;
  std::vector<std::string> vocab;
  LdaConfig config;

  int num_topics() const { return static_cast<int>(phi.rows()); }
  // Word ids of topic k sorted by probability, ties by vocab order.
  std::vector<int> top_words(int topic, int n) const;
};

// Collapsed Gibbs sampler state. Exposed so the sampling conditional can be
// checked directly.
class GibbsSampler {
 public:
  GibbsSampler(const LdaDocuments& documents, const LdaConfig& config);

  // p(z_{d,i} = k | z_-(d,i), w) for every k, normalized.
  std::vector<double> conditional(std::size_t doc, std::size_t pos) const;
  void sweep();

  const std::vector<std::vector<int>>& assignments() const { return z_; }
  const std::vector<std::vector<int>>& doc_topic() const { return n_dk_; }
  const std::vector<std::vector<int>>& topic_word() const { return n_kw_; }

 private:
  void weights(std::size_t d, int w, std::vector<double>& out) const;

  const LdaDocuments& docs_;
  LdaConfig config_;
  int num_topics_;
  int vocab_size_;
  std::vector<std::vector<int>> z_;
  std::vector<std::vector<int>> n_dk_;
  std::vector<std::vector<int>> n_kw_;
  std::vector<int> n_k_;
  Rng rng_;
  std::vector<double> scratch_;
};

LdaModel fit_lda(const LdaDocuments& documents, const LdaConfig& config);

struct CoherenceReport {
  std::vector<double> per_topic;
  double mean = 0.0;
};

// UMass: sum over i<j of log((D(w_i, w_j) + 1) / D(w_j)) for each topic's
// top words ordered by probability.
CoherenceReport coherence(const LdaModel& model, const LdaDocuments& documents, int top_j);

// Index of the best config: highest mean coherence, ties to the smaller
// topic count, then to grid order.
std::size_t select_best(const std::vector<LdaConfig>& grid, const std::vector<double>& mean_scores);

struct SweepResult {
  LdaModel best;
  std::size_t best_index = 0;
  std::vector<CoherenceReport> reports;
};

SweepResult sweep(const LdaDocuments& documents, const std::vector<LdaConfig>& grid, int top_j = 5);

// --- aspects ------------------------------------------------------------------

struct Aspect {
  std::string name;
  std::vector<std::string> keywords;
  std::optional<int> topic_id;

  bool operator==(const Aspect&) const = default;
};

struct AspectSet {
  std::vector<Aspect> aspects;

  std::size_t size() const { return aspects.size(); }
  std::vector<std::string> names() const;
  // -1 when absent.
  int index_of(std::string_view name) const;
  // Names unique and non-empty, keywords non-empty; throws ConfigError.
  void validate() const;
};

AspectSet extract_aspects(const LdaModel& model, int top_j);

struct RenameEdit {
  int topic_id;
  std::string name;
};
struct MergeEdit {
  std::vector<int> topic_ids;
  std::string name;
};
struct DropEdit {
  int topic_id;
};
struct AddEdit {
  std::string name;
  std::vector<std::string> keywords;
};
// Names the topic whose keyword list ranks `keyword` highest.
struct RenameByKeywordEdit {
  std::string keyword;
  std::string name;
};

using RefinementEdit = std::variant<RenameEdit, MergeEdit, DropEdit, AddEdit, RenameByKeywordEdit>;
using RefinementConfig = std::vector<RefinementEdit>;

RefinementConfig refinement_from_json(const nlohmann::json& j);

// Applies edits in order. Throws ConfigError for unknown topic ids or when
// fewer than two aspects remain.
AspectSet refine(const AspectSet& aspects, const RefinementConfig& edits);

nlohmann::json to_json(const AspectSet& aspects);
AspectSet aspects_from_json(const nlohmann::json& j);
void save_aspects(const AspectSet& aspects, const std::filesystem::path& path);
AspectSet load_aspects(const std::filesystem::path& path);

}  // namespace epccg
