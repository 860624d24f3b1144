#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "epccg/corpus.hpp"
#include "epccg/tokenizer.hpp"
#include "epccg/transformer.hpp"
#include "json.hpp"

namespace epccg {

inline constexpr const char* kUnknownLabel = "unknown";

struct MlmConfig {
  double mask_prob = 0.15;
  int top_k = 50;
  int top_n = 5;  // predictions pooled per masked position
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const MlmConfig& c);
MlmConfig mlm_config_from_json(const nlohmann::json& j);

// ceil(p * len), at least one and at most len.
int num_masked(double prob, int len);

// [SOS] tokens [EOS], truncated to fit max_positions.
TokenSeq mlm_sequence(const TokenSeq& content, int max_positions);

// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

struct PretrainResult {
  TrainState state;
  std::vector<double> epoch_losses;
};

// Bidirectional masked-LM training on every copy text of the corpus.
PretrainResult pretrain_mlm(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model,
                            const MlmConfig& config, const EpochCallback& on_epoch = {});

struct SubstituteSet {
  std::string aspect;
  std::vector<std::pair<std::string, int>> words;  // frequency descending

  bool contains(const std::string& token) const;
};

// Masks every occurrence of the aspect name (one [MASK] per occurrence),
// pools the top_n predictions at each mask and keeps the K most frequent
// tokens. Ties break by token id. The aspect's own tokens, special tokens,
// punctuation and lone graphemes of space-delimited scripts never appear.
// Empty when the name never occurs.
SubstituteSet find_substitutes(const ModelParameters<float>& params, const ModelConfig& model, const Corpus& corpus,
                               const Vocab& vocab, const std::string& aspect_name, int k, int top_n = 5);

struct Classification {
  std::string label;          // aspect name or kUnknownLabel
  std::vector<int> coverage;  // one count per substitute set
};

Classification classify_tokens(const std::vector<std::string>& tokens, const std::vector<SubstituteSet>& sets);
Classification classify_text(std::string_view text, const std::vector<SubstituteSet>& sets, const Vocab& vocab);

struct LabeledCorpus {
  std::vector<std::string> aspects;  // order of the coverage vectors
  std::vector<Classification> labels;  // one per copy, corpus order
};

// Throws ArgumentError with fewer than two substitute sets.
LabeledCorpus label_corpus(const Corpus& corpus, const std::vector<SubstituteSet>& sets, const Vocab& vocab);

// Copies that received a known label, with their aspect field set.
Corpus apply_labels(const Corpus& corpus, const LabeledCorpus& labels);

void save_substitutes(const std::vector<SubstituteSet>& sets, const std::filesystem::path& path);
std::vector<SubstituteSet> load_substitutes(const std::filesystem::path& path);

void save_labels(const LabeledCorpus& labels, const std::filesystem::path& path);
LabeledCorpus load_labels(const std::filesystem::path& path);

}  // namespace epccg
