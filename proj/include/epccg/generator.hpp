#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "epccg/corpus.hpp"
#include "epccg/mlm_labeler.hpp"
#include "epccg/tokenizer.hpp"
#include "epccg/transformer.hpp"
#include "json.hpp"

namespace epccg {

enum class ControlPattern { kDiscreteCode, kLabelCode, kNameCode };
enum class PromptVariant { kBasic, kPlainNosep, kPlainSep, kAdvanceNosep, kAdvanceSep };

std::string to_string(ControlPattern p);
std::string to_string(PromptVariant p);
// ConfigError on unknown names.
ControlPattern parse_pattern(const std::string& s);
PromptVariant parse_prompt(const std::string& s);

struct PackedExample {
  TokenSeq ids;
  int prefix_len = 0;
  // [begin, end) of the target inside ids; begin == prefix_len.
  std::pair<int, int> target_span{0, 0};
  std::optional<int> aspect_embedding_index;  // discrete_code only
};

// Packs product fields, the aspect control and an optional target copy.
// `aspects` fixes the index m of each aspect. On overflow of max_positions
// (with `reserve` extra slots kept free) OCR is dropped first, then
// attributes from the tail; LengthError if it still does not fit.
PackedExample pack_input(const ProductRecord& record, const std::string& aspect_name,
                         const std::optional<std::string>& copy_text, ControlPattern pattern, PromptVariant prompt,
                         const Vocab& vocab, const std::vector<std::string>& aspects, int max_positions,
                         int reserve = 0);

struct FinetuneConfig {
  double target_mask_prob = 0.3;
  int epochs = 50;
  int batch_size = 16;
  double lr = 3e-3;
  ControlPattern pattern = ControlPattern::kNameCode;
  PromptVariant prompt = PromptVariant::kBasic;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j);

struct FinetuneResult {
  TrainState state;
  std::vector<double> epoch_losses;
};

// Target-side masked recovery under the prefix mask. `init` is a
// pretrained state (its aspect table is widened for discrete_code when
// needed) or empty to start from `model`. Copies without an aspect are
// skipped; DataError when nothing remains.
FinetuneResult finetune(std::optional<TrainState> init, const ModelConfig& model, const Corpus& labeled,
                        const std::vector<std::string>& aspects, const Vocab& vocab, const FinetuneConfig& config,
                        const EpochCallback& on_epoch = {});

// Chooses the masked target positions of one packed example.
std::vector<int> choose_target_positions(const PackedExample& ex, double prob, Rng& rng);

enum class DecodeKind { kGreedy, kTopK };

struct GenConfig {
  int max_new_tokens = 48;
  DecodeKind decode = DecodeKind::kGreedy;
  int k = 1;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// "greedy" or "topk:K:T".
GenConfig parse_decode(const std::string& s, GenConfig base = {});
std::string decode_name(const GenConfig& c);

// Generated target ids (without the closing [EOS]).
TokenSeq generate_ids(const TrainState& model, const ProductRecord& record, const std::string& aspect_name,
                      ControlPattern pattern, PromptVariant prompt, const GenConfig& config, const Vocab& vocab);

// Rendered text of generate_ids. ConfigError when the pattern or prompt
// differ from the ones the model was trained with.
std::string generate(const TrainState& model, const ProductRecord& record, const std::string& aspect_name,
                     ControlPattern pattern, PromptVariant prompt, const GenConfig& config, const Vocab& vocab);

struct Generation {
  std::string sku_id;
  std::string aspect;
  std::string text;
};

struct GenerationFailure {
  std::string sku_id;
  std::string aspect;
  std::string message;
};

struct BatchGeneration {
  std::vector<Generation> outputs;
  std::vector<GenerationFailure> errors;
};

// Records x aspects in record-major order; failures are collected.
BatchGeneration batch_generate(const TrainState& model, const std::vector<ProductRecord>& records,
                               const std::vector<std::string>& aspects, ControlPattern pattern, PromptVariant prompt,
                               const GenConfig& config, const Vocab& vocab);

struct GenerationLine {
  Generation generation;
  std::string pattern;
  std::string prompt;
  std::string decode;
  std::uint64_t seed = 0;
};

void write_generations(const std::vector<GenerationLine>& lines, const std::filesystem::path& path,
                       const std::string& config_hash = {});
std::vector<GenerationLine> read_generations(const std::filesystem::path& path);

}  // namespace epccg
