#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "epccg/aspect_lda.hpp"
#include "epccg/corpus.hpp"
#include "epccg/eval_metrics.hpp"
#include "epccg/generator.hpp"
#include "epccg/mlm_labeler.hpp"
#include "epccg/phrase_vocab.hpp"
#include "epccg/postprocess.hpp"
#include "epccg/tokenizer.hpp"
#include "epccg/transformer.hpp"
#include "json.hpp"

namespace epccg {

struct VocabStageConfig {
  SeedConfig seed;
  MineConfig mine;
  int aspect_slots = 8;
};

struct AspectStageConfig {
  std::vector<int> grid = {2, 4, 6, 8};
  std::optional<double> alpha;  // 50/M per grid point when unset
  double beta = 0.01;
  int iterations = 2000;
  int burn_in = 500;
  int top_j = 5;      // coherence window
  int keywords = 8;   // keywords kept per aspect
  std::uint64_t seed = 1;
  RefinementConfig refine;
};

struct GenerateStageConfig {
  GenConfig gen;
  std::size_t max_items = 200;
};

struct PipelineConfig {
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> corpus_path;  // synthetic when unset
  SynthSpec synth;
  SplitFractions split;
  std::uint64_t split_seed = 1;
  std::set<std::string> stopwords;
  VocabStageConfig vocab;
  AspectStageConfig aspects;
  ModelConfig model;
  MlmConfig mlm;
  FinetuneConfig finetune;
  GenerateStageConfig generate;
  std::vector<AttributePattern> patterns = default_patterns();
  nlohmann::json source = nlohmann::json::object();  // effective config, for hashing
};

// Reads a pipeline config; relative paths resolve against `base_dir`.
// A `seed_override` (or a top-level "seed") reseeds every stage.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                         std::optional<std::uint64_t> seed_override = std::nullopt);
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt);

// Derives per-stage seeds from one global seed.
void apply_global_seed(PipelineConfig& c, std::uint64_t seed);

// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

// --- stages shared by the pipeline and the CLI -----------------------------------

PhraseVocab build_phrase_vocab(const Corpus& corpus, const VocabStageConfig& config);

struct AspectDiscovery {
  SweepResult sweep;
  std::vector<LdaConfig> grid;
  AspectSet aspects;
};

// LDA sweep, extraction and refinement. Aspects still carrying a generic
// topic name afterwards are named after their first unused keyword.
AspectDiscovery discover_aspects(const Corpus& corpus, const Vocab& vocab, const std::set<std::string>& stopwords,
                                 const AspectStageConfig& config);
void name_unnamed_aspects(AspectSet& aspects);
nlohmann::ordered_json sweep_summary(const AspectDiscovery& d);

std::vector<SubstituteSet> mine_substitutes(const TrainState& model, const Corpus& corpus, const Vocab& vocab,
                                            const std::vector<std::string>& aspects, int k, int top_n);

struct Reference {
  std::string sku_id;
  std::string aspect;
  std::string text;
};

void write_references(const std::vector<Reference>& refs, const std::filesystem::path& path);
std::vector<Reference> read_references(const std::filesystem::path& path);

struct PostprocessLine {
  Generation generation;  // corrected text
  bool keep = false;
  std::string predicted;
  CorrectionReport report;
};

std::vector<PostprocessLine> postprocess_generations(const std::vector<Generation>& generations,
                                                     const KnowledgeBase& kb,
                                                     const std::vector<AttributePattern>& patterns,
                                                     const std::vector<SubstituteSet>& sets, const Vocab& vocab);
void write_postprocessed(const std::vector<PostprocessLine>& lines, const std::filesystem::path& out,
                         const std::filesystem::path& report);

struct PipelineResult {
  std::vector<double> pretrain_losses;
  std::vector<double> finetune_losses;
  ScoreReport report;
  std::string config_hash;
  std::size_t generation_errors = 0;
};

// Runs synth/load, split, vocab, aspects, pretrain, label, train,
// generate, postprocess and eval, writing every artifact under
// config.output_dir. Progress goes to `log` when given.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

}  // namespace epccg
