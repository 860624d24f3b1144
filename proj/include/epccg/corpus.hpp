#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace epccg {

using AttributeList = std::vector<std::pair<std::string, std::string>>;

// Structured product information: the source side of generation.
struct ProductRecord {
  std::string sku_id;
  std::string title;
  std::string brand;
  AttributeList attributes;  // insertion order is preserved
  std::string product_type;
  std::string ocr;

  bool operator==(const ProductRecord&) const = default;
};

// One human-written (or generated) description of a product.
struct CopywritingRecord {
  std::string sku_id;
  std::string text;
  std::optional<std::string> aspect;

  bool operator==(const CopywritingRecord&) const = default;
};

// Products plus the copies that describe them. Every copy references
// exactly one product; construction validates this and throws
// IntegrityError listing dangling ids.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<ProductRecord> products, std::vector<CopywritingRecord> copies);

  const std::vector<ProductRecord>& products() const { return products_; }
  const std::vector<CopywritingRecord>& copies() const { return copies_; }
  bool empty() const { return copies_.empty(); }

  // nullptr when the sku is unknown.
  const ProductRecord* find_product(std::string_view sku) const;
  const ProductRecord& product_of(const CopywritingRecord& copy) const;

  // Every piece of free text in the corpus: copy texts first, then product
  // fields. Used for vocabulary statistics.
  std::vector<std::string> all_texts() const;

 private:
  std::vector<ProductRecord> products_;
  std::vector<CopywritingRecord> copies_;
  std::unordered_map<std::string, std::size_t> index_;
};

nlohmann::ordered_json to_json(const ProductRecord& p);
nlohmann::ordered_json to_json(const CopywritingRecord& c);
ProductRecord product_from_json(const nlohmann::ordered_json& j);
CopywritingRecord copy_from_json(const nlohmann::ordered_json& j);

// Reads a corpus. `path` is either a directory holding products.jsonl and
// copies.jsonl, or a single JSONL file mixing both record kinds (a record
// with a "text" key is a copy, anything else a product).
Corpus load_corpus(const std::filesystem::path& path);

// Writes products.jsonl and copies.jsonl into `dir` (created if needed).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// --- synthetic corpora -----------------------------------------------------

struct SynthAspect {
  std::string name;
  std::vector<std::string> keywords;  // includes the name itself
  // Sentence templates. "{kw}" draws a keyword of this aspect, "{attr}"
  // substitutes the product's value for attribute `attr`.
  std::vector<std::string> templates;
};

struct SynthSpec {
  int num_aspects = 2;
  int docs_per_aspect = 1;
  std::vector<SynthAspect> aspects;  // the first num_aspects are used
  // product type -> ordered (attribute -> candidate values)
  std::map<std::string, std::vector<std::pair<std::string, std::vector<std::string>>>> attribute_pool;
  std::vector<std::string> brands;
  std::vector<std::string> ocr_pool;  // may contain "" for products without OCR
  // Probability that a "{kw}" slot draws from a different aspect. Zero
  // keeps aspects lexically disjoint.
  double overlap = 0.0;
  // Sentences per copy, each from a different template of the aspect
  // (capped at the template count), joined with ". ".
  int sentences_per_copy = 3;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<std::string> gold;  // copy index -> source aspect name
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& spec);

// Built-in consumer-electronics bank with eight lexically disjoint aspects.
SynthSpec default_synth_spec(int num_aspects, int docs_per_aspect, std::uint64_t seed);

// Deterministic given the spec. Products are generated first; each product
// receives one copy per aspect, product-major.
SyntheticCorpus generate_synthetic(const SynthSpec& spec);

// True when `keyword` occurs in `text` delimited by non-alphanumerics.
bool contains_keyword(std::string_view text, std::string_view keyword);

// --- splitting --------------------------------------------------------------

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  Corpus train, dev, test;
  // Original copy indices of each part, ascending.
  std::vector<std::size_t> train_index, dev_index, test_index;
};

// Random partition of copies: train and dev sizes are floored, test takes
// the remainder. Each part carries the products its copies reference.
CorpusSplit split(const Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed);

// Subset of a corpus restricted to the given copy indices.
Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& copy_indices);

}  // namespace epccg
