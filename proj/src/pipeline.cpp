#include "epccg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <unordered_set>

#include "epccg/error.hpp"

namespace epccg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<AttributePattern> patterns_from_json(const json& arr) {
  std::vector<AttributePattern> out;
  for (const auto& p : arr) {
    out.emplace_back(p.at("attribute").get<std::string>(), p.at("regex").get<std::string>(),
                     parse_normalizer(p.value("normalizer", std::string("identity"))));
  }
  return out;
}

}  // namespace

void apply_global_seed(PipelineConfig& c, std::uint64_t seed) {
  c.synth.seed = seed;
  c.split_seed = seed + 1;
  c.aspects.seed = seed + 2;
  c.model.seed = seed + 3;
  c.mlm.seed = seed + 4;
  c.finetune.seed = seed + 5;
  c.generate.gen.seed = seed + 6;
  c.source["seed"] = seed;
}

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir,
                                         std::optional<std::uint64_t> seed_override) {
  PipelineConfig c;
  try {
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));
    if (j.contains("corpus")) {
      const auto& cj = j.at("corpus");
      if (cj.contains("path")) c.corpus_path = resolve(base_dir, cj.at("path").get<std::string>());
      if (cj.contains("synthetic")) c.synth = synth_spec_from_json(cj.at("synthetic"));
      else if (!c.corpus_path) c.synth = default_synth_spec(6, 50, 1);
    } else {
      c.synth = default_synth_spec(6, 50, 1);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train = s.value("train", c.split.train);
      c.split.dev = s.value("dev", c.split.dev);
      c.split.test = s.value("test", c.split.test);
      c.split_seed = s.value("seed", c.split_seed);
    }
    if (j.contains("stopwords")) c.stopwords = read_stopwords(resolve(base_dir, j.at("stopwords").get<std::string>()));
    if (j.contains("vocab")) {
      const auto& v = j.at("vocab");
      c.vocab.seed.min_count = v.value("seed_min_count", c.vocab.seed.min_count);
      c.vocab.seed.max_len = v.value("max_len", c.vocab.seed.max_len);
      c.vocab.mine.min_count = v.value("mine_min_count", c.vocab.mine.min_count);
      c.vocab.mine.threshold = v.value("threshold", c.vocab.mine.threshold);
      c.vocab.aspect_slots = v.value("aspect_slots", c.vocab.aspect_slots);
    }
    c.vocab.seed.stopwords = c.stopwords;
    if (j.contains("aspects")) {
      const auto& a = j.at("aspects");
      c.aspects.grid = a.value("grid", c.aspects.grid);
      if (a.contains("alpha")) c.aspects.alpha = a.at("alpha").get<double>();
      c.aspects.beta = a.value("beta", c.aspects.beta);
      c.aspects.iterations = a.value("iterations", c.aspects.iterations);
      c.aspects.burn_in = a.value("burn_in", c.aspects.burn_in);
      c.aspects.top_j = a.value("top_j", c.aspects.top_j);
      c.aspects.keywords = a.value("keywords", c.aspects.keywords);
      c.aspects.seed = a.value("seed", c.aspects.seed);
      if (a.contains("refine")) c.aspects.refine = refinement_from_json(a.at("refine"));
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("mlm")) c.mlm = mlm_config_from_json(j.at("mlm"));
    if (j.contains("finetune")) c.finetune = finetune_config_from_json(j.at("finetune"));
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      c.generate.gen.max_new_tokens = g.value("max_new_tokens", c.generate.gen.max_new_tokens);
      c.generate.gen.seed = g.value("seed", c.generate.gen.seed);
      c.generate.gen = parse_decode(g.value("decode", std::string("greedy")), c.generate.gen);
      c.generate.max_items = g.value("max_items", c.generate.max_items);
    }
    if (j.contains("patterns")) {
      const auto& p = j.at("patterns");
      c.patterns = p.is_string() ? load_patterns(resolve(base_dir, p.get<std::string>())) : patterns_from_json(p);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad pipeline config: ") + e.what());
  }
  c.source = j;
  if (seed_override) {
    apply_global_seed(c, *seed_override);
  } else if (j.contains("seed")) {
    apply_global_seed(c, j.at("seed").get<std::uint64_t>());
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path(), seed_override);
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

PhraseVocab build_phrase_vocab(const Corpus& corpus, const VocabStageConfig& config) {
  const auto seeds = extract_seed_phrases(corpus, config.seed);
  const auto mined = mine_phrases(corpus, seeds, config.seed, config.mine);
  return build_vocab(corpus, seeds, mined);
}

void name_unnamed_aspects(AspectSet& aspects) {
  std::unordered_set<std::string> taken;
  for (const auto& a : aspects.aspects) {
    if (a.name.rfind("topic_", 0) != 0) taken.insert(a.name);
  }
  // Single words first: multi-word keywords tend to be fixed expressions
  // tied to one sentence position.
  for (auto& a : aspects.aspects) {
    if (a.name.rfind("topic_", 0) != 0) continue;
    for (int pass = 0; pass < 2 && a.name.rfind("topic_", 0) == 0; ++pass) {
      for (const auto& kw : a.keywords) {
        if (pass == 0 && kw.find(' ') != std::string::npos) continue;
        if (taken.insert(kw).second) {
          a.name = kw;
          break;
        }
      }
    }
  }
}

AspectDiscovery discover_aspects(const Corpus& corpus, const Vocab& vocab, const std::set<std::string>& stopwords,
                                 const AspectStageConfig& config) {
  if (config.grid.empty()) throw ConfigError("aspect grid is empty");
  const LdaDocuments docs = prepare_documents(corpus, vocab, stopwords);
  AspectDiscovery d;
  for (int m : config.grid) {
    LdaConfig c = LdaConfig::with_defaults(m);
    if (config.alpha) c.alpha = *config.alpha;
    c.beta = config.beta;
    c.iterations = config.iterations;
    c.burn_in = config.burn_in;
    c.seed = config.seed;
    d.grid.push_back(c);
  }
  d.sweep = sweep(docs, d.grid, config.top_j);
  d.aspects = refine(extract_aspects(d.sweep.best, config.keywords), config.refine);
  name_unnamed_aspects(d.aspects);
  d.aspects.validate();
  return d;
}

ordered_json sweep_summary(const AspectDiscovery& d) {
  ordered_json runs = ordered_json::array();
  for (std::size_t i = 0; i < d.grid.size(); ++i) {
    ordered_json r;
    r["num_topics"] = d.grid[i].num_topics;
    r["alpha"] = d.grid[i].alpha;
    r["beta"] = d.grid[i].beta;
    r["mean_coherence"] = d.sweep.reports[i].mean;
    r["per_topic"] = d.sweep.reports[i].per_topic;
    runs.push_back(std::move(r));
  }
  ordered_json out;
  out["selected"] = d.grid[d.sweep.best_index].num_topics;
  out["runs"] = std::move(runs);
  return out;
}

std::vector<SubstituteSet> mine_substitutes(const TrainState& model, const Corpus& corpus, const Vocab& vocab,
                                            const std::vector<std::string>& aspects, int k, int top_n) {
  std::vector<SubstituteSet> out;
  for (const auto& a : aspects) out.push_back(find_substitutes(model.params, model.config, corpus, vocab, a, k, top_n));
  return out;
}

void write_references(const std::vector<Reference>& refs, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& r : refs) {
    ordered_json j;
    j["sku_id"] = r.sku_id;
    j["aspect"] = r.aspect;
    j["text"] = r.text;
    os << j.dump() << '\n';
  }
}

std::vector<Reference> read_references(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<Reference> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.value("sku_id", std::string{}), j.value("aspect", std::string{}), j.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

std::vector<PostprocessLine> postprocess_generations(const std::vector<Generation>& generations,
                                                     const KnowledgeBase& kb,
                                                     const std::vector<AttributePattern>& patterns,
                                                     const std::vector<SubstituteSet>& sets, const Vocab& vocab) {
  std::vector<PostprocessLine> out;
  for (const auto& g : generations) {
    Correction c = correct(g.text, g.sku_id, kb, patterns);
    const FilterDecision f = filter_by_aspect(c.text, g.aspect, sets, vocab);
    out.push_back({{g.sku_id, g.aspect, std::move(c.text)}, f.keep, f.predicted, std::move(c.report)});
  }
  return out;
}

void write_postprocessed(const std::vector<PostprocessLine>& lines, const std::filesystem::path& out,
                         const std::filesystem::path& report) {
  std::ofstream os(out), rs(report);
  if (!os) throw DataError("cannot write " + out.string());
  if (!rs) throw DataError("cannot write " + report.string());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    if (l.keep) {
      ordered_json j;
      j["sku_id"] = l.generation.sku_id;
      j["aspect"] = l.generation.aspect;
      j["text"] = l.generation.text;
      os << j.dump() << '\n';
    }
    ordered_json r;
    r["index"] = i;
    r["sku_id"] = l.generation.sku_id;
    r["aspect"] = l.generation.aspect;
    r["keep"] = l.keep;
    r["predicted"] = l.predicted;
    r["sku_missing"] = l.report.sku_missing;
    ordered_json entries = ordered_json::array();
    for (const auto& e : l.report.entries) {
      ordered_json x;
      x["attribute"] = e.attribute;
      x["found"] = e.found;
      x["canonical"] = e.canonical;
      x["action"] = to_string(e.action);
      entries.push_back(std::move(x));
    }
    r["corrections"] = std::move(entries);
    rs << r.dump() << '\n';
  }
}

namespace {

void save_losses(const std::vector<double>& pre, const std::vector<double>& fine, const std::filesystem::path& path) {
  ordered_json j;
  j["pretrain"] = pre;
  j["finetune"] = fine;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log) {
  auto say = [&](const std::string& s) {
    if (log) *log << "[pipeline] " << s << std::endl;
  };
  const auto& out = config.output_dir;
  std::filesystem::create_directories(out);
  PipelineResult result;
  result.config_hash = config_hash(config.source);

  // corpus
  Corpus corpus;
  if (config.corpus_path) {
    corpus = load_corpus(*config.corpus_path);
    say("loaded " + std::to_string(corpus.copies().size()) + " copies");
  } else {
    SyntheticCorpus synth = generate_synthetic(config.synth);
    corpus = std::move(synth.corpus);
    std::ofstream gold(out / "gold.jsonl");
    for (std::size_t i = 0; i < synth.gold.size(); ++i) gold << json{{"copy_index", i}, {"aspect", synth.gold[i]}}.dump() << '\n';
    say("synthesized " + std::to_string(corpus.copies().size()) + " copies");
  }
  write_corpus(corpus, out / "corpus");
  const CorpusSplit parts = split(corpus, config.split, config.split_seed);
  write_corpus(parts.train, out / "split" / "train");
  write_corpus(parts.dev, out / "split" / "dev");
  write_corpus(parts.test, out / "split" / "test");

  // vocabulary
  const PhraseVocab phrases = build_phrase_vocab(corpus, config.vocab);
  write_phrase_tsv(phrases, out / "phrases.tsv");
  const Vocab vocab = Vocab::build(phrases, config.vocab.aspect_slots);
  vocab.save_json(out / "vocab.json");
  say("vocabulary: " + std::to_string(vocab.size()) + " tokens, " + std::to_string(phrases.entries.size()) + " phrases");

  // aspects
  const AspectDiscovery disc = discover_aspects(parts.train, vocab, config.stopwords, config.aspects);
  save_aspects(disc.aspects, out / "aspects.json");
  {
    std::ofstream os(out / "lda_sweep.json");
    os << sweep_summary(disc).dump(2) << '\n';
  }
  const auto names = disc.aspects.names();
  std::string joined;
  for (const auto& n : names) joined += (joined.empty() ? "" : ", ") + n;
  say("aspects (" + std::to_string(names.size()) + "): " + joined);

  // pretraining
  ModelConfig model = config.model;
  model.vocab_size = static_cast<int>(vocab.size());
  if (config.finetune.pattern == ControlPattern::kDiscreteCode) {
    model.num_aspect_codes = std::max(model.num_aspect_codes, static_cast<int>(names.size()));
  }
  PretrainResult pre = pretrain_mlm(parts.train, vocab, model, config.mlm, [&](int e, double l) {
    say("pretrain epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
  });
  save_checkpoint(pre.state, out / "pretrain.ckpt");
  result.pretrain_losses = pre.epoch_losses;

  // weak labels
  const auto sets = mine_substitutes(pre.state, parts.train, vocab, names, config.mlm.top_k, config.mlm.top_n);
  save_substitutes(sets, out / "substitutes.json");
  const LabeledCorpus labels = label_corpus(parts.train, sets, vocab);
  save_labels(labels, out / "labels.jsonl");
  const Corpus labeled = apply_labels(parts.train, labels);
  write_corpus(labeled, out / "labeled");
  say("labeled " + std::to_string(labeled.copies().size()) + " of " + std::to_string(parts.train.copies().size()) +
      " training copies");

  // fine-tuning
  FinetuneResult fine = finetune(pre.state, model, labeled, names, vocab, config.finetune, [&](int e, double l) {
    say("finetune epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
  });
  save_checkpoint(fine.state, out / "model.ckpt");
  result.finetune_losses = fine.epoch_losses;
  save_losses(result.pretrain_losses, result.finetune_losses, out / "losses.json");

  // generation on held-out (product, aspect) pairs
  std::vector<GenerationLine> lines;
  std::vector<Reference> refs;
  std::unordered_set<std::string> seen;
  for (const auto& c : parts.test.copies()) {
    if (lines.size() >= config.generate.max_items) break;
    const Classification cls = classify_text(c.text, sets, vocab);
    if (cls.label == kUnknownLabel) continue;
    if (!seen.insert(c.sku_id + '\x1f' + cls.label).second) continue;
    const ProductRecord& product = parts.test.product_of(c);
    try {
      std::string text = generate(fine.state, product, cls.label, config.finetune.pattern, config.finetune.prompt,
                                  config.generate.gen, vocab);
      lines.push_back({{c.sku_id, cls.label, std::move(text)},
                       to_string(config.finetune.pattern),
                       to_string(config.finetune.prompt),
                       decode_name(config.generate.gen),
                       config.generate.gen.seed});
      refs.push_back({c.sku_id, cls.label, c.text});
    } catch (const Error& e) {
      ++result.generation_errors;
      say("generation failed for " + c.sku_id + "/" + cls.label + ": " + e.what());
    }
  }
  if (lines.empty()) throw DataError("no held-out copy received a known aspect; nothing to generate");
  write_generations(lines, out / "generations.jsonl", result.config_hash);
  write_references(refs, out / "references.jsonl");
  say("generated " + std::to_string(lines.size()) + " texts");

  // post-processing
  const KnowledgeBase kb = build_knowledge_base(corpus, config.patterns);
  save_knowledge_base(kb, out / "kb.json");
  save_patterns(config.patterns, out / "patterns.json");
  std::vector<Generation> gens;
  for (const auto& l : lines) gens.push_back(l.generation);
  const auto post = postprocess_generations(gens, kb, config.patterns, sets, vocab);
  write_postprocessed(post, out / "postprocessed.jsonl", out / "postprocess_report.jsonl");

  // evaluation
  std::vector<std::string> generated, references, desired;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    generated.push_back(lines[i].generation.text);
    references.push_back(refs[i].text);
    desired.push_back(lines[i].generation.aspect);
  }
  result.report = score(generated, references, desired, sets, vocab);
  save_report(result.report, out / "report.json", result.config_hash);
  say("corpus BLEU " + std::to_string(result.report.corpus_bleu) + ", aspect match " +
      std::to_string(result.report.aspect_match.value_or(0.0)));
  return result;
}

}  // namespace epccg
