#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "epccg/error.hpp"
#include "epccg/pipeline.hpp"
#include "json.hpp"

using namespace epccg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<std::string> aspect_names(const fs::path& p) { return load_aspects(p).names(); }

int exit_code(const std::exception& e) {
  if (dynamic_cast<const TrainingDivergedError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  return 1;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect-controlled product copywriting toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override every random seed");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "No progress output");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with gold aspects");
  fs::path synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "Synthetic spec JSON")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* aspects = app.add_subcommand("aspects", "LDA sweep, aspect extraction and refinement");
  fs::path asp_corpus, asp_grid, asp_refine, asp_vocab, asp_out, asp_stop, asp_sweep;
  aspects->add_option("--corpus", asp_corpus)->required();
  aspects->add_option("--grid", asp_grid, "Aspect stage JSON (grid, alpha, beta, ...)")->required();
  aspects->add_option("--refine", asp_refine, "Refinement edits JSON");
  aspects->add_option("--vocab", asp_vocab, "vocab.json; built from the corpus when omitted");
  aspects->add_option("--stopwords", asp_stop);
  aspects->add_option("--sweep-out", asp_sweep, "Write per-grid coherence here");
  aspects->add_option("--out", asp_out)->required();

  auto* vocab = app.add_subcommand("vocab", "Mine phrases and build the token vocabulary");
  fs::path voc_corpus, voc_out, voc_config, voc_stop;
  vocab->add_option("--corpus", voc_corpus)->required();
  vocab->add_option("--config", voc_config, "Vocab stage JSON");
  vocab->add_option("--stopwords", voc_stop);
  vocab->add_option("--out", voc_out, "vocab.json (phrases.tsv is written alongside)")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Masked-LM pretraining");
  fs::path pre_corpus, pre_vocab, pre_config, pre_out;
  pretrain->add_option("--corpus", pre_corpus)->required();
  pretrain->add_option("--vocab", pre_vocab)->required();
  pretrain->add_option("--config", pre_config, "JSON with \"model\" and \"mlm\" sections")->required();
  pretrain->add_option("--out", pre_out)->required();

  auto* label = app.add_subcommand("label", "Mine substitute words and weakly label copies");
  fs::path lab_corpus, lab_ckpt, lab_aspects, lab_vocab, lab_out, lab_subs, lab_labeled;
  int lab_k = 50, lab_n = 5;
  label->add_option("--corpus", lab_corpus)->required();
  label->add_option("--ckpt", lab_ckpt)->required();
  label->add_option("--aspects", lab_aspects)->required();
  label->add_option("--vocab", lab_vocab)->required();
  label->add_option("--top-k", lab_k, "Substitutes kept per aspect");
  label->add_option("--top-n", lab_n, "Predictions pooled per masked position");
  label->add_option("--out", lab_out, "labels.jsonl")->required();
  label->add_option("--substitutes-out", lab_subs)->required();
  label->add_option("--labeled-out", lab_labeled, "Write the labeled corpus directory here");

  auto* train = app.add_subcommand("train", "Prefix-LM fine-tuning of the controllable generator");
  fs::path tr_labeled, tr_ckpt, tr_vocab, tr_aspects, tr_config, tr_out, tr_model;
  std::string tr_pattern = "name_code", tr_prompt = "basic";
  train->add_option("--labeled", tr_labeled, "Labeled corpus directory")->required();
  train->add_option("--ckpt", tr_ckpt, "Pretrained checkpoint");
  train->add_option("--model", tr_model, "Model config JSON when starting from scratch");
  train->add_option("--vocab", tr_vocab)->required();
  train->add_option("--aspects", tr_aspects)->required();
  train->add_option("--config", tr_config, "Fine-tuning config JSON");
  train->add_option("--pattern", tr_pattern)->check(CLI::IsMember({"name_code", "label_code", "discrete_code"}));
  train->add_option("--prompt", tr_prompt)
      ->check(CLI::IsMember({"basic", "plain_nosep", "plain_sep", "advance_nosep", "advance_sep"}));
  train->add_option("--out", tr_out)->required();

  auto* gen = app.add_subcommand("generate", "Generate copy for every product and aspect");
  fs::path gen_ckpt, gen_products, gen_aspects, gen_vocab, gen_out;
  std::string gen_decode = "greedy";
  int gen_max = 48;
  gen->add_option("--ckpt", gen_ckpt)->required();
  gen->add_option("--products", gen_products, "products.jsonl or a corpus directory")->required();
  gen->add_option("--aspects", gen_aspects)->required();
  gen->add_option("--vocab", gen_vocab)->required();
  gen->add_option("--decode", gen_decode, "greedy or topk:K:T");
  gen->add_option("--max-new-tokens", gen_max);
  gen->add_option("--out", gen_out)->required();

  auto* post = app.add_subcommand("postprocess", "Attribute correction and aspect filtering");
  fs::path pp_in, pp_kb, pp_patterns, pp_subs, pp_vocab, pp_out, pp_report;
  post->add_option("--in", pp_in, "generations.jsonl")->required();
  post->add_option("--kb", pp_kb, "kb.json, or a corpus directory to derive it from")->required();
  post->add_option("--patterns", pp_patterns, "patterns.json; built-in patterns when omitted");
  post->add_option("--substitutes", pp_subs)->required();
  post->add_option("--vocab", pp_vocab)->required();
  post->add_option("--out", pp_out)->required();
  post->add_option("--report", pp_report)->required();

  auto* eval = app.add_subcommand("eval", "BLEU, ROUGE and aspect-match scores");
  fs::path ev_gen, ev_ref, ev_subs, ev_vocab, ev_out;
  eval->add_option("--generated", ev_gen)->required();
  eval->add_option("--references", ev_ref)->required();
  eval->add_option("--substitutes", ev_subs);
  eval->add_option("--vocab", ev_vocab)->required();
  eval->add_option("--out", ev_out)->required();

  auto* pipe = app.add_subcommand("pipeline", "Run every stage from one config");
  fs::path pl_config, pl_out;
  pipe->add_option("--config", pl_config)->required();
  pipe->add_option("--out", pl_out, "Override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    for (const auto& extra : app.remaining()) {
      if (!extra.empty() && extra[0] != '-') {
        std::cerr << "error: unknown subcommand '" << extra << "'\n";
        break;
      }
    }
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  std::ostream* log = quiet ? nullptr : &std::cerr;
  auto note = [&](const std::string& s) {
    if (log) *log << s << '\n';
  };

  try {
    if (*synth) {
      SynthSpec spec = synth_spec_from_json(read_json(synth_spec));
      if (seed) spec.seed = *seed;
      const SyntheticCorpus s = generate_synthetic(spec);
      write_corpus(s.corpus, synth_out);
      std::ofstream gold(synth_out / "gold.jsonl");
      for (std::size_t i = 0; i < s.gold.size(); ++i) {
        gold << json{{"copy_index", i}, {"aspect", s.gold[i]}}.dump() << '\n';
      }
      note("wrote " + std::to_string(s.corpus.copies().size()) + " copies to " + synth_out.string());
    } else if (*vocab) {
      const Corpus corpus = load_corpus(voc_corpus);
      VocabStageConfig cfg;
      if (!voc_config.empty()) {
        json j = read_json(voc_config);
        cfg = pipeline_config_from_json(json{{"vocab", j}}, voc_config.parent_path()).vocab;
      }
      if (!voc_stop.empty()) cfg.seed.stopwords = read_stopwords(voc_stop);
      const PhraseVocab phrases = build_phrase_vocab(corpus, cfg);
      const Vocab v = Vocab::build(phrases, cfg.aspect_slots);
      ensure_parent(voc_out);
      v.save_json(voc_out);
      fs::path tsv = voc_out;
      write_phrase_tsv(phrases, tsv.replace_extension(".tsv"));
      note("vocabulary of " + std::to_string(v.size()) + " tokens");
    } else if (*aspects) {
      const Corpus corpus = load_corpus(asp_corpus);
      json stage = read_json(asp_grid);
      if (!asp_refine.empty()) stage["refine"] = read_json(asp_refine);
      PipelineConfig pc = pipeline_config_from_json(json{{"aspects", stage}}, asp_grid.parent_path());
      if (seed) pc.aspects.seed = *seed;
      std::set<std::string> stop;
      if (!asp_stop.empty()) stop = read_stopwords(asp_stop);
      Vocab v;
      if (!asp_vocab.empty()) {
        v = Vocab::load_json(asp_vocab);
      } else {
        VocabStageConfig vc;
        vc.seed.stopwords = stop;
        v = Vocab::build(build_phrase_vocab(corpus, vc), vc.aspect_slots);
      }
      const AspectDiscovery d = discover_aspects(corpus, v, stop, pc.aspects);
      ensure_parent(asp_out);
      save_aspects(d.aspects, asp_out);
      if (!asp_sweep.empty()) std::ofstream(asp_sweep) << sweep_summary(d).dump(2) << '\n';
      note("selected " + std::to_string(d.grid[d.sweep.best_index].num_topics) + " topics");
    } else if (*pretrain) {
      const Corpus corpus = load_corpus(pre_corpus);
      const Vocab v = Vocab::load_json(pre_vocab);
      const json cfg = read_json(pre_config);
      ModelConfig mc = model_config_from_json(cfg.value("model", json::object()));
      MlmConfig ml = mlm_config_from_json(cfg.value("mlm", json::object()));
      if (seed) {
        mc.seed = *seed + 3;
        ml.seed = *seed + 4;
      }
      mc.vocab_size = static_cast<int>(v.size());
      const PretrainResult r = pretrain_mlm(corpus, v, mc, ml, [&](int e, double l) {
        note("epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
      });
      ensure_parent(pre_out);
      save_checkpoint(r.state, pre_out);
    } else if (*label) {
      const Corpus corpus = load_corpus(lab_corpus);
      const Vocab v = Vocab::load_json(lab_vocab);
      const TrainState st = load_checkpoint(lab_ckpt);
      const auto sets = mine_substitutes(st, corpus, v, aspect_names(lab_aspects), lab_k, lab_n);
      for (const auto& s : sets) {
        if (s.words.empty()) std::cerr << "warning: aspect '" << s.aspect << "' never occurs in the corpus\n";
      }
      const LabeledCorpus labels = label_corpus(corpus, sets, v);
      ensure_parent(lab_out);
      ensure_parent(lab_subs);
      save_labels(labels, lab_out);
      save_substitutes(sets, lab_subs);
      if (!lab_labeled.empty()) write_corpus(apply_labels(corpus, labels), lab_labeled);
    } else if (*train) {
      const Corpus labeled = load_corpus(tr_labeled);
      const Vocab v = Vocab::load_json(tr_vocab);
      FinetuneConfig fc = tr_config.empty() ? FinetuneConfig{} : finetune_config_from_json(read_json(tr_config));
      fc.pattern = parse_pattern(tr_pattern);
      fc.prompt = parse_prompt(tr_prompt);
      if (seed) fc.seed = *seed + 5;
      std::optional<TrainState> init;
      ModelConfig mc;
      if (!tr_ckpt.empty()) {
        init = load_checkpoint(tr_ckpt);
        mc = init->config;
      } else {
        if (tr_model.empty()) throw ConfigError("train needs --ckpt or --model");
        mc = model_config_from_json(read_json(tr_model));
        mc.vocab_size = static_cast<int>(v.size());
        if (seed) mc.seed = *seed + 3;
      }
      const FinetuneResult r = finetune(std::move(init), mc, labeled, aspect_names(tr_aspects), v, fc,
                                        [&](int e, double l) {
                                          note("epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
                                        });
      ensure_parent(tr_out);
      save_checkpoint(r.state, tr_out);
    } else if (*gen) {
      const TrainState st = load_checkpoint(gen_ckpt);
      const Vocab v = Vocab::load_json(gen_vocab);
      const Corpus products = load_corpus(gen_products);
      GenConfig gc = parse_decode(gen_decode);
      gc.max_new_tokens = gen_max;
      if (seed) gc.seed = *seed + 6;
      const auto pattern = parse_pattern(st.metadata.value("pattern", std::string("name_code")));
      const auto prompt = parse_prompt(st.metadata.value("prompt", std::string("basic")));
      const BatchGeneration b =
          batch_generate(st, products.products(), aspect_names(gen_aspects), pattern, prompt, gc, v);
      std::vector<GenerationLine> lines;
      for (const auto& g : b.outputs) lines.push_back({g, to_string(pattern), to_string(prompt), decode_name(gc), gc.seed});
      ensure_parent(gen_out);
      write_generations(lines, gen_out);
      for (const auto& e : b.errors) std::cerr << "error: " << e.sku_id << "/" << e.aspect << ": " << e.message << '\n';
      note("generated " + std::to_string(lines.size()) + " texts, " + std::to_string(b.errors.size()) + " failures");
    } else if (*post) {
      const auto patterns = pp_patterns.empty() ? default_patterns() : load_patterns(pp_patterns);
      const KnowledgeBase kb =
          fs::is_directory(pp_kb) ? build_knowledge_base(load_corpus(pp_kb), patterns) : load_knowledge_base(pp_kb);
      const Vocab v = Vocab::load_json(pp_vocab);
      std::vector<Generation> gens;
      for (const auto& l : read_generations(pp_in)) gens.push_back(l.generation);
      const auto lines = postprocess_generations(gens, kb, patterns, load_substitutes(pp_subs), v);
      ensure_parent(pp_out);
      ensure_parent(pp_report);
      write_postprocessed(lines, pp_out, pp_report);
    } else if (*eval) {
      const auto generated = read_generations(ev_gen);
      const auto refs = read_references(ev_ref);
      if (generated.size() != refs.size()) {
        throw DataError("line count mismatch: " + std::to_string(generated.size()) + " generated vs " +
                        std::to_string(refs.size()) + " references");
      }
      const Vocab v = Vocab::load_json(ev_vocab);
      std::vector<std::string> g, r, d;
      for (std::size_t i = 0; i < generated.size(); ++i) {
        g.push_back(generated[i].generation.text);
        r.push_back(refs[i].text);
        d.push_back(generated[i].generation.aspect);
      }
      const auto sets = ev_subs.empty() ? std::vector<SubstituteSet>{} : load_substitutes(ev_subs);
      const ScoreReport rep = score(g, r, d, sets, v);
      ensure_parent(ev_out);
      save_report(rep, ev_out);
      std::cout << to_json(rep).dump(2) << '\n';
    } else if (*pipe) {
      PipelineConfig pc = load_pipeline_config(pl_config, seed);
      if (!pl_out.empty()) pc.output_dir = pl_out;
      run_pipeline(pc, log);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
