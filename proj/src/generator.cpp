#include "epccg/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numeric>
#include <unordered_set>

#include "epccg/error.hpp"

namespace epccg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::vector<std::pair<ControlPattern, const char*>> kPatternNames = {
    {ControlPattern::kDiscreteCode, "discrete_code"},
    {ControlPattern::kLabelCode, "label_code"},
    {ControlPattern::kNameCode, "name_code"},
};

const std::vector<std::pair<PromptVariant, const char*>> kPromptNames = {
    {PromptVariant::kBasic, "basic"},
    {PromptVariant::kPlainNosep, "plain_nosep"},
    {PromptVariant::kPlainSep, "plain_sep"},
    {PromptVariant::kAdvanceNosep, "advance_nosep"},
    {PromptVariant::kAdvanceSep, "advance_sep"},
};

}  // namespace

std::string to_string(ControlPattern p) {
  for (const auto& [v, n] : kPatternNames) {
    if (v == p) return n;
  }
  return "?";
}

std::string to_string(PromptVariant p) {
  for (const auto& [v, n] : kPromptNames) {
    if (v == p) return n;
  }
  return "?";
}

ControlPattern parse_pattern(const std::string& s) {
  for (const auto& [v, n] : kPatternNames) {
    if (s == n) return v;
  }
  throw ConfigError("unknown control pattern '" + s + "'");
}

PromptVariant parse_prompt(const std::string& s) {
  for (const auto& [v, n] : kPromptNames) {
    if (s == n) return v;
  }
  throw ConfigError("unknown prompt variant '" + s + "'");
}

// --- packing -------------------------------------------------------------------------

namespace {

struct Field {
  const char* prefix;  // prompt literal, or nullptr
  TokenSeq tokens;
};

std::string attribute_text(const AttributeList& attrs, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count && i < attrs.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += attrs[i].first + ' ' + attrs[i].second;
  }
  return out;
}

std::string join_nonempty(std::initializer_list<std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

TokenSeq assemble(ControlPattern pattern, PromptVariant prompt, const TokenSeq& control, const ProductRecord& r,
                  std::size_t num_attrs, bool with_ocr, const Vocab& vocab) {
  const std::string attrs = attribute_text(r.attributes, num_attrs);
  const std::string ocr = with_ocr ? r.ocr : std::string{};
  const bool has_control = pattern != ControlPattern::kDiscreteCode;

  TokenSeq ids;
  if (pattern == ControlPattern::kDiscreteCode) ids.push_back(kPadId);
  ids.push_back(kSosId);

  if (prompt == PromptVariant::kBasic) {
    std::vector<TokenSeq> segments;
    if (has_control) segments.push_back(control);
    for (const std::string* f : {&r.title, &r.brand, &attrs, &ocr}) {
      TokenSeq t = encode_text(*f, vocab);
      if (!t.empty()) segments.push_back(std::move(t));
    }
    for (const auto& s : segments) {
      ids.insert(ids.end(), s.begin(), s.end());
      ids.push_back(kSepId);
    }
    return ids;
  }

  std::vector<Field> fields;
  if (has_control) fields.push_back({"aspect:", control});
  if (prompt == PromptVariant::kPlainNosep || prompt == PromptVariant::kPlainSep) {
    fields.push_back({"product:", encode_text(join_nonempty({r.title, r.brand, attrs, ocr}), vocab)});
  } else {
    fields.push_back({"title:", encode_text(r.title, vocab)});
    fields.push_back({"brand:", encode_text(r.brand, vocab)});
    fields.push_back({"attribute:", encode_text(attrs, vocab)});
    fields.push_back({"type:", encode_text(r.product_type, vocab)});
    fields.push_back({"OCR:", encode_text(ocr, vocab)});
  }
  std::erase_if(fields, [](const Field& f) { return f.tokens.empty(); });
  fields.push_back({"copywriting:", {}});
  const bool sep = prompt == PromptVariant::kPlainSep || prompt == PromptVariant::kAdvanceSep;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (sep && i > 0) ids.push_back(kSepId);
    ids.push_back(vocab.id(fields[i].prefix));
    ids.insert(ids.end(), fields[i].tokens.begin(), fields[i].tokens.end());
  }
  return ids;
}

}  // namespace

PackedExample pack_input(const ProductRecord& record, const std::string& aspect_name,
                         const std::optional<std::string>& copy_text, ControlPattern pattern, PromptVariant prompt,
                         const Vocab& vocab, const std::vector<std::string>& aspects, int max_positions,
                         int reserve) {
  const auto it = std::find(aspects.begin(), aspects.end(), aspect_name);
  if (it == aspects.end()) throw ArgumentError("unknown aspect '" + aspect_name + "'");
  const int m = static_cast<int>(it - aspects.begin());

  TokenSeq control;
  if (pattern == ControlPattern::kNameCode) {
    control = encode_text(aspect_name, vocab);
    if (control.empty()) throw ArgumentError("aspect name '" + aspect_name + "' produces no tokens");
  } else if (pattern == ControlPattern::kLabelCode) {
    control.push_back(vocab.aspect_slot(m));
  }
  if (prompt != PromptVariant::kBasic) {
    for (const auto& p : prompt_phrases()) {
      if (!vocab.contains(p)) throw ConfigError("vocabulary lacks prompt phrase '" + p + "'");
    }
  }

  TokenSeq target;
  if (copy_text) {
    target = encode_text(*copy_text, vocab);
    target.push_back(kEosId);
  }
  const auto budget = static_cast<std::size_t>(std::max(0, max_positions - reserve));

  std::size_t num_attrs = record.attributes.size();
  bool with_ocr = true;
  TokenSeq source = assemble(pattern, prompt, control, record, num_attrs, with_ocr, vocab);
  while (source.size() + target.size() > budget) {
    if (with_ocr && !record.ocr.empty()) {
      with_ocr = false;
    } else if (num_attrs > 0) {
      --num_attrs;
    } else {
      throw LengthError("packed input for " + record.sku_id + " needs " +
                        std::to_string(source.size() + target.size()) + " positions, limit " +
                        std::to_string(budget));
    }
    source = assemble(pattern, prompt, control, record, num_attrs, with_ocr, vocab);
  }

  PackedExample out;
  out.prefix_len = static_cast<int>(source.size());
  out.ids = std::move(source);
  out.ids.insert(out.ids.end(), target.begin(), target.end());
  out.target_span = {out.prefix_len, static_cast<int>(out.ids.size())};
  if (pattern == ControlPattern::kDiscreteCode) out.aspect_embedding_index = m;
  return out;
}

// --- fine-tuning ---------------------------------------------------------------------

void FinetuneConfig::validate() const {
  if (!(target_mask_prob > 0.0 && target_mask_prob < 1.0)) throw ConfigError("target_mask_prob must be in (0,1)");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
}

json to_json(const FinetuneConfig& c) {
  return json{{"target_mask_prob", c.target_mask_prob},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"pattern", to_string(c.pattern)},
              {"prompt", to_string(c.prompt)},
              {"seed", c.seed}};
}

FinetuneConfig finetune_config_from_json(const json& j) {
  FinetuneConfig c;
  c.target_mask_prob = j.value("target_mask_prob", c.target_mask_prob);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  if (j.contains("pattern")) c.pattern = parse_pattern(j.at("pattern").get<std::string>());
  if (j.contains("prompt")) c.prompt = parse_prompt(j.at("prompt").get<std::string>());
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<int> choose_target_positions(const PackedExample& ex, double prob, Rng& rng) {
  const int len = ex.target_span.second - ex.target_span.first;
  if (len <= 0) return {};
  std::vector<int> pos(static_cast<std::size_t>(len));
  std::iota(pos.begin(), pos.end(), ex.target_span.first);
  rng.shuffle(pos);
  pos.resize(static_cast<std::size_t>(num_masked(prob, len)));
  std::sort(pos.begin(), pos.end());
  return pos;
}

namespace {

// Grows the discrete-code table of a state to `codes` rows.
void widen_aspect_table(TrainState& s, int codes, std::uint64_t seed) {
  if (s.config.num_aspect_codes >= codes) return;
  const Eigen::Index old = s.config.num_aspect_codes;
  s.config.num_aspect_codes = codes;
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  auto grow = [&](Matrix<float>& m, bool random) {
    Matrix<float> g = Matrix<float>::Zero(codes, s.config.hidden_size);
    if (old > 0) g.topRows(old) = m;
    if (random) {
      for (Eigen::Index r = old; r < codes; ++r) {
        for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = static_cast<float>(0.02 * rng.normal());
      }
    }
    m = std::move(g);
  };
  grow(s.params.aspect_embedding, true);
  grow(s.adam_m.aspect_embedding, false);
  grow(s.adam_v.aspect_embedding, false);
}

}  // namespace

FinetuneResult finetune(std::optional<TrainState> init, const ModelConfig& model, const Corpus& labeled,
                        const std::vector<std::string>& aspects, const Vocab& vocab, const FinetuneConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  FinetuneResult result{init ? std::move(*init) : TrainState::fresh(model), {}};
  TrainState& st = result.state;
  if (st.config.vocab_size != static_cast<int>(vocab.size())) {
    throw ConfigError("model vocab_size " + std::to_string(st.config.vocab_size) + " differs from vocabulary size " +
                      std::to_string(vocab.size()));
  }
  if (config.pattern == ControlPattern::kDiscreteCode) {
    widen_aspect_table(st, static_cast<int>(aspects.size()), config.seed);
  }

  std::vector<PackedExample> examples;
  for (const auto& c : labeled.copies()) {
    if (!c.aspect || *c.aspect == kUnknownLabel) continue;
    if (std::find(aspects.begin(), aspects.end(), *c.aspect) == aspects.end()) {
      throw DataError("copy of " + c.sku_id + " is labeled with unknown aspect '" + *c.aspect + "'");
    }
    examples.push_back(pack_input(labeled.product_of(c), *c.aspect, c.text, config.pattern, config.prompt, vocab,
                                  aspects, st.config.max_positions));
  }
  if (examples.empty()) throw DataError("no labeled copies to fine-tune on");

  st.metadata = {{"objective", "prefix_lm"},
                 {"pattern", to_string(config.pattern)},
                 {"prompt", to_string(config.prompt)},
                 {"aspects", aspects}};
  Rng rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainingExample> batch;
      for (std::size_t i = start; i < end; ++i) {
        const PackedExample& p = examples[order[i]];
        TrainingExample ex;
        ex.targets = p.ids;
        ex.ids = p.ids;
        ex.positions = choose_target_positions(p, config.target_mask_prob, rng);
        for (int q : ex.positions) ex.ids[static_cast<std::size_t>(q)] = kMaskId;
        ex.mask = build_prefix_mask(p.prefix_len, static_cast<int>(p.ids.size()));
        ex.aspect_code = p.aspect_embedding_index;
        batch.push_back(std::move(ex));
      }
      total += train_step(st, batch, config.lr);
      ++batches;
    }
    const double mean = total / batches;
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

// --- decoding ------------------------------------------------------------------------

void GenConfig::validate() const {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (k < 1) throw ConfigError("top-k needs k >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

GenConfig parse_decode(const std::string& s, GenConfig base) {
  if (s == "greedy") {
    base.decode = DecodeKind::kGreedy;
    base.k = 1;
    base.temperature = 1.0;
    return base;
  }
  if (s.rfind("topk:", 0) == 0) {
    const auto colon = s.find(':', 5);
    try {
      if (colon == std::string::npos) throw std::invalid_argument("missing temperature");
      std::size_t used = 0;
      const std::string ks = s.substr(5, colon - 5), ts = s.substr(colon + 1);
      base.k = std::stoi(ks, &used);
      if (used != ks.size()) throw std::invalid_argument("k");
      base.temperature = std::stod(ts, &used);
      if (used != ts.size()) throw std::invalid_argument("temperature");
    } catch (const std::exception&) {
      throw ConfigError("decode must be greedy or topk:K:T, got '" + s + "'");
    }
    base.decode = DecodeKind::kTopK;
    base.validate();
    return base;
  }
  throw ConfigError("decode must be greedy or topk:K:T, got '" + s + "'");
}

std::string decode_name(const GenConfig& c) {
  if (c.decode == DecodeKind::kGreedy) return "greedy";
  std::ostringstream os;
  os << "topk:" << c.k << ':' << c.temperature;
  return os.str();
}

namespace {

std::vector<std::string> model_aspects(const TrainState& model, ControlPattern pattern, PromptVariant prompt) {
  const auto& md = model.metadata;
  if (md.contains("pattern") && md.at("pattern").get<std::string>() != to_string(pattern)) {
    throw ConfigError("model was trained with pattern " + md.at("pattern").get<std::string>() + ", not " +
                      to_string(pattern));
  }
  if (md.contains("prompt") && md.at("prompt").get<std::string>() != to_string(prompt)) {
    throw ConfigError("model was trained with prompt " + md.at("prompt").get<std::string>() + ", not " +
                      to_string(prompt));
  }
  if (!md.contains("aspects")) throw ConfigError("model carries no aspect list; was it fine-tuned?");
  return md.at("aspects").get<std::vector<std::string>>();
}

int pick_token(const Matrix<float>& logits, const GenConfig& config, const Vocab& vocab, Rng& rng) {
  std::vector<int> cand;
  cand.reserve(static_cast<std::size_t>(logits.cols()));
  for (int id = 0; id < logits.cols(); ++id) {
    if (vocab.is_special(id) && id != kEosId) continue;
    cand.push_back(id);
  }
  auto better = [&](int a, int b) {
    if (logits(0, a) != logits(0, b)) return logits(0, a) > logits(0, b);
    return a < b;
  };
  if (config.decode == DecodeKind::kGreedy) return *std::min_element(cand.begin(), cand.end(), better);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.k), cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  if (k == 1) return cand[0];
  const double top = logits(0, cand[0]);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = std::exp((logits(0, cand[i]) - top) / config.temperature);
  return cand[rng.categorical(w)];
}

}  // namespace

TokenSeq generate_ids(const TrainState& model, const ProductRecord& record, const std::string& aspect_name,
                      ControlPattern pattern, PromptVariant prompt, const GenConfig& config, const Vocab& vocab) {
  config.validate();
  const auto aspects = model_aspects(model, pattern, prompt);
  const PackedExample packed =
      pack_input(record, aspect_name, std::nullopt, pattern, prompt, vocab, aspects, model.config.max_positions, 1);
  Rng rng(fnv1a64(record.sku_id + '\x1f' + aspect_name, config.seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
  TokenSeq ids = packed.ids;
  TokenSeq out;
  for (int step = 0; step < config.max_new_tokens && static_cast<int>(ids.size()) < model.config.max_positions;
       ++step) {
    ids.push_back(kMaskId);
    const int last = static_cast<int>(ids.size()) - 1;
    const auto mask = build_prefix_mask(packed.prefix_len, static_cast<int>(ids.size()));
    const std::vector<int> pos = {last};
    const Matrix<float> logits =
        forward_positions<float>(ids, mask, model.params, model.config, pos, packed.aspect_embedding_index);
    const int tok = pick_token(logits, config, vocab, rng);
    ids.back() = tok;
    if (tok == kEosId) break;
    out.push_back(tok);
  }
  return out;
}

std::string generate(const TrainState& model, const ProductRecord& record, const std::string& aspect_name,
                     ControlPattern pattern, PromptVariant prompt, const GenConfig& config, const Vocab& vocab) {
  return render(generate_ids(model, record, aspect_name, pattern, prompt, config, vocab), vocab);
}

BatchGeneration batch_generate(const TrainState& model, const std::vector<ProductRecord>& records,
                               const std::vector<std::string>& aspects, ControlPattern pattern, PromptVariant prompt,
                               const GenConfig& config, const Vocab& vocab) {
  BatchGeneration out;
  for (const auto& r : records) {
    for (const auto& a : aspects) {
      try {
        out.outputs.push_back({r.sku_id, a, generate(model, r, a, pattern, prompt, config, vocab)});
      } catch (const Error& e) {
        out.errors.push_back({r.sku_id, a, e.what()});
      }
    }
  }
  return out;
}

void write_generations(const std::vector<GenerationLine>& lines, const std::filesystem::path& path,
                       const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) {
    ordered_json j;
    j["sku_id"] = l.generation.sku_id;
    j["aspect"] = l.generation.aspect;
    j["text"] = l.generation.text;
    j["pattern"] = l.pattern;
    j["prompt"] = l.prompt;
    j["decode"] = l.decode;
    j["seed"] = l.seed;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    os << j.dump() << '\n';
  }
}

std::vector<GenerationLine> read_generations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<GenerationLine> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      GenerationLine g;
      g.generation.sku_id = j.at("sku_id").get<std::string>();
      g.generation.aspect = j.at("aspect").get<std::string>();
      g.generation.text = j.at("text").get<std::string>();
      g.pattern = j.value("pattern", std::string{});
      g.prompt = j.value("prompt", std::string{});
      g.decode = j.value("decode", std::string{});
      g.seed = j.value("seed", std::uint64_t{0});
      out.push_back(std::move(g));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

}  // namespace epccg
