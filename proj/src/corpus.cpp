#include "epccg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "epccg/error.hpp"
#include "epccg/random.hpp"

namespace epccg {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

Corpus::Corpus(std::vector<ProductRecord> products, std::vector<CopywritingRecord> copies)
    : products_(std::move(products)), copies_(std::move(copies)) {
  for (std::size_t i = 0; i < products_.size(); ++i) {
    const auto& p = products_[i];
    if (p.sku_id.empty()) throw IntegrityError("product " + std::to_string(i) + " has an empty sku_id");
    if (p.title.empty()) throw IntegrityError("product " + p.sku_id + " has an empty title");
    if (!index_.emplace(p.sku_id, i).second) throw IntegrityError("duplicate sku_id " + p.sku_id);
  }
  std::vector<std::string> dangling;
  for (const auto& c : copies_) {
    if (c.text.empty()) throw IntegrityError("copy for sku " + c.sku_id + " has empty text");
    if (!index_.count(c.sku_id) &&
        std::find(dangling.begin(), dangling.end(), c.sku_id) == dangling.end()) {
      dangling.push_back(c.sku_id);
    }
  }
  if (!dangling.empty()) {
    std::string msg = "copies reference unknown sku ids:";
    for (const auto& d : dangling) msg += " " + d;
    throw IntegrityError(msg);
  }
}

const ProductRecord* Corpus::find_product(std::string_view sku) const {
  auto it = index_.find(std::string(sku));
  return it == index_.end() ? nullptr : &products_[it->second];
}

const ProductRecord& Corpus::product_of(const CopywritingRecord& copy) const {
  return products_[index_.at(copy.sku_id)];
}

std::vector<std::string> Corpus::all_texts() const {
  std::vector<std::string> out;
  out.reserve(copies_.size() + products_.size() * 4);
  for (const auto& c : copies_) out.push_back(c.text);
  for (const auto& p : products_) {
    out.push_back(p.title);
    if (!p.brand.empty()) out.push_back(p.brand);
    if (!p.product_type.empty()) out.push_back(p.product_type);
    for (const auto& [name, value] : p.attributes) out.push_back(name + " " + value);
    if (!p.ocr.empty()) out.push_back(p.ocr);
  }
  return out;
}

ordered_json to_json(const ProductRecord& p) {
  ordered_json attrs = ordered_json::object();
  for (const auto& [k, v] : p.attributes) attrs[k] = v;
  return ordered_json{{"sku_id", p.sku_id},
                      {"title", p.title},
                      {"brand", p.brand},
                      {"attributes", attrs},
                      {"product_type", p.product_type},
                      {"ocr", p.ocr}};
}

ordered_json to_json(const CopywritingRecord& c) {
  ordered_json j{{"sku_id", c.sku_id}, {"text", c.text}};
  j["aspect"] = c.aspect ? ordered_json(*c.aspect) : ordered_json(nullptr);
  return j;
}

namespace {

std::string string_field(const ordered_json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw DataError(std::string("missing field \"") + key + "\"");
    return {};
  }
  if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

ProductRecord product_from_json(const ordered_json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  ProductRecord p;
  p.sku_id = string_field(j, "sku_id", true);
  p.title = string_field(j, "title", true);
  p.brand = string_field(j, "brand", false);
  p.product_type = string_field(j, "product_type", false);
  p.ocr = string_field(j, "ocr", false);
  if (auto it = j.find("attributes"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw DataError("field \"attributes\" must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw DataError("attribute \"" + k + "\" must be a string");
      p.attributes.emplace_back(k, v.get<std::string>());
    }
  }
  return p;
}

CopywritingRecord copy_from_json(const ordered_json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  CopywritingRecord c;
  c.sku_id = string_field(j, "sku_id", true);
  c.text = string_field(j, "text", true);
  if (auto it = j.find("aspect"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw DataError("field \"aspect\" must be a string or null");
    c.aspect = it->get<std::string>();
  }
  return c;
}

namespace {

enum class RecordKind { kAny, kProduct, kCopy };

void read_jsonl(const fs::path& file, RecordKind kind, std::vector<ProductRecord>& products,
                std::vector<CopywritingRecord>& copies) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(file.filename().string() + ": " + e.what(), lineno);
    }
    try {
      const bool is_copy = kind == RecordKind::kCopy ||
                           (kind == RecordKind::kAny && j.is_object() && j.contains("text"));
      if (is_copy) {
        copies.push_back(copy_from_json(j));
      } else {
        products.push_back(product_from_json(j));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(file.filename().string() + ": " + e.what(), lineno);
    }
  }
}

}  // namespace

Corpus load_corpus(const fs::path& path) {
  std::vector<ProductRecord> products;
  std::vector<CopywritingRecord> copies;
  if (fs::is_directory(path)) {
    read_jsonl(path / "products.jsonl", RecordKind::kProduct, products, copies);
    read_jsonl(path / "copies.jsonl", RecordKind::kCopy, products, copies);
  } else {
    if (!fs::exists(path)) throw DataError("corpus not found: " + path.string());
    read_jsonl(path, RecordKind::kAny, products, copies);
  }
  return Corpus(std::move(products), std::move(copies));
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream p(dir / "products.jsonl");
  for (const auto& r : corpus.products()) p << to_json(r).dump() << '\n';
  std::ofstream c(dir / "copies.jsonl");
  for (const auto& r : corpus.copies()) c << to_json(r).dump() << '\n';
  if (!p || !c) throw DataError("failed writing corpus to " + dir.string());
}

// --- synthetic ----------------------------------------------------------------

bool contains_keyword(std::string_view text, std::string_view keyword) {
  if (keyword.empty()) return false;
  auto is_word_char = [](char ch) {
    const auto u = static_cast<unsigned char>(ch);
    return std::isalnum(u) != 0;
  };
  for (std::size_t pos = text.find(keyword); pos != std::string_view::npos;
       pos = text.find(keyword, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]) || !is_word_char(keyword.front());
    const std::size_t end = pos + keyword.size();
    const bool right_ok = end == text.size() || !is_word_char(text[end]) || !is_word_char(keyword.back());
    if (left_ok && right_ok) return true;
  }
  return false;
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  s.num_aspects = j.at("num_aspects").get<int>();
  s.docs_per_aspect = j.at("docs_per_aspect").get<int>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.overlap = j.value("overlap", 0.0);
  s.sentences_per_copy = j.value("sentences_per_copy", 3);
  if (j.contains("aspects")) {
    for (const auto& a : j.at("aspects")) {
      SynthAspect asp;
      asp.name = a.at("name").get<std::string>();
      asp.keywords = a.at("keywords").get<std::vector<std::string>>();
      asp.templates = a.value("templates", std::vector<std::string>{});
      s.aspects.push_back(std::move(asp));
    }
    if (j.contains("attribute_pool")) {
      for (const auto& [type, attrs] : j.at("attribute_pool").items()) {
        auto& dst = s.attribute_pool[type];
        for (const auto& [name, values] : attrs.items()) {
          dst.emplace_back(name, values.get<std::vector<std::string>>());
        }
      }
    }
    s.brands = j.value("brands", std::vector<std::string>{"Acme"});
    s.ocr_pool = j.value("ocr_pool", std::vector<std::string>{""});
  } else {
    // Only sizes given: use the built-in bank.
    SynthSpec d = default_synth_spec(s.num_aspects, s.docs_per_aspect, s.seed);
    d.overlap = s.overlap;
    d.sentences_per_copy = s.sentences_per_copy;
    return d;
  }
  return s;
}

json to_json(const SynthSpec& spec) {
  json j;
  j["num_aspects"] = spec.num_aspects;
  j["docs_per_aspect"] = spec.docs_per_aspect;
  j["seed"] = spec.seed;
  j["overlap"] = spec.overlap;
  j["sentences_per_copy"] = spec.sentences_per_copy;
  j["aspects"] = json::array();
  for (const auto& a : spec.aspects) {
    j["aspects"].push_back({{"name", a.name}, {"keywords", a.keywords}, {"templates", a.templates}});
  }
  json pool = json::object();
  for (const auto& [type, attrs] : spec.attribute_pool) {
    json t = json::object();
    for (const auto& [name, values] : attrs) t[name] = values;
    pool[type] = t;
  }
  j["attribute_pool"] = pool;
  j["brands"] = spec.brands;
  j["ocr_pool"] = spec.ocr_pool;
  return j;
}

SynthSpec default_synth_spec(int num_aspects, int docs_per_aspect, std::uint64_t seed) {
  SynthSpec s;
  s.num_aspects = num_aspects;
  s.docs_per_aspect = docs_per_aspect;
  s.seed = seed;
  s.aspects = {
      {"battery",
       {"battery", "power", "charge", "endurance", "stamina", "runtime", "recharge", "longevity"},
       {"the {kw} offers {capacity} of {kw} for all day {kw}",
        "with {capacity} the {kw} and {kw} keep going",
        "{kw} you can trust and {kw} that lasts with {capacity} inside",
        "enjoy long {kw} and fast {kw} from the {capacity} cell"}},
      {"screen",
       {"screen", "display", "pixels", "brightness", "resolution", "panel", "contrast", "colors"},
       {"the {screen_size} {kw} brings vivid {kw} and sharp {kw}",
        "a {screen_size} {kw} with rich {kw} for every movie",
        "crisp {kw} and deep {kw} on the {screen_size} {kw}",
        "watch on the {kw} with true {kw} across {screen_size}"}},
      {"camera",
       {"camera", "lens", "photos", "zoom", "shots", "portrait", "aperture", "selfies"},
       {"the {megapixels} {kw} captures stunning {kw} and {kw}",
        "take clear {kw} with the {megapixels} {kw} at night",
        "a {megapixels} {kw} for {kw} and bright {kw}",
        "capture every moment with {kw} and {kw} at {megapixels}"}},
      {"design",
       {"design", "style", "elegant", "slim", "sleek", "finish", "aluminum", "curves"},
       {"a {kw} body in {color} with {kw} {kw}",
        "the {color} {kw} feels {kw} in your hand",
        "{kw} and {kw} lines in a {color} {kw}",
        "weighing {weight} the {kw} {kw} stands out"}},
      {"performance",
       {"performance", "processor", "speed", "chip", "cores", "gaming", "smooth", "responsive"},
       {"the {clock} {kw} delivers {kw} for heavy {kw}",
        "fast {kw} and {kw} apps with {clock} {kw}",
        "{kw} at {clock} makes {kw} truly {kw}",
        "run anything with {kw} {kw} at {clock}"}},
      {"sound",
       {"sound", "speakers", "audio", "bass", "stereo", "volume", "acoustics", "treble"},
       {"dual {kw} give rich {kw} and deep {kw}",
        "immersive {kw} with clear {kw} for music",
        "turn up the {kw} and feel the {kw} and {kw}",
        "the {kw} fill the room with {kw}"}},
      {"storage",
       {"storage", "space", "files", "archive", "library", "backup", "folders", "gigabytes"},
       {"{storage_size} of {kw} keeps your {kw} and {kw}",
        "never run out of {kw} with {storage_size} for {kw}",
        "store every {kw} in {storage_size} of {kw}",
        "a {storage_size} {kw} for your whole {kw}"}},
      {"cooling",
       {"cooling", "heat", "thermal", "fans", "vents", "temperature", "airflow", "chill"},
       {"smart {kw} keeps the {kw} low under load",
        "quiet {kw} and wide {kw} manage the {kw}",
        "advanced {kw} with {kw} stays cool",
        "the {kw} system controls {kw} and {kw}"}},
  };
  s.attribute_pool = {
      {"phone",
       {{"capacity", {"3000mAh", "4000mAh", "4500mAh", "5000mAh"}},
        {"screen_size", {"6.1inch", "6.5inch", "6.7inch"}},
        {"megapixels", {"12MP", "48MP", "64MP", "108MP"}},
        {"color", {"black", "silver", "blue"}},
        {"weight", {"170g", "185g", "200g"}},
        {"clock", {"2.4GHz", "2.8GHz", "3.2GHz"}},
        {"storage_size", {"128GB", "256GB", "512GB"}}}},
      {"tablet",
       {{"capacity", {"7000mAh", "8000mAh", "10000mAh"}},
        {"screen_size", {"10.2inch", "11inch", "12.9inch"}},
        {"megapixels", {"8MP", "12MP"}},
        {"color", {"gray", "silver", "gold"}},
        {"weight", {"460g", "500g", "680g"}},
        {"clock", {"2.0GHz", "2.4GHz", "3.0GHz"}},
        {"storage_size", {"64GB", "128GB", "256GB"}}}},
      {"laptop",
       {{"capacity", {"5000mAh", "6000mAh", "8000mAh"}},
        {"screen_size", {"13.3inch", "14inch", "15.6inch"}},
        {"megapixels", {"1MP", "2MP"}},
        {"color", {"black", "silver", "white"}},
        {"weight", {"1200g", "1400g", "1800g"}},
        {"clock", {"2.6GHz", "3.5GHz", "4.2GHz"}},
        {"storage_size", {"256GB", "512GB", "1024GB"}}}},
  };
  s.brands = {"Nova", "Orbit", "Zenith", "Lumen", "Vertex"};
  s.ocr_pool = {"", "", "official store", "new arrival", "free shipping"};
  return s;
}

namespace {

void validate(const SynthSpec& spec) {
  if (spec.num_aspects < 2) throw ConfigError("synthetic spec needs num_aspects >= 2");
  if (spec.docs_per_aspect < 1) throw ConfigError("synthetic spec needs docs_per_aspect >= 1");
  if (static_cast<int>(spec.aspects.size()) < spec.num_aspects) {
    throw ConfigError("synthetic spec defines " + std::to_string(spec.aspects.size()) +
                      " aspects but num_aspects is " + std::to_string(spec.num_aspects));
  }
  if (spec.attribute_pool.empty()) throw ConfigError("synthetic spec has no attribute_pool");
  if (spec.brands.empty()) throw ConfigError("synthetic spec has no brands");
  if (spec.overlap < 0.0 || spec.overlap > 1.0) throw ConfigError("overlap must be in [0,1]");
  if (spec.sentences_per_copy < 1) throw ConfigError("sentences_per_copy must be >= 1");
  std::set<std::string> names;
  for (int m = 0; m < spec.num_aspects; ++m) {
    const auto& a = spec.aspects[static_cast<std::size_t>(m)];
    if (a.name.empty() || !names.insert(a.name).second) {
      throw ConfigError("aspect names must be unique and non-empty");
    }
    if (a.keywords.empty()) throw ConfigError("aspect " + a.name + " has no keywords");
    if (a.templates.empty()) throw ConfigError("aspect " + a.name + " has an empty template list");
    for (const auto& t : a.templates) {
      bool mentions = t.find("{kw}") != std::string::npos;
      for (const auto& kw : a.keywords) mentions = mentions || contains_keyword(t, kw);
      if (!mentions) throw ConfigError("template \"" + t + "\" mentions no keyword of " + a.name);
    }
  }
}

const std::string& pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.below(v.size())]; }

}  // namespace

SyntheticCorpus generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const auto num_aspects = static_cast<std::size_t>(spec.num_aspects);
  const auto num_products = static_cast<std::size_t>(spec.docs_per_aspect);

  std::vector<std::string> types;
  for (const auto& [t, attrs] : spec.attribute_pool) types.push_back(t);

  std::vector<ProductRecord> products;
  products.reserve(num_products);
  const int width = std::max<int>(5, static_cast<int>(std::to_string(num_products).size()));
  for (std::size_t i = 0; i < num_products; ++i) {
    ProductRecord p;
    std::string id = std::to_string(i);
    p.sku_id = "SKU" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    p.product_type = types[rng.below(types.size())];
    p.brand = pick(rng, spec.brands);
    p.title = p.brand + " " + p.product_type + " X" + std::to_string(10 + rng.below(90));
    for (const auto& [name, values] : spec.attribute_pool.at(p.product_type)) {
      p.attributes.emplace_back(name, pick(rng, values));
    }
    p.ocr = spec.ocr_pool.empty() ? std::string() : pick(rng, spec.ocr_pool);
    products.push_back(std::move(p));
  }

  std::vector<CopywritingRecord> copies;
  std::vector<std::string> gold;
  copies.reserve(num_products * num_aspects);
  for (const auto& p : products) {
    for (std::size_t m = 0; m < num_aspects; ++m) {
      const auto& aspect = spec.aspects[m];
      std::vector<std::size_t> order(aspect.templates.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      const auto n = std::min(order.size(), static_cast<std::size_t>(spec.sentences_per_copy));
      for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
      std::string out;
      for (std::size_t sentence = 0; sentence < n; ++sentence) {
        const std::string& tmpl = aspect.templates[order[sentence]];
        if (sentence > 0) out += ". ";
        for (std::size_t pos = 0; pos < tmpl.size();) {
          if (tmpl[pos] != '{') {
            out += tmpl[pos++];
            continue;
          }
          const auto close = tmpl.find('}', pos);
          if (close == std::string::npos) throw ConfigError("unterminated slot in template \"" + tmpl + "\"");
          const std::string slot = tmpl.substr(pos + 1, close - pos - 1);
          if (slot == "kw") {
            const SynthAspect* source = &aspect;
            if (spec.overlap > 0.0 && rng.uniform() < spec.overlap) {
              const std::size_t other = (m + 1 + rng.below(num_aspects - 1)) % num_aspects;
              source = &spec.aspects[other];
            }
            out += pick(rng, source->keywords);
          } else {
            auto it = std::find_if(p.attributes.begin(), p.attributes.end(),
                                   [&](const auto& kv) { return kv.first == slot; });
            if (it == p.attributes.end()) {
              throw ConfigError("template slot {" + slot + "} has no attribute in product type " + p.product_type);
            }
            out += it->second;
          }
          pos = close + 1;
        }
      }
      copies.push_back({p.sku_id, out, std::nullopt});
      gold.push_back(aspect.name);
    }
  }

  if (spec.overlap == 0.0) {
    for (std::size_t i = 0; i < copies.size(); ++i) {
      const std::size_t m = i % num_aspects;
      bool own = false;
      for (const auto& kw : spec.aspects[m].keywords) own = own || contains_keyword(copies[i].text, kw);
      if (!own) throw ConfigError("generated copy lacks a keyword of its aspect: " + copies[i].text);
      for (std::size_t o = 0; o < num_aspects; ++o) {
        if (o == m) continue;
        for (const auto& kw : spec.aspects[o].keywords) {
          if (contains_keyword(copies[i].text, kw)) {
            throw ConfigError("aspects are not lexically disjoint: \"" + kw + "\" of " +
                              spec.aspects[o].name + " appears in \"" + copies[i].text + "\"");
          }
        }
      }
    }
  }
  return {Corpus(std::move(products), std::move(copies)), std::move(gold)};
}

// --- splitting -------------------------------------------------------------------

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& copy_indices) {
  std::vector<CopywritingRecord> copies;
  std::set<std::string> needed;
  for (std::size_t i : copy_indices) {
    copies.push_back(corpus.copies().at(i));
    needed.insert(copies.back().sku_id);
  }
  std::vector<ProductRecord> products;
  for (const auto& p : corpus.products()) {
    if (needed.count(p.sku_id)) products.push_back(p);
  }
  return Corpus(std::move(products), std::move(copies));
}

CorpusSplit split(const Corpus& corpus, const SplitFractions& f, std::uint64_t seed) {
  if (f.train <= 0.0 || f.dev <= 0.0 || f.test <= 0.0) {
    throw ConfigError("split fractions must all be positive");
  }
  if (std::abs(f.train + f.dev + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  const std::size_t n = corpus.copies().size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  // The epsilon absorbs representation error such as 0.8 * 10.
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n) + 1e-9));
  const auto n_dev = std::min(n - n_train,
                              static_cast<std::size_t>(std::floor(f.dev * static_cast<double>(n) + 1e-9)));
  CorpusSplit out;
  out.train_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.dev_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                       order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  out.test_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), order.end());
  for (auto* idx : {&out.train_index, &out.dev_index, &out.test_index}) std::sort(idx->begin(), idx->end());
  out.train = subset(corpus, out.train_index);
  out.dev = subset(corpus, out.dev_index);
  out.test = subset(corpus, out.test_index);
  return out;
}

}  // namespace epccg
