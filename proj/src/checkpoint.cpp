#include <bit>
#include <cstring>
#include <fstream>

#include "epccg/error.hpp"
#include "epccg/transformer.hpp"

namespace epccg {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename Int>
void write_int(std::ostream& os, Int v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename Int>
Int read_int(std::istream& is, const std::string& what) {
  Int v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw CheckpointError("truncated checkpoint: " + what);
  return v;
}

struct Entry {
  std::string name;
  Matrix<float>* tensor;
};

std::vector<Entry> entries(TrainState& s) {
  std::vector<Entry> out;
  for (auto& [n, m] : s.params.tensors()) out.push_back({n, m});
  for (auto& [n, m] : s.adam_m.tensors()) out.push_back({"adam_m/" + n, m});
  for (auto& [n, m] : s.adam_v.tensors()) out.push_back({"adam_v/" + n, m});
  return out;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  auto& s = const_cast<TrainState&>(state);
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries(s)) {
    table.push_back({{"name", e.name}, {"shape", {e.tensor->rows(), e.tensor->cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.tensor->size()) * sizeof(float);
  }
  json header = {{"config", to_json(state.config)},
                 {"tensors", table},
                 {"step", state.step},
                 {"rng", state.rng.state()},
                 {"metadata", state.metadata}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    write_int<std::uint32_t>(os, kVersion);
    write_int<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries(s)) {
      os.write(reinterpret_cast<const char*>(e.tensor->data()),
               static_cast<std::streamsize>(e.tensor->size() * static_cast<Eigen::Index>(sizeof(float))));
    }
    if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw CheckpointError("truncated checkpoint: magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  const auto version = read_int<std::uint32_t>(is, "version");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_int<std::uint64_t>(is, "header length");
  if (header_len > (1ULL << 30)) throw CheckpointError("implausible checkpoint header length");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw CheckpointError("truncated checkpoint: header");
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  TrainState s;
  try {
    s.config = model_config_from_json(header.at("config"));
    s.config.validate();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  s.params = ModelParameters<float>::zeros(s.config);
  s.adam_m = ModelParameters<float>::zeros(s.config);
  s.adam_v = ModelParameters<float>::zeros(s.config);
  s.step = header.value("step", std::int64_t{0});
  s.rng.set_state(header.value("rng", std::string{}));
  s.metadata = header.value("metadata", json::object());

  const json& table = header.at("tensors");
  auto expect = entries(s);
  if (!table.is_array() || table.size() != expect.size()) {
    throw CheckpointError("checkpoint tensor table does not match its config");
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& t = table[i];
    auto& e = expect[i];
    if (t.value("name", std::string{}) != e.name) {
      throw CheckpointError("unexpected tensor " + t.value("name", std::string{}) + ", wanted " + e.name);
    }
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != e.tensor->rows() || shape[1] != e.tensor->cols()) {
      throw CheckpointError("shape mismatch for tensor " + e.name);
    }
    const auto bytes = static_cast<std::streamsize>(e.tensor->size()) * static_cast<std::streamsize>(sizeof(float));
    if (!is.read(reinterpret_cast<char*>(e.tensor->data()), bytes)) {
      throw CheckpointError("truncated checkpoint: tensor " + e.name);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  TrainState s = load_checkpoint(path);
  if (!(s.config == expected)) {
    throw CheckpointError("checkpoint config " + to_json(s.config).dump() + " does not match " +
                          to_json(expected).dump());
  }
  return s;
}

}  // namespace epccg
