#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "epccg/random.hpp"
#include "epccg/tokenizer.hpp"
#include "json.hpp"

namespace epccg {

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 4;
  int hidden_size = 64;
  int ff_size = 256;
  int vocab_size = 0;
  int max_positions = 64;
  int num_aspect_codes = 0;  // rows of the discrete-code embedding table
  double dropout_prob = 0.0;
  std::uint64_t seed = 1;

  int head_dim() const { return hidden_size / num_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive attention mask: 0 where attending is allowed, kMaskedScore
// otherwise.
inline constexpr double kMaskedScore = -1e9;

class AttentionMask {
 public:
  AttentionMask() = default;
  // Fully bidirectional n x n mask.
  explicit AttentionMask(int n) : n_(n), allowed_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 1) {}

  int size() const { return n_; }
  bool allowed(int i, int j) const { return allowed_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] != 0; }
  double value(int i, int j) const { return allowed(i, j) ? 0.0 : kMaskedScore; }
  void set(int i, int j, bool allow) {
    allowed_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] = allow ? 1 : 0;
  }

 private:
  int n_ = 0;
  std::vector<std::uint8_t> allowed_;
};

// Source positions [0, prefix_len) attend to each other; target positions
// attend to everything at or left of themselves.
AttentionMask build_prefix_mask(int prefix_len, int total_len);

template <typename T>
struct LayerParameters {
  Matrix<T> ln1_gain, ln1_bias;
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<T> ln2_gain, ln2_bias;
  Matrix<T> w1, b1, w2, b2;
};

// Pre-LN transformer with learned positions and tied input/output
// embeddings. Bias and gain vectors are stored as 1 x n matrices.
template <typename T>
struct ModelParameters {
  Matrix<T> token_embedding;     // vocab x hidden
  Matrix<T> position_embedding;  // positions x hidden
  Matrix<T> aspect_embedding;    // aspect codes x hidden
  std::vector<LayerParameters<T>> layers;
  Matrix<T> final_gain, final_bias;
  Matrix<T> output_bias;  // 1 x vocab

  static ModelParameters zeros(const ModelConfig& config);
  static ModelParameters initialize(const ModelConfig& config);

  // Every tensor with a stable name, in checkpoint order.
  std::vector<std::pair<std::string, Matrix<T>*>> tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> tensors() const;

  bool all_finite() const;
  void set_zero();

  template <typename U>
  ModelParameters<U> cast() const;
};

// One sequence with its prediction targets. `targets` holds the original
// ids for the whole sequence; loss is taken at `positions` only.
struct TrainingExample {
  TokenSeq ids;
  std::optional<int> aspect_code;  // replaces the embedding at position 0
  AttentionMask mask;
  TokenSeq targets;
  std::vector<int> positions;
};

template <typename T>
struct ForwardTrace {
  // attention[layer][head] is n x n, rows are softmax distributions.
  std::vector<std::vector<Matrix<T>>> attention;
  // Output of each attention sublayer (after the output projection).
  std::vector<Matrix<T>> attention_output;
};

// Logits for every position (n x vocab). Dropout is never applied here.
template <typename T>
Matrix<T> forward(std::span<const int> ids, const AttentionMask& mask, const ModelParameters<T>& params,
                  const ModelConfig& config, std::optional<int> aspect_code = std::nullopt,
                  ForwardTrace<T>* trace = nullptr);

// Logits only for the requested positions (rows follow `positions`).
template <typename T>
Matrix<T> forward_positions(std::span<const int> ids, const AttentionMask& mask, const ModelParameters<T>& params,
                            const ModelConfig& config, std::span<const int> positions,
                            std::optional<int> aspect_code = std::nullopt);

// Mean cross entropy over `positions`; `logits` rows index sequence
// positions. Throws ArgumentError for an empty position set.
template <typename T>
double mlm_loss(const Matrix<T>& logits, std::span<const int> target_ids, std::span<const int> positions);

// Loss of one example; when `grads` is given, adds scale * dLoss/dParams.
// Dropout is active when `dropout_rng` is non-null and the config rate > 0.
template <typename T>
double loss_and_gradient(const ModelParameters<T>& params, const ModelConfig& config, const TrainingExample& ex,
                         ModelParameters<T>* grads, double scale, Rng* dropout_rng);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainState {
  ModelConfig config;
  ModelParameters<float> params;
  ModelParameters<float> adam_m, adam_v;
  std::int64_t step = 0;
  Rng rng;
  nlohmann::json metadata = nlohmann::json::object();

  static TrainState fresh(const ModelConfig& config);
};

// One Adam update on the mean loss of `batch`. Returns that loss.
double train_step(TrainState& state, std::span<const TrainingExample> batch, double lr,
                  const AdamConfig& adam = {});

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<std::string> roles;  // tensors that were sampled
};

// Central finite differences against the analytic gradient of the mean
// batch loss, sampling at least `num_coordinates` coordinates spread over
// every tensor.
GradCheckResult grad_check(const ModelParameters<double>& params, const ModelConfig& config,
                           std::span<const TrainingExample> batch, double epsilon, int num_coordinates = 240,
                           std::uint64_t seed = 7);

// Checkpoint: "EPCK", u32 version, u64 header length, JSON header, then
// little-endian float32 tensors in header order.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
// Also rejects a header whose config disagrees with `expected`.
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace epccg
