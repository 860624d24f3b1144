#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "epccg/error.hpp"
#include "epccg/transformer.hpp"

using namespace epccg;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_size = 8;
  c.ff_size = 12;
  c.vocab_size = 11;
  c.max_positions = 10;
  c.num_aspect_codes = 3;
  c.seed = 5;
  return c;
}

// Larger init so the check exercises non-trivial attention and GELU.
ModelParameters<double> noisy_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = ModelParameters<double>::initialize(c);
  Rng rng(seed);
  for (auto& [name, m] : p.tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] += 0.3 * rng.normal();
  }
  return p;
}

TrainingExample prefix_example(std::vector<int> ids, int prefix, std::vector<int> positions,
                               std::optional<int> code = std::nullopt) {
  TrainingExample ex;
  ex.targets = ids;
  ex.ids = ids;
  for (int p : positions) ex.ids[static_cast<std::size_t>(p)] = kMaskId;
  ex.aspect_code = code;
  ex.mask = build_prefix_mask(prefix, static_cast<int>(ids.size()));
  ex.positions = std::move(positions);
  return ex;
}

}  // namespace

TEST_CASE("prefix mask shape") {
  auto m = build_prefix_mask(3, 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      const bool want = (i < 3 && j < 3) || (i >= 3 && j <= i);
      CHECK(m.allowed(i, j) == want);
    }
  }
  CHECK_THROWS_AS(build_prefix_mask(0, 4), ArgumentError);
  CHECK_THROWS_AS(build_prefix_mask(5, 4), ArgumentError);
  CHECK_NOTHROW(build_prefix_mask(4, 4));
}

TEST_CASE("attention rows are distributions and respect the mask") {
  auto c = tiny_config();
  auto p = noisy_params(c, 3);
  std::vector<int> ids = {2, 6, 7, 4, 8, 9, 3};
  auto mask = build_prefix_mask(4, 7);
  ForwardTrace<double> trace;
  auto logits = forward<double>(ids, mask, p, c, std::nullopt, &trace);
  CHECK(logits.rows() == 7);
  CHECK(logits.cols() == c.vocab_size);
  REQUIRE(trace.attention.size() == 2);
  for (const auto& layer : trace.attention) {
    REQUIRE(layer.size() == 2);
    for (const auto& a : layer) {
      for (int i = 0; i < 7; ++i) {
        CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < 7; ++j) {
          if (!mask.allowed(i, j)) CHECK(a(i, j) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("source positions are unaffected by target tokens") {
  auto c = tiny_config();
  auto p = noisy_params(c, 4);
  std::vector<int> a = {2, 6, 7, 4, 8, 9, 3};
  std::vector<int> b = {2, 6, 7, 4, 10, 1, 5};
  auto mask = build_prefix_mask(4, 7);
  auto la = forward<double>(a, mask, p, c);
  auto lb = forward<double>(b, mask, p, c);
  CHECK((la.topRows(4) - lb.topRows(4)).cwiseAbs().maxCoeff() < 1e-12);
  // A target position sees only its left context.
  std::vector<int> d = {2, 6, 7, 4, 8, 9, 10};
  auto ld = forward<double>(d, mask, p, c);
  CHECK((la.topRows(6) - ld.topRows(6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((la.row(6) - ld.row(6)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("single layer forward matches a scalar reference") {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 1;
  c.hidden_size = 2;
  c.ff_size = 2;
  c.vocab_size = 6;
  c.max_positions = 4;
  auto p = ModelParameters<double>::zeros(c);
  Rng rng(11);
  for (auto& [name, m] : p.tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform() - 0.5;
  }
  std::vector<int> ids = {2, 5};
  AttentionMask mask(2);
  auto logits = forward<double>(ids, mask, p, c);

  const auto& L = p.layers[0];
  auto ln = [](double x0, double x1, const Matrix<double>& g, const Matrix<double>& b, double out[2]) {
    const double mean = (x0 + x1) / 2;
    const double var = ((x0 - mean) * (x0 - mean) + (x1 - mean) * (x1 - mean)) / 2;
    const double r = 1.0 / std::sqrt(var + 1e-5);
    out[0] = (x0 - mean) * r * g(0, 0) + b(0, 0);
    out[1] = (x1 - mean) * r * g(0, 1) + b(0, 1);
  };
  double x[2][2];
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) x[i][k] = p.token_embedding(ids[i], k) + p.position_embedding(i, k);
  }
  double a[2][2], q[2][2], kk[2][2], v[2][2];
  for (int i = 0; i < 2; ++i) {
    ln(x[i][0], x[i][1], L.ln1_gain, L.ln1_bias, a[i]);
    for (int k = 0; k < 2; ++k) {
      q[i][k] = L.bq(0, k) + a[i][0] * L.wq(0, k) + a[i][1] * L.wq(1, k);
      kk[i][k] = L.bk(0, k) + a[i][0] * L.wk(0, k) + a[i][1] * L.wk(1, k);
      v[i][k] = L.bv(0, k) + a[i][0] * L.wv(0, k) + a[i][1] * L.wv(1, k);
    }
  }
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) s[j] = (q[i][0] * kk[j][0] + q[i][1] * kk[j][1]) / std::sqrt(2.0);
    const double mx = std::max(s[0], s[1]);
    const double e0 = std::exp(s[0] - mx), e1 = std::exp(s[1] - mx);
    double ctx[2];
    for (int k = 0; k < 2; ++k) ctx[k] = (e0 * v[0][k] + e1 * v[1][k]) / (e0 + e1);
    double y[2];
    for (int k = 0; k < 2; ++k) y[k] = x[i][k] + L.bo(0, k) + ctx[0] * L.wo(0, k) + ctx[1] * L.wo(1, k);
    double b2[2];
    ln(y[0], y[1], L.ln2_gain, L.ln2_bias, b2);
    double g[2];
    for (int k = 0; k < 2; ++k) {
      const double u = L.b1(0, k) + b2[0] * L.w1(0, k) + b2[1] * L.w1(1, k);
      g[k] = 0.5 * u * (1 + std::erf(u / std::sqrt(2.0)));
    }
    double z[2];
    for (int k = 0; k < 2; ++k) z[k] = y[k] + L.b2(0, k) + g[0] * L.w2(0, k) + g[1] * L.w2(1, k);
    double h[2];
    ln(z[0], z[1], p.final_gain, p.final_bias, h);
    for (int t = 0; t < c.vocab_size; ++t) {
      const double want = p.output_bias(0, t) + h[0] * p.token_embedding(t, 0) + h[1] * p.token_embedding(t, 1);
      CHECK(logits(i, t) == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("mlm loss equals a naive cross entropy") {
  Matrix<double> logits(3, 4);
  logits << 0.1, 2.0, -1.0, 0.5, 3.0, 3.0, 3.0, 3.0, -2.0, 0.0, 1.0, 4.0;
  std::vector<int> targets = {1, 2, 3};
  std::vector<int> positions = {0, 2};
  double want = 0.0;
  for (int p : positions) {
    double z = 0.0;
    for (int k = 0; k < 4; ++k) z += std::exp(logits(p, k));
    want += -std::log(std::exp(logits(p, targets[static_cast<std::size_t>(p)])) / z);
  }
  want /= 2.0;
  CHECK(mlm_loss<double>(logits, targets, positions) == doctest::Approx(want).epsilon(1e-12));
  std::vector<int> all = {1};
  CHECK(mlm_loss<double>(logits, targets, all) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(mlm_loss<double>(logits, targets, std::vector<int>{}), ArgumentError);
}

TEST_CASE("analytic gradient agrees with finite differences") {
  auto c = tiny_config();
  auto p = noisy_params(c, 9);
  std::vector<TrainingExample> batch = {
      prefix_example({2, 6, 7, 4, 8, 9, 3}, 4, {4, 5}),
      prefix_example({5, 6, 4, 10, 3}, 3, {3, 4}, 2),
      prefix_example({2, 7, 7, 8, 3}, 5, {1, 3}),
  };
  batch[2].mask = AttentionMask(5);
  auto r = grad_check(p, c, batch, 1e-5, 400);
  MESSAGE("max relative error " << r.max_relative_error << " over " << r.coordinates);
  CHECK(r.coordinates >= 400);
  CHECK(r.roles.size() == p.tensors().size());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("aspect code replaces the first embedding") {
  auto c = tiny_config();
  auto p = noisy_params(c, 2);
  std::vector<int> a = {0, 6, 7};
  std::vector<int> b = {9, 6, 7};
  AttentionMask mask(3);
  auto la = forward<double>(a, mask, p, c, 1);
  auto lb = forward<double>(b, mask, p, c, 1);
  CHECK((la - lb).cwiseAbs().maxCoeff() < 1e-12);
  auto l2 = forward<double>(a, mask, p, c, 2);
  CHECK((la - l2).cwiseAbs().maxCoeff() > 1e-6);
  CHECK_THROWS_AS(forward<double>(a, mask, p, c, 3), RangeError);
}

TEST_CASE("input validation") {
  auto c = tiny_config();
  auto p = ModelParameters<float>::initialize(c);
  std::vector<int> ids = {2, 3};
  CHECK_THROWS_AS(forward<float>(ids, AttentionMask(3), p, c), ShapeError);
  std::vector<int> bad = {2, 99};
  CHECK_THROWS_AS(forward<float>(bad, AttentionMask(2), p, c), RangeError);
  std::vector<int> longer(11, 2);
  CHECK_THROWS_AS(forward<float>(longer, AttentionMask(11), p, c), ShapeError);
  ModelConfig broken = c;
  broken.hidden_size = 7;
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("training reduces loss on a memorisable batch") {
  auto c = tiny_config();
  c.hidden_size = 16;
  c.ff_size = 32;
  auto state = TrainState::fresh(c);
  std::vector<TrainingExample> batch = {prefix_example({2, 6, 7, 4, 8, 9, 3}, 4, {4, 5, 6}),
                                        prefix_example({2, 7, 6, 4, 9, 8, 3}, 4, {4, 5, 6})};
  const double first = train_step(state, batch, 1e-2);
  double last = first;
  for (int i = 0; i < 150; ++i) last = train_step(state, batch, 1e-2);
  CHECK(last < 0.2 * first);
  CHECK(state.step == 151);
}

TEST_CASE("non-finite parameters raise TrainingDivergedError") {
  auto c = tiny_config();
  auto state = TrainState::fresh(c);
  state.params.token_embedding(3, 0) = std::nanf("");
  std::vector<TrainingExample> batch = {prefix_example({2, 6, 7, 3}, 2, {2, 3})};
  CHECK_THROWS_AS(train_step(state, batch, 1e-3), TrainingDivergedError);
}

TEST_CASE("checkpoint round trip is exact") {
  auto c = tiny_config();
  c.dropout_prob = 0.1;
  auto state = TrainState::fresh(c);
  std::vector<TrainingExample> batch = {prefix_example({2, 6, 7, 4, 8, 3}, 3, {3, 4})};
  for (int i = 0; i < 3; ++i) train_step(state, batch, 1e-2);
  state.metadata = {{"pattern", "basic"}};
  const auto dir = std::filesystem::temp_directory_path() / "epccg_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  save_checkpoint(state, path);
  auto loaded = load_checkpoint(path, c);
  CHECK(loaded.step == state.step);
  CHECK(loaded.rng == state.rng);
  CHECK(loaded.metadata == state.metadata);
  auto a = state.params.tensors();
  auto b = loaded.params.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
  CHECK(*state.adam_v.tensors()[5].second == *loaded.adam_v.tensors()[5].second);

  // Continuing from the checkpoint matches continuing in memory.
  const double x = train_step(state, batch, 1e-2);
  const double y = train_step(loaded, batch, 1e-2);
  CHECK(x == y);
  CHECK(state.params.token_embedding == loaded.params.token_embedding);

  ModelConfig other = c;
  other.hidden_size = 12;
  CHECK_THROWS_AS(load_checkpoint(path, other), CheckpointError);

  // Truncation and corruption are rejected.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
    bytes[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}
