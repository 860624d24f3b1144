#include "epccg/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "epccg/error.hpp"

namespace epccg {

using nlohmann::json;

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || hidden_size < 1 || ff_size < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (hidden_size % num_heads != 0) throw ConfigError("hidden_size must be divisible by num_heads");
  if (vocab_size < kNumFixedSpecials) throw ConfigError("vocab_size is too small");
  if (max_positions < 2) throw ConfigError("max_positions must be >= 2");
  if (num_aspect_codes < 0) throw ConfigError("num_aspect_codes must be >= 0");
  if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw ConfigError("dropout_prob must be in [0,1)");
}

json to_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"hidden_size", c.hidden_size},
              {"ff_size", c.ff_size},
              {"vocab_size", c.vocab_size},
              {"max_positions", c.max_positions},
              {"num_aspect_codes", c.num_aspect_codes},
              {"dropout_prob", c.dropout_prob},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.ff_size = j.value("ff_size", c.ff_size);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.num_aspect_codes = j.value("num_aspect_codes", c.num_aspect_codes);
  c.dropout_prob = j.value("dropout_prob", c.dropout_prob);
  c.seed = j.value("seed", c.seed);
  return c;
}

AttentionMask build_prefix_mask(int prefix_len, int total_len) {
  if (prefix_len <= 0 || prefix_len > total_len) {
    throw ArgumentError("prefix mask needs 0 < prefix_len <= total_len (got " + std::to_string(prefix_len) +
                        ", " + std::to_string(total_len) + ")");
  }
  AttentionMask m(total_len);
  for (int i = 0; i < total_len; ++i) {
    for (int j = 0; j < total_len; ++j) {
      m.set(i, j, (i < prefix_len && j < prefix_len) || (i >= prefix_len && j <= i));
    }
  }
  return m;
}

// --- parameters ------------------------------------------------------------------

template <typename T>
ModelParameters<T> ModelParameters<T>::zeros(const ModelConfig& c) {
  c.validate();
  const Eigen::Index h = c.hidden_size, f = c.ff_size;
  ModelParameters<T> p;
  p.token_embedding = Matrix<T>::Zero(c.vocab_size, h);
  p.position_embedding = Matrix<T>::Zero(c.max_positions, h);
  p.aspect_embedding = Matrix<T>::Zero(c.num_aspect_codes, h);
  p.layers.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& l : p.layers) {
    l.ln1_gain = Matrix<T>::Zero(1, h);
    l.ln1_bias = Matrix<T>::Zero(1, h);
    l.wq = Matrix<T>::Zero(h, h);
    l.bq = Matrix<T>::Zero(1, h);
    l.wk = Matrix<T>::Zero(h, h);
    l.bk = Matrix<T>::Zero(1, h);
    l.wv = Matrix<T>::Zero(h, h);
    l.bv = Matrix<T>::Zero(1, h);
    l.wo = Matrix<T>::Zero(h, h);
    l.bo = Matrix<T>::Zero(1, h);
    l.ln2_gain = Matrix<T>::Zero(1, h);
    l.ln2_bias = Matrix<T>::Zero(1, h);
    l.w1 = Matrix<T>::Zero(h, f);
    l.b1 = Matrix<T>::Zero(1, f);
    l.w2 = Matrix<T>::Zero(f, h);
    l.b2 = Matrix<T>::Zero(1, h);
  }
  p.final_gain = Matrix<T>::Zero(1, h);
  p.final_bias = Matrix<T>::Zero(1, h);
  p.output_bias = Matrix<T>::Zero(1, c.vocab_size);
  return p;
}

template <typename T>
ModelParameters<T> ModelParameters<T>::initialize(const ModelConfig& c) {
  ModelParameters<T> p = zeros(c);
  Rng rng(c.seed);
  const double std_dev = 0.02;
  const double proj_std = std_dev / std::sqrt(2.0 * c.num_layers);
  auto fill = [&](Matrix<T>& m, double s) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * s);
  };
  fill(p.token_embedding, std_dev);
  fill(p.position_embedding, std_dev);
  fill(p.aspect_embedding, std_dev);
  for (auto& l : p.layers) {
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    fill(l.wq, std_dev);
    fill(l.wk, std_dev);
    fill(l.wv, std_dev);
    fill(l.wo, proj_std);
    fill(l.w1, std_dev);
    fill(l.w2, proj_std);
  }
  p.final_gain.setOnes();
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> ModelParameters<T>::tensors() {
  std::vector<std::pair<std::string, Matrix<T>*>> out = {
      {"token_embedding", &token_embedding},
      {"position_embedding", &position_embedding},
      {"aspect_embedding", &aspect_embedding},
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    for (auto [name, m] : std::initializer_list<std::pair<const char*, Matrix<T>*>>{
             {"ln1_gain", &l.ln1_gain}, {"ln1_bias", &l.ln1_bias}, {"wq", &l.wq},   {"bq", &l.bq},
             {"wk", &l.wk},             {"bk", &l.bk},             {"wv", &l.wv},   {"bv", &l.bv},
             {"wo", &l.wo},             {"bo", &l.bo},             {"ln2_gain", &l.ln2_gain},
             {"ln2_bias", &l.ln2_bias}, {"w1", &l.w1},             {"b1", &l.b1},   {"w2", &l.w2},
             {"b2", &l.b2}}) {
      out.emplace_back(p + name, m);
    }
  }
  out.emplace_back("final_gain", &final_gain);
  out.emplace_back("final_bias", &final_bias);
  out.emplace_back("output_bias", &output_bias);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Matrix<T>*>> ModelParameters<T>::tensors() const {
  std::vector<std::pair<std::string, const Matrix<T>*>> out;
  for (auto& [name, m] : const_cast<ModelParameters<T>*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

template <typename T>
bool ModelParameters<T>::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

template <typename T>
void ModelParameters<T>::set_zero() {
  for (auto& [name, m] : tensors()) m->setZero();
}

template <typename T>
template <typename U>
ModelParameters<U> ModelParameters<T>::cast() const {
  ModelParameters<U> out;
  out.token_embedding = token_embedding.template cast<U>();
  out.position_embedding = position_embedding.template cast<U>();
  out.aspect_embedding = aspect_embedding.template cast<U>();
  for (const auto& l : layers) {
    LayerParameters<U> o;
    o.ln1_gain = l.ln1_gain.template cast<U>();
    o.ln1_bias = l.ln1_bias.template cast<U>();
    o.wq = l.wq.template cast<U>();
    o.bq = l.bq.template cast<U>();
    o.wk = l.wk.template cast<U>();
    o.bk = l.bk.template cast<U>();
    o.wv = l.wv.template cast<U>();
    o.bv = l.bv.template cast<U>();
    o.wo = l.wo.template cast<U>();
    o.bo = l.bo.template cast<U>();
    o.ln2_gain = l.ln2_gain.template cast<U>();
    o.ln2_bias = l.ln2_bias.template cast<U>();
    o.w1 = l.w1.template cast<U>();
    o.b1 = l.b1.template cast<U>();
    o.w2 = l.w2.template cast<U>();
    o.b2 = l.b2.template cast<U>();
    out.layers.push_back(std::move(o));
  }
  out.final_gain = final_gain.template cast<U>();
  out.final_bias = final_bias.template cast<U>();
  out.output_bias = output_bias.template cast<U>();
  return out;
}

// --- forward / backward ------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGradCheckFloor = 1e-6;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, LayerNormCache<T>* cache) {
  const auto h = static_cast<T>(x.cols());
  ColVec<T> mean = x.rowwise().sum() / h;
  Matrix<T> centered = x.colwise() - mean;
  ColVec<T> var = centered.array().square().rowwise().sum() / h;
  ColVec<T> rstd = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
  Matrix<T> xhat = centered.array().colwise() * rstd.array();
  Matrix<T> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& c, const Matrix<T>& gain,
                              Matrix<T>& dgain, Matrix<T>& dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto h = static_cast<T>(dy.cols());
  ColVec<T> mean_d = dxhat.rowwise().sum() / h;
  ColVec<T> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum() / h;
  Matrix<T> dx = dxhat.colwise() - mean_d;
  dx -= (c.xhat.array().colwise() * mean_dx.array()).matrix();
  dx = dx.array().colwise() * c.rstd.array();
  return dx;
}

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename T>
struct LayerCache {
  LayerNormCache<T> ln1, ln2;
  Matrix<T> a, q, k, v, ctx, b, u, g;
  std::vector<Matrix<T>> probs;       // softmax output per head
  std::vector<Matrix<T>> probs_keep;  // scaled dropout keep masks (empty: none)
  Matrix<T> f_keep;
};

template <typename T>
struct Cache {
  std::vector<LayerCache<T>> layers;
  LayerNormCache<T> final_ln;
  Matrix<T> h;
};

template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix<T> m(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? T(0) : scale;
  return m;
}

void check_input(std::span<const int> ids, const AttentionMask& mask, const ModelConfig& c,
                 std::optional<int> aspect_code) {
  if (static_cast<int>(ids.size()) != mask.size()) {
    throw ShapeError("sequence length " + std::to_string(ids.size()) + " does not match mask size " +
                     std::to_string(mask.size()));
  }
  if (ids.empty()) throw ShapeError("empty input sequence");
  if (static_cast<int>(ids.size()) > c.max_positions) {
    throw ShapeError("sequence length " + std::to_string(ids.size()) + " exceeds max_positions " +
                     std::to_string(c.max_positions));
  }
  for (int id : ids) {
    if (id < 0 || id >= c.vocab_size) throw RangeError("token id " + std::to_string(id) + " out of range");
  }
  if (aspect_code && (*aspect_code < 0 || *aspect_code >= c.num_aspect_codes)) {
    throw RangeError("aspect code " + std::to_string(*aspect_code) + " out of range");
  }
}

// Returns the final normalized hidden states (n x hidden).
template <typename T>
Matrix<T> encode(const ModelParameters<T>& P, const ModelConfig& c, std::span<const int> ids,
                 std::optional<int> aspect_code, const AttentionMask& mask, Rng* rng, Cache<T>* cache,
                 ForwardTrace<T>* trace) {
  check_input(ids, mask, c, aspect_code);
  const auto n = static_cast<Eigen::Index>(ids.size());
  const int heads = c.num_heads;
  const Eigen::Index dk = c.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const bool drop = rng != nullptr && c.dropout_prob > 0.0;

  Matrix<T> additive(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      additive(i, j) = static_cast<T>(mask.value(static_cast<int>(i), static_cast<int>(j)));
    }
  }

  Matrix<T> x(n, c.hidden_size);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == 0 && aspect_code) {
      x.row(i) = P.aspect_embedding.row(*aspect_code);
    } else {
      x.row(i) = P.token_embedding.row(ids[static_cast<std::size_t>(i)]);
    }
    x.row(i) += P.position_embedding.row(i);
  }

  if (cache) cache->layers.resize(P.layers.size());
  if (trace) {
    trace->attention.assign(P.layers.size(), {});
    trace->attention_output.assign(P.layers.size(), {});
  }
  for (std::size_t li = 0; li < P.layers.size(); ++li) {
    const auto& L = P.layers[li];
    LayerCache<T> local;
    LayerCache<T>& lc = cache ? cache->layers[li] : local;

    lc.a = layer_norm(x, L.ln1_gain, L.ln1_bias, &lc.ln1);
    lc.q = (lc.a * L.wq).rowwise() + L.bq.row(0);
    lc.k = (lc.a * L.wk).rowwise() + L.bk.row(0);
    lc.v = (lc.a * L.wv).rowwise() + L.bv.row(0);
    lc.ctx.resize(n, c.hidden_size);
    lc.probs.resize(static_cast<std::size_t>(heads));
    lc.probs_keep.assign(drop ? static_cast<std::size_t>(heads) : 0, {});
    for (int hd = 0; hd < heads; ++hd) {
      const Eigen::Index off = hd * dk;
      Matrix<T> s = (lc.q.middleCols(off, dk) * lc.k.middleCols(off, dk).transpose()) * scale + additive;
      ColVec<T> mx = s.rowwise().maxCoeff();
      Matrix<T> e = (s.colwise() - mx).array().exp();
      ColVec<T> sum = e.rowwise().sum();
      Matrix<T> p = e.array().colwise() / sum.array();
      if (drop) {
        lc.probs_keep[static_cast<std::size_t>(hd)] = dropout_mask<T>(n, n, c.dropout_prob, *rng);
        lc.ctx.middleCols(off, dk) =
            (p.array() * lc.probs_keep[static_cast<std::size_t>(hd)].array()).matrix() * lc.v.middleCols(off, dk);
      } else {
        lc.ctx.middleCols(off, dk) = p * lc.v.middleCols(off, dk);
      }
      if (trace) trace->attention[li].push_back(p);
      lc.probs[static_cast<std::size_t>(hd)] = std::move(p);
    }
    Matrix<T> o = (lc.ctx * L.wo).rowwise() + L.bo.row(0);
    if (trace) trace->attention_output[li] = o;
    x += o;

    lc.b = layer_norm(x, L.ln2_gain, L.ln2_bias, &lc.ln2);
    lc.u = (lc.b * L.w1).rowwise() + L.b1.row(0);
    lc.g = lc.u.unaryExpr([](T z) { return gelu(z); });
    Matrix<T> f = (lc.g * L.w2).rowwise() + L.b2.row(0);
    if (drop) {
      lc.f_keep = dropout_mask<T>(n, c.hidden_size, c.dropout_prob, *rng);
      f = f.cwiseProduct(lc.f_keep);
    } else {
      lc.f_keep.resize(0, 0);
    }
    x += f;
  }
  LayerNormCache<T> local_final;
  Matrix<T> h = layer_norm(x, P.final_gain, P.final_bias, cache ? &cache->final_ln : &local_final);
  if (cache) cache->h = h;
  return h;
}

// Backpropagates dh (n x hidden, gradient w.r.t. final hidden states).
template <typename T>
void backward(const ModelParameters<T>& P, const ModelConfig& c, std::span<const int> ids,
              std::optional<int> aspect_code, const Cache<T>& cache, const Matrix<T>& dh, ModelParameters<T>& G) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  const int heads = c.num_heads;
  const Eigen::Index dk = c.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

  Matrix<T> dx = layer_norm_backward(dh, cache.final_ln, P.final_gain, G.final_gain, G.final_bias);
  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& L = P.layers[li];
    auto& GL = G.layers[li];
    const auto& lc = cache.layers[li];

    // feed-forward sublayer
    Matrix<T> df = lc.f_keep.size() ? Matrix<T>(dx.cwiseProduct(lc.f_keep)) : dx;
    GL.w2.noalias() += lc.g.transpose() * df;
    GL.b2 += df.colwise().sum();
    Matrix<T> dg = df * L.w2.transpose();
    Matrix<T> du = dg.array() * lc.u.unaryExpr([](T z) { return gelu_grad(z); }).array();
    GL.w1.noalias() += lc.b.transpose() * du;
    GL.b1 += du.colwise().sum();
    Matrix<T> db = du * L.w1.transpose();
    dx += layer_norm_backward(db, lc.ln2, L.ln2_gain, GL.ln2_gain, GL.ln2_bias);

    // attention sublayer
    const Matrix<T>& d_o = dx;
    GL.wo.noalias() += lc.ctx.transpose() * d_o;
    GL.bo += d_o.colwise().sum();
    Matrix<T> dctx = d_o * L.wo.transpose();
    Matrix<T> dq(n, c.hidden_size), dkm(n, c.hidden_size), dv(n, c.hidden_size);
    for (int hd = 0; hd < heads; ++hd) {
      const Eigen::Index off = hd * dk;
      const auto hu = static_cast<std::size_t>(hd);
      const Matrix<T>& p = lc.probs[hu];
      const bool dropped = !lc.probs_keep.empty();
      Matrix<T> p_eff = dropped ? Matrix<T>(p.cwiseProduct(lc.probs_keep[hu])) : p;
      Matrix<T> dctx_h = dctx.middleCols(off, dk);
      Matrix<T> dp = dctx_h * lc.v.middleCols(off, dk).transpose();
      if (dropped) dp = dp.cwiseProduct(lc.probs_keep[hu]);
      dv.middleCols(off, dk) = p_eff.transpose() * dctx_h;
      ColVec<T> rowdot = (dp.array() * p.array()).rowwise().sum();
      Matrix<T> ds = p.array() * (dp.colwise() - rowdot).array();
      ds *= scale;
      dq.middleCols(off, dk) = ds * lc.k.middleCols(off, dk);
      dkm.middleCols(off, dk) = ds.transpose() * lc.q.middleCols(off, dk);
    }
    GL.wq.noalias() += lc.a.transpose() * dq;
    GL.bq += dq.colwise().sum();
    GL.wk.noalias() += lc.a.transpose() * dkm;
    GL.bk += dkm.colwise().sum();
    GL.wv.noalias() += lc.a.transpose() * dv;
    GL.bv += dv.colwise().sum();
    Matrix<T> da = dq * L.wq.transpose() + dkm * L.wk.transpose() + dv * L.wv.transpose();
    dx += layer_norm_backward(da, lc.ln1, L.ln1_gain, GL.ln1_gain, GL.ln1_bias);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == 0 && aspect_code) {
      G.aspect_embedding.row(*aspect_code) += dx.row(i);
    } else {
      G.token_embedding.row(ids[static_cast<std::size_t>(i)]) += dx.row(i);
    }
    G.position_embedding.row(i) += dx.row(i);
  }
}

template <typename T>
Matrix<T> project(const ModelParameters<T>& P, const Matrix<T>& h) {
  return (h * P.token_embedding.transpose()).rowwise() + P.output_bias.row(0);
}

}  // namespace

template <typename T>
Matrix<T> forward(std::span<const int> ids, const AttentionMask& mask, const ModelParameters<T>& params,
                  const ModelConfig& config, std::optional<int> aspect_code, ForwardTrace<T>* trace) {
  Matrix<T> h = encode<T>(params, config, ids, aspect_code, mask, nullptr, nullptr, trace);
  return project(params, h);
}

template <typename T>
Matrix<T> forward_positions(std::span<const int> ids, const AttentionMask& mask, const ModelParameters<T>& params,
                            const ModelConfig& config, std::span<const int> positions,
                            std::optional<int> aspect_code) {
  Matrix<T> h = encode<T>(params, config, ids, aspect_code, mask, nullptr, nullptr, nullptr);
  Matrix<T> sel(static_cast<Eigen::Index>(positions.size()), h.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= h.rows()) throw ArgumentError("position out of range");
    sel.row(static_cast<Eigen::Index>(i)) = h.row(positions[i]);
  }
  return project(params, sel);
}

template <typename T>
double mlm_loss(const Matrix<T>& logits, std::span<const int> target_ids, std::span<const int> positions) {
  if (positions.empty()) throw ArgumentError("mlm_loss needs at least one predict position");
  double total = 0.0;
  for (int p : positions) {
    if (p < 0 || p >= logits.rows() || static_cast<std::size_t>(p) >= target_ids.size()) {
      throw ArgumentError("predict position " + std::to_string(p) + " outside the sequence");
    }
    const auto row = logits.row(p).template cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(target_ids[static_cast<std::size_t>(p)]);
  }
  return total / static_cast<double>(positions.size());
}

template <typename T>
double loss_and_gradient(const ModelParameters<T>& params, const ModelConfig& config, const TrainingExample& ex,
                         ModelParameters<T>* grads, double scale, Rng* dropout_rng) {
  if (ex.positions.empty()) throw ArgumentError("training example has no predict positions");
  if (ex.targets.size() != ex.ids.size()) throw ShapeError("targets and ids differ in length");
  Cache<T> cache;
  Matrix<T> h = encode<T>(params, config, ex.ids, ex.aspect_code, ex.mask, dropout_rng,
                          grads ? &cache : nullptr, nullptr);
  const auto np = static_cast<Eigen::Index>(ex.positions.size());
  Matrix<T> sel(np, h.cols());
  for (Eigen::Index i = 0; i < np; ++i) {
    const int p = ex.positions[static_cast<std::size_t>(i)];
    if (p < 0 || p >= h.rows()) throw ArgumentError("predict position out of range");
    sel.row(i) = h.row(p);
  }
  Matrix<T> logits = project(params, sel);
  double loss = 0.0;
  Matrix<T> dlogits(np, logits.cols());
  for (Eigen::Index i = 0; i < np; ++i) {
    const int target = ex.targets[static_cast<std::size_t>(ex.positions[static_cast<std::size_t>(i)])];
    const T mx = logits.row(i).maxCoeff();
    Eigen::Matrix<T, 1, Eigen::Dynamic> e = (logits.row(i).array() - mx).exp();
    const T sum = e.sum();
    loss += static_cast<double>(mx) + std::log(static_cast<double>(sum)) - static_cast<double>(logits(i, target));
    dlogits.row(i) = e / sum;
    dlogits(i, target) -= T(1);
  }
  loss /= static_cast<double>(np);
  if (!grads) return loss;

  dlogits *= static_cast<T>(scale / static_cast<double>(np));
  grads->token_embedding.noalias() += dlogits.transpose() * sel;
  grads->output_bias += dlogits.colwise().sum();
  Matrix<T> dsel = dlogits * params.token_embedding;
  Matrix<T> dh = Matrix<T>::Zero(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < np; ++i) dh.row(ex.positions[static_cast<std::size_t>(i)]) += dsel.row(i);
  backward<T>(params, config, ex.ids, ex.aspect_code, cache, dh, *grads);
  return loss;
}

// --- training ------------------------------------------------------------------------

TrainState TrainState::fresh(const ModelConfig& config) {
  TrainState s;
  s.config = config;
  s.params = ModelParameters<float>::initialize(config);
  s.adam_m = ModelParameters<float>::zeros(config);
  s.adam_v = ModelParameters<float>::zeros(config);
  s.step = 0;
  s.rng = Rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);
  return s;
}

double train_step(TrainState& state, std::span<const TrainingExample> batch, double lr, const AdamConfig& adam) {
  if (batch.empty()) throw ArgumentError("train_step needs a non-empty batch");
  ModelParameters<float> grads = ModelParameters<float>::zeros(state.config);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    loss += loss_and_gradient<float>(state.params, state.config, ex, &grads, scale, &state.rng);
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw TrainingDivergedError("non-finite loss at step " + std::to_string(state.step));

  ++state.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<float>(adam.beta1);
  const auto b2 = static_cast<float>(adam.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(adam.epsilon);
  auto p = state.params.tensors();
  auto m = state.adam_m.tensors();
  auto v = state.adam_v.tensors();
  auto g = grads.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto& pm = *p[t].second;
    auto& mm = *m[t].second;
    auto& vm = *v[t].second;
    const auto& gm = *g[t].second;
    mm = b1 * mm + (1.0f - b1) * gm;
    vm = b2 * vm + (1.0f - b2) * gm.cwiseProduct(gm);
    pm.array() -= step_size * mm.array() / ((vm.array() * inv_bc2).sqrt() + eps);
  }
  if (!state.params.all_finite()) {
    throw TrainingDivergedError("non-finite parameters after step " + std::to_string(state.step));
  }
  return loss;
}

GradCheckResult grad_check(const ModelParameters<double>& params, const ModelConfig& config,
                           std::span<const TrainingExample> batch, double epsilon, int num_coordinates,
                           std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("grad_check needs a non-empty batch");
  ModelConfig cfg = config;
  cfg.dropout_prob = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  auto mean_loss = [&](const ModelParameters<double>& p) {
    double l = 0.0;
    for (const auto& ex : batch) l += loss_and_gradient<double>(p, cfg, ex, nullptr, 1.0, nullptr);
    return l * scale;
  };
  ModelParameters<double> grads = ModelParameters<double>::zeros(cfg);
  for (const auto& ex : batch) loss_and_gradient<double>(params, cfg, ex, &grads, scale, nullptr);

  ModelParameters<double> work = params;
  auto wt = work.tensors();
  auto gt = grads.tensors();
  std::size_t roles = 0;
  for (const auto& [name, m] : wt) roles += m->size() > 0 ? 1 : 0;

  // Per-tensor quota first; tensors smaller than the quota hand their
  // leftover to the remaining ones so the total is always met.
  std::vector<std::size_t> quota(wt.size(), 0);
  std::size_t need = static_cast<std::size_t>(std::max(1, num_coordinates));
  std::size_t open = roles;
  std::vector<std::size_t> order(wt.size());
  for (std::size_t t = 0; t < wt.size(); ++t) order[t] = t;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return wt[a].second->size() < wt[b].second->size(); });
  for (std::size_t t : order) {
    const auto size = static_cast<std::size_t>(wt[t].second->size());
    if (size == 0) continue;
    const std::size_t share = (need + open - 1) / open;
    quota[t] = std::min(share, size);
    need -= std::min(need, quota[t]);
    --open;
  }

  GradCheckResult out;
  Rng rng(seed);
  for (std::size_t t = 0; t < wt.size(); ++t) {
    auto& m = *wt[t].second;
    if (quota[t] == 0) continue;
    out.roles.push_back(wt[t].first);
    std::vector<Eigen::Index> coords;
    std::set<Eigen::Index> used;
    const auto total = static_cast<std::size_t>(m.size());
    while (coords.size() < quota[t]) {
      const auto c = static_cast<Eigen::Index>(rng.below(total));
      if (used.insert(c).second) coords.push_back(c);
    }
    for (Eigen::Index c : coords) {
      const double orig = m.data()[c];
      m.data()[c] = orig + epsilon;
      const double up = mean_loss(work);
      m.data()[c] = orig - epsilon;
      const double down = mean_loss(work);
      m.data()[c] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = gt[t].second->data()[c];
      // Gradients that are exactly zero (e.g. attention key biases, which
      // softmax cancels) leave only finite-difference roundoff; the floor
      // keeps that noise from reading as a relative error.
      const double denom = std::max({std::abs(numeric), std::abs(analytic), kGradCheckFloor});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic) / denom);
      ++out.coordinates;
    }
  }
  return out;
}

template struct ModelParameters<float>;
template struct ModelParameters<double>;
template ModelParameters<double> ModelParameters<float>::cast<double>() const;
template ModelParameters<float> ModelParameters<double>::cast<float>() const;
template ModelParameters<float> ModelParameters<float>::cast<float>() const;

template Matrix<float> forward<float>(std::span<const int>, const AttentionMask&, const ModelParameters<float>&,
                                      const ModelConfig&, std::optional<int>, ForwardTrace<float>*);
template Matrix<double> forward<double>(std::span<const int>, const AttentionMask&, const ModelParameters<double>&,
                                        const ModelConfig&, std::optional<int>, ForwardTrace<double>*);
template Matrix<float> forward_positions<float>(std::span<const int>, const AttentionMask&,
                                                const ModelParameters<float>&, const ModelConfig&,
                                                std::span<const int>, std::optional<int>);
template Matrix<double> forward_positions<double>(std::span<const int>, const AttentionMask&,
                                                  const ModelParameters<double>&, const ModelConfig&,
                                                  std::span<const int>, std::optional<int>);
template double mlm_loss<float>(const Matrix<float>&, std::span<const int>, std::span<const int>);
template double mlm_loss<double>(const Matrix<double>&, std::span<const int>, std::span<const int>);
template double loss_and_gradient<float>(const ModelParameters<float>&, const ModelConfig&, const TrainingExample&,
                                         ModelParameters<float>*, double, Rng*);
template double loss_and_gradient<double>(const ModelParameters<double>&, const ModelConfig&,
                                          const TrainingExample&, ModelParameters<double>*, double, Rng*);

}  // namespace epccg
