#pragma once

// Bi-directional transformer over flattened basket sequences with shared
// basket-position embeddings and a tied-embedding prediction head.
//
// Layout: every sequence is an n x d matrix whose rows are positions.
// Each block is post-norm:
//   x1  = LayerNorm(x + Dropout(MultiHeadAttention(x)))
//   out = LayerNorm(x1 + Dropout(W2 * gelu(W1 * x1 + b1) + b2))
// Attention is unmasked in time; only keys at padding positions are dropped.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nnbr/augmentation.hpp"
#include "nnbr/core.hpp"

namespace nnbr {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t max_positions = 51;  // largest basket index the model can embed
  std::size_t max_len = 100;       // items per input sequence
  double dropout = 0.1;

  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t ffn_dim() const { return 4 * embed_dim; }

  void validate() const {
    if (vocab_size == 0) throw ConfigError("vocab_size must be >= 1");
    if (embed_dim == 0 || heads == 0) throw ConfigError("embed_dim and heads must be >= 1");
    if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (max_positions < 2) throw ConfigError("max_positions must be >= 2");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParameters {
  Matrix wq, wk, wv, wo;
  RowVector bq, bk, bv, bo;
  RowVector ln1_gain, ln1_bias;
  Matrix w1, w2;
  RowVector b1, b2;
  RowVector ln2_gain, ln2_bias;
};

/// Also used as the gradient container (same shapes).
struct Parameters {
  Matrix item_embeddings;      // (m + 2) x d: pad, items 1..m, mask token
  Matrix position_embeddings;  // (max_positions + 1) x d: row 0 is padding
  std::vector<LayerParameters> layers;
  RowVector output_bias;  // m
};

/// Non-owning view of one parameter tensor.
struct TensorView {
  std::string name;
  double* data;
  std::size_t size;
  std::size_t rows;
  std::size_t cols;
};

namespace detail {

template <typename T>
void push_view(std::vector<TensorView>& out, std::string name, T& t) {
  out.push_back({std::move(name), t.data(), static_cast<std::size_t>(t.size()), static_cast<std::size_t>(t.rows()),
                 static_cast<std::size_t>(t.cols())});
}

}  // namespace detail

/// All tensors in a fixed order; parameter groups are named by the prefix
/// before the last '.'.
inline std::vector<TensorView> tensor_views(Parameters& p) {
  std::vector<TensorView> v;
  detail::push_view(v, "item_embeddings", p.item_embeddings);
  detail::push_view(v, "position_embeddings", p.position_embeddings);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    detail::push_view(v, pre + "wq", L.wq);
    detail::push_view(v, pre + "bq", L.bq);
    detail::push_view(v, pre + "wk", L.wk);
    detail::push_view(v, pre + "bk", L.bk);
    detail::push_view(v, pre + "wv", L.wv);
    detail::push_view(v, pre + "bv", L.bv);
    detail::push_view(v, pre + "wo", L.wo);
    detail::push_view(v, pre + "bo", L.bo);
    detail::push_view(v, pre + "ln1_gain", L.ln1_gain);
    detail::push_view(v, pre + "ln1_bias", L.ln1_bias);
    detail::push_view(v, pre + "w1", L.w1);
    detail::push_view(v, pre + "b1", L.b1);
    detail::push_view(v, pre + "w2", L.w2);
    detail::push_view(v, pre + "b2", L.b2);
    detail::push_view(v, pre + "ln2_gain", L.ln2_gain);
    detail::push_view(v, pre + "ln2_bias", L.ln2_bias);
  }
  detail::push_view(v, "output_bias", p.output_bias);
  return v;
}

inline std::vector<TensorView> tensor_views(const Parameters& p) { return tensor_views(const_cast<Parameters&>(p)); }

/// Closed form: (m+2)d + (P+1)d + L(12d^2 + 13d) + m, with P = max_positions.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, m = c.vocab_size;
  return (m + 2) * d + (c.max_positions + 1) * d + c.layers * (12 * d * d + 13 * d) + m;
}

inline Parameters zero_parameters(const ModelConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.embed_dim);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim());
  Parameters p;
  p.item_embeddings = Matrix::Zero(static_cast<Eigen::Index>(c.vocab_size) + 2, d);
  p.position_embeddings = Matrix::Zero(static_cast<Eigen::Index>(c.max_positions) + 1, d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    LayerParameters L;
    L.wq = L.wk = L.wv = L.wo = Matrix::Zero(d, d);
    L.bq = L.bk = L.bv = L.bo = RowVector::Zero(d);
    L.ln1_gain = L.ln1_bias = L.ln2_gain = L.ln2_bias = RowVector::Zero(d);
    L.w1 = Matrix::Zero(d, f);
    L.b1 = RowVector::Zero(f);
    L.w2 = Matrix::Zero(f, d);
    L.b2 = RowVector::Zero(d);
    p.layers.push_back(std::move(L));
  }
  p.output_bias = RowVector::Zero(static_cast<Eigen::Index>(c.vocab_size));
  return p;
}

inline void set_zero(Parameters& p) {
  for (auto& t : tensor_views(p)) std::fill(t.data, t.data + t.size, 0.0);
}

inline constexpr double kInitStd = 0.02;

/// Truncated normal (std 0.02, cut at two standard deviations) for embeddings
/// and projections, zeros for biases, ones for layer-norm gains.
inline Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters p = zero_parameters(config);
  Rng rng(derive_seed(seed, 0x1417));
  std::normal_distribution<double> normal(0.0, kInitStd);
  auto fill = [&](auto& t) {
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      double v;
      do v = normal(rng);
      while (std::abs(v) > 2.0 * kInitStd);
      t.data()[k] = v;
    }
  };
  fill(p.item_embeddings);
  fill(p.position_embeddings);
  for (auto& L : p.layers) {
    fill(L.wq);
    fill(L.wk);
    fill(L.wv);
    fill(L.wo);
    fill(L.w1);
    fill(L.w2);
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { train, eval };

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

struct LayerCache {
  Matrix input, q, k, v, context, attn_drop, x1, ffn_pre, ffn_act, ffn_drop;
  std::vector<Matrix> attention;  // per head, n x n
  LayerNormCache ln1, ln2;
};

struct ForwardCache {
  std::vector<ItemId> ids;
  std::vector<int> baskets;
  std::vector<char> key_mask;
  Matrix embed_drop;
  std::vector<LayerCache> layers;
  Matrix output;
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache& cache) {
  const auto n = x.rows();
  const double d = static_cast<double>(x.cols());
  cache.xhat.resize(n, x.cols());
  cache.inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / d;
    cache.inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.row(r) = centered * cache.inv_std(r);
  }
  Matrix y = cache.xhat.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const RowVector& gain, const LayerNormCache& cache, RowVector& dgain,
                                  RowVector& dbias) {
  const double d = static_cast<double>(dy.cols());
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / d;
    const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Mode mode, Rng* rng) {
  if (mode == Mode::eval || rate <= 0.0 || rng == nullptr) return Matrix::Ones(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix m(rows, cols);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = keep(*rng) ? scale : 0.0;
  return m;
}

inline void check_finite(const Matrix& m, int layer, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite activations in ") + where + " of layer " + std::to_string(layer), layer);
}

inline Matrix layer_forward(const Matrix& x, const LayerParameters& L, const ModelConfig& c, const std::vector<char>& key_mask,
                            Mode mode, Rng* rng, LayerCache& cache) {
  const auto n = x.rows();
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.input = x;
  cache.q = (x * L.wq).rowwise() + L.bq;
  cache.k = (x * L.wk).rowwise() + L.bk;
  cache.v = (x * L.wv).rowwise() + L.bv;
  cache.context = Matrix::Zero(n, x.cols());
  cache.attention.assign(c.heads, Matrix());
  const bool any_key = std::find(key_mask.begin(), key_mask.end(), 1) != key_mask.end();
  for (std::size_t h = 0; h < c.heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    Matrix s = cache.q.middleCols(off, dh) * cache.k.middleCols(off, dh).transpose() * scale;
    Matrix& a = cache.attention[h];
    a = Matrix::Zero(n, n);
    if (any_key) {
      for (Eigen::Index r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j)
          if (key_mask[static_cast<std::size_t>(j)]) mx = std::max(mx, s(r, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!key_mask[static_cast<std::size_t>(j)]) continue;
          a(r, j) = std::exp(s(r, j) - mx);
          z += a(r, j);
        }
        a.row(r) /= z;
      }
    }
    cache.context.middleCols(off, dh).noalias() = a * cache.v.middleCols(off, dh);
  }
  Matrix attn_out = (cache.context * L.wo).rowwise() + L.bo;
  cache.attn_drop = dropout_mask(n, x.cols(), c.dropout, mode, rng);
  cache.x1 = layer_norm(x + attn_out.cwiseProduct(cache.attn_drop), L.ln1_gain, L.ln1_bias, cache.ln1);
  cache.ffn_pre = (cache.x1 * L.w1).rowwise() + L.b1;
  cache.ffn_act = cache.ffn_pre.unaryExpr([](double v) { return gelu(v); });
  Matrix ffn_out = (cache.ffn_act * L.w2).rowwise() + L.b2;
  cache.ffn_drop = dropout_mask(n, x.cols(), c.dropout, mode, rng);
  return layer_norm(cache.x1 + ffn_out.cwiseProduct(cache.ffn_drop), L.ln2_gain, L.ln2_bias, cache.ln2);
}

inline Matrix layer_backward(const Matrix& dout, const LayerParameters& L, const ModelConfig& c, const LayerCache& cache,
                             LayerParameters& g) {
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dr2 = layer_norm_backward(dout, L.ln2_gain, cache.ln2, g.ln2_gain, g.ln2_bias);
  Matrix dffn_out = dr2.cwiseProduct(cache.ffn_drop);
  g.w2.noalias() += cache.ffn_act.transpose() * dffn_out;
  g.b2 += dffn_out.colwise().sum();
  Matrix dpre = (dffn_out * L.w2.transpose()).cwiseProduct(cache.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
  g.w1.noalias() += cache.x1.transpose() * dpre;
  g.b1 += dpre.colwise().sum();
  Matrix dx1 = dr2;
  dx1.noalias() += dpre * L.w1.transpose();

  Matrix dr1 = layer_norm_backward(dx1, L.ln1_gain, cache.ln1, g.ln1_gain, g.ln1_bias);
  Matrix dattn = dr1.cwiseProduct(cache.attn_drop);
  g.wo.noalias() += cache.context.transpose() * dattn;
  g.bo += dattn.colwise().sum();
  Matrix dctx = dattn * L.wo.transpose();

  Matrix dq = Matrix::Zero(cache.q.rows(), cache.q.cols());
  Matrix dk = Matrix::Zero(cache.k.rows(), cache.k.cols());
  Matrix dv = Matrix::Zero(cache.v.rows(), cache.v.cols());
  for (std::size_t h = 0; h < c.heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    const Matrix& a = cache.attention[h];
    Matrix da = dctx.middleCols(off, dh) * cache.v.middleCols(off, dh).transpose();
    dv.middleCols(off, dh).noalias() += a.transpose() * dctx.middleCols(off, dh);
    Vector row_dot = (da.array() * a.array()).rowwise().sum();
    Matrix ds = a.array() * (da.colwise() - row_dot).array();
    dq.middleCols(off, dh).noalias() += ds * cache.k.middleCols(off, dh) * scale;
    dk.middleCols(off, dh).noalias() += ds.transpose() * cache.q.middleCols(off, dh) * scale;
  }
  const Matrix& x = cache.input;
  g.wq.noalias() += x.transpose() * dq;
  g.wk.noalias() += x.transpose() * dk;
  g.wv.noalias() += x.transpose() * dv;
  g.bq += dq.colwise().sum();
  g.bk += dk.colwise().sum();
  g.bv += dv.colwise().sum();
  Matrix dx = dr1;
  dx.noalias() += dq * L.wq.transpose();
  dx.noalias() += dk * L.wk.transpose();
  dx.noalias() += dv * L.wv.transpose();
  return dx;
}

}  // namespace detail

/// Row r = E[input_ids[r]] + P[basket_indices[r]]; padding rows become
/// E[0] + P[0]. Basket indices beyond max_positions are a configuration error.
inline Matrix embed(const MaskedSample& sample, const Parameters& params, const ModelConfig& config) {
  const auto n = static_cast<Eigen::Index>(sample.size());
  Matrix x(n, params.item_embeddings.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto item = sample.input_ids[static_cast<std::size_t>(r)];
    const auto basket = sample.basket_indices[static_cast<std::size_t>(r)];
    if (item < 0 || item >= params.item_embeddings.rows()) throw ConfigError("item id " + std::to_string(item) + " outside the embedding table");
    if (basket < 0 || static_cast<std::size_t>(basket) > config.max_positions) {
      throw ConfigError("basket index " + std::to_string(basket) + " exceeds max_positions " + std::to_string(config.max_positions));
    }
    x.row(r) = params.item_embeddings.row(item) + params.position_embeddings.row(basket);
  }
  return x;
}

/// Runs the encoder over an embedded sequence. key_mask marks real positions;
/// padding positions are never attended to. The cache is filled for backward.
inline Matrix encode(const Matrix& embedded, const std::vector<char>& key_mask, const Parameters& params, const ModelConfig& config,
                     Mode mode = Mode::eval, Rng* rng = nullptr, ForwardCache* cache = nullptr) {
  if (embedded.cols() != static_cast<Eigen::Index>(config.embed_dim) || static_cast<std::size_t>(embedded.rows()) != key_mask.size()) {
    throw ConfigError("encoder input shape does not match the configuration");
  }
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.key_mask = key_mask;
  fc.embed_drop = detail::dropout_mask(embedded.rows(), embedded.cols(), config.dropout, mode, rng);
  Matrix x = embedded.cwiseProduct(fc.embed_drop);
  fc.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    x = detail::layer_forward(x, params.layers[l], config, key_mask, mode, rng, fc.layers[l]);
    detail::check_finite(x, static_cast<int>(l), "encoder output");
  }
  fc.output = x;
  return x;
}

/// Drops the leading padding of a sample. Because padding keys are masked,
/// encoding the trimmed sample gives the same rows for real positions.
inline MaskedSample trim_padding(const MaskedSample& sample) {
  std::size_t start = 0;
  while (start < sample.size() && !sample.pad_mask[start]) ++start;
  if (start == 0) return sample;
  MaskedSample out;
  out.input_ids.assign(sample.input_ids.begin() + static_cast<std::ptrdiff_t>(start), sample.input_ids.end());
  out.basket_indices.assign(sample.basket_indices.begin() + static_cast<std::ptrdiff_t>(start), sample.basket_indices.end());
  out.pad_mask.assign(sample.pad_mask.begin() + static_cast<std::ptrdiff_t>(start), sample.pad_mask.end());
  for (const auto& l : sample.labels) out.labels.push_back({l.position - start, l.item});
  return out;
}

/// Embeds and encodes a (trimmed) sample, recording what backward needs.
inline Matrix forward(const MaskedSample& sample, const Parameters& params, const ModelConfig& config, Mode mode, Rng* rng,
                      ForwardCache* cache = nullptr) {
  Matrix x = embed(sample, params, config);
  if (cache) {
    cache->ids = sample.input_ids;
    cache->baskets = sample.basket_indices;
  }
  return encode(x, sample.pad_mask, params, config, mode, rng, cache);
}

/// Accumulates parameter gradients for d(loss)/d(encoder output).
inline void backward(const Matrix& doutput, const ForwardCache& cache, const Parameters& params, const ModelConfig& config,
                     Parameters& grad) {
  Matrix dx = doutput;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    dx = detail::layer_backward(dx, params.layers[l], config, cache.layers[l], grad.layers[l]);
  }
  dx = dx.cwiseProduct(cache.embed_drop);
  for (Eigen::Index r = 0; r < dx.rows(); ++r) {
    grad.item_embeddings.row(cache.ids[static_cast<std::size_t>(r)]) += dx.row(r);
    grad.position_embeddings.row(cache.baskets[static_cast<std::size_t>(r)]) += dx.row(r);
  }
}

/// Logits over real items only: h * E[1..m]^T + b.
inline RowVector item_logits(const RowVector& h, const Parameters& params) {
  const auto m = params.output_bias.size();
  return h * params.item_embeddings.middleRows(1, m).transpose() + params.output_bias;
}

inline RowVector log_softmax(const RowVector& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

/// Log-probabilities over items 1..m (entry k - 1 is item k).
inline RowVector predict_scores(const RowVector& h, const Parameters& params) {
  if (!h.allFinite()) throw NumericError("non-finite representation passed to the prediction head", -1);
  return log_softmax(item_logits(h, params));
}

/// Summed negative log-likelihood of the labels of one sample. When grad is
/// given, gradients of the summed loss are accumulated into it.
inline double sample_nll(const MaskedSample& sample, const Parameters& params, const ModelConfig& config, Mode mode, Rng* rng,
                         Parameters* grad) {
  if (sample.labels.empty()) throw Error("sample has no labels");
  const MaskedSample s = trim_padding(sample);
  ForwardCache cache;
  Matrix out = forward(s, params, config, mode, rng, grad ? &cache : nullptr);
  const auto k = static_cast<Eigen::Index>(s.labels.size());
  const auto m = params.output_bias.size();
  Matrix hm(k, out.cols());
  for (Eigen::Index r = 0; r < k; ++r) hm.row(r) = out.row(static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(r)].position));
  const auto items = params.item_embeddings.middleRows(1, m);
  Matrix logits = hm * items.transpose();
  logits.rowwise() += params.output_bias;
  double loss = 0.0;
  Matrix dlogits(k, m);
  for (Eigen::Index r = 0; r < k; ++r) {
    const double mx = logits.row(r).maxCoeff();
    RowVector e = (logits.row(r).array() - mx).exp();
    const double z = e.sum();
    const auto target = static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(r)].item) - 1;
    loss += -(logits(r, target) - mx - std::log(z));
    dlogits.row(r) = e / z;
    dlogits(r, target) -= 1.0;
  }
  if (grad) {
    grad->item_embeddings.middleRows(1, m).noalias() += dlogits.transpose() * hm;
    grad->output_bias += dlogits.colwise().sum();
    Matrix dhm = dlogits * items;
    Matrix dout = Matrix::Zero(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < k; ++r) dout.row(static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(r)].position)) += dhm.row(r);
    backward(dout, cache, params, config, *grad);
  }
  return loss;
}

inline constexpr double kExcluded = -std::numeric_limits<double>::infinity();

/// Sets the scores of repeat items to -inf.
inline RowVector restrict_to_novel(RowVector scores, const std::vector<ItemId>& repeat_items) {
  for (ItemId i : repeat_items) {
    if (i < 1 || i > scores.size()) throw Error("repeat item " + std::to_string(i) + " outside the vocabulary");
    scores(i - 1) = kExcluded;
  }
  return scores;
}

/// Highest-scoring items, ties broken by ascending id. Items with non-finite
/// scores are never returned, so the list can be shorter than k.
inline std::vector<ItemId> topk(const RowVector& scores, std::size_t k) {
  if (k == 0) throw Error("K must be >= 1");
  std::vector<ItemId> ids;
  for (Eigen::Index j = 0; j < scores.size(); ++j)
    if (std::isfinite(scores(j))) ids.push_back(static_cast<ItemId>(j + 1));
  auto better = [&](ItemId a, ItemId b) {
    const double sa = scores(a - 1), sb = scores(b - 1);
    return sa != sb ? sa > sb : a < b;
  };
  const std::size_t take = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), better);
  ids.resize(take);
  return ids;
}

/// Scores the next basket of a history: append the prediction slot, encode in
/// eval mode and read the log-probabilities at the slot.
inline RowVector score_next_basket(const std::vector<Basket>& history, const Parameters& params, const ModelConfig& config) {
  MaskedSample s = trim_padding(append_prediction_slot(flatten(history), config.max_len, mask_token(config.vocab_size)));
  Matrix out = forward(s, params, config, Mode::eval, nullptr);
  return predict_scores(out.row(out.rows() - 1), params);
}

}  // namespace nnbr
