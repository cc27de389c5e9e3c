#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pommix/param_store.hpp"
#include "pommix/tensor.hpp"

namespace pommix::model {

namespace ad = pommix::ad;

enum class AttentionKind { softmax, sigmoidal };
enum class AggregationKind { mean, pna, attention };
enum class HeadKind { scaled_cosine, cosine, mean_linear, concat_linear, pna_linear };

inline const char* to_string(AttentionKind k) {
  return k == AttentionKind::softmax ? "softmax" : "sigmoidal";
}
inline const char* to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::mean: return "mean";
    case AggregationKind::pna: return "pna";
    case AggregationKind::attention: return "attention";
  }
  return "?";
}
inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::scaled_cosine: return "scaled_cosine";
    case HeadKind::cosine: return "cosine";
    case HeadKind::mean_linear: return "mean_linear";
    case HeadKind::concat_linear: return "concat_linear";
    case HeadKind::pna_linear: return "pna_linear";
  }
  return "?";
}

inline AttentionKind attention_kind_from(const std::string& s) {
  if (s == "softmax") return AttentionKind::softmax;
  if (s == "sigmoidal") return AttentionKind::sigmoidal;
  throw ad::TensorError("unknown attention kind: " + s);
}
inline AggregationKind aggregation_kind_from(const std::string& s) {
  if (s == "mean") return AggregationKind::mean;
  if (s == "pna") return AggregationKind::pna;
  if (s == "attention") return AggregationKind::attention;
  throw ad::TensorError("unknown aggregation kind: " + s);
}
inline HeadKind head_kind_from(const std::string& s) {
  if (s == "scaled_cosine") return HeadKind::scaled_cosine;
  if (s == "cosine") return HeadKind::cosine;
  if (s == "mean_linear") return HeadKind::mean_linear;
  if (s == "concat_linear") return HeadKind::concat_linear;
  if (s == "pna_linear") return HeadKind::pna_linear;
  throw ad::TensorError("unknown head kind: " + s);
}

struct ChemixConfig {
  int input_dim = 196;  // POM embedding width
  int embed_dim = 96;
  int attention_layers = 1;
  int heads = 8;
  AttentionKind attention_kind = AttentionKind::sigmoidal;
  AggregationKind aggregation = AggregationKind::pna;
  HeadKind head_kind = HeadKind::scaled_cosine;
  bool mlp_head = false;
  double dropout = 0.1;
  double lr = 8e-5;
  bool zero_bias = false;  // freeze the head bias at 0

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw ad::TensorError("ChemixConfig: embed_dim must divide into heads");
  }
};

inline constexpr double kSlopeFloor = 1e-3;  // keeps the head slope positive

template <typename T>
struct ChemixParams {
  ChemixConfig cfg;
  ad::Tensor<T> proj_w, proj_b;
  struct Layer {
    ad::Tensor<T> wq, wk, wv, wo, wo_b;
  };
  std::vector<Layer> layers;
  ad::Tensor<T> agg_w, agg_b;              // pna aggregation
  ad::Tensor<T> pool_q, pool_k, pool_v;    // attention aggregation
  ad::Tensor<T> head_w, head_b;            // linear heads
  ad::Tensor<T> scale_m, bias_b;           // scaled cosine head
};

template <typename T>
inline ChemixParams<T> init_chemix_params(ad::ParamStore<T>& store,
                                          const ChemixConfig& cfg,
                                          std::mt19937_64& rng,
                                          const std::string& group = "chemix") {
  cfg.validate();
  ChemixParams<T> p;
  p.cfg = cfg;
  const int D = cfg.embed_dim;
  p.proj_w = store.add_xavier(group + ".proj_w", cfg.input_dim, D, group, rng);
  p.proj_b = store.add_zeros(group + ".proj_b", {D}, group);
  for (int l = 0; l < cfg.attention_layers; ++l) {
    const std::string pre = group + ".attn" + std::to_string(l) + ".";
    typename ChemixParams<T>::Layer layer;
    layer.wq = store.add_xavier(pre + "wq", D, D, group, rng);
    layer.wk = store.add_xavier(pre + "wk", D, D, group, rng);
    layer.wv = store.add_xavier(pre + "wv", D, D, group, rng);
    layer.wo = store.add_xavier(pre + "wo", D, D, group, rng);
    layer.wo_b = store.add_zeros(pre + "wo_b", {D}, group);
    p.layers.push_back(std::move(layer));
  }
  switch (cfg.aggregation) {
    case AggregationKind::pna:
      p.agg_w = store.add_xavier(group + ".agg_w", 4 * D, D, group, rng);
      p.agg_b = store.add_zeros(group + ".agg_b", {D}, group);
      break;
    case AggregationKind::attention:
      p.pool_q = store.add_xavier(group + ".pool_q", D, 1, group, rng);
      p.pool_k = store.add_xavier(group + ".pool_k", D, D, group, rng);
      p.pool_v = store.add_xavier(group + ".pool_v", D, D, group, rng);
      break;
    case AggregationKind::mean:
      break;
  }
  const std::string hgroup = "head";
  switch (cfg.head_kind) {
    case HeadKind::scaled_cosine:
      // slope clamped positive after every step; bias absorbs rating bias
      p.scale_m = store.add(hgroup + ".scale_m", {1}, hgroup, {T(1)});
      p.bias_b = store.add(hgroup + ".bias_b", {1}, hgroup,
                           {cfg.zero_bias ? T(0) : T(0.5)},
                           /*trainable=*/!cfg.zero_bias);
      store.add_hook([](ad::ParamStore<T>& s) {
        auto& v = s.param("head.scale_m").tensor.mutable_value();
        if (v[0] < T(kSlopeFloor)) v[0] = T(kSlopeFloor);
      });
      break;
    case HeadKind::cosine:
      break;
    case HeadKind::mean_linear:
      p.head_w = store.add_xavier(hgroup + ".w", D, 1, hgroup, rng);
      p.head_b = store.add_zeros(hgroup + ".b", {1}, hgroup);
      break;
    case HeadKind::concat_linear:
      p.head_w = store.add_xavier(hgroup + ".w", 2 * D, 1, hgroup, rng);
      p.head_b = store.add_zeros(hgroup + ".b", {1}, hgroup);
      break;
    case HeadKind::pna_linear:
      p.head_w = store.add_xavier(hgroup + ".w", 4 * D, 1, hgroup, rng);
      p.head_b = store.add_zeros(hgroup + ".b", {1}, hgroup);
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Padded mixture batch: [B x M_max x input_dim] row-major with a 0/1 mask.
// Masked rows must be zero on input.
// ---------------------------------------------------------------------------

template <typename T>
struct MixtureBatch {
  int batch = 0;
  int max_molecules = 0;
  ad::Tensor<T> embeddings;  // [batch*max_molecules x input_dim]
  std::vector<T> mask;       // batch*max_molecules entries of 0/1
  std::vector<int> sizes;

  void validate() const {
    if (embeddings.rows() != std::int64_t(batch) * max_molecules)
      throw ad::TensorError("MixtureBatch: embedding rows do not match mask");
    for (int b = 0; b < batch; ++b) {
      int sz = 0;
      for (int m = 0; m < max_molecules; ++m)
        sz += mask[b * max_molecules + m] > T(0.5) ? 1 : 0;
      if (sz == 0) throw ad::TensorError("MixtureBatch: empty mixture");
      if (sz != sizes[b])
        throw ad::TensorError("MixtureBatch: size/mask mismatch");
    }
  }
};

// Molecule-wise multi-head self-attention over one mixture. Rows of `x` are
// molecule embeddings; masked query rows come out exactly zero. With the
// sigmoidal kind, pair weights are independent sigmoids (no normalization)
// and value vectors pass through a ReLU.
template <typename T>
inline ad::Tensor<T> mixture_self_attention(
    const typename ChemixParams<T>::Layer& layer, AttentionKind kind,
    const ad::Tensor<T>& x, const ad::Tensor<T>& mask, int heads,
    std::vector<ad::Tensor<T>>* attn_out = nullptr) {
  const std::int64_t D = x.dim(1);
  const std::int64_t dk = D / heads;
  const double inv_scale = 1.0 / std::sqrt(double(dk));
  std::vector<ad::Tensor<T>> head_outs;
  for (int h = 0; h < heads; ++h) {
    auto wq = ad::slice(layer.wq, 1, h * dk, dk);
    auto wk = ad::slice(layer.wk, 1, h * dk, dk);
    auto wv = ad::slice(layer.wv, 1, h * dk, dk);
    auto q = ad::matmul(x, wq);
    auto k = ad::matmul(x, wk);
    auto v = ad::matmul(x, wv);
    auto scores = ad::mul(ad::matmul(q, ad::transpose(k)), inv_scale);
    ad::Tensor<T> weights;
    if (kind == AttentionKind::softmax) {
      weights = ad::softmax_rows_masked(scores, mask);
    } else {
      weights = ad::scale_cols(ad::sigmoid(scores), mask);
      v = ad::relu(v);
    }
    if (attn_out) attn_out->push_back(weights);
    head_outs.push_back(ad::matmul(weights, v));
  }
  auto merged = ad::add(ad::matmul(ad::concat<T>(head_outs, 1), layer.wo),
                        layer.wo_b);
  return ad::scale_rows(merged, mask);
}

// Permutation-invariant pooling of post-attention molecule rows.
template <typename T>
inline ad::Tensor<T> aggregate_mixture(const ChemixParams<T>& p,
                                       const ad::Tensor<T>& x,
                                       const ad::Tensor<T>& mask) {
  const std::int64_t D = x.dim(1);
  switch (p.cfg.aggregation) {
    case AggregationKind::mean:
      return ad::reshape(ad::masked_mean(x, mask), {1, D});
    case AggregationKind::pna: {
      auto agg = ad::concat<T>(
          {ad::masked_mean(x, mask), ad::masked_std(x, mask),
           ad::masked_min(x, mask), ad::masked_max(x, mask)},
          0);
      return ad::add(ad::matmul(ad::reshape(agg, {1, 4 * D}), p.agg_w),
                     p.agg_b);
    }
    case AggregationKind::attention: {
      auto k = ad::matmul(x, p.pool_k);
      auto v = ad::matmul(x, p.pool_v);
      auto scores = ad::mul(ad::reshape(ad::matmul(k, p.pool_q), {1, x.dim(0)}),
                            1.0 / std::sqrt(double(D)));
      auto alpha = ad::softmax_rows_masked(scores, mask);
      return ad::matmul(alpha, v);
    }
  }
  throw ad::TensorError("aggregate_mixture: bad aggregation kind");
}

// Encode one mixture [M x input_dim] (+ 0/1 row mask) to [1 x embed_dim].
template <typename T>
inline ad::Tensor<T> chemix_encode_one(const ChemixParams<T>& p,
                                       const ad::Tensor<T>& molecules,
                                       const ad::Tensor<T>& mask,
                                       bool training = false,
                                       std::mt19937_64* rng = nullptr,
                                       std::vector<ad::Tensor<T>>* attn_out = nullptr) {
  std::mt19937_64 dummy(0);
  std::mt19937_64& r = rng ? *rng : dummy;
  const double drop = training ? p.cfg.dropout : 0.0;
  auto x = ad::scale_rows(
      ad::add(ad::matmul(molecules, p.proj_w), p.proj_b), mask);
  for (const auto& layer : p.layers) {
    auto attn = mixture_self_attention<T>(layer, p.cfg.attention_kind, x, mask,
                                          p.cfg.heads, attn_out);
    attn = ad::dropout(attn, drop, training, r);
    x = ad::scale_rows(ad::add(x, attn), mask);  // residual, pads stay zero
  }
  return aggregate_mixture(p, x, mask);
}

// Encode a padded batch of mixtures to [B x embed_dim].
template <typename T>
inline ad::Tensor<T> chemix_encode(const ChemixParams<T>& p,
                                   const MixtureBatch<T>& batch,
                                   bool training = false,
                                   std::mt19937_64* rng = nullptr) {
  batch.validate();
  std::vector<ad::Tensor<T>> rows;
  for (int b = 0; b < batch.batch; ++b) {
    auto x = ad::slice(batch.embeddings, 0,
                       std::int64_t(b) * batch.max_molecules,
                       batch.max_molecules);
    auto mask = ad::Tensor<T>::from(
        {batch.max_molecules},
        std::vector<T>(batch.mask.begin() + b * batch.max_molecules,
                       batch.mask.begin() + (b + 1) * batch.max_molecules));
    rows.push_back(chemix_encode_one(p, x, mask, training, rng));
  }
  return ad::concat<T>(rows, 0);
}

// ---------------------------------------------------------------------------
// Prediction heads. All outputs clamp to [0,1]; every kind except
// concat_linear is symmetric in its two arguments.
// ---------------------------------------------------------------------------

template <typename T>
inline ad::Tensor<T> predict_distance_rows(const ChemixParams<T>& p,
                                           const ad::Tensor<T>& emb_a,
                                           const ad::Tensor<T>& emb_b) {
  switch (p.cfg.head_kind) {
    case HeadKind::scaled_cosine: {
      auto cos = ad::cosine_similarity_rows(emb_a, emb_b);
      auto scaled = ad::add(ad::mul(ad::sub(1.0, cos), p.scale_m), p.bias_b);
      return ad::hardtanh(scaled, 0.0, 1.0);
    }
    case HeadKind::cosine: {
      auto cos = ad::cosine_similarity_rows(emb_a, emb_b);
      return ad::hardtanh(ad::sub(1.0, cos), 0.0, 1.0);
    }
    case HeadKind::mean_linear: {
      auto z = ad::mul(ad::add(emb_a, emb_b), 0.5);
      auto y = ad::add(ad::matmul(z, p.head_w), p.head_b);
      return ad::hardtanh(ad::reshape(y, {emb_a.dim(0)}), 0.0, 1.0);
    }
    case HeadKind::concat_linear: {
      auto z = ad::concat<T>({emb_a, emb_b}, 1);
      auto y = ad::add(ad::matmul(z, p.head_w), p.head_b);
      return ad::hardtanh(ad::reshape(y, {emb_a.dim(0)}), 0.0, 1.0);
    }
    case HeadKind::pna_linear: {
      auto mean = ad::mul(ad::add(emb_a, emb_b), 0.5);
      auto diff = ad::sub(emb_a, emb_b);
      auto stdv = ad::sqrt_op(
          ad::add(ad::mul(ad::mul(diff, diff), 0.25), ad::kStdEps));
      auto z = ad::concat<T>(
          {mean, stdv, ad::emin(emb_a, emb_b), ad::emax(emb_a, emb_b)}, 1);
      auto y = ad::add(ad::matmul(z, p.head_w), p.head_b);
      return ad::hardtanh(ad::reshape(y, {emb_a.dim(0)}), 0.0, 1.0);
    }
  }
  throw ad::TensorError("predict_distance_rows: bad head kind");
}

template <typename T>
inline T predict_distance(const ChemixParams<T>& p, const ad::Tensor<T>& emb_a,
                          const ad::Tensor<T>& emb_b) {
  auto a = ad::reshape(emb_a, {1, emb_a.numel()});
  auto b = ad::reshape(emb_b, {1, emb_b.numel()});
  return predict_distance_rows(p, a, b).value()[0];
}

// Head-averaged attention map of one mixture: [n x n] pair weights.
template <typename T>
inline std::vector<std::vector<double>> attention_map(
    const ChemixParams<T>& p, const ad::Tensor<T>& molecules) {
  const int n = static_cast<int>(molecules.dim(0));
  auto mask = ad::Tensor<T>::filled({n}, T(1));
  std::vector<ad::Tensor<T>> maps;
  chemix_encode_one(p, molecules, mask, false, nullptr, &maps);
  std::vector<std::vector<double>> avg(n, std::vector<double>(n, 0.0));
  const double denom = static_cast<double>(maps.size());
  for (const auto& m : maps)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        avg[i][j] += double(m.value()[i * n + j]) / denom;
  return avg;
}

}  // namespace pommix::model
