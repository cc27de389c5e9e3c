#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pommix/featurize.hpp"
#include "pommix/param_store.hpp"
#include "pommix/tensor.hpp"

namespace pommix::model {

namespace ad = pommix::ad;

// GraphNets POM: per block, FiLM edge update -> graph-attention node update
// -> PNA global update, with residual connections wherever stream widths
// match. The final global state is the molecule embedding.
struct PomConfig {
  int num_layers = 4;
  int hidden = 320;
  int embedding_dim = 196;
  double dropout = 0.1;
  double lr = 1e-4;

  void validate() const {
    if (num_layers < 1 || hidden < 1 || embedding_dim < 1)
      throw ad::TensorError("PomConfig: dimensions must be positive");
  }
};

template <typename T>
struct PomBlockParams {
  ad::Tensor<T> msg_w, msg_b;    // candidate edge message
  ad::Tensor<T> film_w, film_b;  // gamma/beta from [dst node, global]
  ad::Tensor<T> q_w;
  ad::Tensor<T> k_edge, k_self, k_glob;
  ad::Tensor<T> v_edge, v_self, v_glob;
  ad::Tensor<T> attn_a;          // scoring vector
  ad::Tensor<T> out_w, out_b;
  ad::Tensor<T> pna_w1, pna_b1, pna_w2, pna_b2;
};

template <typename T>
struct PomParams {
  PomConfig cfg;
  int node_dim = feat::kNodeFeatureDim;
  int edge_dim = feat::kEdgeFeatureDim;
  int global_dim = feat::kDescriptorDim;
  std::vector<PomBlockParams<T>> blocks;
};

template <typename T>
inline PomParams<T> init_pom_params(ad::ParamStore<T>& store,
                                    const PomConfig& cfg, std::mt19937_64& rng,
                                    const std::string& group = "pom",
                                    int node_dim = feat::kNodeFeatureDim,
                                    int edge_dim = feat::kEdgeFeatureDim,
                                    int global_dim = feat::kDescriptorDim) {
  cfg.validate();
  PomParams<T> p;
  p.cfg = cfg;
  p.node_dim = node_dim;
  p.edge_dim = edge_dim;
  p.global_dim = global_dim;
  const int H = cfg.hidden;
  for (int b = 0; b < cfg.num_layers; ++b) {
    const int in_node = b == 0 ? node_dim : H;
    const int in_edge = b == 0 ? edge_dim : H;
    const int in_glob = b == 0 ? global_dim : H;
    const int out_glob = b + 1 == cfg.num_layers ? cfg.embedding_dim : H;
    const std::string pre = group + ".b" + std::to_string(b) + ".";
    PomBlockParams<T> blk;
    blk.msg_w = store.add_xavier(pre + "msg_w", in_edge + 2 * in_node, H, group, rng);
    blk.msg_b = store.add_zeros(pre + "msg_b", {H}, group);
    blk.film_w = store.add_xavier(pre + "film_w", in_node + in_glob, 2 * H, group, rng);
    {
      // gamma bias starts at 1 so zeroed weights give identity modulation
      std::vector<T> fb(2 * H, T(0));
      for (int i = 0; i < H; ++i) fb[i] = T(1);
      blk.film_b = store.add(pre + "film_b", {2 * H}, group, std::move(fb));
    }
    blk.q_w = store.add_xavier(pre + "q_w", in_node, H, group, rng);
    blk.k_edge = store.add_xavier(pre + "k_edge", H, H, group, rng);
    blk.k_self = store.add_xavier(pre + "k_self", in_node, H, group, rng);
    blk.k_glob = store.add_xavier(pre + "k_glob", in_glob, H, group, rng);
    blk.v_edge = store.add_xavier(pre + "v_edge", H, H, group, rng);
    blk.v_self = store.add_xavier(pre + "v_self", in_node, H, group, rng);
    blk.v_glob = store.add_xavier(pre + "v_glob", in_glob, H, group, rng);
    blk.attn_a = store.add_xavier(pre + "attn_a", H, 1, group, rng);
    blk.out_w = store.add_xavier(pre + "out_w", H, H, group, rng);
    blk.out_b = store.add_zeros(pre + "out_b", {H}, group);
    blk.pna_w1 = store.add_xavier(pre + "pna_w1", 4 * H + in_glob, H, group, rng);
    blk.pna_b1 = store.add_zeros(pre + "pna_b1", {H}, group);
    blk.pna_w2 = store.add_xavier(pre + "pna_w2", H, out_glob, group, rng);
    blk.pna_b2 = store.add_zeros(pre + "pna_b2", {out_glob}, group);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

// FiLM edge update: linear candidate message from [edge, src, dst], modulated
// by (gamma, beta) generated from the destination node and global state.
template <typename T>
inline ad::Tensor<T> film_edge_update(const PomBlockParams<T>& blk,
                                      const ad::Tensor<T>& edges,
                                      const ad::Tensor<T>& src_feats,
                                      const ad::Tensor<T>& dst_feats,
                                      const ad::Tensor<T>& dst_node_in,
                                      const ad::Tensor<T>& dst_global_in,
                                      double dropout_p, bool training,
                                      std::mt19937_64& rng) {
  auto cand = ad::add(
      ad::matmul(ad::concat<T>({edges, src_feats, dst_feats}, 1), blk.msg_w),
      blk.msg_b);
  auto film = ad::add(
      ad::matmul(ad::concat<T>({dst_node_in, dst_global_in}, 1), blk.film_w),
      blk.film_b);
  const auto H = cand.dim(1);
  auto gamma = ad::slice(film, 1, 0, H);
  auto beta = ad::slice(film, 1, H, H);
  auto out = ad::relu(ad::add(ad::mul(gamma, cand), beta));
  return ad::dropout(out, dropout_p, training, rng);
}

// One POM forward pass over a block-diagonal graph batch.
// Returns [num_graphs x embedding_dim].
template <typename T>
inline ad::Tensor<T> pom_forward(const PomParams<T>& p,
                                 const feat::GraphBatch& batch,
                                 bool training = false,
                                 std::mt19937_64* rng = nullptr) {
  if (batch.total_nodes == 0)
    throw ad::TensorError("pom_forward: empty graph batch");
  std::mt19937_64 dummy(0);
  std::mt19937_64& r = rng ? *rng : dummy;
  const double drop = training ? p.cfg.dropout : 0.0;
  const int N = batch.total_nodes;
  const int E = batch.total_edges;
  const int B = batch.num_graphs;

  auto nodes = ad::Tensor<T>::from(
      {N, p.node_dim}, std::vector<T>(batch.node_features.begin(),
                                      batch.node_features.end()));
  auto globals = ad::Tensor<T>::from(
      {B, p.global_dim},
      std::vector<T>(batch.globals.begin(), batch.globals.end()));
  ad::Tensor<T> edges =
      E > 0 ? ad::Tensor<T>::from({E, p.edge_dim},
                                  std::vector<T>(batch.edge_features.begin(),
                                                 batch.edge_features.end()))
            : ad::Tensor<T>();

  // attention slots: one per incoming edge, plus self and global per node
  std::vector<std::int64_t> slots;
  if (E > 0) slots = batch.edge_dst;
  for (int i = 0; i < N; ++i) slots.push_back(i);
  for (int i = 0; i < N; ++i) slots.push_back(i);

  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    auto global_per_node = ad::index_select(globals, batch.node_graph);

    // edge update
    if (E > 0) {
      auto src_f = ad::index_select(nodes, batch.edge_src);
      auto dst_f = ad::index_select(nodes, batch.edge_dst);
      auto dst_g = ad::index_select(global_per_node, batch.edge_dst);
      edges = film_edge_update(blk, edges, src_f, dst_f, dst_f, dst_g, drop,
                               training, r);
    }

    // node update: graph attention over incoming edge messages, self, global
    auto q_n = ad::matmul(nodes, blk.q_w);
    std::vector<ad::Tensor<T>> keys, values;
    if (E > 0) {
      keys.push_back(ad::matmul(edges, blk.k_edge));
      values.push_back(ad::matmul(edges, blk.v_edge));
    }
    keys.push_back(ad::matmul(nodes, blk.k_self));
    values.push_back(ad::matmul(nodes, blk.v_self));
    keys.push_back(ad::index_select(ad::matmul(globals, blk.k_glob),
                                    batch.node_graph));
    values.push_back(ad::index_select(ad::matmul(globals, blk.v_glob),
                                      batch.node_graph));
    auto K = ad::concat<T>(keys, 0);
    auto V = ad::concat<T>(values, 0);
    auto q_slots = ad::index_select(q_n, slots);
    // two-stage scoring: activation inside, then the attention vector
    auto scores = ad::reshape(
        ad::matmul(ad::leaky_relu(ad::add(q_slots, K)), blk.attn_a),
        {static_cast<std::int64_t>(slots.size())});
    auto alpha = ad::segment_softmax(scores, slots, N);
    auto msg = ad::segment_sum(ad::scale_rows(V, alpha), slots, N);
    auto node_out = ad::dropout(
        ad::relu(ad::add(ad::matmul(msg, blk.out_w), blk.out_b)), drop,
        training, r);
    nodes = (b == 0 && p.node_dim != p.cfg.hidden) ? node_out
                                                   : ad::add(nodes, node_out);

    // global update: PNA aggregation + 2-layer MLP
    auto agg = ad::concat<T>({ad::segment_mean(nodes, batch.node_graph, B),
                              ad::segment_std(nodes, batch.node_graph, B),
                              ad::segment_min(nodes, batch.node_graph, B),
                              ad::segment_max(nodes, batch.node_graph, B)},
                             1);
    auto h = ad::dropout(
        ad::relu(ad::add(ad::matmul(ad::concat<T>({agg, globals}, 1),
                                    blk.pna_w1),
                         blk.pna_b1)),
        drop, training, r);
    auto g_out = ad::add(ad::matmul(h, blk.pna_w2), blk.pna_b2);
    const int in_glob = b == 0 ? p.global_dim : p.cfg.hidden;
    const int out_glob =
        b + 1 == p.blocks.size() ? p.cfg.embedding_dim : p.cfg.hidden;
    globals = in_glob == out_glob ? ad::add(globals, g_out) : g_out;
  }
  return globals;
}

// ---------------------------------------------------------------------------
// GLM head for multilabel pretraining: one linear layer + per-label sigmoid.
// ---------------------------------------------------------------------------

template <typename T>
struct GlmParams {
  ad::Tensor<T> w, b;
};

template <typename T>
inline GlmParams<T> init_glm_params(ad::ParamStore<T>& store, int embedding_dim,
                                    int num_labels, std::mt19937_64& rng,
                                    const std::string& group = "pom") {
  GlmParams<T> p;
  p.w = store.add_xavier(group + ".glm_w", embedding_dim, num_labels, group, rng);
  p.b = store.add_zeros(group + ".glm_b", {num_labels}, group);
  return p;
}

template <typename T>
inline ad::Tensor<T> glm_logits(const GlmParams<T>& p,
                                const ad::Tensor<T>& embeddings) {
  return ad::add(ad::matmul(embeddings, p.w), p.b);
}

template <typename T>
inline ad::Tensor<T> glm_predict(const GlmParams<T>& p,
                                 const ad::Tensor<T>& embeddings) {
  return ad::sigmoid(glm_logits(p, embeddings));
}

}  // namespace pommix::model
