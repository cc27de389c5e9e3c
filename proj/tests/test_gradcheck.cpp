#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pommix/chemix.hpp"
#include "pommix/featurize.hpp"
#include "pommix/pom.hpp"
#include "pommix/tensor.hpp"

namespace ad = pommix::ad;
namespace model = pommix::model;
using ad::Tensor;

namespace {

constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

std::mt19937_64 g_rng(20240917);

Tensor<double> randt(ad::Shape shape, double lo = -1.0, double hi = 1.0,
                     bool grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(ad::numel_of(shape)));
  for (auto& x : v) x = d(g_rng);
  return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

// Central finite differences against reverse-mode gradients for every
// element of every input tensor.
void check_grads(const std::function<Tensor<double>()>& build_loss,
                 std::vector<Tensor<double>> inputs, const char* what) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = build_loss();
  ASSERT_EQ(loss.numel(), 1) << what;
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    // an input that does not participate has zero gradient; the numeric
    // side below confirms that it truly does not matter
    analytic.push_back(t.has_grad()
                           ? t.grad()
                           : std::vector<double>(t.value().size(), 0.0));
  }
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].mutable_value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + kH;
      const double fp = build_loss().item();
      vals[i] = orig - kH;
      const double fm = build_loss().item();
      vals[i] = orig;
      const double num = (fp - fm) / (2 * kH);
      const double a = analytic[ti][i];
      const double rel =
          std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
      ASSERT_LT(rel, kTol) << what << " tensor " << ti << " elem " << i
                           << " analytic " << a << " numeric " << num;
    }
  }
}

// Random positive-weight readout turns any tensor-valued op into a scalar
// loss without hiding sign errors.
Tensor<double> readout(const Tensor<double>& t) {
  static std::map<std::int64_t, Tensor<double>> cache;
  auto it = cache.find(t.numel());
  if (it == cache.end()) {
    auto r = randt({t.numel()}, 0.3, 1.7, false);
    it = cache.emplace(t.numel(), r).first;
  }
  return ad::reduce_sum_all(ad::mul(ad::reshape(t, {t.numel()}), it->second));
}

}  // namespace

TEST(GradCheck, ElementwiseBinary) {
  auto a = randt({3, 4});
  auto b = randt({3, 4});
  auto row = randt({4});
  auto sc = randt({1});
  check_grads([&] { return readout(ad::add(a, b)); }, {a, b}, "add");
  check_grads([&] { return readout(ad::add(a, row)); }, {a, row}, "add_row");
  check_grads([&] { return readout(ad::add(a, sc)); }, {a, sc}, "add_scalar");
  check_grads([&] { return readout(ad::sub(a, b)); }, {a, b}, "sub");
  check_grads([&] { return readout(ad::mul(a, b)); }, {a, b}, "mul");
  check_grads([&] { return readout(ad::mul(a, row)); }, {a, row}, "mul_row");
  check_grads([&] { return readout(ad::mul(a, sc)); }, {a, sc}, "mul_scalar");
  auto bpos = randt({3, 4}, 0.5, 2.0);
  check_grads([&] { return readout(ad::div(a, bpos)); }, {a, bpos}, "div");
  // ties have probability zero under the continuous sampler
  check_grads([&] { return readout(ad::emin(a, b)); }, {a, b}, "emin");
  check_grads([&] { return readout(ad::emax(a, b)); }, {a, b}, "emax");
}

TEST(GradCheck, ElementwiseUnary) {
  auto a = randt({3, 4}, 0.2, 1.8);       // away from relu/abs kinks
  auto s = randt({3, 4}, -2.0, 2.0);
  check_grads([&] { return readout(ad::relu(a)); }, {a}, "relu");
  check_grads([&] { return readout(ad::leaky_relu(a)); }, {a}, "leaky_relu");
  auto neg = randt({3, 4}, -1.8, -0.2);
  check_grads([&] { return readout(ad::relu(neg)); }, {neg}, "relu_neg");
  check_grads([&] { return readout(ad::leaky_relu(neg)); }, {neg},
              "leaky_relu_neg");
  check_grads([&] { return readout(ad::sigmoid(s)); }, {s}, "sigmoid");
  auto inside = randt({3, 4}, 0.1, 0.9);  // inside hardtanh(0,1), off edges
  check_grads([&] { return readout(ad::hardtanh(inside, 0, 1)); }, {inside},
              "hardtanh");
  auto pos = randt({3, 4}, 0.5, 2.0);
  check_grads([&] { return readout(ad::sqrt_op(pos)); }, {pos}, "sqrt");
  check_grads([&] { return readout(ad::abs_op(a)); }, {a}, "abs");
  check_grads([&] { return readout(ad::mul(a, 1.7)); }, {a}, "mul_c");
  check_grads([&] { return readout(ad::add(a, 0.3)); }, {a}, "add_c");
  check_grads([&] { return readout(ad::sub(2.0, a)); }, {a}, "rsub_c");
}

TEST(GradCheck, MatrixOps) {
  auto a = randt({3, 4});
  auto b = randt({4, 2});
  check_grads([&] { return readout(ad::matmul(a, b)); }, {a, b}, "matmul");
  check_grads([&] { return readout(ad::transpose(a)); }, {a}, "transpose");
  check_grads([&] { return readout(ad::reshape(a, {4, 3})); }, {a}, "reshape");
  auto c = randt({2, 4});
  check_grads([&] { return readout(ad::concat<double>({a, c}, 0)); }, {a, c},
              "concat0");
  auto d = randt({3, 2});
  check_grads([&] { return readout(ad::concat<double>({a, d}, 1)); }, {a, d},
              "concat1");
  auto v1 = randt({3});
  auto v2 = randt({2});
  check_grads([&] { return readout(ad::concat<double>({v1, v2}, 0)); },
              {v1, v2}, "concat_vec");
  check_grads([&] { return readout(ad::slice(a, 0, 1, 2)); }, {a}, "slice0");
  check_grads([&] { return readout(ad::slice(a, 1, 1, 3)); }, {a}, "slice1");
  check_grads([&] { return readout(ad::slice(v1, 0, 0, 2)); }, {v1},
              "slice_vec");
  // repeated indices exercise gradient accumulation
  check_grads([&] { return readout(ad::index_select(a, {2, 0, 2, 1})); }, {a},
              "index_select");
  auto sv = randt({3});
  check_grads([&] { return readout(ad::scale_rows(a, sv)); }, {a, sv},
              "scale_rows");
  auto cv = randt({4});
  check_grads([&] { return readout(ad::scale_cols(a, cv)); }, {a, cv},
              "scale_cols");
}

TEST(GradCheck, Reductions) {
  auto a = randt({5, 3});
  auto mask = Tensor<double>::from({5}, {1, 0, 1, 1, 0});
  check_grads([&] { return readout(ad::masked_mean(a, mask)); }, {a},
              "masked_mean");
  check_grads([&] { return readout(ad::masked_std(a, mask)); }, {a},
              "masked_std");
  check_grads([&] { return readout(ad::masked_min(a, mask)); }, {a},
              "masked_min");
  check_grads([&] { return readout(ad::masked_max(a, mask)); }, {a},
              "masked_max");
  check_grads([&] { return readout(ad::reduce_mean(a)); }, {a}, "reduce_mean");
  check_grads([&] { return readout(ad::reduce_std(a)); }, {a}, "reduce_std");
  check_grads([&] { return readout(ad::reduce_min(a)); }, {a}, "reduce_min");
  check_grads([&] { return readout(ad::reduce_max(a)); }, {a}, "reduce_max");
  check_grads([&] { return readout(ad::row_sum(a)); }, {a}, "row_sum");
  check_grads([&] { return ad::reduce_sum_all(a); }, {a}, "reduce_sum_all");
  check_grads([&] { return ad::reduce_mean_all(a); }, {a}, "reduce_mean_all");
}

TEST(GradCheck, SegmentOps) {
  auto a = randt({6, 3});
  const std::vector<std::int64_t> seg = {0, 1, 0, 2, 1, 0};
  check_grads([&] { return readout(ad::segment_sum(a, seg, 3)); }, {a},
              "segment_sum");
  check_grads([&] { return readout(ad::segment_mean(a, seg, 3)); }, {a},
              "segment_mean");
  check_grads([&] { return readout(ad::segment_std(a, seg, 3)); }, {a},
              "segment_std");
  check_grads([&] { return readout(ad::segment_min(a, seg, 3)); }, {a},
              "segment_min");
  check_grads([&] { return readout(ad::segment_max(a, seg, 3)); }, {a},
              "segment_max");
  auto s = randt({6});
  check_grads([&] { return readout(ad::segment_softmax(s, seg, 3)); }, {s},
              "segment_softmax");
}

TEST(GradCheck, SoftmaxAndLosses) {
  auto logits = randt({3, 5});
  auto kmask = Tensor<double>::from({5}, {1, 1, 0, 1, 0});
  check_grads([&] { return readout(ad::softmax_rows_masked(logits, kmask)); },
              {logits}, "softmax_rows_masked");
  auto targets = Tensor<double>::from({3, 2}, {1, 0, 0, 1, 1, 1});
  auto x = randt({3, 2}, -2, 2);
  check_grads([&] { return ad::bce_with_logits(x, targets); }, {x},
              "bce_with_logits");
  auto pred = randt({6}, 0.6, 0.9);
  auto tgt = Tensor<double>::from({6}, {0.1, 0.2, 0.3, 0.1, 0.2, 0.3});
  check_grads([&] { return ad::mae(pred, tgt); }, {pred}, "mae");
}

TEST(GradCheck, DropoutFixedMask) {
  auto a = randt({4, 3});
  auto mask = std::make_shared<std::vector<std::uint8_t>>(
      std::vector<std::uint8_t>{1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0});
  check_grads([&] { return readout(ad::dropout_with_mask(a, mask, 0.9)); },
              {a}, "dropout");
}

TEST(GradCheck, CompositeVectorOps) {
  auto v = randt({5}, 0.3, 1.5);
  check_grads([&] { return readout(ad::l2_normalize(v)); }, {v},
              "l2_normalize");
  auto w = randt({5}, 0.3, 1.5);
  check_grads([&] { return ad::cosine_similarity(v, w); }, {v, w},
              "cosine_similarity");
  auto ma = randt({3, 4}, 0.2, 1.4);
  auto mb = randt({3, 4}, 0.2, 1.4);
  check_grads([&] { return readout(ad::cosine_similarity_rows(ma, mb)); },
              {ma, mb}, "cosine_similarity_rows");
}

namespace {

// tiny synthetic graph batch: a 3-atom path and a lone atom
pommix::feat::GraphBatch tiny_batch(int node_dim, int edge_dim, int global_dim) {
  pommix::feat::GraphBatch b;
  b.num_graphs = 2;
  b.total_nodes = 4;
  b.total_edges = 4;
  std::uniform_real_distribution<double> d(-1, 1);
  for (int i = 0; i < 4 * node_dim; ++i) b.node_features.push_back(d(g_rng));
  for (int i = 0; i < 4 * edge_dim; ++i) b.edge_features.push_back(d(g_rng));
  b.edge_src = {0, 1, 1, 2};
  b.edge_dst = {1, 0, 2, 1};
  b.node_graph = {0, 0, 0, 1};
  for (int i = 0; i < 2 * global_dim; ++i) b.globals.push_back(d(g_rng));
  return b;
}

std::vector<Tensor<double>> store_tensors(ad::ParamStore<double>& store) {
  std::vector<Tensor<double>> out;
  for (auto& p : store.params())
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

// Zero-initialized biases park tiny models exactly on relu/min/max kinks
// where finite differences straddle the non-smooth point; jitter every
// parameter to probe at a generic point.
void jitter_params(ad::ParamStore<double>& store) {
  std::uniform_real_distribution<double> d(-0.4, 0.4);
  for (auto& p : store.params())
    for (auto& v : p.tensor.mutable_value()) v += d(g_rng);
}

}  // namespace

TEST(GradCheck, FilmEdgeUpdateLayer) {
  ad::ParamStore<double> store;
  model::PomConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden = 5;
  cfg.embedding_dim = 4;
  auto params = model::init_pom_params(store, cfg, g_rng, "pom", 4, 3, 3);
  auto edges = randt({3, 3});
  auto src = randt({3, 4});
  auto dst = randt({3, 4});
  auto glob = randt({3, 3});
  std::mt19937_64 rng(0);
  auto inputs = store_tensors(store);
  inputs.push_back(edges);
  inputs.push_back(src);
  inputs.push_back(dst);
  check_grads(
      [&] {
        return readout(model::film_edge_update(params.blocks[0], edges, src,
                                               dst, dst, glob, 0.0, false,
                                               rng));
      },
      inputs, "film_edge_update");
}

TEST(GradCheck, FullPomForward) {
  ad::ParamStore<double> store;
  model::PomConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden = 5;
  cfg.embedding_dim = 4;
  cfg.dropout = 0.0;
  auto params = model::init_pom_params(store, cfg, g_rng, "pom", 4, 3, 3);
  jitter_params(store);
  auto batch = tiny_batch(4, 3, 3);
  check_grads(
      [&] { return readout(model::pom_forward(params, batch, false)); },
      store_tensors(store), "pom_forward");
}

TEST(GradCheck, PomGlmLoss) {
  ad::ParamStore<double> store;
  model::PomConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden = 4;
  cfg.embedding_dim = 3;
  cfg.dropout = 0.0;
  auto params = model::init_pom_params(store, cfg, g_rng, "pom", 4, 3, 3);
  auto glm = model::init_glm_params(store, 3, 2, g_rng);
  jitter_params(store);
  auto batch = tiny_batch(4, 3, 3);
  auto targets = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  check_grads(
      [&] {
        auto emb = model::pom_forward(params, batch, false);
        return ad::bce_with_logits(model::glm_logits(glm, emb), targets);
      },
      store_tensors(store), "pom_glm_loss");
}

namespace {

model::ChemixConfig tiny_chemix(model::AttentionKind attn,
                                model::AggregationKind agg,
                                model::HeadKind head) {
  model::ChemixConfig cfg;
  cfg.input_dim = 5;
  cfg.embed_dim = 4;
  cfg.heads = 2;
  cfg.attention_layers = 1;
  cfg.attention_kind = attn;
  cfg.aggregation = agg;
  cfg.head_kind = head;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST(GradCheck, ChemixAttentionKinds) {
  for (auto kind : {model::AttentionKind::softmax, model::AttentionKind::sigmoidal}) {
    ad::ParamStore<double> store;
    auto cfg = tiny_chemix(kind, model::AggregationKind::pna,
                           model::HeadKind::scaled_cosine);
    auto params = model::init_chemix_params(store, cfg, g_rng);
    jitter_params(store);
    auto x = randt({3, 5});
    auto mask = Tensor<double>::from({3}, {1, 1, 1});
    auto inputs = store_tensors(store);
    inputs.push_back(x);
    check_grads(
        [&] { return readout(model::chemix_encode_one(params, x, mask)); },
        inputs, to_string(kind));
  }
}

TEST(GradCheck, ChemixAggregationKinds) {
  for (auto agg : {model::AggregationKind::mean, model::AggregationKind::pna,
                   model::AggregationKind::attention}) {
    ad::ParamStore<double> store;
    auto cfg = tiny_chemix(model::AttentionKind::sigmoidal, agg,
                           model::HeadKind::scaled_cosine);
    auto params = model::init_chemix_params(store, cfg, g_rng);
    jitter_params(store);
    auto x = randt({3, 5});
    auto mask = Tensor<double>::from({3}, {1, 1, 0});
    check_grads(
        [&] { return readout(model::chemix_encode_one(params, x, mask)); },
        store_tensors(store), to_string(agg));
  }
}

TEST(GradCheck, AllPredictionHeads) {
  for (auto head :
       {model::HeadKind::scaled_cosine, model::HeadKind::cosine,
        model::HeadKind::mean_linear, model::HeadKind::concat_linear,
        model::HeadKind::pna_linear}) {
    ad::ParamStore<double> store;
    auto cfg = tiny_chemix(model::AttentionKind::sigmoidal,
                           model::AggregationKind::pna, head);
    auto params = model::init_chemix_params(store, cfg, g_rng);
    jitter_params(store);
    auto ea = randt({4, 4}, 0.1, 1.2);
    auto eb = randt({4, 4}, 0.1, 1.2);
    auto tgt = Tensor<double>::from({4}, {0.3, 0.5, 0.6, 0.4});
    auto inputs = store_tensors(store);
    inputs.push_back(ea);
    inputs.push_back(eb);
    check_grads(
        [&] {
          return ad::mae(model::predict_distance_rows(params, ea, eb), tgt);
        },
        inputs, to_string(head));
  }
}

TEST(GradCheck, FullPommixPath) {
  // POM -> CheMix -> scaled cosine head -> MAE, end to end
  ad::ParamStore<double> store;
  model::PomConfig pcfg;
  pcfg.num_layers = 2;
  pcfg.hidden = 4;
  pcfg.embedding_dim = 5;
  pcfg.dropout = 0.0;
  auto pom = model::init_pom_params(store, pcfg, g_rng, "pom", 4, 3, 3);
  auto ccfg = tiny_chemix(model::AttentionKind::sigmoidal,
                          model::AggregationKind::pna,
                          model::HeadKind::scaled_cosine);
  auto chemix = model::init_chemix_params(store, ccfg, g_rng);
  jitter_params(store);
  auto batch = tiny_batch(4, 3, 3);  // 2 molecules
  auto tgt = Tensor<double>::from({1}, {0.42});
  auto ones2 = Tensor<double>::from({2}, {1, 1});
  auto ones1 = Tensor<double>::from({1}, {1});
  check_grads(
      [&] {
        auto emb = model::pom_forward(pom, batch, false);  // [2 x 5]
        // mixture A holds both molecules, mixture B the first one
        auto mix_a = model::chemix_encode_one(chemix, emb, ones2);
        auto mix_b = model::chemix_encode_one(
            chemix, ad::slice(emb, 0, 0, 1), ones1);
        return ad::mae(model::predict_distance_rows(chemix, mix_a, mix_b), tgt);
      },
      store_tensors(store), "pommix_end_to_end");
}
