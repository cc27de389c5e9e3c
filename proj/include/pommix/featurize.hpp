#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pommix/canonical.hpp"
#include "pommix/csv.hpp"
#include "pommix/smiles.hpp"

namespace pommix::feat {

struct FeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// One-hot layout. Categorical blocks close with a UNK catch-all slot;
// boolean blocks are a single bit. The resulting dimensions (90 node / 14
// edge) are what the category lists sum to; the node dimension intentionally
// differs from the loosely quoted 85.
// ---------------------------------------------------------------------------

inline constexpr int kAtomicNumberBlock = 55;  // Z = 1..54 + UNK
inline constexpr int kDegreeBlock = 7;         // 0..5 + UNK
inline constexpr int kChargeBlock = 6;         // -2..2 + UNK
inline constexpr int kChiralityBlock = 5;      // unspecified, CW, CCW, other, UNK
inline constexpr int kHCountBlock = 10;        // 0..8 + UNK
inline constexpr int kHybridizationBlock = 6;  // sp, sp2, sp3, sp3d, sp3d2, UNK
inline constexpr int kAromaticBlock = 1;

inline constexpr int kNodeFeatureDim = kAtomicNumberBlock + kDegreeBlock +
                                       kChargeBlock + kChiralityBlock +
                                       kHCountBlock + kHybridizationBlock +
                                       kAromaticBlock;
static_assert(kNodeFeatureDim == 90);

inline constexpr int kBondTypeBlock = 5;    // single, double, triple, aromatic, UNK
inline constexpr int kConjugatedBlock = 1;
inline constexpr int kRingBlock = 1;
inline constexpr int kBondStereoBlock = 7;  // none, Z, E, cis, trans, any, UNK

inline constexpr int kEdgeFeatureDim =
    kBondTypeBlock + kConjugatedBlock + kRingBlock + kBondStereoBlock;
static_assert(kEdgeFeatureDim == 14);

// (offset, size) of every categorical one-hot block, for property tests.
inline const std::vector<std::pair<int, int>>& node_onehot_blocks() {
  static const std::vector<std::pair<int, int>> blocks = {
      {0, kAtomicNumberBlock},
      {kAtomicNumberBlock, kDegreeBlock},
      {kAtomicNumberBlock + kDegreeBlock, kChargeBlock},
      {kAtomicNumberBlock + kDegreeBlock + kChargeBlock, kChiralityBlock},
      {kAtomicNumberBlock + kDegreeBlock + kChargeBlock + kChiralityBlock,
       kHCountBlock},
      {kAtomicNumberBlock + kDegreeBlock + kChargeBlock + kChiralityBlock +
           kHCountBlock,
       kHybridizationBlock}};
  return blocks;
}

inline const std::vector<std::pair<int, int>>& edge_onehot_blocks() {
  static const std::vector<std::pair<int, int>> blocks = {
      {0, kBondTypeBlock},
      {kBondTypeBlock + kConjugatedBlock + kRingBlock, kBondStereoBlock}};
  return blocks;
}

enum class Hybridization { sp, sp2, sp3, sp3d, sp3d2, unk };

// Connectivity-based estimate: aromatic -> sp2, multiple bonds force sp/sp2,
// otherwise sigma neighbors plus lone pairs.
inline Hybridization hybridization_of(const chem::MolecularGraph& g, int ai) {
  const chem::Atom& a = g.atoms[ai];
  if (a.aromatic) return Hybridization::sp2;
  int doubles = 0, triples = 0;
  for (int bi : g.adj[ai]) {
    if (g.bonds[bi].order == chem::BondOrder::double_bond) ++doubles;
    if (g.bonds[bi].order == chem::BondOrder::triple) ++triples;
  }
  if (triples > 0 || doubles >= 2) return Hybridization::sp;
  if (doubles == 1) return Hybridization::sp2;
  static const std::map<int, int> valence_electrons = {
      {5, 3},  {6, 4},  {7, 5},  {8, 6},  {9, 7},  {14, 4}, {15, 5},
      {16, 6}, {17, 7}, {33, 5}, {34, 6}, {35, 7}, {53, 7}};
  auto it = valence_electrons.find(a.atomic_number);
  if (it == valence_electrons.end()) return Hybridization::unk;
  const int sigma = g.degree(ai) + a.num_h;
  const int lone_pairs =
      std::max(0, (it->second - a.formal_charge - sigma) / 2);
  switch (sigma + lone_pairs) {
    case 0: case 1: case 2: return Hybridization::sp;
    case 3: return Hybridization::sp2;
    case 4: return Hybridization::sp3;
    case 5: return Hybridization::sp3d;
    case 6: return Hybridization::sp3d2;
    default: return Hybridization::unk;
  }
}

inline std::vector<double> node_feature_vector(const chem::MolecularGraph& g,
                                               int ai) {
  const chem::Atom& a = g.atoms[ai];
  std::vector<double> v(kNodeFeatureDim, 0.0);
  int off = 0;
  auto onehot = [&](int idx, int block) {
    v[off + (idx >= 0 && idx < block - 1 ? idx : block - 1)] = 1.0;
    off += block;
  };
  onehot(a.atomic_number >= 1 && a.atomic_number <= chem::kMaxZ
             ? a.atomic_number - 1
             : -1,
         kAtomicNumberBlock);
  onehot(g.degree(ai) <= 5 ? g.degree(ai) : -1, kDegreeBlock);
  onehot(a.formal_charge >= -2 && a.formal_charge <= 2 ? a.formal_charge + 2
                                                       : -1,
         kChargeBlock);
  onehot(static_cast<int>(a.chirality), kChiralityBlock);  // enum order matches
  onehot(a.num_h <= 8 ? a.num_h : -1, kHCountBlock);
  onehot(static_cast<int>(hybridization_of(g, ai)), kHybridizationBlock);
  v[off] = a.aromatic ? 1.0 : 0.0;
  return v;
}

inline std::vector<double> edge_feature_vector(const chem::MolecularGraph& g,
                                               int bi) {
  const chem::Bond& b = g.bonds[bi];
  std::vector<double> v(kEdgeFeatureDim, 0.0);
  v[static_cast<int>(b.order)] = 1.0;  // single/double/triple/aromatic, UNK unused
  v[kBondTypeBlock] = b.conjugated ? 1.0 : 0.0;
  v[kBondTypeBlock + 1] = b.in_ring ? 1.0 : 0.0;
  v[kBondTypeBlock + 2 + static_cast<int>(b.stereo)] = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// Descriptor table: 200 precomputed molecular descriptors per molecule, keyed
// by canonical SMILES. Normalization is a per-feature empirical CDF with
// midrank tie handling fitted on a training set; values map into [0,1] and a
// constant feature maps to 0.5.
// ---------------------------------------------------------------------------

inline constexpr int kDescriptorDim = 200;

struct FeatureCdf {
  std::vector<double> values;  // strictly increasing unique fit values
  std::vector<double> cdf;     // matching CDF levels in (0,1)
};

struct DescriptorTable {
  std::map<std::string, std::vector<double>> raw;  // canonical smiles -> vector
  std::vector<FeatureCdf> stats;                   // per feature, when fitted
  bool fitted = false;

  bool has(const std::string& canonical) const {
    return raw.count(canonical) > 0;
  }
};

inline DescriptorTable load_descriptor_table(const std::string& path) {
  const CsvTable csv = read_csv(path);
  if (csv.header.empty() || csv.header[0] != "smiles")
    throw FeatureError("descriptor csv must start with a 'smiles' column: " +
                       path);
  const int dim = static_cast<int>(csv.header.size()) - 1;
  if (dim != kDescriptorDim)
    throw FeatureError("descriptor csv has " + std::to_string(dim) +
                       " features, expected " + std::to_string(kDescriptorDim));
  DescriptorTable table;
  for (const auto& row : csv.rows) {
    if (static_cast<int>(row.size()) != dim + 1)
      throw FeatureError("descriptor row for '" + row[0] +
                         "' has wrong field count");
    std::vector<double> v(dim);
    for (int j = 0; j < dim; ++j) {
      if (row[j + 1].empty())
        throw FeatureError("missing descriptor value for '" + row[0] + "'");
      v[j] = std::stod(row[j + 1]);
    }
    table.raw[chem::canonical_smiles(row[0])] = std::move(v);
  }
  return table;
}

// Midrank empirical CDF: a fit value with l smaller entries and c ties maps
// to (l + (c+1)/2) / (n+1); queries interpolate linearly between fit values
// and clamp outside the fitted range.
inline DescriptorTable normalize_descriptors(
    const DescriptorTable& table, const std::vector<std::string>& fit_set) {
  for (const auto& s : fit_set)
    if (!table.has(s))
      throw FeatureError("molecule missing from descriptor table: " + s);
  const int dim = kDescriptorDim;
  DescriptorTable out = table;
  out.stats.assign(dim, {});
  const double n = static_cast<double>(fit_set.size());
  std::vector<double> col(fit_set.size());
  for (int j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < fit_set.size(); ++i)
      col[i] = table.raw.at(fit_set[i])[j];
    std::sort(col.begin(), col.end());
    FeatureCdf fc;
    std::size_t i = 0;
    while (i < col.size()) {
      std::size_t k = i;
      while (k < col.size() && col[k] == col[i]) ++k;
      const double less = static_cast<double>(i);
      const double ties = static_cast<double>(k - i);
      fc.values.push_back(col[i]);
      fc.cdf.push_back((less + (ties + 1.0) / 2.0) / (n + 1.0));
      i = k;
    }
    out.stats[j] = std::move(fc);
  }
  out.fitted = true;
  return out;
}

inline double apply_cdf(const FeatureCdf& fc, double v) {
  if (fc.values.empty()) return 0.5;
  if (fc.values.size() == 1) return 0.5;  // constant feature
  if (v <= fc.values.front()) return fc.cdf.front();
  if (v >= fc.values.back()) return fc.cdf.back();
  const auto it = std::lower_bound(fc.values.begin(), fc.values.end(), v);
  const std::size_t hi = static_cast<std::size_t>(it - fc.values.begin());
  if (fc.values[hi] == v) return fc.cdf[hi];
  const std::size_t lo = hi - 1;
  const double t = (v - fc.values[lo]) / (fc.values[hi] - fc.values[lo]);
  return fc.cdf[lo] + t * (fc.cdf[hi] - fc.cdf[lo]);
}

inline std::vector<double> normalized_descriptor(const DescriptorTable& table,
                                                 const std::string& canonical) {
  if (!table.fitted)
    throw FeatureError("descriptor table is not fitted; call normalize_descriptors");
  auto it = table.raw.find(canonical);
  if (it == table.raw.end())
    throw FeatureError("molecule missing from descriptor table: " + canonical);
  std::vector<double> v(kDescriptorDim);
  for (int j = 0; j < kDescriptorDim; ++j)
    v[j] = apply_cdf(table.stats[j], it->second[j]);
  return v;
}

// ---------------------------------------------------------------------------
// Graph tensors: the numeric form consumed by the GNN. Every undirected bond
// becomes two directed entries.
// ---------------------------------------------------------------------------

struct GraphTensors {
  int num_atoms = 0;
  int num_edges = 0;                        // directed count
  std::vector<double> node_features;        // [num_atoms x kNodeFeatureDim]
  std::vector<double> edge_features;        // [num_edges x kEdgeFeatureDim]
  std::vector<std::pair<int, int>> edge_index;  // (src, dst), src != dst
  std::vector<double> global;               // [kDescriptorDim]
};

inline GraphTensors build_graph_tensors(const chem::MolecularGraph& g,
                                        const DescriptorTable& table) {
  GraphTensors t;
  t.num_atoms = static_cast<int>(g.atoms.size());
  t.num_edges = static_cast<int>(g.bonds.size()) * 2;
  t.node_features.reserve(t.num_atoms * kNodeFeatureDim);
  for (int ai = 0; ai < t.num_atoms; ++ai) {
    auto v = node_feature_vector(g, ai);
    t.node_features.insert(t.node_features.end(), v.begin(), v.end());
  }
  t.edge_features.reserve(t.num_edges * kEdgeFeatureDim);
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    const auto v = edge_feature_vector(g, static_cast<int>(bi));
    t.edge_features.insert(t.edge_features.end(), v.begin(), v.end());
    t.edge_features.insert(t.edge_features.end(), v.begin(), v.end());
    t.edge_index.emplace_back(g.bonds[bi].a, g.bonds[bi].b);
    t.edge_index.emplace_back(g.bonds[bi].b, g.bonds[bi].a);
  }
  t.global = normalized_descriptor(table, chem::canonicalize(g));
  return t;
}

// Block-diagonal batch of graphs for one forward pass.
struct GraphBatch {
  int num_graphs = 0;
  int total_nodes = 0;
  int total_edges = 0;
  std::vector<double> node_features;
  std::vector<double> edge_features;
  std::vector<std::int64_t> edge_src, edge_dst;  // into batch node ids
  std::vector<std::int64_t> node_graph;          // graph id per node
  std::vector<double> globals;                   // [num_graphs x kDescriptorDim]
};

inline GraphBatch make_batch(const std::vector<const GraphTensors*>& graphs) {
  GraphBatch b;
  b.num_graphs = static_cast<int>(graphs.size());
  for (const auto* g : graphs) {
    const std::int64_t node_off = b.total_nodes;
    b.node_features.insert(b.node_features.end(), g->node_features.begin(),
                           g->node_features.end());
    b.edge_features.insert(b.edge_features.end(), g->edge_features.begin(),
                           g->edge_features.end());
    for (const auto& [src, dst] : g->edge_index) {
      b.edge_src.push_back(node_off + src);
      b.edge_dst.push_back(node_off + dst);
    }
    b.total_nodes += g->num_atoms;
    b.total_edges += g->num_edges;
    b.globals.insert(b.globals.end(), g->global.begin(), g->global.end());
  }
  for (std::size_t gi = 0; gi < graphs.size(); ++gi)
    for (int i = 0; i < graphs[gi]->num_atoms; ++i)
      b.node_graph.push_back(static_cast<std::int64_t>(gi));
  return b;
}

}  // namespace pommix::feat
