#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pommix/canonical.hpp"
#include "pommix/csv.hpp"
#include "pommix/featurize.hpp"
#include "pommix/rng.hpp"
#include "pommix/smiles.hpp"

namespace pommix::data {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Mono-molecular records (GS-LF style): canonical SMILES + binary labels.
// ---------------------------------------------------------------------------

struct MonoRecord {
  std::string smiles;  // canonical
  std::vector<std::uint8_t> labels;
};

struct MonoDataset {
  std::vector<std::string> label_names;
  std::vector<MonoRecord> records;
};

struct RawMolecules {
  std::vector<std::string> label_names;
  std::vector<std::string> smiles;                    // as read
  std::vector<std::vector<std::uint8_t>> labels;
};

// molecules.csv: smiles,label_1,... with 0/1 cells
inline RawMolecules load_molecules_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  if (csv.header.empty() || csv.header[0] != "smiles")
    throw DataError("molecules csv must start with a 'smiles' column: " + path);
  RawMolecules raw;
  raw.label_names.assign(csv.header.begin() + 1, csv.header.end());
  for (const auto& row : csv.rows) {
    if (row.size() != csv.header.size())
      throw DataError("molecules csv row with wrong field count for '" +
                      (row.empty() ? std::string("?") : row[0]) + "'");
    raw.smiles.push_back(row[0]);
    std::vector<std::uint8_t> lab(raw.label_names.size());
    for (std::size_t j = 0; j < lab.size(); ++j)
      lab[j] = row[j + 1] == "1" ? 1 : 0;
    raw.labels.push_back(std::move(lab));
  }
  return raw;
}

// Elements whose presence marks a molecule inorganic for the cleaning
// pipeline: He Na Mg Al Si K Ca Ti V Cr Fe Co Cu Zn Bi.
inline const std::set<int>& inorganic_filter_elements() {
  static const std::set<int> z = {2,  11, 12, 13, 14, 19, 20, 22,
                                  23, 24, 26, 27, 29, 30, 83};
  return z;
}

struct FilterReport {
  int input_rows = 0;
  int malformed = 0;
  int inorganic = 0;
  int duplicate = 0;
  int charged = 0;
  int multifragment = 0;
  int weight = 0;       // MW < 20 or > 600
  int carbon_free = 0;
  int labels_dropped = 0;
  int unlabeled_molecules = 0;
  int final_count = 0;
  std::vector<std::pair<int, std::string>> malformed_rows;  // 1-based data row

  std::string counts_string() const {
    return std::to_string(inorganic) + "/" + std::to_string(duplicate) + "/" +
           std::to_string(charged) + "/" + std::to_string(multifragment) +
           "/" + std::to_string(weight) + "/" + std::to_string(carbon_free);
  }
};

// Cleaning pipeline, applied in order; a molecule is charged to the first
// filter that rejects it. After the structural filters, labels applied to
// fewer than `min_label_count` molecules are dropped and molecules left
// without labels removed.
inline std::pair<MonoDataset, FilterReport> filter_gslf(
    const RawMolecules& raw, int min_label_count = 20) {
  FilterReport rep;
  rep.input_rows = static_cast<int>(raw.smiles.size());
  MonoDataset out;
  out.label_names = raw.label_names;

  std::set<std::string> seen;
  for (std::size_t i = 0; i < raw.smiles.size(); ++i) {
    chem::MolecularGraph g;
    std::string canonical;
    try {
      g = chem::parse_smiles(raw.smiles[i]);
      canonical = chem::canonicalize(g);
    } catch (const chem::ParseError& e) {
      ++rep.malformed;
      rep.malformed_rows.emplace_back(static_cast<int>(i) + 1, e.what());
      continue;
    }
    bool inorganic = false;
    for (const auto& a : g.atoms)
      inorganic = inorganic || inorganic_filter_elements().count(a.atomic_number) > 0;
    if (inorganic) {
      ++rep.inorganic;
      continue;
    }
    if (!seen.insert(canonical).second) {
      ++rep.duplicate;
      continue;
    }
    bool charged = false;
    for (const auto& a : g.atoms) charged = charged || a.formal_charge != 0;
    if (charged) {
      ++rep.charged;
      continue;
    }
    if (g.fragment_count > 1) {
      ++rep.multifragment;
      continue;
    }
    const double mw = chem::molecular_weight(g);
    if (mw < 20.0 || mw > 600.0) {
      ++rep.weight;
      continue;
    }
    bool has_carbon = false;
    for (const auto& a : g.atoms) has_carbon = has_carbon || a.atomic_number == 6;
    if (!has_carbon) {
      ++rep.carbon_free;
      continue;
    }
    out.records.push_back({canonical, raw.labels[i]});
  }

  // label frequency filter, then molecules with no remaining labels
  const std::size_t nl = out.label_names.size();
  std::vector<int> counts(nl, 0);
  for (const auto& r : out.records)
    for (std::size_t j = 0; j < nl; ++j) counts[j] += r.labels[j];
  std::vector<std::size_t> kept_labels;
  for (std::size_t j = 0; j < nl; ++j)
    if (counts[j] >= min_label_count) kept_labels.push_back(j);
  rep.labels_dropped = static_cast<int>(nl - kept_labels.size());

  std::vector<std::string> new_names;
  for (auto j : kept_labels) new_names.push_back(out.label_names[j]);
  std::vector<MonoRecord> kept_records;
  for (auto& r : out.records) {
    std::vector<std::uint8_t> lab(kept_labels.size());
    int active = 0;
    for (std::size_t j = 0; j < kept_labels.size(); ++j) {
      lab[j] = r.labels[kept_labels[j]];
      active += lab[j];
    }
    if (active == 0) {
      ++rep.unlabeled_molecules;
      continue;
    }
    kept_records.push_back({std::move(r.smiles), std::move(lab)});
  }
  out.label_names = std::move(new_names);
  out.records = std::move(kept_records);
  rep.final_count = static_cast<int>(out.records.size());
  return {std::move(out), rep};
}

// ---------------------------------------------------------------------------
// Mixture corpus
// ---------------------------------------------------------------------------

struct Mixture {
  int id = -1;                          // index into the deduplicated list
  std::string dataset;                  // tag of first occurrence
  std::vector<std::string> components;  // canonical SMILES, sorted unique
};

struct MixturePair {
  int a = -1, b = -1;  // mixture ids
  double distance = 0.0;
  std::string dataset;
  std::string experiment_type;  // explicit | triangle
  bool is_identical = false;
};

struct MixtureCorpus {
  std::vector<Mixture> mixtures;
  std::vector<MixturePair> pairs;

  std::vector<std::string> unique_molecules() const {
    std::set<std::string> s;
    for (const auto& m : mixtures) s.insert(m.components.begin(), m.components.end());
    return {s.begin(), s.end()};
  }
};

struct RawMixtureRow {
  std::string dataset, mixture_id;
  std::vector<std::string> smiles;
};

struct RawPairRow {
  std::string dataset, id_a, id_b;
  double distance = 0.0;
  std::string experiment_type;
};

inline std::vector<RawMixtureRow> load_mixtures_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const int cd = csv.column("dataset"), ci = csv.column("mixture_id"),
            cs = csv.column("smiles_list");
  if (cd < 0 || ci < 0 || cs < 0)
    throw DataError("mixtures csv needs dataset,mixture_id,smiles_list: " + path);
  std::vector<RawMixtureRow> rows;
  for (const auto& r : csv.rows) {
    RawMixtureRow row;
    row.dataset = r[cd];
    row.mixture_id = r[ci];
    std::string cur;
    for (char c : r[cs] + ";") {
      if (c == ';') {
        if (!cur.empty()) row.smiles.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<RawPairRow> load_pairs_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const int cd = csv.column("dataset"), ca = csv.column("mixture_id_a"),
            cb = csv.column("mixture_id_b"), cv = csv.column("distance"),
            ce = csv.column("experiment_type");
  if (cd < 0 || ca < 0 || cb < 0 || cv < 0 || ce < 0)
    throw DataError(
        "pairs csv needs dataset,mixture_id_a,mixture_id_b,distance,"
        "experiment_type: " + path);
  std::vector<RawPairRow> rows;
  for (const auto& r : csv.rows)
    rows.push_back({r[cd], r[ca], r[cb], std::stod(r[cv]), r[ce]});
  return rows;
}

// Deduplicates mixtures by canonical component set and resolves pair
// references. Labels are distances: 0 means identical percepts.
inline MixtureCorpus compile_mixture_pairs(
    const std::vector<RawMixtureRow>& mixture_rows,
    const std::vector<RawPairRow>& pair_rows) {
  MixtureCorpus corpus;
  std::map<std::vector<std::string>, int> by_components;
  std::map<std::pair<std::string, std::string>, int> by_source_id;
  for (const auto& row : mixture_rows) {
    if (row.smiles.empty())
      throw DataError("mixture " + row.dataset + "/" + row.mixture_id +
                      " has no components");
    std::set<std::string> comp;
    for (const auto& s : row.smiles) comp.insert(chem::canonical_smiles(s));
    std::vector<std::string> key(comp.begin(), comp.end());
    auto it = by_components.find(key);
    int id;
    if (it == by_components.end()) {
      id = static_cast<int>(corpus.mixtures.size());
      by_components.emplace(key, id);
      corpus.mixtures.push_back({id, row.dataset, key});
    } else {
      id = it->second;
    }
    const auto source_key = std::make_pair(row.dataset, row.mixture_id);
    auto [sit, inserted] = by_source_id.emplace(source_key, id);
    if (!inserted && sit->second != id)
      throw DataError("mixture id " + row.dataset + "/" + row.mixture_id +
                      " maps to two different component sets");
  }
  for (const auto& row : pair_rows) {
    auto ita = by_source_id.find({row.dataset, row.id_a});
    auto itb = by_source_id.find({row.dataset, row.id_b});
    if (ita == by_source_id.end() || itb == by_source_id.end())
      throw DataError("pair references unknown mixture " + row.dataset + "/" +
                      (ita == by_source_id.end() ? row.id_a : row.id_b));
    if (row.distance < 0.0 || row.distance > 1.0)
      throw DataError("pair label outside [0,1]: " +
                      std::to_string(row.distance));
    if (row.experiment_type != "explicit" && row.experiment_type != "triangle")
      throw DataError("unknown experiment_type: " + row.experiment_type);
    MixturePair p;
    p.a = ita->second;
    p.b = itb->second;
    p.distance = row.distance;
    p.dataset = row.dataset;
    p.experiment_type = row.experiment_type;
    p.is_identical = p.a == p.b;
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

inline MixtureCorpus load_mixture_corpus(const std::string& mixtures_path,
                                         const std::string& pairs_path) {
  return compile_mixture_pairs(load_mixtures_csv(mixtures_path),
                               load_pairs_csv(pairs_path));
}

inline void check_descriptor_coverage(const MixtureCorpus& corpus,
                                      const feat::DescriptorTable& table) {
  for (const auto& m : corpus.mixtures)
    for (const auto& s : m.components)
      if (!table.has(s))
        throw DataError("mixture component missing from descriptor table: " + s);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct Fold {
  std::vector<int> train, val, test;
};

struct SplitSpec {
  std::string kind;  // cv5 | lmo | size_threshold
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::vector<Fold> folds;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const SplitSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind;
  j["seed"] = s.seed;
  j["params"] = s.params;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : s.folds)
    j["folds"].push_back(
        {{"train", f.train}, {"val", f.val}, {"test", f.test}});
  if (!s.warnings.empty()) j["warnings"] = s.warnings;
  return j;
}

inline SplitSpec split_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.kind = j.at("kind");
  s.seed = j.at("seed");
  s.params = j.value("params", nlohmann::json::object());
  for (const auto& f : j.at("folds")) {
    Fold fold;
    fold.train = f.at("train").get<std::vector<int>>();
    fold.val = f.at("val").get<std::vector<int>>();
    fold.test = f.at("test").get<std::vector<int>>();
    s.folds.push_back(std::move(fold));
  }
  if (j.contains("warnings"))
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
  return s;
}

inline void save_splits(const std::string& path, const SplitSpec& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(s).dump(2) << '\n';
}

inline SplitSpec load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  return split_from_json(nlohmann::json::parse(in));
}

namespace detail {

// 7:1 train:val split of `rest`, stratified per source so every fold keeps
// the global source proportions.
inline void deal_train_val(const std::vector<std::vector<int>>& rest_by_source,
                           std::uint64_t seed, std::uint64_t stream, Fold& fold) {
  for (std::size_t s = 0; s < rest_by_source.size(); ++s) {
    auto rest = rest_by_source[s];
    auto rng = make_engine(seed, stream * 1000 + s);
    std::shuffle(rest.begin(), rest.end(), rng);
    const std::size_t n_val = rest.size() / 8;
    for (std::size_t i = 0; i < rest.size(); ++i)
      (i < n_val ? fold.val : fold.train).push_back(rest[i]);
  }
  std::sort(fold.train.begin(), fold.train.end());
  std::sort(fold.val.begin(), fold.val.end());
  std::sort(fold.test.begin(), fold.test.end());
}

}  // namespace detail

// Stratified k-fold CV: within each source the shuffled pairs are dealt
// round-robin into test folds through one global cursor, so test folds sizes
// differ by at most one and source proportions carry over.
inline SplitSpec make_cv_splits(const MixtureCorpus& corpus, int k,
                                std::uint64_t seed) {
  if (k < 2) throw DataError("make_cv_splits: k must be >= 2");
  SplitSpec spec;
  spec.kind = "cv" + std::to_string(k);
  spec.seed = seed;
  spec.params = {{"k", k}};

  std::map<std::string, std::vector<int>> by_source;
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i)
    by_source[corpus.pairs[i].dataset].push_back(static_cast<int>(i));

  std::vector<std::vector<int>> test_sets(k);
  std::map<std::string, std::vector<std::vector<int>>> rest(/*per source*/);
  int cursor = 0;
  std::uint64_t stream = 0;
  for (auto& [source, idx] : by_source) {
    if (static_cast<int>(idx.size()) < k)
      spec.warnings.push_back("source " + source + " has fewer pairs than k; all go to train");
    auto rng = make_engine(seed, stream);
    auto shuffled = idx;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto& rest_folds = rest[source];
    rest_folds.assign(k, {});
    if (static_cast<int>(idx.size()) < k) {
      for (int f = 0; f < k; ++f)
        rest_folds[f] = shuffled;  // never in test
    } else {
      std::vector<int> assigned(shuffled.size());
      for (std::size_t i = 0; i < shuffled.size(); ++i) {
        assigned[i] = cursor % k;
        ++cursor;
      }
      for (std::size_t i = 0; i < shuffled.size(); ++i)
        test_sets[assigned[i]].push_back(shuffled[i]);
      for (int f = 0; f < k; ++f)
        for (std::size_t i = 0; i < shuffled.size(); ++i)
          if (assigned[i] != f) rest_folds[f].push_back(shuffled[i]);
    }
    ++stream;
  }

  for (int f = 0; f < k; ++f) {
    Fold fold;
    fold.test = test_sets[f];
    std::vector<std::vector<int>> rest_by_source;
    for (auto& [source, folds] : rest) rest_by_source.push_back(folds[f]);
    detail::deal_train_val(rest_by_source, seed, std::uint64_t(f) + 17,
                           fold);
    spec.folds.push_back(std::move(fold));
  }
  return spec;
}

// Leave-molecules-out: held-out molecules are sampled until the pairs
// touching them reach the target test fraction. Train sets of different
// folds may overlap.
inline SplitSpec make_lmo_splits(const MixtureCorpus& corpus,
                                 std::uint64_t seed,
                                 double target_test_frac = 0.2,
                                 int n_folds = 5) {
  SplitSpec spec;
  spec.kind = "lmo";
  spec.seed = seed;
  spec.params = {{"target_test_frac", target_test_frac},
                 {"n_folds", n_folds}};
  const auto molecules = corpus.unique_molecules();
  // molecule -> pair indices touching it
  std::map<std::string, std::vector<int>> touching;
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    const auto& p = corpus.pairs[i];
    for (int mid : {p.a, p.b})
      for (const auto& s : corpus.mixtures[mid].components)
        touching[s].push_back(static_cast<int>(i));
  }
  for (const auto& [mol, idx] : touching) {
    std::set<int> uniq(idx.begin(), idx.end());
    if (uniq.size() * 2 > corpus.pairs.size())
      spec.warnings.push_back("molecule " + mol +
                              " touches more than half of all pairs");
  }

  for (int f = 0; f < n_folds; ++f) {
    auto rng = make_engine(seed, std::uint64_t(f));
    auto order = molecules;
    std::shuffle(order.begin(), order.end(), rng);
    std::set<std::string> held;
    std::set<int> test_pairs;
    const std::size_t target =
        static_cast<std::size_t>(target_test_frac * double(corpus.pairs.size()));
    for (const auto& mol : order) {
      if (test_pairs.size() >= target) break;
      held.insert(mol);
      for (int pi : touching[mol]) test_pairs.insert(pi);
    }
    Fold fold;
    fold.test.assign(test_pairs.begin(), test_pairs.end());
    std::vector<int> rest;
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i)
      if (!test_pairs.count(static_cast<int>(i)))
        rest.push_back(static_cast<int>(i));
    detail::deal_train_val({rest}, seed, std::uint64_t(f) + 31, fold);
    spec.params["held_out"][std::to_string(f)] =
        std::vector<std::string>(held.begin(), held.end());
    spec.folds.push_back(std::move(fold));
  }
  return spec;
}

inline double pair_size_statistic(const MixtureCorpus& corpus,
                                  const MixturePair& p) {
  return std::sqrt(double(corpus.mixtures[p.a].components.size()) *
                   double(corpus.mixtures[p.b].components.size()));
}

// Size-threshold ablation: train on pairs whose geometric-mean size is below
// the threshold, test on the rest; one fold per threshold.
inline SplitSpec make_size_threshold_splits(const MixtureCorpus& corpus,
                                            const std::vector<double>& thresholds,
                                            std::uint64_t seed) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw DataError("thresholds must be ascending");
  SplitSpec spec;
  spec.kind = "size_threshold";
  spec.seed = seed;
  spec.params = {{"thresholds", thresholds}};
  spec.params["fold_thresholds"] = nlohmann::json::array();
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<int> train_pool, test;
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
      if (pair_size_statistic(corpus, corpus.pairs[i]) < thresholds[t])
        train_pool.push_back(static_cast<int>(i));
      else
        test.push_back(static_cast<int>(i));
    }
    if (train_pool.empty() || test.empty()) {
      spec.warnings.push_back("threshold " + std::to_string(thresholds[t]) +
                              " yields an empty train or test set; skipped");
      continue;
    }
    Fold fold;
    fold.test = test;
    detail::deal_train_val({train_pool}, seed, 71 + t, fold);
    spec.params["fold_thresholds"].push_back(thresholds[t]);
    spec.folds.push_back(std::move(fold));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Jaccard augmentation: synthetic single-molecule pairs labeled by the
// Jaccard distance of their odor-label sets.
// ---------------------------------------------------------------------------

inline double jaccard_distance(const std::vector<std::uint8_t>& a,
                               const std::vector<std::uint8_t>& b) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : 1.0 - double(inter) / double(uni);
}

// Returns a corpus fragment of singleton mixtures + synthetic pairs over the
// eligible molecules (those with at least one label). Mixture ids index the
// returned fragment.
inline MixtureCorpus augment_with_jaccard(
    const MonoDataset& mono, const std::set<std::string>& eligible) {
  MixtureCorpus frag;
  std::vector<const MonoRecord*> mols;
  for (const auto& r : mono.records) {
    if (!eligible.count(r.smiles)) continue;
    bool any = false;
    for (auto v : r.labels) any = any || v;
    if (!any) continue;  // molecules without labels are excluded
    mols.push_back(&r);
  }
  for (std::size_t i = 0; i < mols.size(); ++i)
    frag.mixtures.push_back(
        {static_cast<int>(i), "jaccard_augment", {mols[i]->smiles}});
  for (std::size_t i = 0; i < mols.size(); ++i)
    for (std::size_t j = i + 1; j < mols.size(); ++j) {
      MixturePair p;
      p.a = static_cast<int>(i);
      p.b = static_cast<int>(j);
      p.distance = jaccard_distance(mols[i]->labels, mols[j]->labels);
      p.dataset = "jaccard_augment";
      p.experiment_type = "explicit";
      p.is_identical = false;
      frag.pairs.push_back(std::move(p));
    }
  return frag;
}

}  // namespace pommix::data
