#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pommix/smiles.hpp"

namespace pommix::chem {

namespace detail_canon {

// ---------------------------------------------------------------------------
// Ring enumeration: smallest cycle through every ring bond (BFS), deduped.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> find_rings(const MolecularGraph& g,
                                                int max_size = 8) {
  std::vector<std::vector<int>> rings;
  std::set<std::vector<int>> seen;
  const int na = static_cast<int>(g.atoms.size());
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    if (!g.bonds[bi].in_ring) continue;
    const int src = g.bonds[bi].a, dst = g.bonds[bi].b;
    std::vector<int> parent(na, -2);
    std::vector<int> queue{src};
    parent[src] = -1;
    for (std::size_t qi = 0; qi < queue.size() && parent[dst] == -2; ++qi) {
      const int u = queue[qi];
      for (int nb : g.adj[u]) {
        if (nb == static_cast<int>(bi)) continue;
        const int v = g.other_end(nb, u);
        if (parent[v] == -2) {
          parent[v] = u;
          queue.push_back(v);
        }
      }
    }
    if (parent[dst] == -2) continue;
    std::vector<int> ring;
    for (int v = dst; v != -1; v = parent[v]) ring.push_back(v);
    if (static_cast<int>(ring.size()) > max_size) continue;
    std::vector<int> key = ring;
    std::sort(key.begin(), key.end());
    if (seen.insert(key).second) rings.push_back(ring);
  }
  return rings;
}

// pi-electron contribution of one ring atom, or -1 if it breaks aromaticity.
inline int pi_contribution(const MolecularGraph& g, const std::set<int>& ring,
                           int ai) {
  const Atom& a = g.atoms[ai];
  if (g.degree(ai) > 3) return -1;
  bool double_in_ring = false, double_exo = false;
  for (int bi : g.adj[ai]) {
    const Bond& b = g.bonds[bi];
    if (b.order == BondOrder::triple) return -1;
    if (b.order == BondOrder::double_bond) {
      if (ring.count(g.other_end(bi, ai)))
        double_in_ring = true;
      else
        double_exo = true;
    }
  }
  if (double_in_ring) return 1;
  if (double_exo) return 0;
  switch (a.atomic_number) {
    case 6:
      if (a.aromatic) return 1;  // carried over from an adjacent aromatic ring
      if (a.formal_charge < 0) return 2;
      if (a.formal_charge > 0) return 0;
      return -1;  // saturated carbon
    case 7: case 15: case 33:
      if (a.formal_charge > 0 && a.num_h == 0 && g.degree(ai) <= 2) return -1;
      return (a.num_h > 0 || g.degree(ai) >= 3 || a.formal_charge < 0)
                 ? 2
                 : (a.aromatic ? 1 : -1);
    case 8: case 16: case 34:
      return a.formal_charge > 0 ? 1 : 2;
    case 5:
      return 0;
    default:
      return -1;
  }
}

// Promote alternating (kekulized) rings to the aromatic form so both input
// spellings of the same molecule canonicalize identically. Fixpoint over the
// short-ring set; conservative Hueckel count.
inline void aromatize(MolecularGraph& g) {
  const auto rings = find_rings(g);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& ring : rings) {
      const std::set<int> rset(ring.begin(), ring.end());
      const int rn = static_cast<int>(ring.size());
      // collect ring bonds; skip if already fully aromatic
      std::vector<int> ring_bonds;
      bool all_aromatic = true, ok = true;
      for (int k = 0; k < rn && ok; ++k) {
        const int u = ring[k], v = ring[(k + 1) % rn];
        int found = -1;
        for (int bi : g.adj[u])
          if (g.other_end(bi, u) == v) found = bi;
        if (found < 0) {
          ok = false;
          break;
        }
        const BondOrder o = g.bonds[found].order;
        if (o == BondOrder::triple) ok = false;
        if (o != BondOrder::aromatic) all_aromatic = false;
        ring_bonds.push_back(found);
      }
      if (!ok || all_aromatic) continue;
      int pi = 0;
      for (int ai : ring) {
        const int c = pi_contribution(g, rset, ai);
        if (c < 0) {
          pi = -1;
          break;
        }
        pi += c;
      }
      if (pi < 0 || pi % 4 != 2) continue;
      for (int ai : ring) g.atoms[ai].aromatic = true;
      for (int bi : ring_bonds) g.bonds[bi].order = BondOrder::aromatic;
      changed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Invariant refinement (1-WL with canonical class ids) plus branch-and-min
// individualization, so equal molecules yield equal strings under any input
// atom order.
// ---------------------------------------------------------------------------

inline int bond_code(BondOrder o) {
  switch (o) {
    case BondOrder::single: return 1;
    case BondOrder::double_bond: return 2;
    case BondOrder::triple: return 3;
    case BondOrder::aromatic: return 4;
  }
  return 1;
}

struct Canonicalizer {
  const MolecularGraph& g;
  std::vector<int> comp;  // atom indices of this component
  std::vector<int> pos;   // atom index -> position in comp (-1 outside)

  explicit Canonicalizer(const MolecularGraph& graph, std::vector<int> atoms)
      : g(graph), comp(std::move(atoms)) {
    pos.assign(g.atoms.size(), -1);
    for (std::size_t k = 0; k < comp.size(); ++k) pos[comp[k]] = int(k);
  }

  std::vector<long long> initial_classes() const {
    // signature sort gives order-independent dense ids
    std::vector<std::vector<long long>> sig(comp.size());
    for (std::size_t k = 0; k < comp.size(); ++k) {
      const Atom& a = g.atoms[comp[k]];
      sig[k] = {a.atomic_number, a.formal_charge, a.num_h, a.aromatic ? 1 : 0,
                g.atom_in_ring(comp[k]) ? 1 : 0, g.degree(comp[k])};
    }
    return assign_ids(sig);
  }

  static std::vector<long long> assign_ids(
      const std::vector<std::vector<long long>>& sig) {
    std::vector<std::vector<long long>> sorted = sig;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<long long> ids(sig.size());
    for (std::size_t k = 0; k < sig.size(); ++k)
      ids[k] = static_cast<long long>(
          std::lower_bound(sorted.begin(), sorted.end(), sig[k]) -
          sorted.begin());
    return ids;
  }

  void refine(std::vector<long long>& cls) const {
    while (true) {
      std::vector<std::vector<long long>> sig(comp.size());
      for (std::size_t k = 0; k < comp.size(); ++k) {
        const int ai = comp[k];
        std::vector<long long> nb;
        for (int bi : g.adj[ai]) {
          const int v = g.other_end(bi, ai);
          nb.push_back(bond_code(g.bonds[bi].order) * 1000003LL + cls[pos[v]]);
        }
        std::sort(nb.begin(), nb.end());
        sig[k].push_back(cls[k]);
        sig[k].insert(sig[k].end(), nb.begin(), nb.end());
      }
      auto next = assign_ids(sig);
      const auto count = [](const std::vector<long long>& v) {
        auto s = v;
        std::sort(s.begin(), s.end());
        return std::unique(s.begin(), s.end()) - s.begin();
      };
      const auto before = count(cls), after = count(next);
      cls = std::move(next);
      if (after == before) break;
    }
  }

  bool discrete(const std::vector<long long>& cls) const {
    std::vector<long long> s = cls;
    std::sort(s.begin(), s.end());
    return std::adjacent_find(s.begin(), s.end()) == s.end();
  }

  std::string canonical() const {
    auto cls = initial_classes();
    return resolve(std::move(cls));
  }

  std::string resolve(std::vector<long long> cls) const {
    refine(cls);
    if (discrete(cls)) return write(cls);
    // split the smallest ambiguous class; take the lexicographic minimum
    long long target = -1;
    std::map<long long, int> counts;
    for (auto c : cls) ++counts[c];
    for (auto& [c, cnt] : counts)
      if (cnt > 1) {
        target = c;
        break;
      }
    std::string best;
    for (std::size_t k = 0; k < cls.size(); ++k) {
      if (cls[k] != target) continue;
      auto branch = cls;
      branch[k] = -1;  // individualize: sorts before every other class
      std::string s = resolve(std::move(branch));
      if (best.empty() || s < best) best = std::move(s);
    }
    return best;
  }

  // -- SMILES writer ---------------------------------------------------------

  std::string write(const std::vector<long long>& cls) const {
    // DFS from the top-ranked atom; neighbors in rank order.
    std::vector<char> visited(g.atoms.size(), 0);
    std::vector<int> tree_bond(g.atoms.size(), -1);
    std::vector<std::vector<std::pair<int, int>>> ring_digits(
        g.atoms.size());  // (digit, bond idx); both endpoints share the entry
    int next_digit = 1;

    int start = comp[0];
    for (int ai : comp)
      if (cls[pos[ai]] < cls[pos[start]]) start = ai;

    auto rank_sorted_neighbors = [&](int ai) {
      std::vector<int> nbs = g.adj[ai];
      std::sort(nbs.begin(), nbs.end(), [&](int x, int y) {
        return cls[pos[g.other_end(x, ai)]] < cls[pos[g.other_end(y, ai)]];
      });
      return nbs;
    };

    // pass 1: tree structure + ring-closure digits in discovery order
    {
      std::vector<int> stack{start};
      visited[start] = 1;
      std::vector<std::vector<int>> order_cache(g.atoms.size());
      std::vector<std::size_t> cursor(g.atoms.size(), 0);
      order_cache[start] = rank_sorted_neighbors(start);
      std::set<int> closed;
      while (!stack.empty()) {
        const int u = stack.back();
        if (cursor[u] >= order_cache[u].size()) {
          stack.pop_back();
          continue;
        }
        const int bi = order_cache[u][cursor[u]++];
        if (bi == tree_bond[u]) continue;
        const int v = g.other_end(bi, u);
        if (!visited[v]) {
          visited[v] = 1;
          tree_bond[v] = bi;
          order_cache[v] = rank_sorted_neighbors(v);
          stack.push_back(v);
        } else if (!closed.count(bi)) {
          closed.insert(bi);
          if (next_digit > 99)
            throw std::runtime_error("canonical writer: too many ring closures");
          ring_digits[u].push_back({next_digit, bi});
          ring_digits[v].push_back({next_digit, bi});
          ++next_digit;
        }
      }
    }

    // pass 2: emit
    std::string out;
    std::vector<char> emitted(g.atoms.size(), 0);
    emit(start, -1, cls, tree_bond, ring_digits, emitted, out);
    return out;
  }

  void emit(int ai, int via_bond, const std::vector<long long>& cls,
            const std::vector<int>& tree_bond,
            const std::vector<std::vector<std::pair<int, int>>>& ring_digits,
            std::vector<char>& emitted, std::string& out) const {
    if (via_bond >= 0) out += bond_symbol(via_bond);
    out += atom_token(ai);
    emitted[ai] = 1;
    for (const auto& [digit, bi] : ring_digits[ai]) {
      const int other = g.other_end(bi, ai);
      if (emitted[other]) out += bond_symbol(bi);  // symbol at closing end
      if (digit >= 10) out += '%';
      out += std::to_string(digit);
    }
    std::vector<int> children;
    for (int bi : g.adj[ai]) {
      const int v = g.other_end(bi, ai);
      if (tree_bond[v] == bi && !emitted[v]) children.push_back(bi);
    }
    std::sort(children.begin(), children.end(), [&](int x, int y) {
      return cls[pos[g.other_end(x, ai)]] < cls[pos[g.other_end(y, ai)]];
    });
    for (std::size_t k = 0; k < children.size(); ++k) {
      const int bi = children[k];
      const int v = g.other_end(bi, ai);
      const bool last = k + 1 == children.size();
      if (!last) out += '(';
      emit(v, bi, cls, tree_bond, ring_digits, emitted, out);
      if (!last) out += ')';
    }
  }

  std::string bond_symbol(int bi) const {
    const Bond& b = g.bonds[bi];
    const bool both_arom = g.atoms[b.a].aromatic && g.atoms[b.b].aromatic;
    switch (b.order) {
      case BondOrder::single: return both_arom ? "-" : "";
      case BondOrder::double_bond: return "=";
      case BondOrder::triple: return "#";
      case BondOrder::aromatic: return "";
    }
    return "";
  }

  // Hydrogen count a reader would infer for this atom written bare.
  int reader_default_h(int ai) const {
    const Atom& a = g.atoms[ai];
    const auto& vals = detail::normal_valences(a.atomic_number);
    if (vals.empty()) return -1;
    if (a.aromatic) {
      // mirror the parser: H = default valence - (explicit orders +
      // aromatic-bond count + kekule double-bond need)
      int needs;
      switch (a.atomic_number) {
        case 6: needs = 1; break;
        case 7: case 15: needs = g.degree(ai) >= 3 ? 0 : 1; break;
        default: needs = 0; break;
      }
      int sum = 0, narom = 0;
      for (int bi : g.adj[ai]) {
        const BondOrder o = g.bonds[bi].order;
        if (o == BondOrder::aromatic) {
          ++narom;
        } else {
          sum += detail::bond_order_value(o);
          if (o == BondOrder::double_bond || o == BondOrder::triple) needs = 0;
        }
      }
      return std::max(-1, vals.front() - (sum + narom + needs));
    }
    int sum = 0;
    for (int bi : g.adj[ai]) sum += detail::bond_order_value(g.bonds[bi].order);
    for (int v : vals)
      if (v >= sum) return v - sum;
    return -1;
  }

  std::string atom_token(int ai) const {
    const Atom& a = g.atoms[ai];
    const std::string sym = element_symbol(a.atomic_number);
    const bool organic = sym == "B" || sym == "C" || sym == "N" ||
                         sym == "O" || sym == "P" || sym == "S" ||
                         sym == "F" || sym == "Cl" || sym == "Br" ||
                         sym == "I";
    const bool arom_writable =
        !a.aromatic || (sym == "B" || sym == "C" || sym == "N" || sym == "O" ||
                        sym == "P" || sym == "S" || sym == "Se" || sym == "As");
    std::string token = sym;
    if (a.aromatic && arom_writable)
      for (auto& ch : token) ch = static_cast<char>(std::tolower(ch));
    const bool bare = organic && arom_writable && a.formal_charge == 0 &&
                      reader_default_h(ai) == a.num_h;
    if (bare) return token;
    std::string br = "[" + token;
    if (a.num_h == 1) br += "H";
    else if (a.num_h > 1) br += "H" + std::to_string(a.num_h);
    if (a.formal_charge != 0) {
      br += a.formal_charge > 0 ? '+' : '-';
      if (std::abs(a.formal_charge) > 1)
        br += std::to_string(std::abs(a.formal_charge));
    }
    br += "]";
    return br;
  }
};

inline std::vector<std::vector<int>> components(const MolecularGraph& g) {
  std::vector<std::vector<int>> comps;
  std::vector<char> seen(g.atoms.size(), 0);
  for (std::size_t root = 0; root < g.atoms.size(); ++root) {
    if (seen[root]) continue;
    std::vector<int> comp;
    std::vector<int> stack{static_cast<int>(root)};
    seen[root] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (int bi : g.adj[u]) {
        const int v = g.other_end(bi, u);
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

}  // namespace detail_canon

// Deterministic canonical form for within-corpus deduplication. Kekulized
// aromatic rings are promoted to the aromatic spelling first; stereo
// annotations are not emitted.
inline std::string canonicalize(const MolecularGraph& g) {
  MolecularGraph work = g;
  detail_canon::aromatize(work);
  std::vector<std::string> parts;
  for (auto& comp : detail_canon::components(work)) {
    detail_canon::Canonicalizer canon(work, std::move(comp));
    parts.push_back(canon.canonical());
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

inline std::string canonical_smiles(const std::string& smiles) {
  return canonicalize(parse_smiles(smiles));
}

}  // namespace pommix::chem
