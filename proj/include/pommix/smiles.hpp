#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pommix::chem {

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t position)
      : std::runtime_error(msg + " (at position " + std::to_string(position) +
                           ")"),
        pos(position) {}
  std::size_t pos;
};

// ---------------------------------------------------------------------------
// Element data, Z = 1 (H) .. 54 (Xe) plus Bi for the inorganic filter list.
// Masses are standard atomic weights.
// ---------------------------------------------------------------------------

inline constexpr int kMaxZ = 54;
inline constexpr int kBismuthZ = 83;

inline constexpr std::array<const char*, 55> kElementSymbols = {
    "?",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne",
    "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc",
    "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc",
    "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe"};

inline constexpr std::array<double, 55> kElementMasses = {
    0.0,     1.008,   4.0026,  6.94,    9.0122,  10.81,   12.011,  14.007,
    15.999,  18.998,  20.180,  22.990,  24.305,  26.982,  28.085,  30.974,
    32.06,   35.45,   39.95,   39.098,  40.078,  44.956,  47.867,  50.942,
    51.996,  54.938,  55.845,  58.933,  58.693,  63.546,  65.38,   69.723,
    72.630,  74.922,  78.971,  79.904,  83.798,  85.468,  87.62,   88.906,
    91.224,  92.906,  95.95,   97.0,    101.07,  102.91,  106.42,  107.87,
    112.41,  114.82,  118.71,  121.76,  127.60,  126.90,  131.29};

inline constexpr double kBismuthMass = 208.98;

inline int element_number(std::string_view symbol) {
  for (int z = 1; z <= kMaxZ; ++z)
    if (symbol == kElementSymbols[z]) return z;
  if (symbol == "Bi") return kBismuthZ;
  return 0;
}

inline std::string element_symbol(int z) {
  if (z == kBismuthZ) return "Bi";
  if (z >= 1 && z <= kMaxZ) return kElementSymbols[z];
  return "?";
}

inline double element_mass(int z) {
  if (z == kBismuthZ) return kBismuthMass;
  if (z >= 1 && z <= kMaxZ) return kElementMasses[z];
  return 0.0;
}

// ---------------------------------------------------------------------------
// Molecular graph
// ---------------------------------------------------------------------------

enum class BondOrder : std::uint8_t { single, double_bond, triple, aromatic };
enum class Chirality : std::uint8_t { none, cw, ccw, other };
enum class BondStereo : std::uint8_t { none, z, e, cis, trans, any };

struct Atom {
  int atomic_number = 0;
  int formal_charge = 0;
  bool aromatic = false;
  Chirality chirality = Chirality::none;
  int num_h = 0;          // total hydrogen count
  bool bracket = false;   // hydrogen count was user-specified
  int isotope = 0;
};

struct Bond {
  int a = -1, b = -1;     // endpoint atom indices, a != b
  BondOrder order = BondOrder::single;
  BondStereo stereo = BondStereo::none;
  bool in_ring = false;
  bool conjugated = false;
  // slash direction as written: 0 none, +1 '/', -1 '\' (oriented a -> b)
  int direction = 0;
};

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  int fragment_count = 1;
  // adjacency: per atom, indices into bonds
  std::vector<std::vector<int>> adj;

  int degree(int i) const { return static_cast<int>(adj[i].size()); }
  int other_end(int bond_idx, int atom) const {
    const Bond& b = bonds[bond_idx];
    return b.a == atom ? b.b : b.a;
  }
  bool atom_in_ring(int i) const {
    for (int bi : adj[i])
      if (bonds[bi].in_ring) return true;
    return false;
  }
};

inline double molecular_weight(const MolecularGraph& g) {
  double w = 0.0;
  for (const auto& a : g.atoms)
    w += element_mass(a.atomic_number) + a.num_h * kElementMasses[1];
  return w;
}

// ---------------------------------------------------------------------------
// Parser internals
// ---------------------------------------------------------------------------

namespace detail {

inline int bond_order_value(BondOrder o) {
  switch (o) {
    case BondOrder::single: return 1;
    case BondOrder::double_bond: return 2;
    case BondOrder::triple: return 3;
    case BondOrder::aromatic: return 1;  // handled via kekulized orders
  }
  return 1;
}

inline const std::vector<int>& normal_valences(int z) {
  static const std::map<int, std::vector<int>> table = {
      {5, {3}},          // B
      {6, {4}},          // C
      {7, {3, 5}},       // N
      {8, {2}},          // O
      {9, {1}},          // F
      {15, {3, 5}},      // P
      {16, {2, 4, 6}},   // S
      {17, {1}},         // Cl
      {35, {1}},         // Br
      {53, {1}},         // I
  };
  static const std::vector<int> none;
  auto it = table.find(z);
  return it == table.end() ? none : it->second;
}

struct RingOpen {
  int atom;
  char bond_char;  // 0 when unspecified
  std::size_t pos;
};

struct PendingBond {
  char symbol = 0;  // 0 none; otherwise - = # : / or backslash
  std::size_t pos = 0;
};

inline bool is_organic_aromatic(char c) {
  return c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's';
}

// Whether an aromatic atom must receive exactly one double bond during
// kekulization. Mirrors normal-valence bookkeeping; bracket atoms use their
// explicit hydrogen count, organic-subset atoms use the subset defaults.
inline int kekule_needs(const MolecularGraph& g, int ai) {
  const Atom& a = g.atoms[ai];
  for (int bi : g.adj[ai]) {
    const BondOrder o = g.bonds[bi].order;
    if (o == BondOrder::double_bond || o == BondOrder::triple) return 0;
  }
  const int deg = g.degree(ai);
  auto target = [&]() -> int {
    switch (a.atomic_number) {
      case 6: return 4 - std::abs(a.formal_charge);               // C
      case 7: case 15: case 33: return 3 + a.formal_charge;       // N P As
      case 8: case 16: case 34: return 2 + a.formal_charge;       // O S Se
      case 5: return 3;                                           // B
      default: return deg;  // no double bonds for anything else
    }
  };
  if (a.bracket) {
    const int needs = target() - deg - a.num_h;
    return std::clamp(needs, 0, 2);
  }
  switch (a.atomic_number) {
    case 6: return 1;
    case 7: case 15: return deg >= 3 ? 0 : 1;
    case 8: case 16: return 0;
    case 5: return 0;
    default: return 0;
  }
}

}  // namespace detail

inline void finalize_graph(MolecularGraph& g);

// ---------------------------------------------------------------------------
// parse_smiles: Daylight subset — organic-subset atoms, bracket atoms with
// isotope/chirality/H-count/charge, ring closures (digit and %nn), branches,
// bond symbols - = # : / \ and dot disconnection. Aromatic flags are taken
// from lowercase input; kekulization only assigns hydrogen counts.
// ---------------------------------------------------------------------------

inline MolecularGraph parse_smiles(const std::string& text) {
  using detail::PendingBond;
  using detail::RingOpen;

  if (text.empty()) throw ParseError("empty SMILES", 0);

  MolecularGraph g;
  g.atoms.reserve(text.size());
  std::vector<int> branch_stack;
  int prev = -1;
  PendingBond pending;
  std::map<int, RingOpen> ring_open;

  auto add_bond = [&](int a, int b, char symbol, std::size_t pos) {
    if (a == b) throw ParseError("ring bond joins an atom to itself", pos);
    for (const auto& bd : g.bonds)
      if ((bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
        throw ParseError("duplicate bond", pos);
    Bond bd;
    bd.a = a;
    bd.b = b;
    switch (symbol) {
      case 0:
        bd.order = (g.atoms[a].aromatic && g.atoms[b].aromatic)
                       ? BondOrder::aromatic
                       : BondOrder::single;
        break;
      case '-': bd.order = BondOrder::single; break;
      case '=': bd.order = BondOrder::double_bond; break;
      case '#': bd.order = BondOrder::triple; break;
      case ':': bd.order = BondOrder::aromatic; break;
      case '/':
        bd.order = BondOrder::single;
        bd.direction = 1;
        break;
      case '\\':
        bd.order = BondOrder::single;
        bd.direction = -1;
        break;
      default:
        throw ParseError(std::string("unknown bond symbol '") + symbol + "'",
                         pos);
    }
    g.bonds.push_back(bd);
  };

  auto add_atom = [&](Atom atom, std::size_t pos) {
    g.atoms.push_back(atom);
    const int idx = static_cast<int>(g.atoms.size()) - 1;
    if (prev >= 0) {
      add_bond(prev, idx, pending.symbol, pos);
      pending = PendingBond{};
    } else if (pending.symbol != 0) {
      throw ParseError("bond symbol with no preceding atom", pending.pos);
    }
    prev = idx;
  };

  std::size_t i = 0;
  const std::size_t n = text.size();
  auto peek = [&](std::size_t k) -> char {
    return i + k < n ? text[i + k] : '\0';
  };

  while (i < n) {
    const char c = text[i];
    const std::size_t pos = i;
    if (c == '(') {
      if (prev < 0) throw ParseError("branch before any atom", pos);
      branch_stack.push_back(prev);
      ++i;
    } else if (c == ')') {
      if (branch_stack.empty()) throw ParseError("unmatched ')'", pos);
      if (pending.symbol != 0)
        throw ParseError("dangling bond before ')'", pending.pos);
      prev = branch_stack.back();
      branch_stack.pop_back();
      ++i;
    } else if (c == '.') {
      if (pending.symbol != 0)
        throw ParseError("bond symbol before '.'", pending.pos);
      prev = -1;
      ++i;
    } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' ||
               c == '\\') {
      if (pending.symbol != 0) throw ParseError("two bond symbols", pos);
      if (prev < 0) throw ParseError("bond symbol with no preceding atom", pos);
      pending = PendingBond{c, pos};
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
      if (prev < 0) throw ParseError("ring closure before any atom", pos);
      int num;
      if (c == '%') {
        if (!std::isdigit(static_cast<unsigned char>(peek(1))) ||
            !std::isdigit(static_cast<unsigned char>(peek(2))))
          throw ParseError("'%' requires two digits", pos);
        num = (peek(1) - '0') * 10 + (peek(2) - '0');
        i += 3;
      } else {
        num = c - '0';
        ++i;
      }
      auto it = ring_open.find(num);
      if (it == ring_open.end()) {
        ring_open[num] = RingOpen{prev, pending.symbol, pos};
        pending = PendingBond{};
      } else {
        char sym = pending.symbol;
        const char open_sym = it->second.bond_char;
        if (sym != 0 && open_sym != 0 && sym != open_sym)
          throw ParseError("conflicting ring-closure bond symbols", pos);
        if (sym == 0) sym = open_sym;
        add_bond(it->second.atom, prev, sym, pos);
        ring_open.erase(it);
        pending = PendingBond{};
      }
    } else if (c == '[') {
      Atom atom;
      atom.bracket = true;
      std::size_t j = i + 1;
      auto need = [&](bool ok, const char* msg) {
        if (!ok) throw ParseError(msg, j < n ? j : n - 1);
      };
      // isotope
      while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
        atom.isotope = atom.isotope * 10 + (text[j] - '0');
        ++j;
      }
      need(j < n, "unmatched bracket");
      // element symbol (longest match), lowercase means aromatic
      std::string sym;
      if (std::isupper(static_cast<unsigned char>(text[j]))) {
        sym += text[j++];
        if (j < n && std::islower(static_cast<unsigned char>(text[j])) &&
            element_number(sym + text[j]) != 0)
          sym += text[j++];
      } else if (std::islower(static_cast<unsigned char>(text[j]))) {
        atom.aromatic = true;
        if (j + 1 < n && ((text[j] == 's' && text[j + 1] == 'e') ||
                          (text[j] == 'a' && text[j + 1] == 's'))) {
          sym += static_cast<char>(std::toupper(text[j]));
          sym += text[j + 1];
          j += 2;
        } else {
          need(detail::is_organic_aromatic(text[j]),
               "unknown aromatic element");
          sym += static_cast<char>(std::toupper(text[j]));
          ++j;
        }
      } else {
        throw ParseError("expected element symbol in bracket", j);
      }
      atom.atomic_number = element_number(sym);
      if (atom.atomic_number == 0)
        throw ParseError("unknown or unsupported element '" + sym + "'", pos);
      // chirality
      if (j < n && text[j] == '@') {
        ++j;
        if (j < n && text[j] == '@') {
          atom.chirality = Chirality::cw;
          ++j;
        } else if (j + 1 < n &&
                   std::isupper(static_cast<unsigned char>(text[j])) &&
                   std::isupper(static_cast<unsigned char>(text[j + 1]))) {
          // extended tags such as @TH1, @AL2 — recorded as "other"
          atom.chirality = Chirality::other;
          j += 2;
          while (j < n && std::isdigit(static_cast<unsigned char>(text[j])))
            ++j;
        } else {
          atom.chirality = Chirality::ccw;
        }
      }
      // explicit hydrogens
      if (j < n && text[j] == 'H') {
        ++j;
        atom.num_h = 1;
        if (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
          atom.num_h = text[j] - '0';
          ++j;
        }
      }
      // charge
      if (j < n && (text[j] == '+' || text[j] == '-')) {
        const int sign = text[j] == '+' ? 1 : -1;
        ++j;
        int mag = 1;
        if (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) {
          mag = text[j] - '0';
          ++j;
        } else {
          while (j < n && text[j] == (sign > 0 ? '+' : '-')) {
            ++mag;
            ++j;
          }
        }
        atom.formal_charge = sign * mag;
      }
      // atom map (ignored)
      if (j < n && text[j] == ':') {
        ++j;
        need(j < n && std::isdigit(static_cast<unsigned char>(text[j])),
             "expected atom-map number");
        while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      }
      need(j < n && text[j] == ']', "unmatched bracket");
      add_atom(atom, pos);
      i = j + 1;
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      Atom atom;
      if (c == 'C' && peek(1) == 'l') {
        atom.atomic_number = 17;
        i += 2;
      } else if (c == 'B' && peek(1) == 'r') {
        atom.atomic_number = 35;
        i += 2;
      } else if (c == 'B' || c == 'C' || c == 'N' || c == 'O' || c == 'P' ||
                 c == 'S' || c == 'F' || c == 'I') {
        atom.atomic_number = element_number(std::string(1, c));
        ++i;
      } else if (detail::is_organic_aromatic(c)) {
        atom.aromatic = true;
        atom.atomic_number =
            element_number(std::string(1, static_cast<char>(std::toupper(c))));
        ++i;
      } else {
        throw ParseError(std::string("unknown atom symbol '") + c + "'", pos);
      }
      add_atom(atom, pos);
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", pos);
    }
  }

  if (!ring_open.empty()) {
    const auto& [num, open] = *ring_open.begin();
    throw ParseError("unclosed ring bond " + std::to_string(num), open.pos);
  }
  if (!branch_stack.empty()) throw ParseError("unclosed '('", n - 1);
  if (pending.symbol != 0)
    throw ParseError("dangling bond symbol", pending.pos);
  if (g.atoms.empty()) throw ParseError("no atoms", 0);

  finalize_graph(g);
  return g;
}

// ---------------------------------------------------------------------------
// Post-parse: ring perception, kekulization, hydrogen counts, conjugation,
// double-bond stereo, fragment count.
// ---------------------------------------------------------------------------

namespace detail {

inline void build_adjacency(MolecularGraph& g) {
  g.adj.assign(g.atoms.size(), {});
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    g.adj[g.bonds[bi].a].push_back(static_cast<int>(bi));
    g.adj[g.bonds[bi].b].push_back(static_cast<int>(bi));
  }
}

// Ring bonds are exactly the non-bridge edges.
inline void mark_ring_bonds(MolecularGraph& g) {
  const int na = static_cast<int>(g.atoms.size());
  std::vector<int> disc(na, -1), low(na, 0);
  int timer = 0;
  // iterative DFS to find bridges
  for (int root = 0; root < na; ++root) {
    if (disc[root] >= 0) continue;
    std::vector<std::tuple<int, int, std::size_t>> stack;  // atom, in-bond, next adj idx
    stack.emplace_back(root, -1, 0);
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      auto& [u, in_bond, k] = stack.back();
      if (k < g.adj[u].size()) {
        const int bi = g.adj[u][k++];
        if (bi == in_bond) continue;
        const int v = g.other_end(bi, u);
        if (disc[v] < 0) {
          disc[v] = low[v] = timer++;
          stack.emplace_back(v, bi, 0);
        } else {
          low[u] = std::min(low[u], disc[v]);
          g.bonds[bi].in_ring = true;  // back edge is always in a cycle
        }
      } else {
        const int u_done = u;
        const int b_done = in_bond;
        stack.pop_back();
        if (!stack.empty()) {
          const int parent = std::get<0>(stack.back());
          low[parent] = std::min(low[parent], low[u_done]);
          if (low[u_done] <= disc[parent]) g.bonds[b_done].in_ring = true;
        }
      }
    }
  }
}

// Perfect matching of double bonds over atoms that require one, restricted to
// aromatic bonds. Small systems, so plain backtracking suffices.
inline bool kekule_match(const std::vector<std::vector<int>>& cand_adj,
                         std::vector<int>& match, int start) {
  const int n = static_cast<int>(match.size());
  int u = -1;
  for (int i = start; i < n; ++i)
    if (match[i] < 0) {
      u = i;
      break;
    }
  if (u < 0) return true;
  for (int v : cand_adj[u]) {
    if (match[v] >= 0) continue;
    match[u] = v;
    match[v] = u;
    if (kekule_match(cand_adj, match, u + 1)) return true;
    match[u] = -1;
    match[v] = -1;
  }
  return false;
}

// Returns per-bond kekulized order contribution (aromatic bonds become 1 or
// 2); throws on an unkekulizable aromatic system.
inline std::vector<int> kekulize(const MolecularGraph& g) {
  std::vector<int> order(g.bonds.size());
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi)
    order[bi] = bond_order_value(g.bonds[bi].order);

  std::vector<int> needs(g.atoms.size(), 0);
  std::vector<int> idx_of(g.atoms.size(), -1);
  std::vector<int> atoms_needing;
  for (std::size_t ai = 0; ai < g.atoms.size(); ++ai) {
    if (!g.atoms[ai].aromatic) continue;
    const int need = kekule_needs(g, static_cast<int>(ai));
    if (need >= 2)
      throw ParseError("aromatic atom cannot satisfy valence (kekulization)",
                       0);
    needs[ai] = need;
    if (need == 1) {
      idx_of[ai] = static_cast<int>(atoms_needing.size());
      atoms_needing.push_back(static_cast<int>(ai));
    }
  }
  if (atoms_needing.empty()) return order;

  std::vector<std::vector<int>> cand_adj(atoms_needing.size());
  std::vector<std::pair<int, int>> cand_bonds;  // (bond idx, -)
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    const Bond& b = g.bonds[bi];
    if (b.order != BondOrder::aromatic) continue;
    if (idx_of[b.a] >= 0 && idx_of[b.b] >= 0) {
      cand_adj[idx_of[b.a]].push_back(idx_of[b.b]);
      cand_adj[idx_of[b.b]].push_back(idx_of[b.a]);
    }
  }
  std::vector<int> match(atoms_needing.size(), -1);
  if (!kekule_match(cand_adj, match, 0))
    throw ParseError("kekulization failed: no alternating bond assignment", 0);

  // lift the matching back onto bonds
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    const Bond& b = g.bonds[bi];
    if (b.order != BondOrder::aromatic) continue;
    const int ia = idx_of[b.a], ib = idx_of[b.b];
    if (ia >= 0 && ib >= 0 && match[ia] == ib && order[bi] == 1) {
      // mark at most one bond per matched pair as double
      order[bi] = 2;
      match[ia] = -2;  // consumed
      match[ib] = -2;
    }
  }
  for (std::size_t k = 0; k < match.size(); ++k)
    if (match[k] >= 0)
      throw ParseError("kekulization failed: unmatched aromatic atom", 0);
  return order;
}

inline void assign_hydrogens(MolecularGraph& g, const std::vector<int>& kek) {
  for (std::size_t ai = 0; ai < g.atoms.size(); ++ai) {
    Atom& a = g.atoms[ai];
    if (a.bracket) continue;  // explicit H count
    int sum = 0;
    for (int bi : g.adj[ai]) sum += kek[bi];
    const auto& vals = normal_valences(a.atomic_number);
    if (vals.empty()) {
      a.num_h = 0;
      continue;
    }
    if (a.aromatic) {
      const int h = vals.front() - sum;
      if (h < 0)
        throw ParseError("valence violation after kekulization on atom " +
                             std::to_string(ai),
                         0);
      a.num_h = h;
    } else {
      int chosen = -1;
      for (int v : vals)
        if (v >= sum) {
          chosen = v;
          break;
        }
      if (chosen < 0)
        throw ParseError("valence violation on atom " + std::to_string(ai) +
                             " (" + element_symbol(a.atomic_number) + " with " +
                             std::to_string(sum) + " bonds)",
                         0);
      a.num_h = chosen - sum;
    }
  }
}

inline void mark_conjugation(MolecularGraph& g) {
  auto has_pi = [&](int ai, int skip_bond) {
    for (int bi : g.adj[ai]) {
      if (bi == skip_bond) continue;
      const BondOrder o = g.bonds[bi].order;
      if (o != BondOrder::single) return true;
    }
    return false;
  };
  for (std::size_t bi = 0; bi < g.bonds.size(); ++bi) {
    Bond& b = g.bonds[bi];
    if (b.order == BondOrder::aromatic) {
      b.conjugated = true;
    } else if (b.order == BondOrder::single) {
      b.conjugated = has_pi(b.a, static_cast<int>(bi)) &&
                     has_pi(b.b, static_cast<int>(bi));
    } else {
      b.conjugated = has_pi(b.a, static_cast<int>(bi)) ||
                     has_pi(b.b, static_cast<int>(bi));
    }
  }
}

// cis/trans of double bonds from slash markers; the marked substituents are
// compared, matching the usual reading of F/C=C/F as trans.
inline void assign_stereo(MolecularGraph& g) {
  auto side_of = [&](int center, int bi) -> int {
    const Bond& b = g.bonds[bi];
    if (b.direction == 0) return 0;
    // direction is oriented a -> b with '/' = +1; side of the far atom
    // relative to `center` flips with orientation.
    return b.a == center ? b.direction : -b.direction;
  };
  for (auto& b : g.bonds) {
    if (b.order != BondOrder::double_bond) continue;
    int side_a = 0, side_b = 0;
    for (int bi : g.adj[b.a]) {
      const int s = side_of(b.a, bi);
      if (s != 0) side_a = s;
    }
    for (int bi : g.adj[b.b]) {
      const int s = side_of(b.b, bi);
      if (s != 0) side_b = s;
    }
    if (side_a != 0 && side_b != 0)
      b.stereo = (side_a == side_b) ? BondStereo::z : BondStereo::e;
  }
}

inline int count_fragments(const MolecularGraph& g) {
  const int na = static_cast<int>(g.atoms.size());
  std::vector<char> seen(na, 0);
  int count = 0;
  for (int root = 0; root < na; ++root) {
    if (seen[root]) continue;
    ++count;
    std::vector<int> stack{root};
    seen[root] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int bi : g.adj[u]) {
        const int v = g.other_end(bi, u);
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  return count;
}

}  // namespace detail

inline void finalize_graph(MolecularGraph& g) {
  detail::build_adjacency(g);
  detail::mark_ring_bonds(g);
  // aromatic bonds outside rings (e.g. the biphenyl linker written bare)
  // are really single bonds
  for (auto& b : g.bonds)
    if (b.order == BondOrder::aromatic && !b.in_ring)
      b.order = BondOrder::single;
  for (std::size_t ai = 0; ai < g.atoms.size(); ++ai) {
    if (g.atoms[ai].aromatic) {
      bool ok = false;
      for (int bi : g.adj[ai])
        ok = ok || g.bonds[bi].order == BondOrder::aromatic;
      if (!ok)
        throw ParseError("aromatic atom " + std::to_string(ai) +
                             " is not in an aromatic ring",
                         0);
    }
  }
  const auto kek = detail::kekulize(g);
  detail::assign_hydrogens(g, kek);
  detail::mark_conjugation(g);
  detail::assign_stereo(g);
  g.fragment_count = detail::count_fragments(g);
}

}  // namespace pommix::chem
