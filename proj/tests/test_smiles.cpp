#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pommix/canonical.hpp"
#include "pommix/smiles.hpp"

using namespace pommix::chem;

namespace {

// Writes a molecule with a uniformly random atom ranking, producing a valid
// but arbitrarily ordered SMILES for invariance testing.
std::string random_smiles(const MolecularGraph& g, std::mt19937_64& rng) {
  std::vector<std::string> parts;
  for (auto& comp : detail_canon::components(g)) {
    detail_canon::Canonicalizer canon(g, comp);
    std::vector<long long> cls(canon.comp.size());
    std::iota(cls.begin(), cls.end(), 0);
    std::shuffle(cls.begin(), cls.end(), rng);
    parts.push_back(canon.write(cls));
  }
  std::shuffle(parts.begin(), parts.end(), rng);
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

struct AtomSig {
  int z, charge, h;
  bool aromatic;
  int degree;
  bool operator==(const AtomSig&) const = default;
};

AtomSig sig_of(const MolecularGraph& g, int i) {
  const Atom& a = g.atoms[i];
  return {a.atomic_number, a.formal_charge, a.num_h, a.aromatic, g.degree(i)};
}

// Exact isomorphism by backtracking; fine for the small molecules used here.
bool isomorphic(const MolecularGraph& a, const MolecularGraph& b) {
  const int n = static_cast<int>(a.atoms.size());
  if (static_cast<int>(b.atoms.size()) != n ||
      a.bonds.size() != b.bonds.size())
    return false;
  std::vector<int> map(n, -1), used(n, 0);
  std::function<bool(int)> assign = [&](int i) -> bool {
    if (i == n) return true;
    for (int j = 0; j < n; ++j) {
      if (used[j] || !(sig_of(a, i) == sig_of(b, j))) continue;
      bool ok = true;
      for (int bi : a.adj[i]) {
        const int v = a.other_end(bi, i);
        if (map[v] < 0) continue;
        bool found = false;
        for (int bj : b.adj[j])
          if (b.other_end(bj, j) == map[v] &&
              b.bonds[bj].order == a.bonds[bi].order)
            found = true;
        if (!found) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      map[i] = j;
      used[j] = 1;
      if (assign(i + 1)) return true;
      map[i] = -1;
      used[j] = 0;
    }
    return false;
  };
  return assign(0);
}

// Representative odorant-style corpus; homolog series pad it past 200.
std::vector<std::string> corpus() {
  std::vector<std::string> s = {
      "CCO", "CC(C)=O", "CC(=O)O", "CCOC(C)=O", "CCCC(=O)O",
      "CCCC(=O)OCC", "CC(C)CCOC(C)=O", "CCCCCC=O", "CC/C=C\\CCO",
      "O=Cc1ccccc1", "COc1cc(C=O)ccc1O", "COc1ccccc1O", "Oc1ccccc1",
      "COc1ccccc1", "c1ccc2[nH]ccc2c1", "Cc1c[nH]c2ccccc12", "c1ccncc1",
      "c1cnccn1", "Cc1cnccn1", "Cc1nccnc1C", "COc1nccnc1CC(C)C",
      "O=Cc1ccco1", "CC(=O)c1ccco1", "c1ccsc1", "Cc1cccs1", "CSC", "CSSC",
      "C=CCS", "CS", "SCc1ccco1", "CC(=O)CCc1ccc(O)cc1",
      "COC(=O)c1ccccc1N", "COC(=O)c1ccccc1O", "CCCCCCC1CCC(=O)O1",
      "CC1=CCC(CC1)C(=C)C", "CC(C)=CCCC(C)(O)C=C", "CC(C)=CCC/C(C)=C/CO",
      "CC(C)=CCC/C(C)=C/C=O", "CC(C)C1CCC(C)CC1O", "Cc1ccc(C(C)C)c(O)c1",
      "Cc1ccc(C(C)C)cc1O", "CC(=C)C1CC=C(C)C(=O)C1", "c1ccc2ccccc2c1",
      "Cc1ccccc1", "CCc1ccccc1", "c1ccc(-c2ccccc2)cc1", "Oc1ccc(C)cc1",
      "CCCCCCCC/C=C/C=O", "CCCCC(=O)OCC", "CC(C)CC=O", "OCC(C)C",
      "CCCCCCO", "CC(O)c1ccccc1", "OCc1ccccc1", "CCCCCCC(=O)C",
      "CC(=O)OCc1ccccc1", "O=C/C=C/c1ccccc1", "CC(C)(C)c1ccc(O)cc1",
      "CCOC(=O)c1ccccc1", "N#Cc1ccccc1", "CCCCCCCCO", "CC(C)CC(=O)O",
      "OC(=O)c1ccccc1", "NCCc1ccccc1", "Nc1ccccc1", "CN(C)c1ccccc1",
      "Clc1ccccc1", "FC(F)(F)c1ccccc1", "BrCCBr", "ICCI",
      "C1CCOC1", "C1CCNC1", "C1CCSC1", "O1CCOCC1", "C1CCCCC1", "C1CCCC1",
      "CC1CCCCC1", "OC1CCCCC1", "O=C1CCCCC1", "CC(=O)C1CCCCC1",
      "c1ccc2c(c1)OCO2", "CCOc1ccccc1", "CCCSSCCC", "CCCS",
      "CC(C)S", "OCC1CCCCC1", "CC1=CC(=O)CC(C)(C)C1",
      "CC(C)CCC(C)(C)O", "CCCCC(C)O", "CC(C)(C)O", "CCC(C)O",
      "CC1CCC(C(C)C)C(=O)C1", "COC(C)(C)C", "CCOCC", "CCCOC(C)=O",
      "O=C1OCCC1", "O=C1OCCCC1", "CC1CCCO1", "CC(=O)C(C)=O",
      "OCC(O)CO", "C(=O)O", "CC(C)C(=O)O", "CCC(=O)O",
  };
  for (int n = 1; n <= 12; ++n) {
    const std::string chain(n, 'C');
    s.push_back(chain + "O");            // alcohols
    s.push_back(chain + "C=O");          // aldehydes
    s.push_back(chain + "C(=O)O");       // acids
    s.push_back(chain + "OC(C)=O");      // acetates
    s.push_back(chain + "C(=O)OCC");     // ethyl esters
    s.push_back(chain + "S");            // thiols
    s.push_back(chain + "C(C)=O");       // methyl ketones
    s.push_back(chain + "c1ccccc1");     // alkylbenzenes
    s.push_back(chain + "c1ccco1");      // alkylfurans
  }
  return s;
}

}  // namespace

TEST(Parse, EthanolAtomsBondsAndHydrogens) {
  auto g = parse_smiles("CCO");
  ASSERT_EQ(g.atoms.size(), 3u);
  ASSERT_EQ(g.bonds.size(), 2u);
  for (const auto& b : g.bonds) EXPECT_EQ(b.order, BondOrder::single);
  EXPECT_EQ(g.atoms[0].num_h, 3);
  EXPECT_EQ(g.atoms[1].num_h, 2);
  EXPECT_EQ(g.atoms[2].num_h, 1);
  EXPECT_EQ(g.fragment_count, 1);
}

TEST(Parse, BenzeneAromaticWithOneHydrogenEach) {
  auto g = parse_smiles("c1ccccc1");
  ASSERT_EQ(g.atoms.size(), 6u);
  ASSERT_EQ(g.bonds.size(), 6u);
  for (const auto& a : g.atoms) {
    EXPECT_TRUE(a.aromatic);
    EXPECT_EQ(a.num_h, 1);
  }
  for (const auto& b : g.bonds) {
    EXPECT_EQ(b.order, BondOrder::aromatic);
    EXPECT_TRUE(b.in_ring);
    EXPECT_TRUE(b.conjugated);
  }
}

TEST(Parse, UnclosedRingIsError) {
  EXPECT_THROW(parse_smiles("C1CC"), ParseError);
}

TEST(Parse, ErrorsCarryPosition) {
  try {
    parse_smiles("CC(C");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("position"), std::string::npos);
  }
  EXPECT_THROW(parse_smiles("[Fe"), ParseError);
  EXPECT_THROW(parse_smiles("[Xx]"), ParseError);
  EXPECT_THROW(parse_smiles("C(C)(C)(C)(C)C"), ParseError);  // 5-valent C
  EXPECT_THROW(parse_smiles("F=F"), ParseError);
  EXPECT_THROW(parse_smiles(""), ParseError);
  EXPECT_THROW(parse_smiles("[U]"), ParseError);  // beyond supported set
}

TEST(Parse, FragmentsAndSaltIons) {
  auto g = parse_smiles("[Na+].[Cl-]");
  EXPECT_EQ(g.fragment_count, 2);
  EXPECT_EQ(g.atoms[0].atomic_number, 11);
  EXPECT_EQ(g.atoms[0].formal_charge, 1);
  EXPECT_EQ(g.atoms[1].formal_charge, -1);
  EXPECT_EQ(g.bonds.size(), 0u);
}

TEST(Parse, BracketAtomFields) {
  auto g = parse_smiles("[13C@H3+]");
  EXPECT_EQ(g.atoms[0].isotope, 13);
  EXPECT_EQ(g.atoms[0].chirality, Chirality::ccw);
  EXPECT_EQ(g.atoms[0].num_h, 3);
  EXPECT_EQ(g.atoms[0].formal_charge, 1);
  auto g2 = parse_smiles("C[C@@](N)(O)C");
  EXPECT_EQ(g2.atoms[1].chirality, Chirality::cw);
}

TEST(Parse, DoubleBondStereoFromSlashes) {
  auto e = parse_smiles("C/C=C/C");
  bool found_e = false;
  for (const auto& b : e.bonds)
    if (b.order == BondOrder::double_bond) {
      EXPECT_EQ(b.stereo, BondStereo::e);
      found_e = true;
    }
  EXPECT_TRUE(found_e);
  auto z = parse_smiles("C/C=C\\C");
  for (const auto& b : z.bonds)
    if (b.order == BondOrder::double_bond) EXPECT_EQ(b.stereo, BondStereo::z);
}

TEST(Parse, PyrroleRequiresBracketNitrogen) {
  auto g = parse_smiles("c1cc[nH]c1");
  int nh = 0;
  for (const auto& a : g.atoms)
    if (a.atomic_number == 7) nh = a.num_h;
  EXPECT_EQ(nh, 1);
  // bare aromatic n at a pyrrole position cannot kekulize
  EXPECT_THROW(parse_smiles("c1ccnc1"), ParseError);
}

TEST(Parse, LinearChainCountsMatchTokenCounts) {
  for (int n = 1; n <= 12; ++n) {
    const std::string s(static_cast<std::size_t>(n), 'C');
    auto g = parse_smiles(s);
    EXPECT_EQ(static_cast<int>(g.atoms.size()), n);
    EXPECT_EQ(static_cast<int>(g.bonds.size()), n - 1);
  }
}

TEST(Weight, ReferenceMolecules) {
  EXPECT_NEAR(molecular_weight(parse_smiles("O")), 18.02, 0.01);
  EXPECT_NEAR(molecular_weight(parse_smiles("C")), 16.04, 0.01);
  EXPECT_NEAR(molecular_weight(parse_smiles("c1ccccc1")), 78.11, 0.02);
}

TEST(Canonical, SameMoleculeDifferentOrder) {
  EXPECT_EQ(canonical_smiles("OCC"), canonical_smiles("CCO"));
  EXPECT_EQ(canonical_smiles("C(C)(C)C"), canonical_smiles("CC(C)C"));
}

TEST(Canonical, KekulizedEqualsAromaticForm) {
  EXPECT_EQ(canonical_smiles("C1=CC=CC=C1"), canonical_smiles("c1ccccc1"));
  EXPECT_EQ(canonical_smiles("CC1=CC=CC=C1"), canonical_smiles("Cc1ccccc1"));
  EXPECT_EQ(canonical_smiles("C1=CC=NC=C1"), canonical_smiles("c1ccncc1"));
  EXPECT_EQ(canonical_smiles("C1=CC=CO1"), canonical_smiles("c1ccoc1"));
  EXPECT_EQ(canonical_smiles("C1=CC2=CC=CC=C2C=C1"),
            canonical_smiles("c1ccc2ccccc2c1"));
}

TEST(Canonical, MethaneStableAcrossRuns) {
  const std::string first = canonical_smiles("C");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(canonical_smiles("C"), first);
  EXPECT_EQ(first, "C");
}

TEST(Canonical, MultiFragmentSorted) {
  EXPECT_EQ(canonical_smiles("CCO.C"), canonical_smiles("C.OCC"));
}

TEST(Canonical, RoundTripIsIsomorphicOnCorpus) {
  int checked = 0;
  for (const auto& s : corpus()) {
    MolecularGraph g;
    ASSERT_NO_THROW(g = parse_smiles(s)) << s;
    const std::string canon = canonicalize(g);
    MolecularGraph g2;
    ASSERT_NO_THROW(g2 = parse_smiles(canon)) << s << " -> " << canon;
    EXPECT_EQ(canonicalize(g2), canon) << s;
    if (g.atoms.size() <= 12) {
      // exact check on small molecules; aromatize both sides so kekulized
      // inputs compare in the promoted form
      MolecularGraph ga = g;
      detail_canon::aromatize(ga);
      EXPECT_TRUE(isomorphic(ga, g2)) << s << " -> " << canon;
      ++checked;
    }
  }
  EXPECT_GE(checked, 40);
}

TEST(Canonical, AtomOrderInvarianceRandomized) {
  std::mt19937_64 rng(12345);
  const auto mols = corpus();
  ASSERT_GE(mols.size(), 200u);
  int shuffles = 0;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    auto g = parse_smiles(mols[i]);
    const std::string canon = canonicalize(g);
    for (int k = 0; k < 6; ++k) {
      const std::string shuffled = random_smiles(g, rng);
      EXPECT_EQ(canonical_smiles(shuffled), canon)
          << mols[i] << " shuffled as " << shuffled;
      ++shuffles;
    }
  }
  EXPECT_GE(shuffles, 1000);
}
