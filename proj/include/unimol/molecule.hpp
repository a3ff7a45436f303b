//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_MOLECULE_HPP
#define UNIMOL_MOLECULE_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "unimol/common.hpp"
#include "unimol/mat.hpp"

namespace unimol {

/// A 3D conformation: one xyz row per atom, in angstroms.
using Conformation = Mat;

enum class BondOrder : int { Single = 0, Double = 1, Triple = 2, Aromatic = 3 };

constexpr int kBondOrderCount = 4;

inline const char* to_string(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return "single";
    case BondOrder::Double: return "double";
    case BondOrder::Triple: return "triple";
    case BondOrder::Aromatic: return "aromatic";
  }
  throw Error("invalid bond order");
}

inline BondOrder bond_order_from_string(const std::string& s) {
  if (s == "single") return BondOrder::Single;
  if (s == "double") return BondOrder::Double;
  if (s == "triple") return BondOrder::Triple;
  if (s == "aromatic") return BondOrder::Aromatic;
  throw Error("unknown bond order '" + s + "'");
}

struct Atom {
  int atomic_number = 6;
  int formal_charge = 0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

struct Bond {
  int i = 0;
  int j = 0;
  BondOrder order = BondOrder::Single;

  friend bool operator==(const Bond&, const Bond&) = default;
};

/// 2D molecular graph with optional conformation and task labels.
/// Atoms are indexed 0..n-1; bonds are undirected.
struct Molecule {
  std::string id;
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::optional<Conformation> coords;
  std::map<std::string, std::optional<double>> labels;

  int n_atoms() const { return static_cast<int>(atoms.size()); }
  int n_bonds() const { return static_cast<int>(bonds.size()); }

  /// Throws Error with a reason when any structural invariant is violated.
  void validate() const {
    const int n = n_atoms();
    if (n == 0) throw Error("molecule '" + id + "' has no atoms");
    for (int a = 0; a < n; ++a) {
      const int z = atoms[static_cast<std::size_t>(a)].atomic_number;
      if (z < 1 || z > 118)
        throw Error("molecule '" + id + "': atomic number " + std::to_string(z) + " out of range 1..118");
    }
    std::set<std::pair<int, int>> seen;
    for (const Bond& b : bonds) {
      if (b.i < 0 || b.i >= n || b.j < 0 || b.j >= n)
        throw Error("molecule '" + id + "': bond index " + std::to_string(std::max(b.i, b.j)) +
                    " out of range for " + std::to_string(n) + " atoms");
      if (b.i == b.j)
        throw Error("molecule '" + id + "': self-bond on atom " + std::to_string(b.i));
      auto key = std::minmax(b.i, b.j);
      if (!seen.insert(key).second)
        throw Error("molecule '" + id + "': duplicate bond " + std::to_string(key.first) + "-" +
                    std::to_string(key.second));
    }
    if (coords) {
      if (coords->rows() != n || coords->cols() != 3)
        throw Error("molecule '" + id + "': coords shape " + std::to_string(coords->rows()) + "x" +
                    std::to_string(coords->cols()) + " does not match " + std::to_string(n) + " atoms");
      if (!coords->all_finite()) throw Error("molecule '" + id + "': non-finite coordinate");
    }
  }

  /// Neighbor lists in bond-list order; adjacency[i] holds (neighbor, bond index).
  std::vector<std::vector<std::pair<int, int>>> adjacency() const {
    std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n_atoms()));
    for (int b = 0; b < n_bonds(); ++b) {
      const Bond& e = bonds[static_cast<std::size_t>(b)];
      adj[static_cast<std::size_t>(e.i)].emplace_back(e.j, b);
      adj[static_cast<std::size_t>(e.j)].emplace_back(e.i, b);
    }
    return adj;
  }

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(n_atoms()), 0);
    for (const Bond& b : bonds) {
      ++deg[static_cast<std::size_t>(b.i)];
      ++deg[static_cast<std::size_t>(b.j)];
    }
    return deg;
  }

  bool connected() const {
    const int n = n_atoms();
    if (n == 0) return false;
    auto adj = adjacency();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> queue{0};
    seen[0] = 1;
    int visited = 1;
    while (!queue.empty()) {
      const int v = queue.back();
      queue.pop_back();
      for (auto [w, bond] : adj[static_cast<std::size_t>(v)]) {
        (void)bond;
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          ++visited;
          queue.push_back(w);
        }
      }
    }
    return visited == n;
  }

  friend bool operator==(const Molecule&, const Molecule&) = default;
};

}  // namespace unimol

#endif  // UNIMOL_MOLECULE_HPP
