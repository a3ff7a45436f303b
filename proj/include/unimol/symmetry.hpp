//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_SYMMETRY_HPP
#define UNIMOL_SYMMETRY_HPP

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "unimol/molecule.hpp"

namespace unimol {

/// Bijection on atom indices; map[k] is the image of k.
struct Permutation {
  std::vector<int> map;

  int size() const { return static_cast<int>(map.size()); }

  static Permutation identity(int n) {
    Permutation p;
    p.map.resize(static_cast<std::size_t>(n));
    std::iota(p.map.begin(), p.map.end(), 0);
    return p;
  }

  bool is_identity() const {
    for (int k = 0; k < size(); ++k)
      if (map[static_cast<std::size_t>(k)] != k) return false;
    return true;
  }

  Permutation inverse() const {
    Permutation inv;
    inv.map.resize(map.size());
    for (int k = 0; k < size(); ++k) inv.map[static_cast<std::size_t>(map[static_cast<std::size_t>(k)])] = k;
    return inv;
  }

  /// (a.then(b))(k) = b(a(k)).
  Permutation then(const Permutation& b) const {
    if (size() != b.size()) throw Error("Permutation::then: size mismatch");
    Permutation out;
    out.map.resize(map.size());
    for (int k = 0; k < size(); ++k)
      out.map[static_cast<std::size_t>(k)] = b.map[static_cast<std::size_t>(map[static_cast<std::size_t>(k)])];
    return out;
  }

  bool valid() const {
    std::vector<char> seen(map.size(), 0);
    for (int v : map) {
      if (v < 0 || v >= size() || seen[static_cast<std::size_t>(v)]) return false;
      seen[static_cast<std::size_t>(v)] = 1;
    }
    return true;
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;
  friend bool operator<(const Permutation& a, const Permutation& b) { return a.map < b.map; }
};

/// The collection P of label- and adjacency-preserving atom permutations.
/// When the full group exceeds the enumeration cap, perms holds only the
/// identity and truncated is set.
struct AutomorphismSet {
  std::vector<Permutation> perms;
  bool truncated = false;

  int size() const { return static_cast<int>(perms.size()); }

  static AutomorphismSet identity_only(int n, bool truncated_flag = false) {
    AutomorphismSet s;
    s.perms.push_back(Permutation::identity(n));
    s.truncated = truncated_flag;
    return s;
  }
};

/// Row j of the result is row perm[j] of conf; the meaning of alpha(R).
inline Mat apply_permutation(const Permutation& perm, const Mat& conf) {
  if (perm.size() != conf.rows()) throw Error("apply_permutation: length mismatch");
  Mat out(conf.rows(), conf.cols());
  for (int j = 0; j < conf.rows(); ++j) {
    const int src = perm.map[static_cast<std::size_t>(j)];
    for (int c = 0; c < conf.cols(); ++c) out(j, c) = conf(src, c);
  }
  return out;
}

inline std::string cycle_notation(const Permutation& p) {
  std::vector<char> seen(p.map.size(), 0);
  std::ostringstream out;
  bool any = false;
  for (int start = 0; start < p.size(); ++start) {
    if (seen[static_cast<std::size_t>(start)] || p.map[static_cast<std::size_t>(start)] == start) continue;
    any = true;
    out << '(';
    int v = start;
    bool first = true;
    while (!seen[static_cast<std::size_t>(v)]) {
      seen[static_cast<std::size_t>(v)] = 1;
      if (!first) out << ' ';
      out << v;
      first = false;
      v = p.map[static_cast<std::size_t>(v)];
    }
    out << ')';
  }
  return any ? out.str() : "()";
}

namespace detail {

/// Adjacency matrix with bond-order codes: 0 = no edge, otherwise order+1.
inline std::vector<int> order_matrix(const Molecule& mol) {
  const int n = mol.n_atoms();
  std::vector<int> m(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
  for (const Bond& b : mol.bonds) {
    const int code = static_cast<int>(b.order) + 1;
    m[static_cast<std::size_t>(b.i) * n + b.j] = code;
    m[static_cast<std::size_t>(b.j) * n + b.i] = code;
  }
  return m;
}

inline bool preserves(const Molecule& mol, const std::vector<int>& adj, const std::vector<int>& map) {
  const int n = mol.n_atoms();
  for (int v = 0; v < n; ++v) {
    const Atom& a = mol.atoms[static_cast<std::size_t>(v)];
    const Atom& b = mol.atoms[static_cast<std::size_t>(map[static_cast<std::size_t>(v)])];
    if (a != b) return false;
  }
  for (const Bond& b : mol.bonds) {
    const int bi = map[static_cast<std::size_t>(b.i)];
    const int bj = map[static_cast<std::size_t>(b.j)];
    if (adj[static_cast<std::size_t>(bi) * n + bj] != static_cast<int>(b.order) + 1) return false;
  }
  return true;
}

/// Iterated refinement of vertex colors. Initial colors come from atom
/// attributes; a round recolors by the multiset of (neighbor color, bond
/// order) pairs. Stabilizes in at most n rounds.
inline std::vector<int> refined_colors(const Molecule& mol) {
  const int n = mol.n_atoms();
  auto adj = mol.adjacency();

  std::vector<int> color(static_cast<std::size_t>(n));
  {
    std::map<std::pair<int, int>, int> classes;
    for (int v = 0; v < n; ++v) {
      const Atom& a = mol.atoms[static_cast<std::size_t>(v)];
      auto key = std::make_pair(a.atomic_number, a.formal_charge);
      auto [it, inserted] = classes.emplace(key, static_cast<int>(classes.size()));
      (void)inserted;
      color[static_cast<std::size_t>(v)] = it->second;
    }
  }

  for (int round = 0; round < n; ++round) {
    std::vector<std::pair<std::vector<int>, int>> sig(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      std::vector<int> nb;
      nb.reserve(adj[static_cast<std::size_t>(v)].size());
      for (auto [w, bidx] : adj[static_cast<std::size_t>(v)]) {
        nb.push_back(color[static_cast<std::size_t>(w)] * kBondOrderCount +
                     static_cast<int>(mol.bonds[static_cast<std::size_t>(bidx)].order));
      }
      std::sort(nb.begin(), nb.end());
      nb.push_back(color[static_cast<std::size_t>(v)]);
      sig[static_cast<std::size_t>(v)] = {std::move(nb), v};
    }
    std::map<std::vector<int>, int> classes;
    std::vector<int> next(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      auto [it, inserted] = classes.emplace(sig[static_cast<std::size_t>(v)].first, static_cast<int>(classes.size()));
      (void)inserted;
      next[static_cast<std::size_t>(v)] = it->second;
    }
    if (next == color) break;
    color = std::move(next);
  }
  return color;
}

}  // namespace detail

/// Exhaustive search over all |V|! permutations; validation oracle.
inline AutomorphismSet brute_force_automorphisms(const Molecule& mol) {
  const int n = mol.n_atoms();
  if (n > 8) throw Error("brute_force_automorphisms: |V| > 8");
  auto adj = detail::order_matrix(mol);
  std::vector<int> map(static_cast<std::size_t>(n));
  std::iota(map.begin(), map.end(), 0);
  AutomorphismSet out;
  do {
    if (detail::preserves(mol, adj, map)) out.perms.push_back(Permutation{map});
  } while (std::next_permutation(map.begin(), map.end()));
  return out;
}

/// Backtracking automorphism search pruned by refined colors. Returns the
/// full group in lexicographic order when its size is at most cap, else
/// identity-only with truncated set.
inline AutomorphismSet find_automorphisms(const Molecule& mol, int cap = 1000) {
  if (cap < 1) throw Error("find_automorphisms: cap must be >= 1");
  const int n = mol.n_atoms();
  const auto color = detail::refined_colors(mol);
  const auto adj = detail::order_matrix(mol);

  // Assign images in an order that keeps each new vertex attached to the
  // already-assigned part (falls back to index order for isolated atoms).
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  {
    std::vector<char> queued(static_cast<std::size_t>(n), 0);
    auto neigh = mol.adjacency();
    for (int root = 0; root < n; ++root) {
      if (queued[static_cast<std::size_t>(root)]) continue;
      queued[static_cast<std::size_t>(root)] = 1;
      std::size_t head = order.size();
      order.push_back(root);
      while (head < order.size()) {
        const int v = order[head++];
        for (auto [w, bidx] : neigh[static_cast<std::size_t>(v)]) {
          (void)bidx;
          if (!queued[static_cast<std::size_t>(w)]) {
            queued[static_cast<std::size_t>(w)] = 1;
            order.push_back(w);
          }
        }
      }
    }
  }

  std::vector<int> image(static_cast<std::size_t>(n), -1);
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<Permutation> found;
  bool overflow = false;

  auto consistent = [&](int v, int w, int depth) {
    if (color[static_cast<std::size_t>(v)] != color[static_cast<std::size_t>(w)]) return false;
    for (int k = 0; k < depth; ++k) {
      const int u = order[static_cast<std::size_t>(k)];
      if (adj[static_cast<std::size_t>(v) * n + u] !=
          adj[static_cast<std::size_t>(w) * n + image[static_cast<std::size_t>(u)]])
        return false;
    }
    return true;
  };

  auto dfs = [&](auto&& self, int depth) -> void {
    if (overflow) return;
    if (depth == n) {
      if (static_cast<int>(found.size()) >= cap) {
        overflow = true;
        return;
      }
      found.push_back(Permutation{image});
      return;
    }
    const int v = order[static_cast<std::size_t>(depth)];
    for (int w = 0; w < n; ++w) {
      if (used[static_cast<std::size_t>(w)] || !consistent(v, w, depth)) continue;
      image[static_cast<std::size_t>(v)] = w;
      used[static_cast<std::size_t>(w)] = 1;
      self(self, depth + 1);
      used[static_cast<std::size_t>(w)] = 0;
      image[static_cast<std::size_t>(v)] = -1;
      if (overflow) return;
    }
  };
  dfs(dfs, 0);

  if (overflow) return AutomorphismSet::identity_only(n, true);
  std::sort(found.begin(), found.end());
  AutomorphismSet out;
  out.perms = std::move(found);
  return out;
}

}  // namespace unimol

#endif  // UNIMOL_SYMMETRY_HPP
