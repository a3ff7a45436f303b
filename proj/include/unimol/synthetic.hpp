//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_SYNTHETIC_HPP
#define UNIMOL_SYNTHETIC_HPP

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "unimol/molecule.hpp"

namespace unimol {

/// n x 3 matrix with entries uniform in [-1, 1], deterministic per (n, seed).
inline Mat random_coordinates(int n_atoms, std::uint64_t seed) {
  if (n_atoms < 1) throw Error("random_coordinates: n_atoms must be >= 1");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(n_atoms)));
  Mat m(n_atoms, 3);
  for (int i = 0; i < n_atoms; ++i)
    for (int c = 0; c < 3; ++c) m(i, c) = rng.uniform_pm1();
  return m;
}

namespace detail {

inline double bond_rest_length(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1.54;
    case BondOrder::Double: return 1.34;
    case BondOrder::Triple: return 1.20;
    case BondOrder::Aromatic: return 1.40;
  }
  return 1.5;
}

/// Simple force-directed 3D embedding: springs on bonds toward per-order
/// rest lengths, soft all-pairs repulsion. Deterministic per seed.
inline Mat spring_layout_3d(const Molecule& mol, std::uint64_t seed) {
  const int n = mol.n_atoms();
  Rng rng(mix_seed(seed, 0x5b7213 /* layout stream */));
  Mat pos(n, 3);
  const double spread = 0.8 * std::cbrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) pos(i, c) = rng.uniform_pm1() * spread;
  if (n == 1) return pos;

  const int iters = 200;
  const double step = 0.05;
  Mat force(n, 3);
  for (int it = 0; it < iters; ++it) {
    force.fill(0.0);
    for (const Bond& b : mol.bonds) {
      double d[3];
      double r2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        d[c] = pos(b.j, c) - pos(b.i, c);
        r2 += d[c] * d[c];
      }
      const double r = std::sqrt(r2) + 1e-9;
      const double k = 2.0 * (r - bond_rest_length(b.order)) / r;
      for (int c = 0; c < 3; ++c) {
        force(b.i, c) += k * d[c];
        force(b.j, c) -= k * d[c];
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double d[3];
        double r2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          d[c] = pos(j, c) - pos(i, c);
          r2 += d[c] * d[c];
        }
        const double rep = 1.2 / (r2 + 0.25);
        const double r = std::sqrt(r2) + 1e-9;
        for (int c = 0; c < 3; ++c) {
          force(i, c) -= rep * d[c] / r;
          force(j, c) += rep * d[c] / r;
        }
      }
    }
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) pos(i, c) += step * force(i, c);
  }
  // Center at the origin.
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += pos(i, c);
    mean /= n;
    for (int i = 0; i < n; ++i) pos(i, c) -= mean;
  }
  return pos;
}

inline BondOrder random_bond_order(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.60) return BondOrder::Single;
  if (u < 0.78) return BondOrder::Double;
  if (u < 0.92) return BondOrder::Aromatic;
  return BondOrder::Triple;
}

}  // namespace detail

/// Deterministic generator of connected, degree-bounded random molecules
/// with atoms from {C, N, O, F, S}. A slice of the output carries a planted
/// pair of identical pendant branches so that nontrivial automorphisms
/// appear with well over 10% frequency.
inline std::vector<Molecule> synth_dataset(int count, std::uint64_t seed,
                                           std::pair<int, int> size_range = {4, 12}) {
  if (count < 1) throw Error("synth_dataset: count must be >= 1");
  const auto [lo, hi] = size_range;
  if (lo < 2 || hi > 30 || lo > hi) throw Error("synth_dataset: size range must be within [2, 30]");

  const std::array<int, 5> elements = {6, 7, 8, 9, 16};  // C N O F S
  constexpr int kMaxDegree = 4;

  std::vector<Molecule> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(m), 0x6d6f6c));
    const int n = rng.between(lo, hi);
    const bool plant_symmetric = n >= 4 && rng.bernoulli(0.35);
    const int base = plant_symmetric ? n - 2 : n;

    Molecule mol;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth-%06d", m);
    mol.id = buf;
    mol.atoms.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      mol.atoms[static_cast<std::size_t>(i)].atomic_number = elements[static_cast<std::size_t>(rng.below(5))];

    std::vector<int> deg(static_cast<std::size_t>(n), 0);
    auto add_bond = [&](int i, int j, BondOrder o) {
      mol.bonds.push_back({i, j, o});
      ++deg[static_cast<std::size_t>(i)];
      ++deg[static_cast<std::size_t>(j)];
    };

    // Random spanning tree over the base atoms keeps the graph connected.
    for (int v = 1; v < base; ++v) {
      int parent = rng.below(v);
      for (int tries = 0; deg[static_cast<std::size_t>(parent)] >= kMaxDegree && tries < 64; ++tries)
        parent = rng.below(v);
      if (deg[static_cast<std::size_t>(parent)] >= kMaxDegree) {
        for (int u = 0; u < v; ++u)
          if (deg[static_cast<std::size_t>(u)] < kMaxDegree) parent = u;
      }
      add_bond(parent, v, detail::random_bond_order(rng));
    }

    // A few ring-closing extras, degree permitting.
    if (base >= 4) {
      const int extras = rng.below(1 + base / 5);
      for (int e = 0; e < extras; ++e) {
        const int i = rng.below(base);
        const int j = rng.below(base);
        if (i == j) continue;
        if (deg[static_cast<std::size_t>(i)] >= kMaxDegree || deg[static_cast<std::size_t>(j)] >= kMaxDegree)
          continue;
        bool dup = false;
        for (const Bond& b : mol.bonds)
          if ((b.i == i && b.j == j) || (b.i == j && b.j == i)) dup = true;
        if (!dup) add_bond(i, j, detail::random_bond_order(rng));
      }
    }

    if (plant_symmetric) {
      // Two identical leaves on one host atom: guaranteed swap automorphism.
      int host = rng.below(base);
      for (int tries = 0; deg[static_cast<std::size_t>(host)] > kMaxDegree - 2 && tries < 64; ++tries)
        host = rng.below(base);
      if (deg[static_cast<std::size_t>(host)] > kMaxDegree - 2) {
        for (int u = 0; u < base; ++u)
          if (deg[static_cast<std::size_t>(u)] <= kMaxDegree - 2) host = u;
      }
      const int z = elements[static_cast<std::size_t>(rng.below(5))];
      const BondOrder order = BondOrder::Single;
      mol.atoms[static_cast<std::size_t>(base)].atomic_number = z;
      mol.atoms[static_cast<std::size_t>(base + 1)].atomic_number = z;
      add_bond(host, base, order);
      add_bond(host, base + 1, order);
    }

    mol.coords = detail::spring_layout_3d(mol, mix_seed(seed, static_cast<std::uint64_t>(m), 0xc00d));
    mol.validate();
    if (!mol.connected()) throw Error("synth_dataset: generated a disconnected graph");
    out.push_back(std::move(mol));
  }
  return out;
}

}  // namespace unimol

#endif  // UNIMOL_SYNTHETIC_HPP
