//
// Project unimol - Copyright 2026 unimol developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef UNIMOL_DATASET_IO_HPP
#define UNIMOL_DATASET_IO_HPP

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimol/molecule.hpp"

namespace unimol {

// JSONL dataset format, one molecule per line:
//   {"id": str,
//    "atoms": [{"z": int, "q": int}, ...],
//    "bonds": [[i, j, "single"|"double"|"triple"|"aromatic"], ...],
//    "coords": [[x, y, z], ...],          // optional
//    "labels": {"task": number|null}}     // optional
// Coordinates are angstroms; "q" defaults to 0 when omitted.

namespace detail {

inline Molecule molecule_from_json(const nlohmann::json& j) {
  Molecule mol;
  if (!j.is_object()) throw Error("expected a JSON object");
  mol.id = j.at("id").get<std::string>();

  const auto& atoms = j.at("atoms");
  if (!atoms.is_array() || atoms.empty()) throw Error("'atoms' must be a non-empty array");
  for (const auto& a : atoms) {
    Atom atom;
    atom.atomic_number = a.at("z").get<int>();
    atom.formal_charge = a.value("q", 0);
    mol.atoms.push_back(atom);
  }

  if (j.contains("bonds")) {
    for (const auto& b : j.at("bonds")) {
      if (!b.is_array() || b.size() != 3)
        throw Error("each bond must be [i, j, order]");
      Bond bond;
      bond.i = b[0].get<int>();
      bond.j = b[1].get<int>();
      bond.order = bond_order_from_string(b[2].get<std::string>());
      mol.bonds.push_back(bond);
    }
  }

  if (j.contains("coords") && !j.at("coords").is_null()) {
    const auto& rows = j.at("coords");
    Mat coords(static_cast<int>(rows.size()), 3);
    int r = 0;
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != 3) throw Error("each coordinate row must be [x, y, z]");
      for (int c = 0; c < 3; ++c) coords(r, c) = row[static_cast<std::size_t>(c)].get<double>();
      ++r;
    }
    mol.coords = std::move(coords);
  }

  if (j.contains("labels") && !j.at("labels").is_null()) {
    for (const auto& [name, value] : j.at("labels").items()) {
      if (value.is_null()) {
        mol.labels[name] = std::nullopt;
      } else {
        mol.labels[name] = value.get<double>();
      }
    }
  }

  mol.validate();
  return mol;
}

inline nlohmann::ordered_json molecule_to_json(const Molecule& mol) {
  nlohmann::ordered_json j;
  j["id"] = mol.id;
  auto atoms = nlohmann::ordered_json::array();
  for (const Atom& a : mol.atoms) {
    atoms.push_back({{"z", a.atomic_number}, {"q", a.formal_charge}});
  }
  j["atoms"] = std::move(atoms);
  auto bonds = nlohmann::ordered_json::array();
  for (const Bond& b : mol.bonds) {
    bonds.push_back({b.i, b.j, to_string(b.order)});
  }
  j["bonds"] = std::move(bonds);
  if (mol.coords) {
    auto rows = nlohmann::ordered_json::array();
    for (int r = 0; r < mol.coords->rows(); ++r) {
      rows.push_back({(*mol.coords)(r, 0), (*mol.coords)(r, 1), (*mol.coords)(r, 2)});
    }
    j["coords"] = std::move(rows);
  }
  if (!mol.labels.empty()) {
    auto labels = nlohmann::ordered_json::object();
    for (const auto& [name, value] : mol.labels) {
      if (value) {
        labels[name] = *value;
      } else {
        labels[name] = nullptr;
      }
    }
    j["labels"] = std::move(labels);
  }
  return j;
}

}  // namespace detail

/// Parses a JSONL molecule stream. Each error message names the 1-based line.
inline std::vector<Molecule> parse_jsonl(std::istream& in) {
  std::vector<Molecule> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(detail::molecule_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Molecule> parse_jsonl(const std::string& text) {
  std::istringstream in(text);
  return parse_jsonl(in);
}

inline std::vector<Molecule> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return parse_jsonl(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_jsonl(const std::vector<Molecule>& mols, std::ostream& out) {
  for (const Molecule& mol : mols) {
    mol.validate();
    out << detail::molecule_to_json(mol).dump() << '\n';
  }
}

inline std::string write_jsonl(const std::vector<Molecule>& mols) {
  std::ostringstream out;
  write_jsonl(mols, out);
  return out.str();
}

inline void save_jsonl(const std::vector<Molecule>& mols, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_jsonl(mols, out);
}

}  // namespace unimol

#endif  // UNIMOL_DATASET_IO_HPP
