#pragma once

// JSON system descriptions.
//
//   SLTIS: {"d":2,"n":1,"k":1,"A":[[..]],"B":[[..]],"Afrak":[[[..]]],"Bfrak":[[[..]]],
//           "C":[[..]],"D":[[..]], "Q":[[..]] (optional storage candidate)}
//   PHS:   {"phs":{"J":..,"R":..,"Q":..,"Abar":[..],"F":..,"P":..,"Bfrak":[..],"S":..,"N":..}}
//
// Matrices are row-major arrays of arrays. Doubles are written in the
// shortest form that parses back to the identical value, so a
// serialize/parse round trip is bit-exact.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "sphs/system_model.hpp"

namespace sphs {

using Json = nlohmann::json;

using SystemModel = std::variant<SLTIS, PHSForm>;

struct SystemDocument {
  SystemModel model;
  /// Storage candidate carried by an SLTIS document under "Q".
  std::optional<SymMatrix> storage;
};

namespace json_detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json matrix_list_to_json(const std::vector<Matrix>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

inline double number(const Json& v, const std::string& name) {
  if (!v.is_number()) throw ParseError(name + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw NonFiniteError(name + ": non-finite entry");
  return x;
}

/// Reads a matrix whose row count is `rows`; the column count is taken from
/// `cols` when given, otherwise from the first row.
inline Matrix matrix_from_json(const Json& v, const std::string& name, std::optional<Eigen::Index> rows = std::nullopt,
                               std::optional<Eigen::Index> cols = std::nullopt) {
  if (!v.is_array()) throw ParseError(name + ": expected an array of rows");
  const auto r = static_cast<Eigen::Index>(v.size());
  if (rows && *rows != r) {
    throw ShapeError(name + ": expected " + std::to_string(*rows) + " rows, got " + std::to_string(r));
  }
  Eigen::Index c = cols.value_or(0);
  if (!cols && r > 0) {
    if (!v[0].is_array()) throw ParseError(name + ": rows must be arrays");
    c = static_cast<Eigen::Index>(v[0].size());
  }
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw ParseError(name + ": rows must be arrays");
    if (static_cast<Eigen::Index>(row.size()) != c) {
      throw ShapeError(name + ": row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                       " entries, expected " + std::to_string(c));
    }
    for (Eigen::Index j = 0; j < c; ++j) {
      m(i, j) = number(row[static_cast<std::size_t>(j)], name);
    }
  }
  return m;
}

inline std::vector<Matrix> matrix_list_from_json(const Json& v, const std::string& name,
                                                 std::optional<std::size_t> count, Eigen::Index rows,
                                                 std::optional<Eigen::Index> cols) {
  if (!v.is_array()) throw ParseError(name + ": expected an array of matrices");
  if (count && v.size() != *count) {
    throw ShapeError(name + ": expected " + std::to_string(*count) + " matrices, got " + std::to_string(v.size()));
  }
  std::vector<Matrix> out;
  out.reserve(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    out.push_back(matrix_from_json(v[j], name + "[" + std::to_string(j) + "]", rows, cols));
  }
  return out;
}

inline const Json& member(const Json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing key \"") + key + "\"");
  return *it;
}

inline Eigen::Index dimension(const Json& obj, const char* key, bool allow_zero) {
  const Json& v = member(obj, key);
  if (!v.is_number_integer()) throw ParseError(std::string("\"") + key + "\" must be an integer");
  const auto x = v.get<long long>();
  if (x < 0 || (!allow_zero && x == 0)) throw ShapeError(std::string("\"") + key + "\" out of range");
  return static_cast<Eigen::Index>(x);
}

inline SLTIS sltis_from_json(const Json& doc) {
  const Eigen::Index d = dimension(doc, "d", false);
  const Eigen::Index n = dimension(doc, "n", true);
  const auto k = static_cast<std::size_t>(dimension(doc, "k", true));
  return SLTIS(matrix_from_json(member(doc, "A"), "A", d, d), matrix_from_json(member(doc, "B"), "B", d, n),
               matrix_list_from_json(member(doc, "Afrak"), "Afrak", k, d, d),
               matrix_list_from_json(member(doc, "Bfrak"), "Bfrak", k, d, n),
               matrix_from_json(member(doc, "C"), "C", n, d), matrix_from_json(member(doc, "D"), "D", n, n));
}

inline PHSForm phs_from_json(const Json& phs, const TolerancePolicy& tol) {
  if (!phs.is_object()) throw ParseError("\"phs\" must be an object");
  const Matrix j = matrix_from_json(member(phs, "J"), "J");
  const Eigen::Index d = j.rows();
  if (d == 0) throw ShapeError("J must be non-empty");
  const Matrix s = matrix_from_json(member(phs, "S"), "S");
  const Eigen::Index n = s.rows();
  const Json& abar = member(phs, "Abar");
  const std::optional<std::size_t> k =
      phs.contains("k") ? std::optional<std::size_t>(static_cast<std::size_t>(dimension(phs, "k", true)))
                        : std::nullopt;
  if (phs.contains("d") && dimension(phs, "d", false) != d) throw ShapeError("\"d\" disagrees with J");
  if (phs.contains("n") && dimension(phs, "n", true) != n) throw ShapeError("\"n\" disagrees with S");
  return PHSForm(j, matrix_from_json(member(phs, "R"), "R", d, d), matrix_from_json(member(phs, "Q"), "Q", d, d),
                 matrix_list_from_json(abar, "Abar", k, d, d), matrix_from_json(member(phs, "F"), "F", d, n),
                 matrix_from_json(member(phs, "P"), "P", d, n),
                 matrix_list_from_json(member(phs, "Bfrak"), "Bfrak", k ? k : std::optional(abar.size()), d, n),
                 s, matrix_from_json(member(phs, "N"), "N", n, n), tol);
}

}  // namespace json_detail

inline Json to_json(const SLTIS& sys) {
  using namespace json_detail;
  Json doc;
  doc["d"] = sys.state_dim();
  doc["n"] = sys.input_dim();
  doc["k"] = sys.noise_dim();
  doc["A"] = matrix_to_json(sys.A());
  doc["B"] = matrix_to_json(sys.B());
  doc["Afrak"] = matrix_list_to_json(sys.noise_state());
  doc["Bfrak"] = matrix_list_to_json(sys.noise_input());
  doc["C"] = matrix_to_json(sys.C());
  doc["D"] = matrix_to_json(sys.D());
  return doc;
}

inline Json to_json(const PHSForm& phs) {
  using namespace json_detail;
  Json p;
  p["d"] = phs.state_dim();
  p["n"] = phs.input_dim();
  p["k"] = phs.noise_dim();
  p["J"] = matrix_to_json(phs.J());
  p["R"] = matrix_to_json(phs.R());
  p["Q"] = matrix_to_json(phs.Q());
  p["Abar"] = matrix_list_to_json(phs.noise_state_factor());
  p["F"] = matrix_to_json(phs.F());
  p["P"] = matrix_to_json(phs.P());
  p["Bfrak"] = matrix_list_to_json(phs.noise_input());
  p["S"] = matrix_to_json(phs.S());
  p["N"] = matrix_to_json(phs.N());
  Json doc;
  doc["phs"] = std::move(p);
  return doc;
}

/// Parses an SLTIS or PHS document. Throws ParseError (syntax, missing keys),
/// ShapeError (dimension mismatch) or StructureError (PHS constraint).
inline SystemDocument parse_system(const std::string& text, const TolerancePolicy& tol = {}) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("system document must be a JSON object");
  try {
    if (doc.contains("phs")) {
      return SystemDocument{json_detail::phs_from_json(doc["phs"], tol), std::nullopt};
    }
    SLTIS sys = json_detail::sltis_from_json(doc);
    std::optional<SymMatrix> q;
    if (doc.contains("Q")) {
      q = make_storage(sys, json_detail::matrix_from_json(doc["Q"], "Q", sys.state_dim(), sys.state_dim()), tol).Q;
    }
    return SystemDocument{std::move(sys), std::move(q)};
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed system document: ") + e.what());
  }
}

inline std::string serialize_system(const SystemModel& model, const std::optional<SymMatrix>& storage = std::nullopt) {
  Json doc = std::visit([](const auto& m) { return to_json(m); }, model);
  if (storage && std::holds_alternative<SLTIS>(model)) doc["Q"] = json_detail::matrix_to_json(storage->matrix());
  return doc.dump(2) + "\n";
}

}  // namespace sphs
