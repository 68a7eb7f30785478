#pragma once

// Plain numeric CSV matrices and JSON group files.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "knockoff/group_select.hpp"

namespace knockoff {

/// Comma-delimited numeric matrix. `skip_header` drops the first line. Every row
/// must have the same number of fields; blank lines are ignored.
inline Matrix parse_csv_matrix(std::istream& in, bool skip_header = false, const std::string& name = "input") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  if (skip_header && std::getline(in, line)) ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || field.find_first_not_of(" \t", used) != std::string::npos) {
        throw Error(ErrorCode::Io, name + ":" + std::to_string(lineno) + ": '" + field + "' is not a number");
      }
      row.push_back(v);
    }
    if (!line.empty() && line.back() == ',') {
      throw Error(ErrorCode::Io, name + ":" + std::to_string(lineno) + ": trailing empty field");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::Io, name + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(rows.front().size()) + " columns, found " +
                                     std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Io, name + ": no data rows");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

inline Matrix read_csv_matrix(const std::string& path, bool skip_header = false) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return parse_csv_matrix(in, skip_header, path);
}

/// A response file must hold a single column (or a single row).
inline Vector read_csv_vector(const std::string& path, bool skip_header = false) {
  const Matrix m = read_csv_matrix(path, skip_header);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw Error(ErrorCode::Io, "'" + path + "' must contain a single column");
}

/// JSON array of 1-based index arrays, e.g. [[1,2,3],[4,5]].
inline GroupStructure parse_groups_json(const std::string& text, Index p) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("groups file is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::Io, "groups must be a JSON array of index arrays");
  std::vector<std::vector<Index>> groups;
  for (const auto& g : j) {
    if (!g.is_array()) throw Error(ErrorCode::Io, "each group must be an array of 1-based indices");
    std::vector<Index> idx;
    for (const auto& v : g) {
      if (!v.is_number_integer()) throw Error(ErrorCode::Io, "group indices must be integers");
      idx.push_back(v.get<Index>() - 1);
    }
    groups.push_back(std::move(idx));
  }
  return GroupStructure(std::move(groups), p);
}

inline GroupStructure read_groups_json(const std::string& path, Index p) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_groups_json(ss.str(), p);
}

inline nlohmann::json groups_to_json(const GroupStructure& g) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& grp : g.groups()) {
    nlohmann::json a = nlohmann::json::array();
    for (Index j : grp) a.push_back(j + 1);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace knockoff
