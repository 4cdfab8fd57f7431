#pragma once

// JSON conversions for tasks, matrices and certificates, and a writer that
// prints every double with 17 significant digits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlqr/bisim.hpp"
#include "mtlqr/errors.hpp"
#include "mtlqr/lqr.hpp"

namespace mtlqr::io {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline bool is_flat(const Json& j) {
  for (const auto& e : j)
    if (e.is_structured()) return false;
  return true;
}

inline void write(std::ostream& os, const Json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::number_float:
      os << format_double(j.get<double>());
      return;
    case Json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      // Arrays of scalars stay on one line so matrices read row by row.
      const bool flat = is_flat(j);
      os << '[';
      bool first = true;
      for (const auto& e : j) {
        os << (first ? "" : ",");
        if (flat) {
          os << (first ? "" : " ");
        } else {
          os << '\n' << pad;
        }
        write(os, e, indent, depth + 1);
        first = false;
      }
      if (!flat) os << '\n' << close;
      os << ']';
      return;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        os << (first ? "\n" : ",\n") << pad << Json(it.key()).dump() << ": ";
        write(os, it.value(), indent, depth + 1);
        first = false;
      }
      os << '\n' << close << '}';
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace detail

inline void write_json(std::ostream& os, const Json& j) {
  detail::write(os, j, 2, 0);
  os << '\n';
}

inline std::string to_string(const Json& j) {
  std::ostringstream os;
  write_json(os, j);
  return os.str();
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  write_json(f, j);
  if (!f) throw Error("failed writing '" + path + "'");
}

inline Json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline Json to_json(const RealMatrix& M) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// A matrix is an array of equal-length rows of numbers.
inline RealMatrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
    throw ConfigError(what + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  RealMatrix M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": rows must all have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(what + ": entries must be numbers");
      M(r, c) = v.get<double>();
    }
  }
  return M;
}

inline Json to_json(const Task& t) {
  return Json{{"id", t.id}, {"A", to_json(t.A)}, {"B", to_json(t.B)}, {"Q", to_json(t.Q)},
              {"R", to_json(t.R)}, {"Sigma0", to_json(t.Sigma0)}};
}

inline Task task_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("task: expected an object");
  static const char* const keys[] = {"id", "A", "B", "Q", "R", "Sigma0"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(keys), std::end(keys), it.key()) == std::end(keys)) {
      throw ConfigError("task: unknown key '" + it.key() + "'");
    }
  }
  for (const char* k : keys)
    if (!j.contains(k)) throw ConfigError(std::string("task: missing key '") + k + "'");
  if (!j["id"].is_string()) throw ConfigError("task: id must be a string");
  Task t;
  t.id = j["id"].get<std::string>();
  t.A = matrix_from_json(j["A"], t.id + ".A");
  t.B = matrix_from_json(j["B"], t.id + ".B");
  t.Q = matrix_from_json(j["Q"], t.id + ".Q");
  t.R = matrix_from_json(j["R"], t.id + ".R");
  t.Sigma0 = matrix_from_json(j["Sigma0"], t.id + ".Sigma0");
  validate_task(t);
  return t;
}

inline Json to_json(const std::vector<Task>& tasks) {
  Json a = Json::array();
  for (const Task& t : tasks) a.push_back(to_json(t));
  return a;
}

inline std::vector<Task> tasks_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("tasks: expected a non-empty array");
  std::vector<Task> out;
  for (const Json& e : j) out.push_back(task_from_json(e));
  return out;
}

inline Json to_json(const Certificate& c) {
  return Json{{"i", c.i},
              {"j", c.j},
              {"lambda", c.lambda},
              {"value", c.value},
              {"method", mtlqr::to_string(c.method)},
              {"feas_slack", c.feas_slack},
              {"fallback", c.fallback},
              {"note", c.note},
              {"M", to_json(c.M)}};
}

inline Json to_json(const std::vector<Certificate>& certs) {
  Json a = Json::array();
  for (const Certificate& c : certs) a.push_back(to_json(c));
  return a;
}

inline Json to_json(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

}  // namespace mtlqr::io
