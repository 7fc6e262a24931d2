#pragma once

// Text formats: header-first CSV input, a flat `key = value` config file, and
// CSV/JSON writers that keep 17 significant digits.

#include "csgva/models.hpp"
#include "csgva/types.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace csgva {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// 17 significant digits: reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_of_row;  // 1-based source line of each row
  std::string source;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw InvalidData(source + ": no column named '" + name + "'", 1, 0);
    }
    return static_cast<std::size_t>(it - header.begin());
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows[row][col];
    const std::size_t line = line_of_row[row];
    if (cell.empty()) {
      throw InvalidData(source + ":" + std::to_string(line) + ":" + std::to_string(col + 1) +
                            ": empty value in column '" + header[col] + "'",
                        line, col + 1);
    }
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
      throw InvalidData(source + ":" + std::to_string(line) + ":" + std::to_string(col + 1) +
                            ": '" + cell + "' is not a finite number (column '" + header[col] + "')",
                        line, col + 1);
    }
    return v;
  }
};

/// Splits one CSV record; double quotes may wrap a field and "" is a literal quote.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no,
                                               const std::string& source) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && trim(field).empty()) {
      field.clear();
      quoted = true;
      was_quoted = true;
    } else if (was_quoted && (c == ' ' || c == '\t' || c == '\r')) {
      continue;
    } else if (c == ',') {
      fields.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) {
    throw InvalidData(source + ":" + std::to_string(line_no) + ": unterminated quoted field", line_no,
                      fields.size() + 1);
  }
  fields.push_back(was_quoted ? field : trim(field));
  return fields;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidData("cannot open data file '" + path.string() + "'");
  CsvTable table;
  table.source = path.string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, line_no, table.source);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw InvalidData(table.source + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(fields.size()),
                        line_no, std::min(fields.size(), table.header.size()) + 1);
    }
    table.rows.push_back(std::move(fields));
    table.line_of_row.push_back(line_no);
  }
  if (table.header.empty()) throw InvalidData(table.source + ": file is empty");
  return table;
}

struct GlmmColumns {
  std::string subject = "subject";
  std::string response;
  /// Covariates besides the intercept, in design order.
  std::vector<std::string> covariates;
  /// Random-effect covariates; the intercept is always the first.
  std::vector<std::string> random;
  std::vector<std::string> subject_specific;
};

inline constexpr const char* kIntercept = "(Intercept)";

/// Longitudinal CSV, one row per observation. Subjects appear in order of
/// first occurrence; their rows need not be contiguous.
inline GlmmData load_glmm(const std::filesystem::path& path, const GlmmColumns& cols,
                          GlmmFamily family) {
  if (cols.response.empty()) throw ConfigError("glmm: no response column given");
  const CsvTable table = read_csv(path);
  GlmmData data;
  data.family = family;
  data.fixed_names.push_back(kIntercept);
  for (const auto& c : cols.covariates) {
    if (c == kIntercept) continue;
    if (std::find(data.fixed_names.begin(), data.fixed_names.end(), c) != data.fixed_names.end()) {
      throw ConfigError("glmm: covariate '" + c + "' listed twice");
    }
    data.fixed_names.push_back(c);
  }
  auto fixed_index = [&](const std::string& name, const char* role) {
    const auto it = std::find(data.fixed_names.begin(), data.fixed_names.end(), name);
    if (it == data.fixed_names.end()) {
      throw ConfigError(std::string("glmm: ") + role + " column '" + name +
                        "' is not among the covariates");
    }
    return static_cast<Index>(it - data.fixed_names.begin());
  };
  data.random_cols.push_back(0);
  for (const auto& c : cols.random) {
    if (c == kIntercept) continue;
    data.random_cols.push_back(fixed_index(c, "random-effect"));
  }
  for (const auto& c : cols.subject_specific) {
    data.subject_specific_cols.push_back(fixed_index(c, "subject-specific"));
  }

  const std::size_t subject_col = table.column(cols.subject);
  const std::size_t response_col = table.column(cols.response);
  std::vector<std::size_t> covariate_cols;
  for (std::size_t k = 1; k < data.fixed_names.size(); ++k) {
    covariate_cols.push_back(table.column(data.fixed_names[k]));
  }

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& id = table.rows[r][subject_col];
    if (id.empty()) {
      throw InvalidData(table.source + ":" + std::to_string(table.line_of_row[r]) +
                            ": empty subject id",
                        table.line_of_row[r], subject_col + 1);
    }
    auto [it, inserted] = rows_of.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(r);
  }
  if (order.empty()) throw InvalidData(table.source + ": no data rows");

  const Index p = static_cast<Index>(data.fixed_names.size());
  for (const auto& id : order) {
    const auto& rows = rows_of.at(id);
    GlmmSubject s;
    s.y.resize(static_cast<Index>(rows.size()));
    s.X.resize(static_cast<Index>(rows.size()), p);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const Index jj = static_cast<Index>(j);
      const std::size_t r = rows[j];
      s.y[jj] = table.number(r, response_col);
      const std::size_t line = table.line_of_row[r];
      if (family == GlmmFamily::poisson_log &&
          (s.y[jj] < 0.0 || s.y[jj] != std::floor(s.y[jj]))) {
        throw InvalidData(table.source + ":" + std::to_string(line) + ":" +
                              std::to_string(response_col + 1) +
                              ": poisson response must be a non-negative integer",
                          line, response_col + 1);
      }
      if (family == GlmmFamily::bernoulli_logit && s.y[jj] != 0.0 && s.y[jj] != 1.0) {
        throw InvalidData(table.source + ":" + std::to_string(line) + ":" +
                              std::to_string(response_col + 1) + ": bernoulli response must be 0 or 1",
                          line, response_col + 1);
      }
      s.X(jj, 0) = 1.0;
      for (std::size_t k = 0; k < covariate_cols.size(); ++k) {
        s.X(jj, static_cast<Index>(k) + 1) = table.number(r, covariate_cols[k]);
      }
    }
    for (Index c : data.subject_specific_cols) {
      for (std::size_t j = 1; j < rows.size(); ++j) {
        if (s.X(static_cast<Index>(j), c) != s.X(0, c)) {
          const std::size_t line = table.line_of_row[rows[j]];
          const std::size_t col = covariate_cols[static_cast<std::size_t>(c) - 1] + 1;
          throw InvalidData(table.source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                ": column '" + data.fixed_names[c] +
                                "' is subject-specific but varies within subject '" + id + "'",
                            line, col);
        }
      }
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

/// One numeric column; raw rates are mean-corrected when `rates` is set.
inline SvmData load_svm(const std::filesystem::path& path, const std::string& column, bool rates) {
  const CsvTable table = read_csv(path);
  const std::size_t col = column.empty() ? 0 : table.column(column);
  Vector values(static_cast<Index>(table.rows.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    values[static_cast<Index>(r)] = table.number(r, col);
    if (rates && !(values[static_cast<Index>(r)] > 0.0)) {
      throw InvalidData(table.source + ":" + std::to_string(table.line_of_row[r]) + ":" +
                            std::to_string(col + 1) + ": rates must be positive",
                        table.line_of_row[r], col + 1);
    }
  }
  SvmData data;
  data.y = rates ? mean_correct(values) : values;
  if (data.y.size() < 1) throw InvalidData(table.source + ": no observations");
  return data;
}

/// Flat `key = value` settings. Blank lines, `#` comments and `[section]`
/// headers are skipped; keys are unique.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "config") {
    Config cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty() || line.front() == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
      }
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      if (!cfg.values_.emplace(key, Entry{value, line_no}).second) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      }
    }
    cfg.source_ = source;
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key) const { return values_.at(key).value; }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  std::string where(const std::string& key) const {
    return source_ + ":" + std::to_string(values_.at(key).line);
  }

  template <typename T>
  T number(const std::string& key) const {
    const std::string& v = values_.at(key).value;
    std::istringstream in(v);
    T out{};
    in >> out;
    if (!in || !(in >> std::ws).eof()) {
      throw ConfigError(where(key) + ": '" + v + "' is not a valid value for '" + key + "'");
    }
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string v = values_.at(key).value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where(key) + ": '" + v + "' is not a boolean");
  }

 private:
  struct Entry {
    std::string value;
    std::size_t line;
  };
  std::map<std::string, Entry> values_;
  std::string source_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

/// label,mean,sd rows.
inline std::string summary_csv(const std::vector<std::string>& labels, const Vector& mean,
                               const Vector& sd) {
  std::string out = "label,mean,sd\n";
  for (Index i = 0; i < mean.size(); ++i) {
    out += labels[static_cast<std::size_t>(i)] + "," + format_double(mean[i]) + "," +
           format_double(sd[i]) + "\n";
  }
  return out;
}

}  // namespace csgva
