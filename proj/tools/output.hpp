// Result files: trace tables (CSV or JSON) and metrics documents.
// Everything is staged in memory first and flushed by write_all(), so a run that fails
// part-way leaves no files behind.
#pragma once

#include <usmooth/experiment.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace usmooth::cli {

enum class Format { csv, json };

/// Named columns over a shared row index; row i is time step first_step + i.
struct Table {
  std::vector<std::string> columns;
  std::vector<Vector> data;  // one vector per column, all the same length
  int first_step = 1;
  double dt = 0.0;
  bool with_time = true;

  void add(const std::string& name, const Vector& v) {
    if (!data.empty() && v.size() != data.front().size())
      throw std::logic_error("table column '" + name + "' has the wrong length");
    columns.push_back(name);
    data.push_back(v);
  }

  void add_block(const std::vector<std::string>& names, const Matrix& m, int rows) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) add(names.at(j), m.col(j).head(rows));
  }

  [[nodiscard]] int rows() const { return data.empty() ? 0 : static_cast<int>(data.front().size()); }
};

/// Shortest form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string render_csv(const Table& t) {
  std::string out = t.with_time ? "step,time" : "";
  for (std::size_t j = 0; j < t.columns.size(); ++j) out += (out.empty() ? "" : ",") + t.columns[j];
  out += '\n';
  for (int i = 0; i < t.rows(); ++i) {
    std::string line;
    if (t.with_time) {
      const int step = t.first_step + i;
      line = std::to_string(step) + "," + format_double(step * t.dt);
    }
    for (const auto& col : t.data) line += (line.empty() ? "" : ",") + format_double(col(i));
    out += line + '\n';
  }
  return out;
}

inline nlohmann::json table_json(const Table& t) {
  nlohmann::json j;
  auto cols = nlohmann::json::array();
  if (t.with_time) cols = {"step", "time"};
  for (const auto& c : t.columns) cols.push_back(c);
  j["columns"] = cols;
  auto rows = nlohmann::json::array();
  for (int i = 0; i < t.rows(); ++i) {
    auto row = nlohmann::json::array();
    if (t.with_time) {
      row.push_back(t.first_step + i);
      row.push_back((t.first_step + i) * t.dt);
    }
    for (const auto& col : t.data) {
      const double v = col(i);
      if (std::isfinite(v)) row.push_back(v);
      else row.push_back(nullptr);
    }
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j;
}

/// Reads a CSV written by render_csv (or any header + numeric rows file).
struct CsvData {
  std::vector<std::string> header;
  Matrix values;
};

inline CsvData read_csv(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open '" + file + "'");
  CsvData out;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(file + ": empty file");
  for (std::size_t a = 0;;) {
    const auto b = line.find(',', a);
    out.header.push_back(line.substr(a, b == std::string::npos ? std::string::npos : b - a));
    if (b == std::string::npos) break;
    a = b + 1;
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.c_str();
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw std::runtime_error(file + ":" + std::to_string(lineno) + ": non-numeric field");
      row.push_back(v);
      if (*end == '\0') break;
      if (*end != ',') throw std::runtime_error(file + ":" + std::to_string(lineno) + ": malformed row");
      p = end + 1;
    }
    if (row.size() != out.header.size())
      throw std::runtime_error(file + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(out.header.size()) + " fields");
    rows.push_back(std::move(row));
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out.values(i, j) = rows[i][j];
  return out;
}

inline nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"displacement", m.displacement},
          {"velocity", m.velocity},
          {"input", m.input},
          {"overall", m.overall},
          {"compared_steps", m.compared_steps},
          {"displacement_channels", vector_json(m.displacement_channels)},
          {"velocity_channels", vector_json(m.velocity_channels)},
          {"input_channels", vector_json(m.input_channels)}};
}

/// Files queued for writing, flushed only once the whole command succeeded.
class OutputSet {
 public:
  OutputSet(std::string dir, Format format) : dir_(std::move(dir)), format_(format) {}

  void table(const std::string& stem, const Table& t) {
    if (format_ == Format::csv) files_.emplace_back(stem + ".csv", render_csv(t));
    else files_.emplace_back(stem + ".json", table_json(t).dump() + "\n");
  }

  void document(const std::string& name, const nlohmann::json& j) { files_.emplace_back(name, j.dump(2) + "\n"); }

  void write_all() const {
    std::filesystem::create_directories(dir_);
    for (const auto& [name, text] : files_) {
      const std::string path = dir_ + "/" + name;
      std::ofstream out(path, std::ios::binary);
      out << text;
      if (!out) throw std::runtime_error("cannot write '" + path + "'");
    }
  }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& f : files_) n.push_back(f.first);
    return n;
  }

 private:
  std::string dir_;
  Format format_;
  std::vector<std::pair<std::string, std::string>> files_;
};

}  // namespace usmooth::cli
