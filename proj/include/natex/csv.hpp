#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"

namespace natex {
namespace detail {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  Index column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<Index>(j);
    }
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

// Reads a numeric CSV with a header row. Handles \n and \r\n endings.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw schema_error("csv: cannot open file: " + path);

  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (line_no == 1) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw parse_error("csv: row " + std::to_string(line_no - 1) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(table.header.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string& cell = cells[j];
      double value = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw parse_error("csv: non-numeric cell at row " + std::to_string(line_no - 1) +
                          ", column " + std::to_string(j + 1) + " (" + table.header[j] + ")");
      }
      row[j] = value;
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw schema_error("csv: missing header row in " + path);
  return table;
}

inline Matrix gather_covariates(const CsvTable& table, const std::vector<Index>& reserved) {
  std::vector<Index> cov_cols;
  for (Index j = 0; j < static_cast<Index>(table.header.size()); ++j) {
    bool is_reserved = false;
    for (Index r : reserved) is_reserved |= (r == j);
    if (!is_reserved) cov_cols.push_back(j);
  }
  Matrix x(static_cast<Index>(table.rows.size()), static_cast<Index>(cov_cols.size()));
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      x(i, j) = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(cov_cols[j])];
    }
  }
  return x;
}

}  // namespace detail

// Observed-mode schema: reserved columns `z` (0/1) and `y_obs`; every other
// column is a covariate. Row order is preserved.
inline ObservedDataset load_observed_csv(const std::string& path) {
  const auto table = detail::read_csv(path);
  const Index zc = table.column("z");
  if (zc < 0) throw schema_error("csv: observed mode requires column `z`");
  const Index yc = table.column("y_obs");
  if (yc < 0) throw schema_error("csv: observed mode requires column `y_obs`");

  ObservedDataset obs;
  obs.covariates = detail::gather_covariates(table, {zc, yc});
  const auto n = static_cast<Index>(table.rows.size());
  obs.z.resize(n);
  obs.y_obs.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double zv = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(zc)];
    if (zv != 0.0 && zv != 1.0) {
      throw validation_error("csv: `z` must be 0 or 1 at row " + std::to_string(i + 1));
    }
    obs.z[i] = static_cast<int>(zv);
    obs.y_obs[i] = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(yc)];
  }
  return obs;
}

// Full-mode schema: reserved columns `y0`, `y1`, `p`; everything else is a
// covariate. Propensities must lie in (0, 1) and are truncated to
// [0.01, 0.99] on construction, the same regularization applied everywhere.
inline FullDataset load_full_csv(const std::string& path) {
  const auto table = detail::read_csv(path);
  const Index y0c = table.column("y0");
  if (y0c < 0) throw schema_error("csv: full mode requires column `y0`");
  const Index y1c = table.column("y1");
  if (y1c < 0) throw schema_error("csv: full mode requires column `y1`");
  const Index pc = table.column("p");
  if (pc < 0) throw schema_error("csv: full mode requires column `p`");

  const auto n = static_cast<Index>(table.rows.size());
  Vector y0(n), y1(n), p(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    y0[i] = row[static_cast<std::size_t>(y0c)];
    y1[i] = row[static_cast<std::size_t>(y1c)];
    p[i] = row[static_cast<std::size_t>(pc)];
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw validation_error("csv: `p` outside (0, 1) at row " + std::to_string(i + 1));
    }
  }
  Matrix x = detail::gather_covariates(table, {y0c, y1c, pc});
  return FullDataset::create(std::move(x), std::move(y0), std::move(y1), std::move(p));
}

inline void write_observed_csv(const ObservedDataset& obs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw schema_error("csv: cannot write file: " + path);
  for (Index j = 0; j < obs.dim(); ++j) out << "x" << j << ",";
  out << "z,y_obs\n";
  for (Index i = 0; i < obs.size(); ++i) {
    for (Index j = 0; j < obs.dim(); ++j) {
      out << detail::format_double(obs.covariates(i, j)) << ",";
    }
    out << obs.z[i] << "," << detail::format_double(obs.y_obs[i]) << "\n";
  }
}

inline void write_full_csv(const FullDataset& full, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw schema_error("csv: cannot write file: " + path);
  for (Index j = 0; j < full.dim(); ++j) out << "x" << j << ",";
  out << "y0,y1,p\n";
  for (Index i = 0; i < full.size(); ++i) {
    for (Index j = 0; j < full.dim(); ++j) {
      out << detail::format_double(full.covariates(i, j)) << ",";
    }
    out << detail::format_double(full.y0[i]) << "," << detail::format_double(full.y1[i]) << ","
        << detail::format_double(full.propensity[i]) << "\n";
  }
}

}  // namespace natex
