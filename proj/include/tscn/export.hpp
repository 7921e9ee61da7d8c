#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"

namespace tscn {

// ---------------------------------------------------------------------------
// Embedding CSV
//
//   index,label,split,z1,...,zd
//   0,3,train,0.12345678901234567,-1.5
//
// Values use %.17g so that parsing them back reproduces the doubles exactly.
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  std::vector<std::size_t> index;
  std::vector<std::uint32_t> label;
  std::vector<bool> is_test;
  Matrix<double> z;

  std::size_t rows() const noexcept { return index.size(); }
  std::size_t dim() const noexcept { return z.cols(); }
  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string write_embedding_csv(const EmbeddingTable& t) {
  std::string out = "index,label,split";
  for (std::size_t j = 0; j < t.dim(); ++j) out += ",z" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out += std::to_string(t.index[i]) + ',' + std::to_string(t.label[i]) + ',' + (t.is_test[i] ? "test" : "train");
    for (std::size_t j = 0; j < t.dim(); ++j) out += ',' + format_g17(t.z(i, j));
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

} // namespace detail

inline EmbeddingTable parse_embedding_csv(const std::string& text, const std::string& source = "<csv>") {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": missing header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "index" || header[1] != "label" || header[2] != "split")
    throw FormatError(source + ": header must start with index,label,split");
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j)
    if (header[3 + j] != "z" + std::to_string(j + 1))
      throw FormatError(source + ": header column " + std::to_string(4 + j) + " should be z" + std::to_string(j + 1));

  EmbeddingTable t;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (cells.size() != header.size())
      throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    try {
      std::size_t used = 0;
      t.index.push_back(std::stoull(cells[0], &used));
      if (used != cells[0].size()) throw std::invalid_argument("index");
      t.label.push_back(static_cast<std::uint32_t>(std::stoul(cells[1], &used)));
      if (used != cells[1].size()) throw std::invalid_argument("label");
      for (std::size_t j = 0; j < d; ++j) {
        // strtod rather than stod: stod rejects subnormals as out of range.
        const std::string& cell = cells[3 + j];
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v)) throw std::invalid_argument("value");
        values.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw FormatError(where + ": malformed number");
    }
    if (cells[2] != "train" && cells[2] != "test") throw FormatError(where + ": split must be train or test");
    t.is_test.push_back(cells[2] == "test");
  }
  t.z = Matrix<double>(t.index.size(), d);
  std::copy(values.begin(), values.end(), t.z.data().begin());
  return t;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// SVG scatter
// ---------------------------------------------------------------------------

// 20 colours; class ids beyond 20 wrap around.
inline constexpr std::array<const char*, 20> kPalette = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5"};

struct ViewBox {
  double x, y, width, height;
};

/// Data extent plus a 5% margin on each side, in SVG coordinates (y flipped
/// so that larger z2 is drawn higher). Width/height keep the data's aspect.
inline ViewBox scatter_viewbox(const Matrix<double>& z) {
  if (z.rows() == 0) return {-1, -1, 2, 2};
  double x0 = z(0, 0), x1 = x0, y0 = z(0, 1), y1 = y0;
  for (std::size_t i = 1; i < z.rows(); ++i) {
    x0 = std::min(x0, z(i, 0));
    x1 = std::max(x1, z(i, 0));
    y0 = std::min(y0, z(i, 1));
    y1 = std::max(y1, z(i, 1));
  }
  double w = x1 - x0, h = y1 - y0;
  // Degenerate extents get a unit span so the box stays drawable.
  if (w <= 0 && h <= 0) w = h = 1;
  else if (w <= 0) w = h;
  else if (h <= 0) h = w;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  w *= 1.1;
  h *= 1.1;
  return {cx - w / 2, -cy - h / 2, w, h};
}

inline std::string render_scatter_svg(const EmbeddingTable& t) {
  if (t.dim() != 2)
    throw ValidationError("scatter needs a 2-dimensional embedding, got " + std::to_string(t.dim()) + " columns");
  const ViewBox vb = scatter_viewbox(t.z);
  const double radius = 0.004 * std::max(vb.width, vb.height);
  const double px_w = 800.0, px_h = 800.0 * vb.height / vb.width;
  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_g17(px_w) + "\" height=\"" +
         format_g17(px_h) + "\" viewBox=\"" + format_g17(vb.x) + ' ' + format_g17(vb.y) + ' ' +
         format_g17(vb.width) + ' ' + format_g17(vb.height) + "\">\n";
  out += "<rect x=\"" + format_g17(vb.x) + "\" y=\"" + format_g17(vb.y) + "\" width=\"" + format_g17(vb.width) +
         "\" height=\"" + format_g17(vb.height) + "\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out += "<circle cx=\"" + format_g17(t.z(i, 0)) + "\" cy=\"" + format_g17(-t.z(i, 1)) + "\" r=\"" +
           format_g17(radius) + "\" fill=\"" + kPalette[t.label[i] % kPalette.size()] + "\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

} // namespace tscn
