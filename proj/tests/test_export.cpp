#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <regex>

#include "gen.hpp"
#include "tscn/export.hpp"

using namespace tscn;

namespace {

EmbeddingTable random_table(gen::Source& g, std::size_t n, std::size_t d) {
  EmbeddingTable t;
  t.z = Matrix<double>(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    t.index.push_back(i * 3);
    t.label.push_back(static_cast<std::uint32_t>(g.index(25)));
    t.is_test.push_back(g.index(2) == 1);
    for (std::size_t j = 0; j < d; ++j) t.z(i, j) = g.normal(std::pow(10.0, g.uniform(-8, 8)));
  }
  return t;
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

} // namespace

TEST(Csv, HeaderAndRowFormat) {
  EmbeddingTable t;
  t.index = {0, 7};
  t.label = {3, 1};
  t.is_test = {false, true};
  t.z = Matrix<double>(2, 2);
  t.z(0, 0) = 0.5, t.z(0, 1) = -1;
  t.z(1, 0) = 0.1, t.z(1, 1) = 1e-300;
  EXPECT_EQ(write_embedding_csv(t),
            "index,label,split,z1,z2\n"
            "0,3,train,0.5,-1\n"
            "7,1,test,0.10000000000000001,1e-300\n");
}

TEST(Csv, RoundTripReproducesEveryDouble) {
  gen::Source g(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto t = random_table(g, g.index(50), 1 + g.index(6));
    if (t.rows() > 0) {
      t.z(0, 0) = std::numeric_limits<double>::denorm_min();
      t.z(t.rows() - 1, 0) = -std::numeric_limits<double>::max();
    }
    const auto back = parse_embedding_csv(write_embedding_csv(t));
    EXPECT_EQ(back, t);
  }
}

TEST(Csv, ToleratesCrlfAndBlankLines) {
  const auto t = parse_embedding_csv("index,label,split,z1,z2\r\n4,2,test,1.5,2\r\n\r\n");
  ASSERT_EQ(t.rows(), 1u);
  EXPECT_EQ(t.index[0], 4u);
  EXPECT_TRUE(t.is_test[0]);
  EXPECT_EQ(t.z(0, 1), 2.0);
}

TEST(Csv, MalformedInputsReportLine) {
  auto err = [](const std::string& text) {
    try {
      parse_embedding_csv(text, "e.csv");
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(err("").find("missing header"), std::string::npos);
  EXPECT_NE(err("idx,label,split\n").find("header"), std::string::npos);
  EXPECT_NE(err("index,label,split,z2\n").find("z1"), std::string::npos);
  EXPECT_NE(err("index,label,split,z1\n0,1,train,1\n1,1,train\n").find("e.csv:3"), std::string::npos);
  EXPECT_NE(err("index,label,split,z1\n0,1,valid,1\n").find("split"), std::string::npos);
  EXPECT_NE(err("index,label,split,z1\n0,1,train,1.5x\n").find("malformed"), std::string::npos);
  EXPECT_NE(err("index,label,split,z1\n-,1,train,1\n").find("malformed"), std::string::npos);
  EXPECT_NE(err("index,label,split,z1\n0,1,train,\n").find("malformed"), std::string::npos);
}

TEST(Svg, OneCirclePerRow) {
  const auto t = parse_embedding_csv("index,label,split,z1,z2\n0,0,train,0,0\n1,1,train,1,2\n2,21,test,-3,1\n");
  const auto svg = render_scatter_svg(t);
  EXPECT_EQ(count_of(svg, "<circle"), 3u);
  EXPECT_NE(svg.find(std::string("fill=\"") + kPalette[0] + "\""), std::string::npos);
  EXPECT_NE(svg.find(std::string("fill=\"") + kPalette[1] + "\""), std::string::npos);
  EXPECT_EQ(count_of(svg, std::string("fill=\"") + kPalette[1] + "\""), 2u);  // label 21 wraps to colour 1
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
}

TEST(Svg, EmptyTableIsAValidEmptyPlot) {
  const auto t = parse_embedding_csv("index,label,split,z1,z2\n");
  const auto svg = render_scatter_svg(t);
  EXPECT_EQ(count_of(svg, "<circle"), 0u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Svg, RequiresTwoDimensions) {
  EXPECT_THROW(render_scatter_svg(parse_embedding_csv("index,label,split,z1,z2,z3\n0,0,train,1,2,3\n")),
               ValidationError);
  EXPECT_THROW(render_scatter_svg(parse_embedding_csv("index,label,split,z1\n0,0,train,1\n")), ValidationError);
}

TEST(Svg, ViewBoxKeepsDataAspectWithMargin) {
  gen::Source g(4);
  for (int trial = 0; trial < 20; ++trial) {
    const double sx = g.uniform(0.1, 10), sy = g.uniform(0.1, 10), ox = g.normal(50), oy = g.normal(50);
    Matrix<double> z(30, 2);
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (std::size_t i = 0; i < 30; ++i) {
      z(i, 0) = ox + sx * g.uniform();
      z(i, 1) = oy + sy * g.uniform();
      x0 = std::min(x0, z(i, 0)), x1 = std::max(x1, z(i, 0));
      y0 = std::min(y0, z(i, 1)), y1 = std::max(y1, z(i, 1));
    }
    const auto vb = scatter_viewbox(z);
    EXPECT_NEAR(vb.width / vb.height, (x1 - x0) / (y1 - y0), 1e-9);
    EXPECT_NEAR(vb.width, 1.1 * (x1 - x0), 1e-9);
    // Every point (with y flipped) lies inside, 5% in from each edge.
    EXPECT_NEAR(vb.x, x0 - 0.05 * (x1 - x0), 1e-9);
    EXPECT_NEAR(vb.y, -y1 - 0.05 * (y1 - y0), 1e-9);
  }
}

TEST(Svg, PixelSizeMatchesViewBoxAspect) {
  const auto t = parse_embedding_csv("index,label,split,z1,z2\n0,0,train,0,0\n1,0,train,4,1\n");
  const auto svg = render_scatter_svg(t);
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, std::regex("width=\"([0-9.e+-]+)\" height=\"([0-9.e+-]+)\"")));
  EXPECT_NEAR(std::stod(m[1]) / std::stod(m[2]), 4.0, 1e-12);
}

TEST(Svg, DegenerateExtents) {
  Matrix<double> single(1, 2);
  single(0, 0) = 3, single(0, 1) = 4;
  const auto vb = scatter_viewbox(single);
  EXPECT_DOUBLE_EQ(vb.width, 1.1);
  EXPECT_DOUBLE_EQ(vb.height, 1.1);
  EXPECT_DOUBLE_EQ(vb.x + vb.width / 2, 3.0);
  EXPECT_DOUBLE_EQ(vb.y + vb.height / 2, -4.0);
  Matrix<double> line(2, 2);
  line(1, 0) = 2;  // horizontal segment
  EXPECT_DOUBLE_EQ(scatter_viewbox(line).height, scatter_viewbox(line).width);
}

TEST(Csv, RejectsNonFiniteValues) {
  EXPECT_THROW(parse_embedding_csv("index,label,split,z1\n0,1,train,nan\n"), FormatError);
  EXPECT_THROW(parse_embedding_csv("index,label,split,z1\n0,1,train,inf\n"), FormatError);
  EXPECT_THROW(parse_embedding_csv("index,label,split,z1\n0,1,train,1e999\n"), FormatError);
}
